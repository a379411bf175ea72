#pragma once

#include "qrfit/geom.hpp"

#include <vector>

namespace qrfit {

struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Vec3 vec() const { return {x, y, z}; }
    static Quat from_axis_angle(const Vec3& axis, double angle);
};

inline Quat operator+(const Quat& a, const Quat& b) { return {a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Quat operator-(const Quat& a, const Quat& b) { return {a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Quat operator*(double s, const Quat& q) { return {s * q.w, s * q.x, s * q.y, s * q.z}; }
inline Quat operator-(const Quat& q) { return {-q.w, -q.x, -q.y, -q.z}; }

/// Hamilton product.
Quat qmul(const Quat& a, const Quat& b);
inline Quat qconj(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }
inline double qdot(const Quat& a, const Quat& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }
inline double qnorm(const Quat& q) { return std::sqrt(qdot(q, q)); }
Vec3 qrotate(const Quat& q, const Vec3& v);
Mat3 quat_to_matrix(const Quat& q);
Quat quat_from_matrix(const Mat3& R);

/// Rotation + translation, applied as R x + t.
struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;

    /// Throws InvariantError unless R^T R = I and det R = 1 within 1e-9.
    void validate() const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);  // a after b

/// Chart between 6-vector increments (rotation axis-angle, translation) and
/// rigid transforms: {rotation_exp(w), v}. Used for tangent-space optimizer
/// steps; rigid_to_tangent is its inverse.
RigidTransform rigid_from_tangent(const Vec3& rot, const Vec3& trans);
void rigid_to_tangent(const RigidTransform& t, Vec3& rot, Vec3& trans);

/// Unit dual quaternion: real encodes rotation, dual encodes translation as
/// dual = 0.5 (0,t) * real; invariants |real| = 1 and dot(real, dual) = 0.
struct DualQuat {
    Quat real{1, 0, 0, 0};
    Quat dual{0, 0, 0, 0};

    static DualQuat identity() { return {}; }
    void validate() const;
};

DualQuat dq_from_rigid(const RigidTransform& t);
RigidTransform dq_to_rigid(const DualQuat& q);
Vec3 dq_apply(const DualQuat& q, const Vec3& p);
DualQuat dq_mul(const DualQuat& a, const DualQuat& b);
/// Inverse of a unit dual quaternion (quaternion conjugate of both parts).
DualQuat dq_inverse(const DualQuat& q);
/// Rescales real to unit length and removes the dual component parallel to it.
DualQuat dq_normalized(const DualQuat& q);

/// Dual quaternion blending: hemisphere-aligns every input against the
/// max-weight pivot (ties to the lowest bone index), sums in R^8, normalizes.
/// Throws InvariantError when the blended real part nearly cancels.
DualQuat dq_blend(const std::vector<double>& weights, const std::vector<DualQuat>& dqs);

/// 3x4 affine result of linear blend skinning. Not rigid in general.
struct Affine34 {
    Mat3 linear;
    Vec3 translation;

    Vec3 apply(const Vec3& p) const { return linear * p + translation; }
};

Affine34 lbs_blend(const std::vector<double>& weights, const std::vector<RigidTransform>& transforms);

/// Rotation angle in [0, pi] of a unit quaternion.
double quat_angle(const Quat& q);

}  // namespace qrfit
