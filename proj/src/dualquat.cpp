#include "qrfit/dualquat.hpp"

#include "qrfit/error.hpp"

#include <algorithm>

namespace qrfit {

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
    Vec3 a = normalized(axis);
    double h = 0.5 * angle;
    double s = std::sin(h);
    return {std::cos(h), s * a.x, s * a.y, s * a.z};
}

Quat qmul(const Quat& a, const Quat& b) {
    return {
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    };
}

Vec3 qrotate(const Quat& q, const Vec3& v) {
    // v + 2w (u x v) + 2 u x (u x v) with u the vector part
    Vec3 u = q.vec();
    Vec3 t = cross(u, v);
    return v + 2.0 * q.w * t + 2.0 * cross(u, t);
}

Mat3 quat_to_matrix(const Quat& q) {
    double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 R;
    R.m = {
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
        2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y),
    };
    return R;
}

Quat quat_from_matrix(const Mat3& R) {
    // Shepperd's method: pick the numerically largest diagonal combination.
    double tr = R(0, 0) + R(1, 1) + R(2, 2);
    Quat q;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q.w = 0.25 * s;
        q.x = (R(2, 1) - R(1, 2)) / s;
        q.y = (R(0, 2) - R(2, 0)) / s;
        q.z = (R(1, 0) - R(0, 1)) / s;
    } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
        double s = std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2)) * 2.0;
        q.w = (R(2, 1) - R(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (R(0, 1) + R(1, 0)) / s;
        q.z = (R(0, 2) + R(2, 0)) / s;
    } else if (R(1, 1) > R(2, 2)) {
        double s = std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2)) * 2.0;
        q.w = (R(0, 2) - R(2, 0)) / s;
        q.x = (R(0, 1) + R(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (R(1, 2) + R(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1)) * 2.0;
        q.w = (R(1, 0) - R(0, 1)) / s;
        q.x = (R(0, 2) + R(2, 0)) / s;
        q.y = (R(1, 2) + R(2, 1)) / s;
        q.z = 0.25 * s;
    }
    double n = qnorm(q);
    return (1.0 / n) * q;
}

RigidTransform RigidTransform::inverse() const {
    Mat3 Rt = transpose(rotation);
    return {Rt, -(Rt * translation)};
}

void RigidTransform::validate() const {
    if (orthonormality_error(rotation) > 1e-9)
        throw InvariantError("rotation matrix is not orthonormal");
    if (std::abs(det(rotation) - 1.0) > 1e-9)
        throw InvariantError("rotation matrix determinant is not 1");
    if (!finite(translation)) throw InvariantError("non-finite translation");
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform rigid_from_tangent(const Vec3& rot, const Vec3& trans) {
    return {rotation_exp(rot), trans};
}

void rigid_to_tangent(const RigidTransform& t, Vec3& rot, Vec3& trans) {
    Quat q = quat_from_matrix(t.rotation);
    if (q.w < 0.0) q = -q;
    double angle = quat_angle(q);
    Vec3 axis = q.vec();
    double n = norm(axis);
    rot = n > 1e-12 ? (angle / n) * axis : Vec3{0, 0, 0};
    trans = t.translation;
}

void DualQuat::validate() const {
    if (std::abs(qnorm(real) - 1.0) > 1e-9)
        throw InvariantError("dual quaternion real part is not unit");
    if (std::abs(qdot(real, dual)) > 1e-9)
        throw InvariantError("dual quaternion parts are not orthogonal");
}

DualQuat dq_from_rigid(const RigidTransform& t) {
    t.validate();
    Quat real = quat_from_matrix(t.rotation);
    Quat tq{0, t.translation.x, t.translation.y, t.translation.z};
    return {real, 0.5 * qmul(tq, real)};
}

RigidTransform dq_to_rigid(const DualQuat& q) {
    q.validate();
    Quat tq = 2.0 * qmul(q.dual, qconj(q.real));
    return {quat_to_matrix(q.real), tq.vec()};
}

Vec3 dq_apply(const DualQuat& q, const Vec3& p) {
    Quat tq = 2.0 * qmul(q.dual, qconj(q.real));
    return qrotate(q.real, p) + tq.vec();
}

DualQuat dq_mul(const DualQuat& a, const DualQuat& b) {
    return {qmul(a.real, b.real), qmul(a.real, b.dual) + qmul(a.dual, b.real)};
}

DualQuat dq_inverse(const DualQuat& q) {
    return {qconj(q.real), qconj(q.dual)};
}

DualQuat dq_normalized(const DualQuat& q) {
    double n = qnorm(q.real);
    if (n < 1e-12) throw InvariantError("cannot normalize dual quaternion with zero real part");
    Quat real = (1.0 / n) * q.real;
    Quat dual = (1.0 / n) * q.dual;
    dual = dual - qdot(real, dual) * real;
    return {real, dual};
}

DualQuat dq_blend(const std::vector<double>& weights, const std::vector<DualQuat>& dqs) {
    if (weights.size() != dqs.size() || weights.empty())
        throw InvariantError("dq_blend needs matching non-empty weights and transforms");
    double wsum = 0.0;
    for (double x : weights) {
        if (x < -1e-12) throw InvariantError("blend weights must be nonnegative");
        wsum += x;
    }
    if (std::abs(wsum - 1.0) > 1e-6) throw InvariantError("blend weights must sum to 1");
    size_t pivot = 0;
    for (size_t b = 1; b < weights.size(); ++b)
        if (weights[b] > weights[pivot]) pivot = b;

    Quat sum_real{0, 0, 0, 0}, sum_dual{0, 0, 0, 0};
    const Quat& ref = dqs[pivot].real;
    for (size_t b = 0; b < weights.size(); ++b) {
        double sign = qdot(dqs[b].real, ref) < 0.0 ? -1.0 : 1.0;
        double s = sign * weights[b];
        sum_real = sum_real + s * dqs[b].real;
        sum_dual = sum_dual + s * dqs[b].dual;
    }
    if (qnorm(sum_real) < 1e-8)
        throw InvariantError("degenerate dual quaternion blend (real parts cancel)");
    return dq_normalized({sum_real, sum_dual});
}

Affine34 lbs_blend(const std::vector<double>& weights, const std::vector<RigidTransform>& transforms) {
    if (weights.size() != transforms.size() || weights.empty())
        throw InvariantError("lbs_blend needs matching non-empty weights and transforms");
    Affine34 out;
    out.linear = 0.0 * Mat3::identity();
    out.translation = {0, 0, 0};
    for (size_t b = 0; b < weights.size(); ++b) {
        out.linear = out.linear + weights[b] * transforms[b].rotation;
        out.translation += weights[b] * transforms[b].translation;
    }
    return out;
}

double quat_angle(const Quat& q) {
    return 2.0 * std::atan2(norm(q.vec()), std::abs(q.w));
}

}  // namespace qrfit
