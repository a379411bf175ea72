#pragma once

#include "qrfit/dualquat.hpp"
#include "qrfit/geom.hpp"
#include "qrfit/mesh.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qrfit {

/// Gaussian bones: a center, an orientation, and a diagonal precision per
/// bone. Larger precisions shrink the bone's region of influence.
struct BoneSet {
    std::vector<Vec3> centers;
    std::vector<Mat3> orientations;
    std::vector<Vec3> precisions;

    int count() const { return static_cast<int>(centers.size()); }
    void validate() const;
};

/// Low-resolution per-bone lattice of additive weight corrections, sampled
/// trilinearly in bone-local coordinates over [-half_extents, half_extents].
/// Replaces a learned refinement network; defaults to all zero.
struct DeltaWeightField {
    int resolution = 8;  // nodes per axis
    Vec3 half_extents{1, 1, 1};
    std::vector<std::vector<double>> values;  // [bone][x-fastest node grid]

    static DeltaWeightField zeros(int bones, int resolution, const Vec3& half_extents);
    bool empty() const { return values.empty(); }
    void validate() const;

    double eval(int bone, const Vec3& local) const;

    /// Trilinear stencil for gradient work: the 8 node ids with their
    /// weights, plus the spatial gradient of the interpolated value.
    struct Stencil {
        int node[8];
        double weight[8];
        Vec3 spatial_grad;
    };
    double eval_with_stencil(int bone, const Vec3& local, Stencil& out) const;
};

/// One- or two-hot bone assignment from the geodesic assignment rule.
struct AssignmentVector {
    std::vector<std::uint8_t> on;

    int count_on() const;
    void validate() const;  // exactly one or two entries set
};

/// Per-frame motion: one unit dual quaternion per bone plus the global
/// object-to-camera chain (cam after root).
struct PoseState {
    std::vector<DualQuat> bone_poses;
    RigidTransform root;
    RigidTransform cam;

    RigidTransform global() const { return compose(cam, root); }
    void validate() const;
};

enum class SkinBackend { Qrbs, Lbs, Rigid };
SkinBackend skin_backend_from_string(const std::string& name);
std::string to_string(SkinBackend backend);

/// Squared Mahalanobis distance from X to every bone (Gaussian-bone metric).
std::vector<double> mahalanobis(const BoneSet& bones, const Vec3& X);

/// Temperature-sharpened skinning weights:
/// softmax((-d_M + delta) / gamma). delta may be null for the pure
/// Gaussian weights. Always a valid simplex.
std::vector<double> skin_weights(const BoneSet& bones, const Vec3& X, const DeltaWeightField* delta,
                                 double gamma);

/// One-hot at the argmax; ties go to the lowest index.
std::vector<double> rigid_binarize(const std::vector<double>& weights);

/// Geodesic point assignment rule for one point, given its two nearest
/// bones i and j by Mahalanobis distance and the geodesic distances from
/// the point's anchor vertex to theirs. Branches:
///   1: clearly nearest by Mahalanobis ratio        -> one-hot i
///   2: ambiguous and geodesically equidistant      -> two-hot {i, j} (joint)
///   3: ambiguous, geodesics disagree               -> one-hot argmin geodesic
AssignmentVector assign_point(double dM_i, double dM_j, double dG_i, double dG_j, int i, int j,
                              double eta, double zeta, int bone_count, int* branch_out = nullptr);

/// Per-point diagnostics row from assign_points.
struct AssignDiag {
    int point = 0;
    int bone_i = 0, bone_j = 0;
    double dM_i = 0, dM_j = 0;
    double dG_i = 0, dG_j = 0;
    int branch = 0;  // 1..3, or 0 for the Mahalanobis-only fallback
    AssignmentVector assignment;
};

struct AssignResult {
    std::vector<AssignmentVector> assignments;
    std::vector<AssignDiag> diagnostics;
    int geodesic_fallbacks = 0;  // points resolved without geodesics
};

/// Runs the assignment rule over a cloud against the current canonical mesh:
/// nearest bones by Mahalanobis, anchor vertices by nearest-vertex lookup,
/// geodesic distance fields from each bone anchor. Points whose anchors are
/// unreachable fall back to the Mahalanobis argmin.
AssignResult assign_points(const TriangleMesh& mesh, const BoneSet& bones, const PointCloud& points,
                           double eta, double zeta);

void write_assignment_csv(const AssignResult& result, const std::string& path, std::uint64_t seed);

/// Mean masked weight energy: sum ||W ⊙ (1-M)||^2 / sum (1-M) over all
/// points and bones; 0 when every weight sits on its assigned bones.
double sparse_skin_loss(const std::vector<std::vector<double>>& weights,
                        const std::vector<AssignmentVector>& assignments);

/// Canonical -> observation deformation: blend bone transforms at X's
/// canonical weights, then apply the global chain.
Vec3 qrbs_forward(const Vec3& X, const BoneSet& bones, const DeltaWeightField* delta, double gamma,
                  const PoseState& pose, SkinBackend backend = SkinBackend::Qrbs);

/// Observation -> canonical deformation: strip the global chain, recompute
/// weights against bones transported by their own motion, blend the
/// inverted bone transforms.
Vec3 qrbs_inverse(const Vec3& Xt, const BoneSet& bones, const DeltaWeightField* delta, double gamma,
                  const PoseState& pose, SkinBackend backend = SkinBackend::Qrbs);

/// Bones carried into observation space: centers moved by each bone's
/// transform, orientations composed so the Gaussian metric rides along.
BoneSet transported_bones(const BoneSet& bones, const PoseState& pose);

/// ||inverse(forward(X)) - X|| per point; the fitting cycle term.
std::vector<double> cycle_residual(const PointCloud& points, const BoneSet& bones,
                                   const DeltaWeightField* delta, double gamma, const PoseState& pose,
                                   SkinBackend backend = SkinBackend::Qrbs);

/// Batch deformation kernels. The OpenMP version writes each output
/// independently, so results are identical to the serial reference.
std::vector<Vec3> deform_points(const std::vector<Vec3>& points, const BoneSet& bones,
                                const DeltaWeightField* delta, double gamma, const PoseState& pose,
                                SkinBackend backend = SkinBackend::Qrbs);
std::vector<Vec3> deform_points_serial(const std::vector<Vec3>& points, const BoneSet& bones,
                                       const DeltaWeightField* delta, double gamma, const PoseState& pose,
                                       SkinBackend backend = SkinBackend::Qrbs);

/// Rig config JSON: bone count, centers, orientation quaternions, precision
/// diagonals, and the gamma/eta/zeta knobs.
struct RigConfig {
    BoneSet bones;
    double gamma = 0.1;
    double eta = 0.2;
    double zeta = 0.2;
};

void save_rig(const RigConfig& rig, const std::string& path);
RigConfig load_rig(const std::string& path);

}  // namespace qrfit
