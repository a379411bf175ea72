#pragma once

#include "qrfit/march.hpp"
#include "qrfit/mesh.hpp"
#include "qrfit/render.hpp"
#include "qrfit/sdf.hpp"
#include "qrfit/skinning.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace qrfit {

/// One observed frame: a point cloud of the deformed object, optionally a
/// binary silhouette with its pinhole camera.
struct FrameObservation {
    int frame = 0;
    PointCloud cloud;
    std::vector<double> silhouette;  // width*height values in [0,1]; empty when absent
    PinholeCamera camera;

    bool has_silhouette() const { return !silhouette.empty(); }
    void validate() const;
};

struct LossWeights {
    double data = 1.0;
    double sparse = 0.1;
    double cycle = 0.1;
    double reg = 0.01;
};

struct FitConfig {
    int iterations = 600;
    int bones = 2;
    std::uint64_t seed = 0;
    SkinBackend backend = SkinBackend::Qrbs;

    LossWeights weights;
    double eta = 0.2;
    double zeta = 0.2;
    // gamma anneals linearly over the first half of the run, then holds
    double gamma_start = 1.0, gamma_end = 0.1;
    // beta anneals geometrically over the whole run
    double beta_start = 0.05, beta_end = 2e-3;

    int assign_refresh = 100;
    int surface_samples = 400;
    int fit_grid = 48;       // SDF resolution while fitting
    int assign_grid = 24;    // extraction resolution for assignments
    int extract_grid = 128;  // final extraction resolution
    int delta_res = 8;

    // data-term composition
    double surface_weight = 1.0;   // |sdf| at inverse-mapped observed points
    int surface_subsample = 300;   // observed points per frame for that term
    int surface_frames = 0;        // leading frames feeding the surface term (0 = all)
    double anchor_data_boost = 1.0;  // extra data weight on the anchored first frame
    // spurious canonical surface gets pushed positive toward the distance of
    // the nearest first-frame observation (free-space carving)
    double carve_weight = 1.0;
    // canonical-field anchor: the grid is pulled toward a signed distance
    // target computed once from the first frame's cloud (distance transform
    // with flood-fill sign), the desk-scale stand-in for dense supervision
    double field_weight = 1.0;
    bool use_silhouette = false;
    double silhouette_weight = 1.0;
    int silhouette_stride = 2;      // pixel stride when rendering masks
    int silhouette_samples = 32;    // ray samples for the mask term

    // regularizer composition (scaled by weights.reg)
    double reg_scale_aniso = 1.0;
    double reg_pose_smooth = 1.0;
    double reg_eikonal = 0.5;

    // per-group base step sizes (cosine-decayed)
    double lr_pose = 0.03;
    double lr_root = 0.0;  // root motion off by default; hinges move parts only
    double lr_bone_center = 0.02;
    double lr_bone_orient = 0.02;
    double lr_bone_scale = 0.02;
    double lr_delta = 0.01;
    double lr_sdf = 0.8;  // relaxation factor for the preconditioned grid step
    double lr_color = 0.0;
    bool optimize_beta = false;
    double lr_beta = 0.01;

    // staged schedule: shape bootstrap on the anchored first frame, then
    // frame-by-frame pose tracking, then joint refinement
    bool warm_start = true;
    double bootstrap = 0.2;  // fraction spent on stage 1
    double warm_ramp = 0.55;  // stage 2 ends at this fraction
    // extra weight on the frame-to-frame motion prior while tracking; the
    // per-frame data floor is noisy enough to pull a lone pose around
    double track_reg_scale = 50.0;
    // pins frame 0 at the identity pose, anchoring the canonical frame to
    // the first observation and removing the shape/pose gauge freedom
    bool anchor_first_frame = true;
    // after this fraction of the run the SDF stops updating
    double geometry_freeze = 0.85;
    // after this fraction, bone geometry and delta weights stop; the weight
    // field drifting late is what corrupts recovered motion
    double bone_freeze = 0.55;
    std::string diagnostic_dump = "";  // checkpoint path written on divergence

    void validate() const;
};

/// Everything the optimizer touches, plus the caches that stay fixed
/// between assignment refreshes.
struct FitState {
    BoneSet bones;
    std::vector<PoseState> poses;  // one per frame
    DeltaWeightField delta;
    SDFGrid sdf;
    ColorGrid color;
    double gamma = 0.1;
    double beta = 0.01;

    TriangleMesh canonical_mesh;
    PointCloud surface_points;
    std::vector<double> field_target;  // per-node signed distance target, empty when unused
    std::vector<AssignmentVector> assignments;
    int assignment_fallbacks = 0;

    std::vector<std::array<double, 5>> loss_history;  // total, data, sparse, cycle, reg

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double data = 0.0;
    double sparse = 0.0;
    double cycle = 0.0;
    double reg = 0.0;
};

LossBreakdown total_loss(const FitState& state, const std::vector<FrameObservation>& obs,
                         const FitConfig& cfg);

/// Analytic gradients of total_loss for every differentiable parameter
/// group. Rotation-like quantities (bone orientations, pose and root
/// transforms) are reported in tangent coordinates: the derivative of the
/// loss under left-composition of rigid_from_tangent increments (bone
/// orientations compose on the right).
struct Gradients {
    std::vector<Vec3> bone_centers;
    std::vector<Vec3> bone_orients;
    std::vector<Vec3> bone_log_scales;
    std::vector<std::vector<std::array<double, 6>>> pose;  // [frame][bone] (rot, trans)
    std::vector<std::array<double, 6>> root;               // [frame]
    std::vector<std::vector<double>> delta;                // [bone][node]
    std::vector<double> sdf;                               // [node]
    std::vector<double> sdf_curvature;                     // diagonal Hessian of the quadratic data terms
    std::vector<double> color;                             // [3 * node]
    double log_beta = 0.0;

    void check_finite() const;  // throws naming the offending group
};

Gradients gradients(const FitState& state, const std::vector<FrameObservation>& obs,
                    const FitConfig& cfg);

/// Re-extracts the canonical mesh, resamples surface points, and recomputes
/// the assignment cache. Keeps the previous cache when the surface vanishes.
void refresh_assignments(FitState& state, const FitConfig& cfg);

/// Gradient-based recovery of bones, per-frame poses, delta weights, and the
/// canonical SDF from the observations. Deterministic given (obs, cfg).
FitState fit(const std::vector<FrameObservation>& obs, const FitConfig& cfg);

/// Initial state: sphere SDF sized from the first frame's cloud, k-means
/// bone centers, identity poses.
FitState initial_state(const std::vector<FrameObservation>& obs, const FitConfig& cfg);

/// Deterministic k-means (k-means++ seeding, fixed iteration count).
std::vector<Vec3> kmeans_centers(const std::vector<Vec3>& points, int k, std::uint64_t seed);

/// Single-file checkpoint: config echo, rig, poses, grids (base64 float32),
/// and the loss history as CSV.
void save_checkpoint(const FitState& state, const FitConfig& cfg, const std::string& path);
FitState load_checkpoint(const std::string& path, FitConfig* cfg_out = nullptr);

FitConfig fit_config_from_json(const std::string& path);
void fit_config_to_json(const FitConfig& cfg, const std::string& path);

}  // namespace qrfit
