#include "qrfit/error.hpp"
#include "qrfit/fit.hpp"
#include "qrfit/kdtree.hpp"
#include "qrfit/rng.hpp"

#include <algorithm>
#include <cmath>

// Loss evaluation and its hand-written reverse pass. The chain per deformed
// point is: Mahalanobis + delta lattice -> softmax -> dual-quaternion (or
// affine) blend -> global transform; the inverse chain additionally carries
// the transported-bone dependencies. Every branch is pinned to central
// finite differences by the gradient tests.

namespace qrfit {

namespace {

struct GradSinks {
    std::vector<Vec3>* bone_centers = nullptr;
    std::vector<Vec3>* bone_orients = nullptr;
    std::vector<Vec3>* bone_log_scales = nullptr;
    std::vector<std::vector<double>>* delta = nullptr;
    std::vector<double>* sdf = nullptr;
    std::vector<double>* sdf_curv = nullptr;  // diagonal Hessian accumulator
    double* log_beta = nullptr;
    std::vector<std::array<double, 6>>* pose = nullptr;  // per bone of one frame
    std::array<double, 6>* root = nullptr;
};

void add6(std::array<double, 6>& acc, const Vec3& rot, const Vec3& trans) {
    acc[0] += rot.x;
    acc[1] += rot.y;
    acc[2] += rot.z;
    acc[3] += trans.x;
    acc[4] += trans.y;
    acc[5] += trans.z;
}

// ---------------------------------------------------------------------------
// skinning weights with caches

struct WeightCache {
    std::vector<double> w;          // softmax output
    std::vector<Vec3> u;            // V (X - O) per bone (lattice coordinate)
    std::vector<DeltaWeightField::Stencil> stencil;
    bool has_delta = false;
};

std::vector<double> weights_forward(const BoneSet& bones, const DeltaWeightField* delta, double gamma,
                                    const Vec3& X, WeightCache& cache) {
    const int B = bones.count();
    cache.u.resize(B);
    cache.stencil.resize(B);
    cache.has_delta = delta && !delta->empty();
    std::vector<double> score(B);
    for (int b = 0; b < B; ++b) {
        Vec3 u = bones.orientations[b] * (X - bones.centers[b]);
        cache.u[b] = u;
        const Vec3& lam = bones.precisions[b];
        double dm = lam.x * u.x * u.x + lam.y * u.y * u.y + lam.z * u.z * u.z;
        double wd = cache.has_delta ? delta->eval_with_stencil(b, u, cache.stencil[b]) : 0.0;
        score[b] = (-dm + wd) / gamma;
    }
    double mx = *std::max_element(score.begin(), score.end());
    double sum = 0.0;
    for (int b = 0; b < B; ++b) {
        score[b] = std::exp(score[b] - mx);
        sum += score[b];
    }
    for (int b = 0; b < B; ++b) score[b] /= sum;
    cache.w = score;
    return score;
}

// softmax pullback: g_w -> g_score
std::vector<double> softmax_backward(const std::vector<double>& w, const std::vector<double>& g_w) {
    double inner = 0.0;
    for (size_t b = 0; b < w.size(); ++b) inner += g_w[b] * w[b];
    std::vector<double> g_s(w.size());
    for (size_t b = 0; b < w.size(); ++b) g_s[b] = w[b] * (g_w[b] - inner);
    return g_s;
}

// Distributes weight-score gradients to bone parameters. `bones` are the
// bones the weights were evaluated against (canonical or transported) while
// the parameter chains differ between the two cases, so the caller passes
// per-bone hooks via the returned per-bone u-gradient.
struct WeightParamGrads {
    std::vector<Vec3> g_u;         // gradient on the lattice coordinate u_b
    std::vector<double> g_dm;      // gradient on the Mahalanobis value
};

WeightParamGrads weight_score_backward(const BoneSet& bones, const WeightCache& cache,
                                       const std::vector<double>& g_score, double gamma,
                                       GradSinks& sinks) {
    const int B = bones.count();
    WeightParamGrads out;
    out.g_u.assign(B, Vec3{});
    out.g_dm.assign(B, 0.0);
    for (int b = 0; b < B; ++b) {
        double a_dm = -g_score[b] / gamma;
        double a_wd = g_score[b] / gamma;
        out.g_dm[b] = a_dm;
        const Vec3& lam = bones.precisions[b];
        const Vec3& u = cache.u[b];
        out.g_u[b] += 2.0 * a_dm * Vec3{lam.x * u.x, lam.y * u.y, lam.z * u.z};
        if (sinks.bone_log_scales)
            (*sinks.bone_log_scales)[b] +=
                a_dm * Vec3{lam.x * u.x * u.x, lam.y * u.y * u.y, lam.z * u.z * u.z};
        if (cache.has_delta) {
            if (sinks.delta)
                for (int c = 0; c < 8; ++c)
                    (*sinks.delta)[b][cache.stencil[b].node[c]] += a_wd * cache.stencil[b].weight[c];
            out.g_u[b] += a_wd * cache.stencil[b].spatial_grad;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// quaternion helpers

void qrotate_backward(const Quat& q, const Vec3& v, const Vec3& g_y, double g_q[4], Vec3* g_v) {
    Vec3 u = q.vec();
    Vec3 uxv = cross(u, v);
    g_q[0] += dot(g_y, 2.0 * q.w * v + 2.0 * uxv);
    Vec3 g_u = -2.0 * dot(v, g_y) * u + 2.0 * dot(u, g_y) * v + 2.0 * dot(u, v) * g_y +
               2.0 * q.w * cross(v, g_y);
    g_q[1] += g_u.x;
    g_q[2] += g_u.y;
    g_q[3] += g_u.z;
    if (g_v) *g_v += qrotate(qconj(q), g_y);
}

// t = 2 vec(d ⊗ conj(r)) pullback
void dq_translation_backward(const Quat& r, const Quat& d, const Vec3& g_t, double g_r[4], double g_d[4]) {
    Vec3 rv = r.vec(), dv = d.vec();
    g_d[0] += dot(-2.0 * rv, g_t);
    Vec3 g_dv = 2.0 * (r.w * g_t - cross(rv, g_t));
    g_d[1] += g_dv.x;
    g_d[2] += g_dv.y;
    g_d[3] += g_dv.z;
    g_r[0] += dot(2.0 * dv, g_t);
    Vec3 g_rv = -2.0 * d.w * g_t + 2.0 * cross(dv, g_t);
    g_r[1] += g_rv.x;
    g_r[2] += g_rv.y;
    g_r[3] += g_rv.z;
}

// normalization pullback: gradients on (r_hat, d_hat) -> raw sums (R, D)
void dq_normalize_backward(const Quat& R, const Quat& D, const double g_rhat[4], const double g_dhat[4],
                           double g_R[4], double g_D[4]) {
    double n2 = qdot(R, R);
    double n = std::sqrt(n2);
    double n3 = n2 * n, n5 = n2 * n3;
    Quat gr{g_rhat[0], g_rhat[1], g_rhat[2], g_rhat[3]};
    Quat gd{g_dhat[0], g_dhat[1], g_dhat[2], g_dhat[3]};
    double RD = qdot(R, D);
    double Rgr = qdot(R, gr);
    double Rgd = qdot(R, gd);
    double Dgd = qdot(D, gd);
    Quat outR = (1.0 / n) * gr - (Rgr / n3) * R;
    outR = outR - (Dgd / n3) * R - (Rgd / n3) * D - (RD / n3) * gd;
    outR = outR + (3.0 * RD * Rgd / n5) * R;
    Quat outD = (1.0 / n) * gd - (Rgd / n3) * R;
    for (int k = 0; k < 4; ++k) {
        g_R[k] += (&outR.w)[k];
        g_D[k] += (&outD.w)[k];
    }
}

// tangent pullback for T(xi) = rigid_from_tangent(xi) ∘ T0 on a dual
// quaternion: g on the 8 components of q -> g on the 6 tangent coordinates
void pose_tangent_backward(const DualQuat& q0, const double g_real[4], const double g_dual[4],
                           std::array<double, 6>& g_xi) {
    for (int i = 0; i < 3; ++i) {
        Quat e{0, 0, 0, 0};
        (&e.w)[1 + i] = 0.5;
        // rotation direction: (e ⊗ q0.real, e ⊗ q0.dual)
        Quat dr = qmul(e, q0.real);
        Quat dd = qmul(e, q0.dual);
        g_xi[i] += dr.w * g_real[0] + dr.x * g_real[1] + dr.y * g_real[2] + dr.z * g_real[3] +
                   dd.w * g_dual[0] + dd.x * g_dual[1] + dd.y * g_dual[2] + dd.z * g_dual[3];
        // translation direction: (0, e ⊗ q0.real) on the dual part
        g_xi[3 + i] += dr.w * g_dual[0] + dr.x * g_dual[1] + dr.y * g_dual[2] + dr.z * g_dual[3];
    }
}

// ---------------------------------------------------------------------------
// blend + apply with backward

struct BlendCache {
    std::vector<double> sign;
    Quat R{0, 0, 0, 0}, D{0, 0, 0, 0};  // raw weighted sums
    DualQuat unit;                      // normalized
};

DualQuat blend_forward(const std::vector<double>& w, const std::vector<DualQuat>& dqs, BlendCache& cache) {
    size_t pivot = 0;
    for (size_t b = 1; b < w.size(); ++b)
        if (w[b] > w[pivot]) pivot = b;
    cache.sign.assign(w.size(), 1.0);
    cache.R = Quat{0, 0, 0, 0};
    cache.D = Quat{0, 0, 0, 0};
    for (size_t b = 0; b < w.size(); ++b) {
        cache.sign[b] = qdot(dqs[b].real, dqs[pivot].real) < 0.0 ? -1.0 : 1.0;
        double c = cache.sign[b] * w[b];
        cache.R = cache.R + c * dqs[b].real;
        cache.D = cache.D + c * dqs[b].dual;
    }
    if (qnorm(cache.R) < 1e-8) throw InvariantError("degenerate dual quaternion blend (real parts cancel)");
    double n = qnorm(cache.R);
    Quat real = (1.0 / n) * cache.R;
    Quat dual = (1.0 / n) * cache.D;
    dual = dual - qdot(real, dual) * real;
    cache.unit = {real, dual};
    return cache.unit;
}

// pullback through apply(unit, X) and the blend; returns g on weights,
// accumulates per-bone dq gradients through `per_bone` callback
template <class PerBoneFn>
void blend_apply_backward(const std::vector<double>& w, const std::vector<DualQuat>& dqs,
                          const BlendCache& cache, const Vec3& X, const Vec3& g_out,
                          std::vector<double>& g_w, Vec3* g_X, PerBoneFn&& per_bone) {
    double g_rhat[4] = {0, 0, 0, 0};
    double g_dhat[4] = {0, 0, 0, 0};
    qrotate_backward(cache.unit.real, X, g_out, g_rhat, g_X);
    dq_translation_backward(cache.unit.real, cache.unit.dual, g_out, g_rhat, g_dhat);

    double g_R[4] = {0, 0, 0, 0};
    double g_D[4] = {0, 0, 0, 0};
    dq_normalize_backward(cache.R, cache.D, g_rhat, g_dhat, g_R, g_D);

    Quat gR{g_R[0], g_R[1], g_R[2], g_R[3]};
    Quat gD{g_D[0], g_D[1], g_D[2], g_D[3]};
    g_w.assign(w.size(), 0.0);
    for (size_t b = 0; b < w.size(); ++b) {
        double s = cache.sign[b];
        g_w[b] = s * (qdot(dqs[b].real, gR) + qdot(dqs[b].dual, gD));
        double c = s * w[b];
        double g_real[4] = {c * gR.w, c * gR.x, c * gR.y, c * gR.z};
        double g_dual[4] = {c * gD.w, c * gD.x, c * gD.y, c * gD.z};
        per_bone(static_cast<int>(b), g_real, g_dual);
    }
}

// ---------------------------------------------------------------------------
// forward deformation backward

void forward_point_backward(const Vec3& X, const FitState& st, const PoseState& pose,
                            SkinBackend backend, const Vec3& g_y, GradSinks& sinks) {
    const int B = st.bones.count();
    WeightCache wc;
    std::vector<double> w = weights_forward(st.bones, &st.delta, st.gamma, X, wc);
    std::vector<double> w_used = backend == SkinBackend::Rigid ? rigid_binarize(w) : w;

    // global chain: y = cam(root(x_obj))
    RigidTransform global = pose.global();
    Vec3 g_xobj = transpose(global.rotation) * g_y;

    std::vector<double> g_w(B, 0.0);
    Vec3 x_obj;
    if (backend == SkinBackend::Lbs) {
        std::vector<RigidTransform> rigs(B);
        x_obj = {0, 0, 0};
        for (int b = 0; b < B; ++b) {
            rigs[b] = dq_to_rigid(pose.bone_poses[b]);
            x_obj += w_used[b] * rigs[b].apply(X);
        }
        for (int b = 0; b < B; ++b) {
            Vec3 p = rigs[b].apply(X);
            g_w[b] = dot(g_xobj, p);
            if (sinks.pose) add6((*sinks.pose)[b], w_used[b] * cross(p, g_xobj), w_used[b] * g_xobj);
        }
    } else {
        BlendCache bc;
        DualQuat blended = blend_forward(w_used, pose.bone_poses, bc);
        x_obj = dq_apply(blended, X);
        blend_apply_backward(w_used, pose.bone_poses, bc, X, g_xobj, g_w, nullptr,
                             [&](int b, const double g_real[4], const double g_dual[4]) {
                                 if (sinks.pose) pose_tangent_backward(pose.bone_poses[b], g_real, g_dual,
                                                                       (*sinks.pose)[b]);
                             });
    }

    if (sinks.root) {
        Vec3 g3 = transpose(pose.cam.rotation) * g_y;
        Vec3 p = pose.root.apply(x_obj);
        add6(*sinks.root, cross(p, g3), g3);
    }

    if (backend != SkinBackend::Rigid) {
        std::vector<double> g_score = softmax_backward(w, g_w);
        WeightParamGrads pg = weight_score_backward(st.bones, wc, g_score, st.gamma, sinks);
        for (int b = 0; b < B; ++b) {
            const Mat3& V = st.bones.orientations[b];
            Vec3 r = X - st.bones.centers[b];
            Vec3 g_r = transpose(V) * pg.g_u[b];
            if (sinks.bone_centers) (*sinks.bone_centers)[b] -= g_r;
            if (sinks.bone_orients) (*sinks.bone_orients)[b] += cross(r, g_r);
        }
    }
}

// ---------------------------------------------------------------------------
// inverse deformation with backward

void inverse_point_backward(const Vec3& Xt, const FitState& st, const PoseState& pose,
                            SkinBackend backend, const Vec3& g_z, GradSinks& sinks, Vec3* g_Xt) {
    const int B = st.bones.count();
    RigidTransform global = pose.global();
    RigidTransform global_inv = global.inverse();
    Vec3 x1 = global_inv.apply(Xt);

    // transported bones and their rigid transforms
    std::vector<RigidTransform> rig(B);
    BoneSet moved = st.bones;
    for (int b = 0; b < B; ++b) {
        rig[b] = dq_to_rigid(pose.bone_poses[b]);
        moved.centers[b] = rig[b].apply(st.bones.centers[b]);
        moved.orientations[b] = st.bones.orientations[b] * transpose(rig[b].rotation);
    }

    WeightCache wc;
    std::vector<double> w = weights_forward(moved, &st.delta, st.gamma, x1, wc);
    std::vector<double> w_used = backend == SkinBackend::Rigid ? rigid_binarize(w) : w;

    std::vector<double> g_w(B, 0.0);
    Vec3 g_x1{0, 0, 0};

    if (backend == SkinBackend::Lbs) {
        for (int b = 0; b < B; ++b) {
            Vec3 p = transpose(rig[b].rotation) * (x1 - rig[b].translation);
            g_w[b] = dot(g_z, p);
            Vec3 g4 = w_used[b] * (rig[b].rotation * g_z);
            g_x1 += g4;
            if (sinks.pose) add6((*sinks.pose)[b], -cross(x1, g4), -g4);
        }
    } else {
        std::vector<DualQuat> inv(B);
        for (int b = 0; b < B; ++b) inv[b] = dq_inverse(pose.bone_poses[b]);
        BlendCache bc;
        blend_forward(w_used, inv, bc);
        blend_apply_backward(w_used, inv, bc, x1, g_z, g_w, &g_x1,
                             [&](int b, const double g_real[4], const double g_dual[4]) {
                                 if (!sinks.pose) return;
                                 // conjugation flips the vector-part gradients
                                 double gr[4] = {g_real[0], -g_real[1], -g_real[2], -g_real[3]};
                                 double gd[4] = {g_dual[0], -g_dual[1], -g_dual[2], -g_dual[3]};
                                 pose_tangent_backward(pose.bone_poses[b], gr, gd, (*sinks.pose)[b]);
                             });
    }

    if (backend != SkinBackend::Rigid) {
        std::vector<double> g_score = softmax_backward(w, g_w);
        WeightParamGrads pg = weight_score_backward(moved, wc, g_score, st.gamma, sinks);
        for (int b = 0; b < B; ++b) {
            const Mat3& Vp = moved.orientations[b];
            Vec3 h = x1 - moved.centers[b];
            Vec3 g_u = pg.g_u[b];
            Vec3 VpT_gu = transpose(Vp) * g_u;
            g_x1 += VpT_gu;
            // transported center: dO' = w x O' + v + R dO
            Vec3 g_Op = -VpT_gu;
            if (sinks.bone_centers) (*sinks.bone_centers)[b] += transpose(rig[b].rotation) * g_Op;
            if (sinks.pose) add6((*sinks.pose)[b], cross(moved.centers[b], g_Op), g_Op);
            // orientation chains: V' = V Exp(wv) R^T Exp(-w)
            if (sinks.bone_orients) {
                Vec3 m = transpose(rig[b].rotation) * h;
                (*sinks.bone_orients)[b] += cross(m, transpose(st.bones.orientations[b]) * g_u);
            }
            if (sinks.pose) add6((*sinks.pose)[b], -cross(h, VpT_gu), {0, 0, 0});
        }
    }

    // x1 = root^{-1}(cam^{-1}(Xt))
    if (sinks.root) {
        Vec3 yc = pose.cam.inverse().apply(Xt);
        Vec3 g2 = pose.root.rotation * g_x1;
        add6(*sinks.root, -cross(yc, g2), -g2);
    }
    if (g_Xt) *g_Xt += global.rotation * g_x1;
}

// ---------------------------------------------------------------------------
// loss terms (forward + optional gradients, sharing one implementation)

double frame_chamfer(const FitState& st, const FrameObservation& f, const FitConfig& cfg,
                     const PoseState& pose, std::vector<Vec3>* g_deformed) {
    const auto& samples = st.surface_points.points;
    std::vector<Vec3> deformed = deform_points(samples, st.bones, &st.delta, st.gamma, pose, cfg.backend);

    KdTree obs_tree(f.cloud.points);
    KdTree pred_tree(deformed);
    const double n_s = static_cast<double>(deformed.size());
    const double n_c = static_cast<double>(f.cloud.points.size());

    std::vector<int> near_obs(deformed.size());
    std::vector<int> near_pred(f.cloud.points.size());
    const std::int64_t ns = static_cast<std::int64_t>(deformed.size());
    const std::int64_t nc = static_cast<std::int64_t>(f.cloud.points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < ns; ++i) near_obs[i] = obs_tree.nearest(deformed[i]);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nc; ++i) near_pred[i] = pred_tree.nearest(f.cloud.points[i]);

    double loss = 0.0;
    for (size_t i = 0; i < deformed.size(); ++i) loss += norm2(deformed[i] - f.cloud.points[near_obs[i]]) / n_s;
    for (size_t i = 0; i < f.cloud.points.size(); ++i)
        loss += norm2(f.cloud.points[i] - deformed[near_pred[i]]) / n_c;

    if (g_deformed) {
        g_deformed->assign(deformed.size(), Vec3{});
        for (size_t i = 0; i < deformed.size(); ++i)
            (*g_deformed)[i] += (2.0 / n_s) * (deformed[i] - f.cloud.points[near_obs[i]]);
        for (size_t i = 0; i < f.cloud.points.size(); ++i)
            (*g_deformed)[near_pred[i]] += (2.0 / n_c) * (deformed[near_pred[i]] - f.cloud.points[i]);
    }
    return loss;
}

std::vector<int> surface_subset(const FrameObservation& f, const FitConfig& cfg) {
    int m = std::min<int>(cfg.surface_subsample, static_cast<int>(f.cloud.points.size()));
    std::vector<int> idx(m);
    Rng rng(Rng::derive(cfg.seed, "surf-subset") + static_cast<std::uint64_t>(f.frame));
    for (int i = 0; i < m; ++i) idx[i] = static_cast<int>(rng.uniform_index(f.cloud.points.size()));
    return idx;
}

// mean |sdf(inverse(obs))|^2; gradients into the grid and the inverse chain
double frame_surface_term(const FitState& st, const FrameObservation& f, const FitConfig& cfg,
                          const PoseState& pose, double coef, GradSinks* sinks) {
    std::vector<int> idx = surface_subset(f, cfg);
    if (idx.empty()) return 0.0;
    double acc = 0.0;
    for (int i : idx) {
        Vec3 xc = qrbs_inverse(f.cloud.points[i], st.bones, &st.delta, st.gamma, pose, cfg.backend);
        SDFGrid::Stencil stencil;
        double s = st.sdf.sample_with_stencil(xc, stencil);
        acc += s * s;
        if (sinks) {
            double g_s = coef * 2.0 * s / static_cast<double>(idx.size());
            double h_s = coef * 2.0 / static_cast<double>(idx.size());
            for (int c = 0; c < 8; ++c) {
                if (sinks->sdf) (*sinks->sdf)[stencil.node[c]] += g_s * stencil.weight[c];
                if (sinks->sdf_curv)
                    (*sinks->sdf_curv)[stencil.node[c]] += h_s * stencil.weight[c] * stencil.weight[c];
            }
            Vec3 g_xc = g_s * stencil.spatial_grad;
            inverse_point_backward(f.cloud.points[i], st, pose, cfg.backend, g_xc, *sinks, nullptr);
        }
    }
    return acc / static_cast<double>(idx.size());
}

double frame_silhouette_term(const FitState& st, const FrameObservation& f, const FitConfig& cfg,
                             const PoseState& pose, double coef, GradSinks* sinks) {
    if (!f.has_silhouette()) return 0.0;
    RenderConfig rc;
    rc.samples = cfg.silhouette_samples;
    rc.beta = st.beta;
    rc.seed = cfg.seed;
    DeformFn deform = [&](const Vec3& x) {
        return qrbs_inverse(x, st.bones, &st.delta, st.gamma, pose, cfg.backend);
    };
    double acc = 0.0;
    int count = 0;
    for (int v = 0; v < f.camera.height; v += cfg.silhouette_stride)
        for (int u = 0; u < f.camera.width; u += cfg.silhouette_stride) ++count;
    for (int v = 0; v < f.camera.height; v += cfg.silhouette_stride) {
        for (int u = 0; u < f.camera.width; u += cfg.silhouette_stride) {
            Ray ray = f.camera.pixel_ray(u, v, st.sdf.bounds);
            RayShade shade = render_ray(st.sdf, nullptr, deform, ray, rc);
            double mask = f.silhouette[static_cast<size_t>(v) * f.camera.width + u];
            double diff = shade.opacity - mask;
            acc += diff * diff;
            if (sinks) {
                double g_op = coef * 2.0 * diff / count;
                RayGradSinks rs;
                rs.sdf_nodes = sinks->sdf;
                rs.beta = nullptr;
                double g_beta_lin = 0.0;
                if (sinks->log_beta) rs.beta = &g_beta_lin;
                std::vector<std::pair<Vec3, Vec3>> sample_grads;
                rs.samples = &sample_grads;
                render_ray_backward(st.sdf, nullptr, deform, ray, rc, {0, 0, 0}, g_op, rs);
                if (sinks->log_beta) *sinks->log_beta += g_beta_lin * st.beta;  // chain to log-beta
                for (const auto& [x_obs, g_xc] : sample_grads) {
                    if (norm2(g_xc) == 0.0) continue;
                    inverse_point_backward(x_obs, st, pose, cfg.backend, g_xc, *sinks, nullptr);
                }
            }
        }
    }
    return count > 0 ? acc / count : 0.0;
}

// pushes the signed distance at spurious canonical surface samples toward
// the distance of the nearest anchored-frame observation, so surface that no
// data supports retreats instead of lingering
double carve_term(const FitState& st, const FrameObservation& first, const FitConfig& cfg, double coef,
                  GradSinks* sinks) {
    const auto& pts = st.surface_points.points;
    if (pts.empty()) return 0.0;
    KdTree obs_tree(first.cloud.points);
    Vec3 cell = st.sdf.cell_size();
    double margin = 1.5 * (cell.x + cell.y + cell.z) / 3.0;
    (void)cfg;
    double acc = 0.0;
    std::int64_t active = 0;
    for (const Vec3& x : pts) {
        double d2;
        obs_tree.nearest(x, &d2);
        double d = std::sqrt(d2);
        if (d <= margin) continue;
        ++active;
    }
    if (active == 0) return 0.0;
    for (const Vec3& x : pts) {
        double d2;
        obs_tree.nearest(x, &d2);
        double d = std::sqrt(d2);
        if (d <= margin) continue;
        SDFGrid::Stencil stencil;
        double s = st.sdf.sample_with_stencil(x, stencil);
        double diff = s - d;
        acc += diff * diff;
        if (sinks && sinks->sdf) {
            double g_s = coef * 2.0 * diff / static_cast<double>(active);
            double h_s = coef * 2.0 / static_cast<double>(active);
            for (int c = 0; c < 8; ++c) {
                (*sinks->sdf)[stencil.node[c]] += g_s * stencil.weight[c];
                if (sinks->sdf_curv)
                    (*sinks->sdf_curv)[stencil.node[c]] += h_s * stencil.weight[c] * stencil.weight[c];
            }
        }
    }
    return acc / static_cast<double>(active);
}

// mean squared mismatch against the precomputed per-node distance target
double field_term(const FitState& st, double coef, GradSinks* sinks) {
    if (st.field_target.size() != st.sdf.node_count()) return 0.0;
    double acc = 0.0;
    const double m = static_cast<double>(st.sdf.node_count());
    for (size_t nidx = 0; nidx < st.sdf.node_count(); ++nidx) {
        double diff = st.sdf.values[nidx] - st.field_target[nidx];
        acc += diff * diff;
        if (sinks && sinks->sdf) {
            (*sinks->sdf)[nidx] += coef * 2.0 * diff / m;
            if (sinks->sdf_curv) (*sinks->sdf_curv)[nidx] += coef * 2.0 / m;
        }
    }
    return acc / m;
}

double cycle_term(const FitState& st, const FitConfig& cfg, const PoseState& pose, double coef,
                  GradSinks* sinks) {
    const auto& pts = st.surface_points.points;
    if (pts.empty()) return 0.0;
    double acc = 0.0;
    for (const Vec3& X : pts) {
        Vec3 y = qrbs_forward(X, st.bones, &st.delta, st.gamma, pose, cfg.backend);
        Vec3 z = qrbs_inverse(y, st.bones, &st.delta, st.gamma, pose, cfg.backend);
        double r = norm(z - X);
        acc += r;
        if (sinks && r > 1e-12) {
            Vec3 g_z = (coef / (r * static_cast<double>(pts.size()))) * (z - X);
            Vec3 g_y{0, 0, 0};
            inverse_point_backward(y, st, pose, cfg.backend, g_z, *sinks, &g_y);
            forward_point_backward(X, st, pose, cfg.backend, g_y, *sinks);
        }
    }
    return acc / static_cast<double>(pts.size());
}

double sparse_term(const FitState& st, double coef, GradSinks* sinks) {
    const auto& pts = st.surface_points.points;
    if (pts.empty() || st.assignments.empty()) return 0.0;
    const int B = st.bones.count();
    double masked = 0.0;
    for (const auto& m : st.assignments)
        for (int b = 0; b < B; ++b)
            if (!m.on[b]) masked += 1.0;
    if (masked <= 0.0) return 0.0;

    double energy = 0.0;
    for (size_t p = 0; p < pts.size(); ++p) {
        WeightCache wc;
        std::vector<double> w = weights_forward(st.bones, &st.delta, st.gamma, pts[p], wc);
        const auto& m = st.assignments[p].on;
        for (int b = 0; b < B; ++b)
            if (!m[b]) energy += w[b] * w[b];
        if (sinks) {
            std::vector<double> g_w(B, 0.0);
            for (int b = 0; b < B; ++b)
                if (!m[b]) g_w[b] = coef * 2.0 * w[b] / masked;
            std::vector<double> g_score = softmax_backward(w, g_w);
            WeightParamGrads pg = weight_score_backward(st.bones, wc, g_score, st.gamma, *sinks);
            for (int b = 0; b < B; ++b) {
                const Mat3& V = st.bones.orientations[b];
                Vec3 r = pts[p] - st.bones.centers[b];
                Vec3 g_r = transpose(V) * pg.g_u[b];
                if (sinks->bone_centers) (*sinks->bone_centers)[b] -= g_r;
                if (sinks->bone_orients) (*sinks->bone_orients)[b] += cross(r, g_r);
            }
        }
    }
    return energy / masked;
}

double scale_aniso_term(const FitState& st, double coef, GradSinks* sinks) {
    const int B = st.bones.count();
    double acc = 0.0;
    for (int b = 0; b < B; ++b) {
        Vec3 l{std::log(st.bones.precisions[b].x), std::log(st.bones.precisions[b].y),
               std::log(st.bones.precisions[b].z)};
        double mean = (l.x + l.y + l.z) / 3.0;
        Vec3 d = l - Vec3{mean, mean, mean};
        acc += (d.x * d.x + d.y * d.y + d.z * d.z) / 3.0;
        if (sinks && sinks->bone_log_scales) (*sinks->bone_log_scales)[b] += (coef * 2.0 / (3.0 * B)) * d;
    }
    return acc / B;
}

double pose_smooth_term(const FitState& st, int frames, double coef, std::vector<GradSinks>* frame_sinks) {
    const int T = frames;
    const int B = st.bones.count();
    if (T < 2) return 0.0;
    double acc = 0.0;
    const double denom = static_cast<double>((T - 1) * B);
    for (int t = 0; t + 1 < T; ++t) {
        for (int b = 0; b < B; ++b) {
            RigidTransform a = dq_to_rigid(st.poses[t].bone_poses[b]);
            RigidTransform c = dq_to_rigid(st.poses[t + 1].bone_poses[b]);
            RigidTransform rel = compose(c, a.inverse());
            Vec3 rv, tv;
            rigid_to_tangent(rel, rv, tv);
            acc += (norm2(rv) + norm2(tv)) / denom;
            if (frame_sinks) {
                double s = coef * 2.0 / denom;
                if ((*frame_sinks)[t + 1].pose)
                    add6((*(*frame_sinks)[t + 1].pose)[b], s * rv, s * tv);
                if ((*frame_sinks)[t].pose)
                    add6((*(*frame_sinks)[t].pose)[b], -s * rv, -(s)*transpose(rel.rotation) * tv);
            }
        }
    }
    return acc;
}

double eikonal_term(const FitState& st, GradSinks* sinks) {
    const SDFGrid& g = st.sdf;
    Vec3 h = g.cell_size();
    double acc = 0.0;
    std::int64_t count = 0;
    for (int k = 1; k + 1 < g.nz; ++k)
        for (int j = 1; j + 1 < g.ny; ++j)
            for (int i = 1; i + 1 < g.nx; ++i) {
                Vec3 grad{(g.values[g.node_index(i + 1, j, k)] - g.values[g.node_index(i - 1, j, k)]) / (2 * h.x),
                          (g.values[g.node_index(i, j + 1, k)] - g.values[g.node_index(i, j - 1, k)]) / (2 * h.y),
                          (g.values[g.node_index(i, j, k + 1)] - g.values[g.node_index(i, j, k - 1)]) / (2 * h.z)};
                double n = norm(grad);
                double d = n - 1.0;
                acc += d * d;
                ++count;
                if (sinks && sinks->sdf && n > 1e-12) {
                    Vec3 gg = (2.0 * d / n) * grad;  // d(d^2)/d grad
                    (*sinks->sdf)[g.node_index(i + 1, j, k)] += gg.x / (2 * h.x);
                    (*sinks->sdf)[g.node_index(i - 1, j, k)] -= gg.x / (2 * h.x);
                    (*sinks->sdf)[g.node_index(i, j + 1, k)] += gg.y / (2 * h.y);
                    (*sinks->sdf)[g.node_index(i, j - 1, k)] -= gg.y / (2 * h.y);
                    (*sinks->sdf)[g.node_index(i, j, k + 1)] += gg.z / (2 * h.z);
                    (*sinks->sdf)[g.node_index(i, j, k - 1)] -= gg.z / (2 * h.z);
                    if (sinks->sdf_curv) {
                        // Gauss-Newton diagonal bound per touched node
                        (*sinks->sdf_curv)[g.node_index(i + 1, j, k)] += 2.0 / (4 * h.x * h.x);
                        (*sinks->sdf_curv)[g.node_index(i - 1, j, k)] += 2.0 / (4 * h.x * h.x);
                        (*sinks->sdf_curv)[g.node_index(i, j + 1, k)] += 2.0 / (4 * h.y * h.y);
                        (*sinks->sdf_curv)[g.node_index(i, j - 1, k)] += 2.0 / (4 * h.y * h.y);
                        (*sinks->sdf_curv)[g.node_index(i, j, k + 1)] += 2.0 / (4 * h.z * h.z);
                        (*sinks->sdf_curv)[g.node_index(i, j, k - 1)] += 2.0 / (4 * h.z * h.z);
                    }
                }
            }
    if (count == 0) return 0.0;
    return acc / static_cast<double>(count);
}

}  // namespace

LossBreakdown total_loss(const FitState& state, const std::vector<FrameObservation>& obs,
                         const FitConfig& cfg) {
    state.validate();
    cfg.validate();
    if (state.poses.size() < obs.size()) throw InvariantError("fewer pose states than observed frames");
    const int T = static_cast<int>(obs.size());
    LossBreakdown out;
    for (int t = 0; t < T; ++t) {
        const PoseState& pose = state.poses[t];
        double boost = t == 0 ? cfg.anchor_data_boost : 1.0;
        double data = boost * frame_chamfer(state, obs[t], cfg, pose, nullptr);
        bool surface_on = cfg.surface_frames <= 0 || t < cfg.surface_frames;
        if (cfg.surface_weight > 0 && surface_on)
            data += boost * cfg.surface_weight * frame_surface_term(state, obs[t], cfg, pose, 0.0, nullptr);
        if (cfg.use_silhouette && cfg.silhouette_weight > 0)
            data += cfg.silhouette_weight * frame_silhouette_term(state, obs[t], cfg, pose, 0.0, nullptr);
        out.data += data / T;
        if (cfg.weights.cycle > 0) out.cycle += cycle_term(state, cfg, pose, 0.0, nullptr) / T;
    }
    if (cfg.carve_weight > 0) out.data += cfg.carve_weight * carve_term(state, obs[0], cfg, 0.0, nullptr);
    if (cfg.field_weight > 0) out.data += cfg.field_weight * field_term(state, 0.0, nullptr);
    if (cfg.weights.sparse > 0) out.sparse = sparse_term(state, 0.0, nullptr);
    out.reg = cfg.reg_scale_aniso * scale_aniso_term(state, 0.0, nullptr) +
              cfg.reg_pose_smooth * pose_smooth_term(state, T, 0.0, nullptr) +
              cfg.reg_eikonal * eikonal_term(state, nullptr);
    out.total = cfg.weights.data * out.data + cfg.weights.sparse * out.sparse +
                cfg.weights.cycle * out.cycle + cfg.weights.reg * out.reg;
    return out;
}

Gradients gradients(const FitState& state, const std::vector<FrameObservation>& obs,
                    const FitConfig& cfg) {
    state.validate();
    cfg.validate();
    if (state.poses.size() < obs.size()) throw InvariantError("fewer pose states than observed frames");
    const int T = static_cast<int>(obs.size());
    const int B = state.bones.count();

    Gradients g;
    g.bone_centers.assign(B, Vec3{});
    g.bone_orients.assign(B, Vec3{});
    g.bone_log_scales.assign(B, Vec3{});
    g.pose.assign(T, std::vector<std::array<double, 6>>(B, {0, 0, 0, 0, 0, 0}));
    g.root.assign(T, {0, 0, 0, 0, 0, 0});
    g.delta.assign(B, std::vector<double>(state.delta.values.empty() ? 0 : state.delta.values[0].size(), 0.0));
    g.sdf.assign(state.sdf.node_count(), 0.0);
    g.sdf_curvature.assign(state.sdf.node_count(), 0.0);
    g.color.assign(state.color.node_count() * 3, 0.0);
    g.log_beta = 0.0;

    // per-frame sinks write into the shared arrays plus that frame's slots
    std::vector<GradSinks> sinks(T);
    for (int t = 0; t < T; ++t) {
        sinks[t].bone_centers = &g.bone_centers;
        sinks[t].bone_orients = &g.bone_orients;
        sinks[t].bone_log_scales = &g.bone_log_scales;
        sinks[t].delta = &g.delta;
        sinks[t].sdf = &g.sdf;
        sinks[t].sdf_curv = &g.sdf_curvature;
        sinks[t].log_beta = &g.log_beta;
        sinks[t].pose = &g.pose[t];
        sinks[t].root = &g.root[t];
    }

    for (int t = 0; t < T; ++t) {
        const PoseState& pose = state.poses[t];
        double boost = t == 0 ? cfg.anchor_data_boost : 1.0;
        double coef_data = boost * cfg.weights.data / T;

        // chamfer gradients through the forward deformation
        std::vector<Vec3> g_deformed;
        frame_chamfer(state, obs[t], cfg, pose, &g_deformed);
        for (size_t p = 0; p < g_deformed.size(); ++p) {
            Vec3 gd = coef_data * g_deformed[p];
            if (norm2(gd) == 0.0) continue;
            forward_point_backward(state.surface_points.points[p], state, pose, cfg.backend, gd, sinks[t]);
        }

        bool surface_on = cfg.surface_frames <= 0 || t < cfg.surface_frames;
        if (cfg.surface_weight > 0 && surface_on)
            frame_surface_term(state, obs[t], cfg, pose, coef_data * cfg.surface_weight, &sinks[t]);
        if (cfg.use_silhouette && cfg.silhouette_weight > 0)
            frame_silhouette_term(state, obs[t], cfg, pose, (cfg.weights.data / T) * cfg.silhouette_weight, &sinks[t]);
        if (cfg.weights.cycle > 0)
            cycle_term(state, cfg, pose, cfg.weights.cycle / T, &sinks[t]);
    }

    if (cfg.carve_weight > 0) {
        GradSinks shared;
        shared.sdf = &g.sdf;
        shared.sdf_curv = &g.sdf_curvature;
        carve_term(state, obs[0], cfg, cfg.weights.data * cfg.carve_weight, &shared);
    }
    if (cfg.field_weight > 0) {
        GradSinks shared;
        shared.sdf = &g.sdf;
        shared.sdf_curv = &g.sdf_curvature;
        field_term(state, cfg.weights.data * cfg.field_weight, &shared);
    }
    if (cfg.weights.sparse > 0) {
        GradSinks shared;
        shared.bone_centers = &g.bone_centers;
        shared.bone_orients = &g.bone_orients;
        shared.bone_log_scales = &g.bone_log_scales;
        shared.delta = &g.delta;
        sparse_term(state, cfg.weights.sparse, &shared);
    }
    {
        GradSinks shared;
        shared.bone_log_scales = &g.bone_log_scales;
        shared.sdf = &g.sdf;
        scale_aniso_term(state, cfg.weights.reg * cfg.reg_scale_aniso, &shared);
        pose_smooth_term(state, T, cfg.weights.reg * cfg.reg_pose_smooth, &sinks);
        // eikonal accumulates unnormalized; rescale afterwards
        std::vector<double> eik(g.sdf.size(), 0.0);
        std::vector<double> eik_curv(g.sdf.size(), 0.0);
        GradSinks eik_sink;
        eik_sink.sdf = &eik;
        eik_sink.sdf_curv = &eik_curv;
        eikonal_term(state, &eik_sink);
        std::int64_t interior = static_cast<std::int64_t>(std::max(state.sdf.nx - 2, 0)) *
                                std::max(state.sdf.ny - 2, 0) * std::max(state.sdf.nz - 2, 0);
        if (interior > 0) {
            double s = cfg.weights.reg * cfg.reg_eikonal / static_cast<double>(interior);
            for (size_t i = 0; i < eik.size(); ++i) {
                g.sdf[i] += s * eik[i];
                g.sdf_curvature[i] += s * eik_curv[i];
            }
        }
    }

    g.check_finite();
    return g;
}

void Gradients::check_finite() const {
    auto check = [](double v, const char* group) {
        if (!std::isfinite(v)) throw InvariantError(std::string("non-finite gradient in group ") + group);
    };
    for (const Vec3& v : bone_centers) { check(v.x, "bone_centers"); check(v.y, "bone_centers"); check(v.z, "bone_centers"); }
    for (const Vec3& v : bone_orients) { check(v.x, "bone_orients"); check(v.y, "bone_orients"); check(v.z, "bone_orients"); }
    for (const Vec3& v : bone_log_scales) { check(v.x, "bone_scales"); check(v.y, "bone_scales"); check(v.z, "bone_scales"); }
    for (const auto& f : pose)
        for (const auto& b : f)
            for (double v : b) check(v, "pose");
    for (const auto& f : root)
        for (double v : f) check(v, "root");
    for (const auto& d : delta)
        for (double v : d) check(v, "delta");
    for (double v : sdf) check(v, "sdf");
    for (double v : color) check(v, "color");
    check(log_beta, "beta");
}

}  // namespace qrfit
