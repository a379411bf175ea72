#include "qrfit/fit.hpp"

#include "qrfit/error.hpp"
#include "qrfit/kdtree.hpp"
#include "qrfit/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace qrfit {

void FrameObservation::validate() const {
    if (cloud.empty()) throw InvariantError("frame observation needs a non-empty point cloud");
    for (const Vec3& p : cloud.points)
        if (!finite(p)) throw InvariantError("non-finite observation point");
    if (has_silhouette()) {
        if (static_cast<int>(silhouette.size()) != camera.width * camera.height)
            throw InvariantError("silhouette size does not match its camera");
    }
}

void FitConfig::validate() const {
    if (iterations < 1) throw InvariantError("fit needs at least one iteration");
    if (bones < 1) throw InvariantError("fit needs at least one bone");
    if (weights.data < 0 || weights.sparse < 0 || weights.cycle < 0 || weights.reg < 0)
        throw InvariantError("loss weights must be nonnegative");
    if (!(gamma_start > 0 && gamma_end > 0 && beta_start > 0 && beta_end > 0))
        throw InvariantError("anneal schedules must stay positive");
    if (fit_grid < 2 || assign_grid < 2 || extract_grid < 2 || delta_res < 2)
        throw InvariantError("grid resolutions must be >= 2");
    if (surface_samples < 1) throw InvariantError("surface sample count must be >= 1");
}

void FitState::validate() const {
    bones.validate();
    for (const PoseState& p : poses) {
        if (static_cast<int>(p.bone_poses.size()) != bones.count())
            throw InvariantError("pose state bone count mismatch");
        p.validate();
    }
    delta.validate();
    sdf.validate();
    color.validate();
    if (!(gamma > 0) || !(beta > 0)) throw InvariantError("gamma and beta must be positive");
}

std::vector<Vec3> kmeans_centers(const std::vector<Vec3>& points, int k, std::uint64_t seed) {
    if (points.empty() || k < 1) throw InvariantError("kmeans needs points and k >= 1");
    Rng rng(Rng::derive(seed, "kmeans"));
    std::vector<Vec3> centers;
    centers.push_back(points[rng.uniform_index(points.size())]);
    std::vector<double> d2(points.size());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < points.size(); ++i) {
            double best = norm2(points[i] - centers[0]);
            for (size_t c = 1; c < centers.size(); ++c) best = std::min(best, norm2(points[i] - centers[c]));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(points[rng.uniform_index(points.size())]);
            continue;
        }
        double pick = rng.uniform() * total;
        size_t chosen = 0;
        double acc = 0.0;
        for (size_t i = 0; i < points.size(); ++i) {
            acc += d2[i];
            if (acc >= pick) {
                chosen = i;
                break;
            }
        }
        centers.push_back(points[chosen]);
    }

    std::vector<int> label(points.size(), 0);
    for (int iter = 0; iter < 25; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < points.size(); ++i) {
            int best = 0;
            double bd = norm2(points[i] - centers[0]);
            for (int c = 1; c < k; ++c) {
                double d = norm2(points[i] - centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (label[i] != best) {
                label[i] = best;
                changed = true;
            }
        }
        std::vector<Vec3> sum(k, Vec3{});
        std::vector<int> count(k, 0);
        for (size_t i = 0; i < points.size(); ++i) {
            sum[label[i]] += points[i];
            ++count[label[i]];
        }
        for (int c = 0; c < k; ++c)
            if (count[c] > 0) centers[c] = sum[c] / count[c];
        if (!changed) break;
    }
    return centers;
}

namespace {

double gamma_at(const FitConfig& cfg, int iter) {
    // sharp before pose tracking starts; staged runs anneal over the
    // bootstrap, plain runs over the first half
    double span = cfg.warm_start ? std::max(1.0, cfg.bootstrap * cfg.iterations)
                                 : std::max(1.0, cfg.iterations / 2.0);
    double u = std::min(1.0, iter / span);
    return cfg.gamma_start + u * (cfg.gamma_end - cfg.gamma_start);
}

double beta_at(const FitConfig& cfg, int iter) {
    double u = cfg.iterations > 1 ? static_cast<double>(iter) / (cfg.iterations - 1) : 1.0;
    return cfg.beta_start * std::pow(cfg.beta_end / cfg.beta_start, u);
}

double lr_decay(const FitConfig& cfg, int iter) {
    // flat while frames are still activating, cosine afterwards
    double ramp = cfg.warm_start ? cfg.warm_ramp * cfg.iterations : 0.0;
    if (iter < ramp) return 1.0;
    double span = std::max(1.0, cfg.iterations - ramp);
    double u = std::min(1.0, (iter - ramp) / span);
    return 0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * u));
}

Mat3 reorthonormalize(const Mat3& m) {
    return quat_to_matrix(quat_from_matrix(m));
}

// RMS-style per-parameter accumulator; momentum-free, bias-corrected so the
// first steps are lr-sized rather than lr/(1-decay)-sized
struct Adapt {
    std::vector<double> acc;
    std::vector<double> correction;  // 1 - decay^t per slot
    double decay = 0.99;
    double eps = 1e-8;

    void ensure(size_t n) {
        if (acc.size() != n) {
            acc.assign(n, 0.0);
            correction.assign(n, 0.0);
        }
    }
    double step(size_t i, double g) {
        acc[i] = decay * acc[i] + (1.0 - decay) * g * g;
        correction[i] = decay * correction[i] + (1.0 - decay);
        return g / (std::sqrt(acc[i] / correction[i]) + eps);
    }
};

}  // namespace

FitState initial_state(const std::vector<FrameObservation>& obs, const FitConfig& cfg) {
    cfg.validate();
    if (obs.empty()) throw InvariantError("fit needs at least one observed frame");
    for (const FrameObservation& f : obs) f.validate();

    Aabb box;
    for (const FrameObservation& f : obs) box.expand(f.cloud.bounds());
    Vec3 pad = 0.25 * (box.hi - box.lo) + Vec3{1e-3, 1e-3, 1e-3};
    Aabb domain{box.lo - pad, box.hi + pad};

    FitState st;
    st.gamma = cfg.gamma_start;
    st.beta = cfg.beta_start;

    const PointCloud& first = obs.front().cloud;
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : first.points) centroid += p;
    centroid = centroid / static_cast<double>(first.points.size());
    double radius = 0.0;
    for (const Vec3& p : first.points) radius = std::max(radius, norm(p - centroid));
    radius = 1.05 * radius + 0.02 * domain.diagonal();

    // every run starts from the same sphere, enclosing the first frame so the
    // carving term can shrink-wrap it onto the data
    st.sdf = SDFGrid::make(cfg.fit_grid, cfg.fit_grid, cfg.fit_grid, domain);
    st.sdf.fill([&](const Vec3& p) { return norm(p - centroid) - radius; });

    if (cfg.field_weight > 0) {
        // signed distance target from the anchored frame: unsigned distance
        // transform, sign from a flood fill that marks everything reachable
        // from the domain boundary without crossing the sampled surface
        KdTree tree(first.points);
        const int n = cfg.fit_grid;
        std::vector<double> dist_field(st.sdf.node_count());
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) {
                    double d2;
                    tree.nearest(st.sdf.node_position(i, j, k), &d2);
                    dist_field[st.sdf.node_index(i, j, k)] = std::sqrt(d2);
                }
        Vec3 cell = st.sdf.cell_size();
        double eps = 1.5 * std::max({cell.x, cell.y, cell.z});
        std::vector<char> outside(st.sdf.node_count(), 0);
        std::vector<int> stack;
        auto push_if_open = [&](int i, int j, int k) {
            int idx = st.sdf.node_index(i, j, k);
            if (!outside[idx] && dist_field[idx] > eps) {
                outside[idx] = 1;
                stack.push_back(idx);
            }
        };
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                push_if_open(a, b, 0);
                push_if_open(a, b, n - 1);
                push_if_open(a, 0, b);
                push_if_open(a, n - 1, b);
                push_if_open(0, a, b);
                push_if_open(n - 1, a, b);
            }
        while (!stack.empty()) {
            int idx = stack.back();
            stack.pop_back();
            int i = idx % n, j = (idx / n) % n, k = idx / (n * n);
            if (i > 0) push_if_open(i - 1, j, k);
            if (i + 1 < n) push_if_open(i + 1, j, k);
            if (j > 0) push_if_open(i, j - 1, k);
            if (j + 1 < n) push_if_open(i, j + 1, k);
            if (k > 0) push_if_open(i, j, k - 1);
            if (k + 1 < n) push_if_open(i, j, k + 1);
        }
        st.field_target.resize(st.sdf.node_count());
        for (size_t idx = 0; idx < st.field_target.size(); ++idx)
            st.field_target[idx] = outside[idx] ? dist_field[idx] : -dist_field[idx];
    }
    st.color = ColorGrid::make(cfg.fit_grid, cfg.fit_grid, cfg.fit_grid, domain);

    std::vector<Vec3> centers = kmeans_centers(first.points, cfg.bones, cfg.seed);
    std::sort(centers.begin(), centers.end(), [](const Vec3& a, const Vec3& b) {
        return a.x != b.x ? a.x < b.x : (a.y != b.y ? a.y < b.y : a.z < b.z);
    });
    st.bones.centers = centers;
    st.bones.orientations.assign(cfg.bones, Mat3::identity());
    st.bones.precisions.resize(cfg.bones);
    for (int b = 0; b < cfg.bones; ++b) {
        // isotropic precision from the cluster spread
        double acc = 0.0;
        int count = 0;
        for (const Vec3& p : first.points) {
            int best = 0;
            double bd = norm2(p - centers[0]);
            for (int c = 1; c < cfg.bones; ++c) {
                double d = norm2(p - centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (best == b) {
                acc += bd;
                ++count;
            }
        }
        double var = count > 0 ? acc / (3.0 * count) : 0.01 * domain.diagonal() * domain.diagonal();
        var = std::max(var, 1e-6 * domain.diagonal() * domain.diagonal());
        double prec = 1.0 / var;
        st.bones.precisions[b] = {prec, prec, prec};
    }

    Vec3 he = 0.5 * (domain.hi - domain.lo);
    st.delta = DeltaWeightField::zeros(cfg.bones, cfg.delta_res, he);

    PoseState identity;
    identity.bone_poses.assign(cfg.bones, DualQuat::identity());
    identity.root = {Mat3::identity(), {0, 0, 0}};
    identity.cam = {Mat3::identity(), {0, 0, 0}};
    st.poses.assign(obs.size(), identity);

    refresh_assignments(st, cfg);
    return st;
}

void refresh_assignments(FitState& state, const FitConfig& cfg) {
    SDFGrid coarse = SDFGrid::make(cfg.assign_grid, cfg.assign_grid, cfg.assign_grid, state.sdf.bounds);
    coarse.fill([&](const Vec3& p) { return state.sdf.sample(p); });
    TriangleMesh mesh = extract_mesh(coarse, 0.0);
    if (mesh.faces.empty() || !(mesh.total_area() > 0.0)) {
        // surface vanished; keep the previous cache
        return;
    }
    PointCloud samples =
        sample_points_uniform(mesh, cfg.surface_samples, Rng::derive(cfg.seed, "surface"));
    AssignResult result;
    try {
        result = assign_points(mesh, state.bones, samples, cfg.eta, cfg.zeta);
    } catch (const std::runtime_error&) {
        // noisy mid-fit surfaces can defeat the geodesic solver; keep the
        // previous cache until the next refresh
        return;
    }
    state.canonical_mesh = std::move(mesh);
    state.surface_points = std::move(samples);
    state.assignments = std::move(result.assignments);
    state.assignment_fallbacks = result.geodesic_fallbacks;
}

namespace {

// one optimizer sweep over the window [first_frame, first_frame + window)
struct FitLoop {
    const FitConfig& cfg;
    FitState& st;
    Adapt ad_pose, ad_root, ad_center, ad_orient, ad_scale, ad_delta, ad_sdf, ad_beta;

    FitLoop(const FitConfig& c, FitState& s, int frames) : cfg(c), st(s) {
        const int B = cfg.bones;
        ad_pose.ensure(static_cast<size_t>(frames) * B * 6);
        ad_root.ensure(static_cast<size_t>(frames) * 6);
        ad_center.ensure(static_cast<size_t>(B) * 3);
        ad_orient.ensure(static_cast<size_t>(B) * 3);
        ad_scale.ensure(static_cast<size_t>(B) * 3);
        ad_delta.ensure(st.delta.values.empty() ? 0 : static_cast<size_t>(B) * st.delta.values[0].size());
        ad_sdf.ensure(st.sdf.node_count());
        ad_beta.ensure(1);
    }

    void apply(const Gradients& g, double lr, int first_frame, int frames, bool poses_live,
               bool bones_live, bool sdf_live) {
        const int B = cfg.bones;
        for (int w = 0; poses_live && w < frames; ++w) {
            int t = first_frame + w;
            if (t == 0 && cfg.anchor_first_frame) continue;
            for (int b = 0; b < B; ++b) {
                Vec3 rot, trans;
                size_t base = (static_cast<size_t>(t) * B + b) * 6;
                for (int k = 0; k < 3; ++k) {
                    (&rot.x)[k] = -cfg.lr_pose * lr * ad_pose.step(base + k, g.pose[w][b][k]);
                    (&trans.x)[k] = -cfg.lr_pose * lr * ad_pose.step(base + 3 + k, g.pose[w][b][3 + k]);
                }
                DualQuat step = dq_from_rigid(rigid_from_tangent(rot, trans));
                st.poses[t].bone_poses[b] = dq_normalized(dq_mul(step, st.poses[t].bone_poses[b]));
            }
            if (cfg.lr_root > 0) {
                Vec3 rot, trans;
                size_t base = static_cast<size_t>(t) * 6;
                for (int k = 0; k < 3; ++k) {
                    (&rot.x)[k] = -cfg.lr_root * lr * ad_root.step(base + k, g.root[w][k]);
                    (&trans.x)[k] = -cfg.lr_root * lr * ad_root.step(base + 3 + k, g.root[w][3 + k]);
                }
                RigidTransform step = rigid_from_tangent(rot, trans);
                st.poses[t].root = compose(step, st.poses[t].root);
                st.poses[t].root.rotation = reorthonormalize(st.poses[t].root.rotation);
            }
        }
        if (bones_live) {
            for (int b = 0; b < B; ++b) {
                for (int k = 0; k < 3; ++k) {
                    size_t i = static_cast<size_t>(b) * 3 + k;
                    (&st.bones.centers[b].x)[k] -=
                        cfg.lr_bone_center * lr * ad_center.step(i, (&g.bone_centers[b].x)[k]);
                }
                if (cfg.lr_bone_orient > 0) {
                    Vec3 rot;
                    for (int k = 0; k < 3; ++k)
                        (&rot.x)[k] = -cfg.lr_bone_orient * lr *
                                      ad_orient.step(static_cast<size_t>(b) * 3 + k, (&g.bone_orients[b].x)[k]);
                    st.bones.orientations[b] = reorthonormalize(st.bones.orientations[b] * rotation_exp(rot));
                }
                for (int k = 0; k < 3; ++k) {
                    size_t i = static_cast<size_t>(b) * 3 + k;
                    double l = std::log((&st.bones.precisions[b].x)[k]);
                    l -= cfg.lr_bone_scale * lr * ad_scale.step(i, (&g.bone_log_scales[b].x)[k]);
                    l = std::clamp(l, -12.0, 12.0);
                    (&st.bones.precisions[b].x)[k] = std::exp(l);
                }
            }
            if (cfg.lr_delta > 0 && !st.delta.values.empty()) {
                size_t per = st.delta.values[0].size();
                for (int b = 0; b < cfg.bones; ++b)
                    for (size_t n = 0; n < per; ++n)
                        st.delta.values[b][n] -=
                            cfg.lr_delta * lr * ad_delta.step(static_cast<size_t>(b) * per + n, g.delta[b][n]);
            }
        }
        if (sdf_live) {
            if (cfg.lr_sdf > 0) {
                // diagonally preconditioned step: the data terms are quadratic
                // in the node values, so g/h moves each node straight toward
                // its local target
                double max_h = 0.0;
                for (double v : g.sdf_curvature) max_h = std::max(max_h, v);
                double floor = 1e-6 * max_h + 1e-12;
                Vec3 cell = st.sdf.cell_size();
                double cap = std::min({cell.x, cell.y, cell.z});
                for (size_t n = 0; n < st.sdf.node_count(); ++n) {
                    double step = cfg.lr_sdf * lr * g.sdf[n] / (g.sdf_curvature[n] + floor);
                    st.sdf.values[n] -= std::clamp(step, -cap, cap);
                }
            }
        }
        if (cfg.optimize_beta) {
            double l = std::log(st.beta);
            l -= cfg.lr_beta * lr * ad_beta.step(0, g.log_beta);
            st.beta = std::clamp(std::exp(l), 1e-5, 1.0);
        }
    }

    // applies the last slot of a tracking-view gradient at `frame`
    void apply_frame_pose(const Gradients& g, double lr, int frame) {
        const int B = cfg.bones;
        size_t slot = g.pose.size() - 1;
        for (int b = 0; b < B; ++b) {
            Vec3 rot, trans;
            size_t base = (static_cast<size_t>(frame) * B + b) * 6;
            for (int k = 0; k < 3; ++k) {
                (&rot.x)[k] = -cfg.lr_pose * lr * ad_pose.step(base + k, g.pose[slot][b][k]);
                (&trans.x)[k] = -cfg.lr_pose * lr * ad_pose.step(base + 3 + k, g.pose[slot][b][3 + k]);
            }
            DualQuat step = dq_from_rigid(rigid_from_tangent(rot, trans));
            st.poses[frame].bone_poses[b] = dq_normalized(dq_mul(step, st.poses[frame].bone_poses[b]));
        }
        if (cfg.lr_root > 0) {
            Vec3 rot, trans;
            size_t base = static_cast<size_t>(frame) * 6;
            for (int k = 0; k < 3; ++k) {
                (&rot.x)[k] = -cfg.lr_root * lr * ad_root.step(base + k, g.root[slot][k]);
                (&trans.x)[k] = -cfg.lr_root * lr * ad_root.step(base + 3 + k, g.root[slot][3 + k]);
            }
            RigidTransform step = rigid_from_tangent(rot, trans);
            st.poses[frame].root = compose(step, st.poses[frame].root);
            st.poses[frame].root.rotation = reorthonormalize(st.poses[frame].root.rotation);
        }
    }
};

}  // namespace

FitState fit(const std::vector<FrameObservation>& obs, const FitConfig& cfg) {
    FitState st = initial_state(obs, cfg);
    const int T = static_cast<int>(obs.size());

    // schedule: bootstrap the canonical shape against the anchored first
    // frame, track poses frame by frame, then refine everything jointly
    int bootstrap_end = cfg.warm_start && T > 1 ? static_cast<int>(cfg.bootstrap * cfg.iterations) : 0;
    int track_end = cfg.warm_start && T > 1 ? static_cast<int>(cfg.warm_ramp * cfg.iterations) : 0;
    if (track_end < bootstrap_end) track_end = bootstrap_end;
    int track_span = std::max(1, track_end - bootstrap_end);

    FitLoop loop(cfg, st, T);
    double initial_total = -1.0;
    int divergent_streak = 0;
    int tracked = 0;  // highest frame already visited by the tracking stage

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        st.gamma = gamma_at(cfg, iter);
        st.beta = beta_at(cfg, iter);
        if (iter % cfg.assign_refresh == 0 && iter > 0) refresh_assignments(st, cfg);

        double lr = lr_decay(cfg, iter);
        LossBreakdown loss;
        if (iter < bootstrap_end) {
            // stage 1: shape only, first frame
            std::vector<FrameObservation> window(obs.begin(), obs.begin() + 1);
            Gradients g = gradients(st, window, cfg);
            loss = total_loss(st, window, cfg);
            loop.apply(g, 1.0, 0, 1, !cfg.anchor_first_frame, true, true);
        } else if (iter < track_end) {
            // stage 2: per-frame pose tracking against frozen geometry
            int frame = 1 + ((iter - bootstrap_end) * (T - 1)) / track_span;
            frame = std::min(frame, T - 1);
            while (tracked < frame) {
                ++tracked;
                st.poses[tracked] = st.poses[tracked - 1];
                if (tracked >= 2) {
                    // constant-velocity init: continue the previous frame step
                    for (int b = 0; b < cfg.bones; ++b) {
                        const DualQuat& prev = st.poses[tracked - 2].bone_poses[b];
                        const DualQuat& cur = st.poses[tracked - 1].bone_poses[b];
                        DualQuat vel = dq_mul(cur, dq_inverse(prev));
                        if (vel.real.w < 0.0) vel = {-vel.real, -vel.dual};
                        st.poses[tracked].bone_poses[b] = dq_normalized(dq_mul(vel, cur));
                    }
                }
            }
            // single-frame view plus a constant-velocity prior: the data
            // floor at one frame is noisy enough to pull a lone pose around,
            // so deviations from the extrapolated motion are penalized
            FitState view = st;
            view.poses = {st.poses[frame]};
            std::vector<FrameObservation> window{obs[frame]};
            Gradients g = gradients(view, window, cfg);
            loss = total_loss(view, window, cfg);
            double lambda = cfg.weights.reg * cfg.track_reg_scale;
            for (int b = 0; b < cfg.bones; ++b) {
                DualQuat anchor = st.poses[frame - 1].bone_poses[b];
                if (frame >= 2) {
                    DualQuat vel = dq_mul(st.poses[frame - 1].bone_poses[b],
                                          dq_inverse(st.poses[frame - 2].bone_poses[b]));
                    if (vel.real.w < 0.0) vel = {-vel.real, -vel.dual};
                    anchor = dq_normalized(dq_mul(vel, anchor));
                }
                RigidTransform dev = compose(dq_to_rigid(st.poses[frame].bone_poses[b]),
                                             dq_to_rigid(anchor).inverse());
                Vec3 rv, tv;
                rigid_to_tangent(dev, rv, tv);
                for (int k = 0; k < 3; ++k) {
                    g.pose[0][b][k] += lambda * 2.0 * (&rv.x)[k];
                    g.pose[0][b][3 + k] += lambda * 2.0 * (&tv.x)[k];
                }
            }
            loop.apply_frame_pose(g, 1.0, frame);
        } else {
            // stage 3: joint refinement over every frame
            while (tracked < T - 1) {
                ++tracked;
                st.poses[tracked] = st.poses[tracked - 1];
            }
            Gradients g = gradients(st, obs, cfg);
            loss = total_loss(st, obs, cfg);
            bool bones_live = iter < cfg.bone_freeze * cfg.iterations;
            bool sdf_live = iter < cfg.geometry_freeze * cfg.iterations;
            loop.apply(g, lr, 0, T, true, bones_live, sdf_live);

            if (initial_total < 0) initial_total = loss.total;
            if (loss.total > 10.0 * initial_total) {
                if (++divergent_streak >= 50) {
                    if (!cfg.diagnostic_dump.empty()) save_checkpoint(st, cfg, cfg.diagnostic_dump);
                    throw DivergenceError("fit diverged: loss exceeded 10x its initial value for 50 steps");
                }
            } else {
                divergent_streak = 0;
            }
        }
        st.loss_history.push_back({loss.total, loss.data, loss.sparse, loss.cycle, loss.reg});
#ifdef QRFIT_STAGE_DEBUG
        if (iter == bootstrap_end - 1 || iter == track_end - 1 || iter == cfg.iterations - 1) {
            std::fprintf(stderr, "[stage] iter %d loss %.4f data %.4f sparse %.4f\n", iter, loss.total,
                         loss.data, loss.sparse);
            for (int b = 0; b < cfg.bones; ++b)
                std::fprintf(stderr, "  bone %d c(%.2f %.2f %.2f) p(%.1f %.1f %.1f)\n", b,
                             st.bones.centers[b].x, st.bones.centers[b].y, st.bones.centers[b].z,
                             st.bones.precisions[b].x, st.bones.precisions[b].y, st.bones.precisions[b].z);
        }
#endif
    }

    refresh_assignments(st, cfg);
    st.validate();
    return st;
}

namespace {

void weights_from_json(const nlohmann::json& j, LossWeights& w) {
    w.data = j.value("data", w.data);
    w.sparse = j.value("sparse", w.sparse);
    w.cycle = j.value("cycle", w.cycle);
    w.reg = j.value("reg", w.reg);
}

}  // namespace

FitConfig fit_config_from_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open fit config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("bad fit config JSON: ") + e.what());
    }
    FitConfig cfg;
    try {
        cfg.iterations = j.value("iterations", cfg.iterations);
        cfg.bones = j.value("bones", cfg.bones);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.backend = skin_backend_from_string(j.value("backend", std::string("qrbs")));
        if (j.contains("weights")) weights_from_json(j.at("weights"), cfg.weights);
        cfg.eta = j.value("eta", cfg.eta);
        cfg.zeta = j.value("zeta", cfg.zeta);
        cfg.gamma_start = j.value("gamma_start", cfg.gamma_start);
        cfg.gamma_end = j.value("gamma_end", cfg.gamma_end);
        cfg.beta_start = j.value("beta_start", cfg.beta_start);
        cfg.beta_end = j.value("beta_end", cfg.beta_end);
        cfg.assign_refresh = j.value("assign_refresh", cfg.assign_refresh);
        cfg.surface_samples = j.value("surface_samples", cfg.surface_samples);
        cfg.fit_grid = j.value("fit_grid", cfg.fit_grid);
        cfg.assign_grid = j.value("assign_grid", cfg.assign_grid);
        cfg.extract_grid = j.value("extract_grid", cfg.extract_grid);
        cfg.delta_res = j.value("delta_res", cfg.delta_res);
        cfg.surface_weight = j.value("surface_weight", cfg.surface_weight);
        cfg.surface_subsample = j.value("surface_subsample", cfg.surface_subsample);
        cfg.surface_frames = j.value("surface_frames", cfg.surface_frames);
        cfg.anchor_data_boost = j.value("anchor_data_boost", cfg.anchor_data_boost);
        cfg.carve_weight = j.value("carve_weight", cfg.carve_weight);
        cfg.field_weight = j.value("field_weight", cfg.field_weight);
        cfg.use_silhouette = j.value("use_silhouette", cfg.use_silhouette);
        cfg.silhouette_weight = j.value("silhouette_weight", cfg.silhouette_weight);
        cfg.silhouette_stride = j.value("silhouette_stride", cfg.silhouette_stride);
        cfg.silhouette_samples = j.value("silhouette_samples", cfg.silhouette_samples);
        cfg.reg_scale_aniso = j.value("reg_scale_aniso", cfg.reg_scale_aniso);
        cfg.reg_pose_smooth = j.value("reg_pose_smooth", cfg.reg_pose_smooth);
        cfg.reg_eikonal = j.value("reg_eikonal", cfg.reg_eikonal);
        cfg.lr_pose = j.value("lr_pose", cfg.lr_pose);
        cfg.lr_root = j.value("lr_root", cfg.lr_root);
        cfg.lr_bone_center = j.value("lr_bone_center", cfg.lr_bone_center);
        cfg.lr_bone_orient = j.value("lr_bone_orient", cfg.lr_bone_orient);
        cfg.lr_bone_scale = j.value("lr_bone_scale", cfg.lr_bone_scale);
        cfg.lr_delta = j.value("lr_delta", cfg.lr_delta);
        cfg.lr_sdf = j.value("lr_sdf", cfg.lr_sdf);
        cfg.lr_color = j.value("lr_color", cfg.lr_color);
        cfg.optimize_beta = j.value("optimize_beta", cfg.optimize_beta);
        cfg.lr_beta = j.value("lr_beta", cfg.lr_beta);
        cfg.warm_start = j.value("warm_start", cfg.warm_start);
        cfg.warm_ramp = j.value("warm_ramp", cfg.warm_ramp);
        cfg.track_reg_scale = j.value("track_reg_scale", cfg.track_reg_scale);
        cfg.bootstrap = j.value("bootstrap", cfg.bootstrap);
        cfg.anchor_first_frame = j.value("anchor_first_frame", cfg.anchor_first_frame);
        cfg.geometry_freeze = j.value("geometry_freeze", cfg.geometry_freeze);
        cfg.bone_freeze = j.value("bone_freeze", cfg.bone_freeze);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad fit config JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void fit_config_to_json(const FitConfig& cfg, const std::string& path) {
    nlohmann::json j;
    j["iterations"] = cfg.iterations;
    j["bones"] = cfg.bones;
    j["seed"] = cfg.seed;
    j["backend"] = to_string(cfg.backend);
    j["weights"] = {{"data", cfg.weights.data}, {"sparse", cfg.weights.sparse},
                    {"cycle", cfg.weights.cycle}, {"reg", cfg.weights.reg}};
    j["eta"] = cfg.eta;
    j["zeta"] = cfg.zeta;
    j["gamma_start"] = cfg.gamma_start;
    j["gamma_end"] = cfg.gamma_end;
    j["beta_start"] = cfg.beta_start;
    j["beta_end"] = cfg.beta_end;
    j["assign_refresh"] = cfg.assign_refresh;
    j["surface_samples"] = cfg.surface_samples;
    j["fit_grid"] = cfg.fit_grid;
    j["assign_grid"] = cfg.assign_grid;
    j["extract_grid"] = cfg.extract_grid;
    j["delta_res"] = cfg.delta_res;
    j["surface_weight"] = cfg.surface_weight;
    j["surface_subsample"] = cfg.surface_subsample;
    j["surface_frames"] = cfg.surface_frames;
    j["anchor_data_boost"] = cfg.anchor_data_boost;
    j["carve_weight"] = cfg.carve_weight;
    j["field_weight"] = cfg.field_weight;
    j["use_silhouette"] = cfg.use_silhouette;
    j["silhouette_weight"] = cfg.silhouette_weight;
    j["silhouette_stride"] = cfg.silhouette_stride;
    j["silhouette_samples"] = cfg.silhouette_samples;
    j["reg_scale_aniso"] = cfg.reg_scale_aniso;
    j["reg_pose_smooth"] = cfg.reg_pose_smooth;
    j["reg_eikonal"] = cfg.reg_eikonal;
    j["lr_pose"] = cfg.lr_pose;
    j["lr_root"] = cfg.lr_root;
    j["lr_bone_center"] = cfg.lr_bone_center;
    j["lr_bone_orient"] = cfg.lr_bone_orient;
    j["lr_bone_scale"] = cfg.lr_bone_scale;
    j["lr_delta"] = cfg.lr_delta;
    j["lr_sdf"] = cfg.lr_sdf;
    j["lr_color"] = cfg.lr_color;
    j["optimize_beta"] = cfg.optimize_beta;
    j["lr_beta"] = cfg.lr_beta;
    j["warm_start"] = cfg.warm_start;
    j["warm_ramp"] = cfg.warm_ramp;
    j["track_reg_scale"] = cfg.track_reg_scale;
    j["bootstrap"] = cfg.bootstrap;
    j["anchor_first_frame"] = cfg.anchor_first_frame;
    j["geometry_freeze"] = cfg.geometry_freeze;
    j["bone_freeze"] = cfg.bone_freeze;
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace qrfit
