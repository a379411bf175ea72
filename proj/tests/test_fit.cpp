#include <doctest.h>

#include "qrfit/error.hpp"
#include "qrfit/fit.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/synth.hpp"

#include <functional>

using namespace qrfit;

namespace {

SyntheticSpec small_hinge(int frames, double end_rad) {
    SyntheticSpec spec;
    PartSpec left;
    left.center = {-0.55, 0, 0};
    left.half_extents = {0.5, 0.22, 0.12};
    left.subdivisions = 2;
    PartSpec right = left;
    right.center = {0.55, 0, 0};
    spec.parts = {left, right};
    spec.hinge_point = {0, 0, 0};
    spec.hinge_axis = {0, 0, 1};
    for (int t = 0; t < frames; ++t)
        spec.angles.push_back(frames == 1 ? end_rad : end_rad * t / (frames - 1));
    spec.observation_points = 150;
    return spec;
}

std::vector<FrameObservation> to_observations(const Sequence& seq, bool with_silhouette) {
    std::vector<FrameObservation> obs;
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        FrameObservation f;
        f.frame = static_cast<int>(t);
        f.cloud = seq.frames[t].observation;
        if (with_silhouette) {
            f.camera.width = 12;
            f.camera.height = 12;
            f.camera.fx = f.camera.fy = 10;
            f.camera.cx = 6;
            f.camera.cy = 6;
            f.camera.world_from_cam = {Mat3::identity(), {0, 0, -4}};
            f.silhouette.resize(144);
            for (int i = 0; i < 144; ++i) f.silhouette[i] = (i / 12 + i % 12) % 2 ? 1.0 : 0.0;
        }
        obs.push_back(std::move(f));
    }
    return obs;
}

FitConfig probe_config(bool silhouette) {
    FitConfig cfg;
    cfg.bones = 2;
    cfg.iterations = 10;
    cfg.seed = 5;
    cfg.fit_grid = 10;
    cfg.assign_grid = 8;
    cfg.surface_samples = 24;
    cfg.delta_res = 4;
    cfg.surface_subsample = 40;
    cfg.use_silhouette = silhouette;
    cfg.silhouette_stride = 3;
    cfg.silhouette_samples = 12;
    cfg.weights.data = 1.0;
    cfg.weights.sparse = 0.1;
    cfg.weights.cycle = 0.1;
    cfg.weights.reg = 0.01;
    return cfg;
}

// generic, tie-free state around which the objective is smooth
FitState perturbed_state(const std::vector<FrameObservation>& obs, const FitConfig& cfg) {
    FitState st = initial_state(obs, cfg);
    Rng rng(881);
    for (PoseState& p : st.poses) {
        for (DualQuat& q : p.bone_poses) {
            Vec3 w{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
            Vec3 v{rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)};
            q = dq_normalized(dq_mul(dq_from_rigid(rigid_from_tangent(w, v)), q));
        }
        Vec3 w{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
        Vec3 v{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        p.root = compose(rigid_from_tangent(w, v), p.root);
    }
    for (int b = 0; b < st.bones.count(); ++b) {
        st.bones.centers[b] += Vec3{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        Vec3 w{rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)};
        st.bones.orientations[b] = st.bones.orientations[b] * rotation_exp(w);
        for (int k = 0; k < 3; ++k)
            (&st.bones.precisions[b].x)[k] *= std::exp(rng.uniform(-0.3, 0.3));
    }
    for (auto& grid : st.delta.values)
        for (double& v : grid) v = rng.uniform(-0.15, 0.15);
    for (double& v : st.sdf.values) v += rng.uniform(-0.015, 0.015);
    st.gamma = 0.3;
    st.beta = 0.04;
    return st;
}

struct ProbeResult {
    double max_rel = 0.0;
    int checked = 0;
};

// central finite differences along one parameter chart direction
ProbeResult check_group(const FitState& st, const std::vector<FrameObservation>& obs, const FitConfig& cfg,
                        const Gradients& g, int probes, std::uint64_t seed,
                        const std::function<int()>& coord_count,
                        const std::function<void(FitState&, int, double)>& bump,
                        const std::function<double(const Gradients&, int)>& analytic) {
    Rng rng(seed);
    ProbeResult res;
    int n = coord_count();
    // small step: the loss is piecewise-smooth in the nearest-neighbor
    // assignments, and wider secants can straddle a boundary
    double h = 1e-6;
    for (int p = 0; p < probes; ++p) {
        int k = static_cast<int>(rng.uniform_index(n));
        FitState plus = st, minus = st;
        bump(plus, k, h);
        bump(minus, k, -h);
        double fd = (total_loss(plus, obs, cfg).total - total_loss(minus, obs, cfg).total) / (2 * h);
        double an = analytic(g, k);
        double rel = std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1e-6});
        res.max_rel = std::max(res.max_rel, rel);
        ++res.checked;
    }
    return res;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences in every parameter group") {
    Sequence seq = generate_sequence(small_hinge(2, 0.5), 31);
    std::vector<FrameObservation> obs = to_observations(seq, true);
    FitConfig cfg = probe_config(true);
    FitState st = perturbed_state(obs, cfg);

    Gradients g = gradients(st, obs, cfg);
    const int B = st.bones.count();
    const int T = static_cast<int>(obs.size());

    auto run = [&](const char* name, int probes, std::uint64_t seed, std::function<int()> count,
                   std::function<void(FitState&, int, double)> bump,
                   std::function<double(const Gradients&, int)> analytic) {
        ProbeResult res = check_group(st, obs, cfg, g, probes, seed, count, bump, analytic);
        INFO(std::string(name) << " max relative error " << res.max_rel);
        CHECK(res.max_rel < 1e-4);
    };

    run("bone_centers", 12, 1, [&] { return B * 3; },
        [&](FitState& s, int k, double h) { (&s.bones.centers[k / 3].x)[k % 3] += h; },
        [&](const Gradients& gg, int k) { return (&gg.bone_centers[k / 3].x)[k % 3]; });

    run("bone_orients", 12, 2, [&] { return B * 3; },
        [&](FitState& s, int k, double h) {
            Vec3 w{0, 0, 0};
            (&w.x)[k % 3] = h;
            s.bones.orientations[k / 3] = s.bones.orientations[k / 3] * rotation_exp(w);
        },
        [&](const Gradients& gg, int k) { return (&gg.bone_orients[k / 3].x)[k % 3]; });

    run("bone_scales", 12, 3, [&] { return B * 3; },
        [&](FitState& s, int k, double h) {
            double& v = (&s.bones.precisions[k / 3].x)[k % 3];
            v = std::exp(std::log(v) + h);
        },
        [&](const Gradients& gg, int k) { return (&gg.bone_log_scales[k / 3].x)[k % 3]; });

    run("pose", 20, 4, [&] { return T * B * 6; },
        [&](FitState& s, int k, double h) {
            int t = k / (B * 6), rem = k % (B * 6), b = rem / 6, c = rem % 6;
            Vec3 w{0, 0, 0}, v{0, 0, 0};
            if (c < 3) (&w.x)[c] = h;
            else (&v.x)[c - 3] = h;
            DualQuat& q = s.poses[t].bone_poses[b];
            q = dq_mul(dq_from_rigid(rigid_from_tangent(w, v)), q);
        },
        [&](const Gradients& gg, int k) {
            int t = k / (B * 6), rem = k % (B * 6);
            return gg.pose[t][rem / 6][rem % 6];
        });

    run("root", 12, 5, [&] { return T * 6; },
        [&](FitState& s, int k, double h) {
            int t = k / 6, c = k % 6;
            Vec3 w{0, 0, 0}, v{0, 0, 0};
            if (c < 3) (&w.x)[c] = h;
            else (&v.x)[c - 3] = h;
            s.poses[t].root = compose(rigid_from_tangent(w, v), s.poses[t].root);
        },
        [&](const Gradients& gg, int k) { return gg.root[k / 6][k % 6]; });

    int delta_nodes = static_cast<int>(st.delta.values[0].size());
    run("delta", 16, 6, [&] { return B * delta_nodes; },
        [&](FitState& s, int k, double h) { s.delta.values[k / delta_nodes][k % delta_nodes] += h; },
        [&](const Gradients& gg, int k) { return gg.delta[k / delta_nodes][k % delta_nodes]; });

    run("sdf", 20, 7, [&] { return static_cast<int>(st.sdf.node_count()); },
        [&](FitState& s, int k, double h) { s.sdf.values[k] += h; },
        [&](const Gradients& gg, int k) { return gg.sdf[k]; });

    run("beta", 6, 8, [&] { return 1; },
        [&](FitState& s, int, double h) { s.beta = std::exp(std::log(s.beta) + h); },
        [&](const Gradients& gg, int) { return gg.log_beta; });

    // the objective has no color term, so both sides must vanish
    for (double v : g.color) CHECK(v == 0.0);
}

TEST_CASE("gradients also hold for the LBS and rigid ablation backends") {
    Sequence seq = generate_sequence(small_hinge(1, 0.4), 77);
    std::vector<FrameObservation> obs = to_observations(seq, false);
    for (SkinBackend backend : {SkinBackend::Lbs, SkinBackend::Rigid}) {
        FitConfig cfg = probe_config(false);
        cfg.backend = backend;
        FitState st = perturbed_state(obs, cfg);
        Gradients g = gradients(st, obs, cfg);
        const int B = st.bones.count();

        ProbeResult pose = check_group(
            st, obs, cfg, g, 12, 11, [&] { return B * 6; },
            [&](FitState& s, int k, double h) {
                int b = k / 6, c = k % 6;
                Vec3 w{0, 0, 0}, v{0, 0, 0};
                if (c < 3) (&w.x)[c] = h;
                else (&v.x)[c - 3] = h;
                DualQuat& q = s.poses[0].bone_poses[b];
                q = dq_mul(dq_from_rigid(rigid_from_tangent(w, v)), q);
            },
            [&](const Gradients& gg, int k) { return gg.pose[0][k / 6][k % 6]; });
        INFO("backend " << to_string(backend) << " pose max rel " << pose.max_rel);
        CHECK(pose.max_rel < 1e-4);

        if (backend != SkinBackend::Rigid) {
            ProbeResult centers = check_group(
                st, obs, cfg, g, 8, 12, [&] { return B * 3; },
                [&](FitState& s, int k, double h) { (&s.bones.centers[k / 3].x)[k % 3] += h; },
                [&](const Gradients& gg, int k) { return (&gg.bone_centers[k / 3].x)[k % 3]; });
            INFO("backend " << to_string(backend) << " centers max rel " << centers.max_rel);
            CHECK(centers.max_rel < 1e-4);
        }
    }
}

TEST_CASE("the loss is near zero at the generator's ground truth and larger frozen") {
    SyntheticSpec spec = small_hinge(3, 0.6);
    spec.observation_points = 4000;  // dense enough that sampling noise sits below the bound
    Sequence seq = generate_sequence(spec, 13);
    std::vector<FrameObservation> obs = to_observations(seq, false);
    FitConfig cfg = probe_config(false);
    cfg.weights.sparse = 0;
    cfg.weights.cycle = 0;
    cfg.weights.reg = 0;
    cfg.surface_weight = 0;
    cfg.fit_grid = 64;
    cfg.assign_grid = 28;
    cfg.surface_samples = 2000;

    FitState st = initial_state(obs, cfg);
    // install the true shape and poses
    st.sdf.fill([&](const Vec3& p) {
        auto box_sdf = [&](Vec3 c, Vec3 he) {
            Vec3 d{std::abs(p.x - c.x) - he.x, std::abs(p.y - c.y) - he.y, std::abs(p.z - c.z) - he.z};
            Vec3 outside{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
            return norm(outside) + std::min(std::max({d.x, d.y, d.z}), 0.0);
        };
        return std::min(box_sdf({-0.55, 0, 0}, {0.5, 0.22, 0.12}), box_sdf({0.55, 0, 0}, {0.5, 0.22, 0.12}));
    });
    st.bones.centers = {{-0.55, 0, 0}, {0.55, 0, 0}};
    st.bones.precisions = {{25, 25, 25}, {25, 25, 25}};
    st.gamma = 0.02;
    refresh_assignments(st, cfg);
    for (size_t t = 0; t < obs.size(); ++t) st.poses[t] = seq.frames[t].gt_pose;

    double diag = obs[0].cloud.bounds().diagonal();
    LossBreakdown at_gt = total_loss(st, obs, cfg);
    CHECK(at_gt.data < 1e-3 * diag);

    FitState frozen = st;
    for (PoseState& p : frozen.poses) p.bone_poses.assign(2, DualQuat::identity());
    LossBreakdown at_identity = total_loss(frozen, obs, cfg);
    CHECK(at_identity.data > at_gt.data);
}

TEST_CASE("refresh keeps assignments stable and equivariant under bone relabeling") {
    Sequence seq = generate_sequence(small_hinge(1, 0.0), 3);
    std::vector<FrameObservation> obs = to_observations(seq, false);
    FitConfig cfg = probe_config(false);
    cfg.assign_grid = 16;
    FitState st = initial_state(obs, cfg);

    std::vector<AssignmentVector> before = st.assignments;
    refresh_assignments(st, cfg);
    REQUIRE(st.assignments.size() == before.size());
    for (size_t i = 0; i < before.size(); ++i) CHECK(st.assignments[i].on == before[i].on);

    FitState swapped = st;
    std::swap(swapped.bones.centers[0], swapped.bones.centers[1]);
    std::swap(swapped.bones.orientations[0], swapped.bones.orientations[1]);
    std::swap(swapped.bones.precisions[0], swapped.bones.precisions[1]);
    refresh_assignments(swapped, cfg);
    for (size_t i = 0; i < st.assignments.size(); ++i) {
        CHECK(swapped.assignments[i].on[0] == st.assignments[i].on[1]);
        CHECK(swapped.assignments[i].on[1] == st.assignments[i].on[0]);
    }
}

TEST_CASE("tiny fits are bitwise deterministic") {
    Sequence seq = generate_sequence(small_hinge(2, 0.3), 19);
    std::vector<FrameObservation> obs = to_observations(seq, false);
    FitConfig cfg = probe_config(false);
    cfg.iterations = 8;
    cfg.assign_refresh = 4;
    FitState a = fit(obs, cfg);
    FitState b = fit(obs, cfg);
    REQUIRE(a.loss_history.size() == b.loss_history.size());
    for (size_t i = 0; i < a.loss_history.size(); ++i)
        for (int k = 0; k < 5; ++k) CHECK(a.loss_history[i][k] == b.loss_history[i][k]);
    for (size_t t = 0; t < a.poses.size(); ++t)
        for (int bb = 0; bb < 2; ++bb) {
            CHECK(a.poses[t].bone_poses[bb].real.w == b.poses[t].bone_poses[bb].real.w);
            CHECK(a.poses[t].bone_poses[bb].dual.z == b.poses[t].bone_poses[bb].dual.z);
        }
}

TEST_CASE("runaway steps trip the divergence guard") {
    Sequence seq = generate_sequence(small_hinge(1, 0.2), 23);
    std::vector<FrameObservation> obs = to_observations(seq, false);
    FitConfig cfg = probe_config(false);
    cfg.iterations = 200;
    cfg.lr_pose = 40.0;  // steps of ~40 object units
    cfg.warm_start = false;
    CHECK_THROWS_AS(fit(obs, cfg), DivergenceError);
}

TEST_CASE("checkpoints round trip the full state") {
    Sequence seq = generate_sequence(small_hinge(2, 0.4), 29);
    std::vector<FrameObservation> obs = to_observations(seq, false);
    FitConfig cfg = probe_config(false);
    cfg.iterations = 4;
    FitState st = fit(obs, cfg);
    save_checkpoint(st, cfg, "tmp_checkpoint.json");
    FitState back = load_checkpoint("tmp_checkpoint.json");
    CHECK(back.bones.count() == st.bones.count());
    CHECK(back.poses.size() == st.poses.size());
    CHECK(norm(back.bones.centers[1] - st.bones.centers[1]) < 1e-6);
    CHECK(back.sdf.nx == st.sdf.nx);
    // grids are serialized as float32
    for (size_t i = 0; i < st.sdf.values.size(); i += 97)
        CHECK(back.sdf.values[i] == doctest::Approx(st.sdf.values[i]).epsilon(1e-6));
    double d0 = std::abs(qdot(back.poses[1].bone_poses[1].real, st.poses[1].bone_poses[1].real));
    CHECK(d0 == doctest::Approx(1.0).epsilon(1e-12));
}
