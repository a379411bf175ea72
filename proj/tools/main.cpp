#include "qrfit/error.hpp"
#include "qrfit/fit.hpp"
#include "qrfit/march.hpp"
#include "qrfit/metrics.hpp"
#include "qrfit/render.hpp"
#include "qrfit/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config;
    std::string out = ".";
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "JSON config for this run")->required();
    cmd->add_option("--out", args.out, "output directory (meshes/, checkpoints/, metrics/, diag/, renders/)");
    cmd->add_option("--seed", args.seed, "seed override; recorded in output headers")
        ->each([&](const std::string&) { args.seed_given = true; });
    cmd->add_option("--set", args.overrides, "dotted-key config overrides, e.g. --set weights.data=0.5")
        ->take_all();
}

json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return json(text);  // bare strings stay strings
    }
}

json load_config(const CommonArgs& args) {
    std::ifstream in(args.config);
    if (!in) throw qrfit::ParseError("cannot open config: " + args.config);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw qrfit::ParseError(std::string("bad config JSON: ") + e.what());
    }
    for (const std::string& kv : args.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw qrfit::ParseError("override must be key=value: " + kv);
        std::string path = kv.substr(0, eq);
        json value = parse_override_value(kv.substr(eq + 1));
        json* node = &j;
        size_t start = 0;
        while (true) {
            size_t dot = path.find('.', start);
            std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
            if (key.empty()) throw qrfit::ParseError("bad override key: " + path);
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    if (args.seed_given) j["seed"] = args.seed;
    return j;
}

std::uint64_t config_seed(const json& j) { return j.value("seed", 0ull); }

fs::path ensure_dir(const fs::path& dir) {
    fs::create_directories(dir);
    return dir;
}

std::string frame_name(const char* prefix, int t, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix, t, ext);
    return buf;
}

qrfit::FitConfig fit_config_from(const json& j) {
    // round-trip through the library parser so defaults live in one place
    std::string tmp = (fs::temp_directory_path() / "qrfit_cfg.json").string();
    std::ofstream out(tmp);
    out << j.dump();
    out.close();
    return qrfit::fit_config_from_json(tmp);
}

std::vector<qrfit::FrameObservation> load_observations(const std::string& dir) {
    std::vector<qrfit::FrameObservation> obs;
    for (int t = 0;; ++t) {
        fs::path p = fs::path(dir) / frame_name("obs", t, "pcd");
        if (!fs::exists(p)) break;
        qrfit::FrameObservation f;
        f.frame = t;
        f.cloud = qrfit::load_point_cloud(p.string());
        obs.push_back(std::move(f));
    }
    if (obs.empty())
        throw qrfit::ParseError("no obs_####.pcd files found under " + dir);
    return obs;
}

int run_synth(const CommonArgs& args) {
    json j = load_config(args);
    std::uint64_t seed = config_seed(j);
    std::string tmp = (fs::temp_directory_path() / "qrfit_synth.json").string();
    {
        std::ofstream out(tmp);
        out << j.dump();
    }
    qrfit::SyntheticSpec spec = qrfit::load_synthetic_spec(tmp);
    qrfit::Sequence seq = qrfit::generate_sequence(spec, seed);

    fs::path meshes = ensure_dir(fs::path(args.out) / "meshes");
    qrfit::save_mesh(seq.rest_mesh, (meshes / "rest.obj").string());
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        qrfit::save_mesh(seq.frames[t].mesh, (meshes / frame_name("frame", static_cast<int>(t), "obj")).string());
        qrfit::save_point_cloud(seq.frames[t].observation,
                                (meshes / frame_name("obs", static_cast<int>(t), "pcd")).string());
    }
    qrfit::save_gt_poses(seq, (meshes / "gt_poses.json").string(), seed);
    std::cout << "synth: wrote " << seq.frames.size() << " frames to " << meshes << "\n";
    return 0;
}

int run_fit(const CommonArgs& args) {
    json j = load_config(args);
    std::string obs_dir = j.value("observations", std::string());
    if (obs_dir.empty()) throw qrfit::ParseError("fit config needs \"observations\": <dir with obs_####.pcd>");
    json cfg_json = j;
    cfg_json.erase("observations");
    qrfit::FitConfig cfg = fit_config_from(cfg_json);

    fs::path ckpts = ensure_dir(fs::path(args.out) / "checkpoints");
    qrfit::FitConfig cfg_with_dump = cfg;
    cfg_with_dump.diagnostic_dump = (ckpts / "divergence_dump.json").string();

    std::vector<qrfit::FrameObservation> obs = load_observations(obs_dir);
    qrfit::FitState st = qrfit::fit(obs, cfg_with_dump);

    qrfit::save_checkpoint(st, cfg, (ckpts / "checkpoint.json").string());
    {
        std::ofstream csv(ckpts / "loss_history.csv");
        csv << "# seed " << cfg.seed << "\n";
        csv << "iteration,total,data,sparse,cycle,reg\n";
        char buf[160];
        for (size_t i = 0; i < st.loss_history.size(); ++i) {
            const auto& r = st.loss_history[i];
            std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, r[0], r[1], r[2], r[3], r[4]);
            csv << buf;
        }
    }
    std::cout << "fit: " << st.loss_history.size() << " iterations, final loss "
              << st.loss_history.back()[0] << ", checkpoint in " << ckpts << "\n";
    return 0;
}

qrfit::FitState checkpoint_from(const json& j, qrfit::FitConfig* cfg = nullptr) {
    std::string path = j.value("checkpoint", std::string());
    if (path.empty()) throw qrfit::ParseError("config needs \"checkpoint\": <path>");
    return qrfit::load_checkpoint(path, cfg);
}

int run_deform(const CommonArgs& args) {
    json j = load_config(args);
    qrfit::FitConfig cfg;
    qrfit::FitState st = checkpoint_from(j, &cfg);
    int frame = j.value("frame", 0);
    int res = j.value("resolution", 128);
    if (frame < 0 || frame >= static_cast<int>(st.poses.size()))
        throw qrfit::InvariantError("frame index out of range for this checkpoint");

    qrfit::SDFGrid fine = qrfit::SDFGrid::make(res, res, res, st.sdf.bounds);
    fine.fill([&](const qrfit::Vec3& p) { return st.sdf.sample(p); });
    qrfit::TriangleMesh mesh = qrfit::extract_mesh(fine, 0.0);
    mesh.vertices = qrfit::deform_points(mesh.vertices, st.bones, &st.delta, st.gamma,
                                         st.poses[frame], cfg.backend);

    fs::path meshes = ensure_dir(fs::path(args.out) / "meshes");
    std::string out = (meshes / frame_name("deformed", frame, "obj")).string();
    qrfit::save_mesh(mesh, out);
    std::cout << "deform: wrote " << out << "\n";
    return 0;
}

int run_render(const CommonArgs& args) {
    json j = load_config(args);
    qrfit::FitConfig cfg;
    qrfit::FitState st = checkpoint_from(j, &cfg);
    int frame = j.value("frame", 0);
    if (frame < 0 || frame >= static_cast<int>(st.poses.size()))
        throw qrfit::InvariantError("frame index out of range for this checkpoint");

    qrfit::PinholeCamera cam;
    cam.width = j.value("width", 128);
    cam.height = j.value("height", 128);
    cam.fx = j.value("fx", 0.7 * cam.width);
    cam.fy = j.value("fy", 0.7 * cam.width);
    cam.cx = 0.5 * cam.width;
    cam.cy = 0.5 * cam.height;
    qrfit::Vec3 eye{0, 0, 0};
    if (j.contains("camera_position")) {
        auto p = j.at("camera_position");
        eye = {p.at(0), p.at(1), p.at(2)};
    } else {
        qrfit::Vec3 c = st.sdf.bounds.center();
        eye = c + qrfit::Vec3{0, 0, -1.8 * st.sdf.bounds.diagonal()};
    }
    // aim at the grid center
    qrfit::Vec3 fwd = qrfit::normalized(st.sdf.bounds.center() - eye);
    qrfit::Vec3 up{0, 1, 0};
    if (std::abs(qrfit::dot(up, fwd)) > 0.95) up = {1, 0, 0};
    qrfit::Vec3 right = qrfit::normalized(qrfit::cross(up, fwd));
    qrfit::Vec3 down = qrfit::cross(fwd, right);
    qrfit::Mat3 R;
    for (int r = 0; r < 3; ++r) {
        R(r, 0) = (&right.x)[r];
        R(r, 1) = (&down.x)[r];
        R(r, 2) = (&fwd.x)[r];
    }
    cam.world_from_cam = {R, eye};

    qrfit::RenderConfig rc;
    rc.samples = j.value("samples", 64);
    rc.beta = j.value("beta", st.beta);
    rc.seed = config_seed(j);

    const qrfit::FitState& state = st;
    qrfit::DeformFn deform = [&state, frame, &cfg](const qrfit::Vec3& x) {
        return qrfit::qrbs_inverse(x, state.bones, &state.delta, state.gamma, state.poses[frame], cfg.backend);
    };
    qrfit::Image img = qrfit::render_image(st.sdf, &st.color, deform, cam, rc);

    fs::path renders = ensure_dir(fs::path(args.out) / "renders");
    qrfit::save_ppm(img, (renders / frame_name("frame", frame, "ppm")).string());
    qrfit::save_opacity(img, (renders / frame_name("frame", frame, "opa")).string());
    std::cout << "render: wrote " << (renders / frame_name("frame", frame, "ppm")) << "\n";
    return 0;
}

int run_extract(const CommonArgs& args) {
    json j = load_config(args);
    qrfit::SDFGrid grid;
    if (j.contains("sdf")) {
        grid = qrfit::load_sdf(j.at("sdf"));
    } else {
        qrfit::FitState st = checkpoint_from(j);
        int res = j.value("resolution", 128);
        grid = qrfit::SDFGrid::make(res, res, res, st.sdf.bounds);
        grid.fill([&](const qrfit::Vec3& p) { return st.sdf.sample(p); });
    }
    qrfit::TriangleMesh mesh = qrfit::extract_mesh(grid, j.value("iso", 0.0));
    fs::path meshes = ensure_dir(fs::path(args.out) / "meshes");
    std::string out = (meshes / "extracted.obj").string();
    qrfit::save_mesh(mesh, out);
    std::cout << "extract-mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size()
              << " faces -> " << out << "\n";
    return 0;
}

int run_eval(const CommonArgs& args) {
    json j = load_config(args);
    std::uint64_t seed = config_seed(j);
    fs::path metrics_dir = ensure_dir(fs::path(args.out) / "metrics");

    if (j.contains("pred") && j.contains("gt")) {
        qrfit::TriangleMesh pred = qrfit::load_mesh(j.at("pred"));
        qrfit::TriangleMesh gt = qrfit::load_mesh(j.at("gt"));
        qrfit::MetricsRecord rec = qrfit::evaluate(pred, gt, seed);
        qrfit::save_metrics_csv(rec, (metrics_dir / "metrics.csv").string(), seed);
        qrfit::save_metrics_json(rec, (metrics_dir / "metrics.json").string(), seed);
        std::cout << "eval: CD(x1e4) " << rec.chamfer_x1e4 << "  F10 " << rec.fscore10 << "  F5 "
                  << rec.fscore5 << "\n";
        return 0;
    }

    // checkpoint against a synth ground-truth directory, frame by frame
    qrfit::FitConfig cfg;
    qrfit::FitState st = checkpoint_from(j, &cfg);
    std::string gt_dir = j.value("gt_dir", std::string());
    if (gt_dir.empty()) throw qrfit::ParseError("eval config needs pred/gt paths or checkpoint/gt_dir");
    int res = j.value("resolution", 128);

    qrfit::SDFGrid fine = qrfit::SDFGrid::make(res, res, res, st.sdf.bounds);
    fine.fill([&](const qrfit::Vec3& p) { return st.sdf.sample(p); });
    qrfit::TriangleMesh canonical = qrfit::extract_mesh(fine, 0.0);

    std::ofstream csv(metrics_dir / "metrics.csv");
    csv << "# chamfer convention: bidirectional mean-squared on bbox-diagonal-normalized clouds, x1e4\n";
    csv << "# seed " << seed << "\n";
    csv << "frame,chamfer_x1e4,fscore10,fscore5\n";
    json jout;
    jout["seed"] = seed;
    jout["frames"] = json::array();
    double mean_cd = 0, mean_f10 = 0, mean_f5 = 0;
    int T = 0;
    char buf[160];
    for (int t = 0;; ++t) {
        fs::path gt_path = fs::path(gt_dir) / frame_name("frame", t, "obj");
        if (!fs::exists(gt_path) || t >= static_cast<int>(st.poses.size())) break;
        qrfit::TriangleMesh gt = qrfit::load_mesh(gt_path.string());
        qrfit::TriangleMesh deformed = canonical;
        deformed.vertices = qrfit::deform_points(deformed.vertices, st.bones, &st.delta, st.gamma,
                                                 st.poses[t], cfg.backend);
        qrfit::MetricsRecord rec = qrfit::evaluate(deformed, gt, seed + static_cast<std::uint64_t>(t));
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", t, rec.chamfer_x1e4, rec.fscore10, rec.fscore5);
        csv << buf;
        jout["frames"].push_back({{"frame", t}, {"chamfer_x1e4", rec.chamfer_x1e4},
                                  {"fscore10", rec.fscore10}, {"fscore5", rec.fscore5}});
        mean_cd += rec.chamfer_x1e4;
        mean_f10 += rec.fscore10;
        mean_f5 += rec.fscore5;
        ++T;
    }
    if (T == 0) throw qrfit::ParseError("no frame_####.obj ground truth found under " + gt_dir);
    jout["mean"] = {{"chamfer_x1e4", mean_cd / T}, {"fscore10", mean_f10 / T}, {"fscore5", mean_f5 / T}};
    jout["chamfer_convention"] = "bidirectional mean-squared on bbox-diagonal-normalized clouds, x1e4";
    std::snprintf(buf, sizeof(buf), "mean,%.9g,%.9g,%.9g\n", mean_cd / T, mean_f10 / T, mean_f5 / T);
    csv << buf;
    std::ofstream(metrics_dir / "metrics.json") << jout.dump(2) << "\n";
    std::cout << "eval: " << T << " frames, mean CD(x1e4) " << mean_cd / T << "  F10 " << mean_f10 / T
              << "  F5 " << mean_f5 / T << "\n";
    return 0;
}

int run_assign_debug(const CommonArgs& args) {
    json j = load_config(args);
    std::uint64_t seed = config_seed(j);
    qrfit::FitConfig cfg;
    qrfit::FitState st = checkpoint_from(j, &cfg);
    int res = j.value("resolution", 48);
    int samples = j.value("samples", 2000);

    qrfit::SDFGrid grid = qrfit::SDFGrid::make(res, res, res, st.sdf.bounds);
    grid.fill([&](const qrfit::Vec3& p) { return st.sdf.sample(p); });
    qrfit::TriangleMesh mesh = qrfit::extract_mesh(grid, 0.0);
    if (mesh.faces.empty()) throw qrfit::InvariantError("checkpoint SDF has no surface to assign");
    qrfit::PointCloud pts = qrfit::sample_points_uniform(mesh, samples, seed);
    qrfit::AssignResult result = qrfit::assign_points(mesh, st.bones, pts, cfg.eta, cfg.zeta);

    fs::path diag = ensure_dir(fs::path(args.out) / "diag");
    std::string out = (diag / "assignments.csv").string();
    qrfit::write_assignment_csv(result, out, seed);
    std::cout << "assign-debug: " << result.diagnostics.size() << " points, "
              << result.geodesic_fallbacks << " fallbacks -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quasi-rigid blend skinning fitting toolkit"};
    app.require_subcommand(1);

    CommonArgs synth_args, fit_args, deform_args, render_args, extract_args, eval_args, assign_args;

    add_common(app.add_subcommand("synth",
                                  "generate an articulated sequence; config keys: parts, hinge_point, "
                                  "hinge_axis, angles_deg | angle_start_deg/angle_end_deg/frames, mirror, "
                                  "observation_points, seed"),
               synth_args);
    add_common(app.add_subcommand("fit",
                                  "fit a model to observations; config keys: observations, iterations, bones, "
                                  "backend, weights.{data,sparse,cycle,reg}, eta, zeta, gamma_start, gamma_end, "
                                  "beta_start, beta_end, assign_refresh, surface_samples, fit_grid, assign_grid, "
                                  "extract_grid, delta_res, surface_weight, surface_subsample, use_silhouette, "
                                  "silhouette_weight, silhouette_stride, silhouette_samples, reg_scale_aniso, "
                                  "reg_pose_smooth, reg_eikonal, lr_pose, lr_root, lr_bone_center, lr_bone_orient, "
                                  "lr_bone_scale, lr_delta, lr_sdf, lr_color, optimize_beta, lr_beta, warm_start, seed"),
               fit_args);
    add_common(app.add_subcommand("deform",
                                  "apply a checkpoint pose to the canonical mesh; config keys: checkpoint, "
                                  "frame, resolution, seed"),
               deform_args);
    add_common(app.add_subcommand("render",
                                  "volume-render a checkpoint frame; config keys: checkpoint, frame, width, "
                                  "height, fx, fy, camera_position, samples, beta, seed"),
               render_args);
    add_common(app.add_subcommand("extract-mesh",
                                  "marching extraction of an SDF; config keys: sdf | checkpoint, resolution, "
                                  "iso, seed"),
               extract_args);
    add_common(app.add_subcommand("eval",
                                  "metrics between meshes; config keys: pred, gt | checkpoint, gt_dir, "
                                  "resolution, seed"),
               eval_args);
    add_common(app.add_subcommand("assign-debug",
                                  "dump the geodesic assignment diagnostics; config keys: checkpoint, "
                                  "resolution, samples, seed"),
               assign_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("synth")) return run_synth(synth_args);
        if (app.got_subcommand("fit")) return run_fit(fit_args);
        if (app.got_subcommand("deform")) return run_deform(deform_args);
        if (app.got_subcommand("render")) return run_render(render_args);
        if (app.got_subcommand("extract-mesh")) return run_extract(extract_args);
        if (app.got_subcommand("eval")) return run_eval(eval_args);
        if (app.got_subcommand("assign-debug")) return run_assign_debug(assign_args);
    } catch (const qrfit::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const qrfit::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
