#include "qrfit/synth.hpp"

#include "qrfit/error.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/shapes.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace qrfit {

void SyntheticSpec::validate() const {
    if (parts.empty()) throw InvariantError("synthetic spec needs at least one part");
    if (angles.empty()) throw InvariantError("synthetic spec needs at least one frame");
    if (std::abs(norm(hinge_axis) - 1.0) > 1e-9) throw InvariantError("hinge axis must be unit length");
    if (observation_points < 1) throw InvariantError("observation point count must be positive");
}

namespace {

TriangleMesh build_part(const PartSpec& part) {
    if (part.kind == PartSpec::Kind::Box) return make_box(part.center, part.half_extents, part.subdivisions);
    return make_cylinder(part.center, part.axis, part.radius, part.height, 4 * part.subdivisions,
                         2 * part.subdivisions);
}

}  // namespace

RigidTransform hinge_transform(const SyntheticSpec& spec, double angle) {
    Mat3 R = quat_to_matrix(Quat::from_axis_angle(spec.hinge_axis, angle));
    return {R, spec.hinge_point - R * spec.hinge_point};
}

Sequence generate_sequence(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Sequence seq;
    std::vector<TriangleMesh> part_meshes;
    for (const PartSpec& p : spec.parts) part_meshes.push_back(build_part(p));
    for (size_t k = 0; k < part_meshes.size(); ++k) {
        int group = spec.parts[k].group >= 0 ? spec.parts[k].group
                                             : std::min<int>(static_cast<int>(k), 1);
        append_mesh(seq.rest_mesh, part_meshes[k]);
        seq.part_of_vertex.insert(seq.part_of_vertex.end(), part_meshes[k].vertices.size(), group);
    }
    seq.rest_mesh.validate();

    int bone_count = 1;
    for (int g : seq.part_of_vertex) bone_count = std::max(bone_count, g + 1);
    for (size_t t = 0; t < spec.angles.size(); ++t) {
        SequenceFrame frame;
        frame.angle = spec.angles[t];
        RigidTransform moving = hinge_transform(spec, spec.angles[t]);

        frame.mesh = seq.rest_mesh;
        for (size_t v = 0; v < frame.mesh.vertices.size(); ++v)
            if (seq.part_of_vertex[v] == 1) frame.mesh.vertices[v] = moving.apply(frame.mesh.vertices[v]);

        frame.gt_pose.bone_poses.assign(bone_count, DualQuat::identity());
        if (bone_count > 1) frame.gt_pose.bone_poses[1] = dq_from_rigid(moving);
        frame.gt_pose.root = {Mat3::identity(), {0, 0, 0}};
        frame.gt_pose.cam = {Mat3::identity(), {0, 0, 0}};

        frame.observation =
            sample_points_uniform(frame.mesh, spec.observation_points,
                                  Rng::derive(seed, "synth-obs") + static_cast<std::uint64_t>(t));
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open synthetic spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("bad synthetic spec JSON: ") + e.what());
    }
    SyntheticSpec spec;
    try {
        for (const auto& jp : j.at("parts")) {
            PartSpec part;
            std::string kind = jp.value("kind", "box");
            if (kind == "box") {
                part.kind = PartSpec::Kind::Box;
                auto c = jp.at("center");
                auto h = jp.at("half_extents");
                part.center = {c.at(0), c.at(1), c.at(2)};
                part.half_extents = {h.at(0), h.at(1), h.at(2)};
            } else if (kind == "cylinder") {
                part.kind = PartSpec::Kind::Cylinder;
                auto c = jp.at("center");
                auto a = jp.at("axis");
                part.center = {c.at(0), c.at(1), c.at(2)};
                part.axis = normalized(Vec3{a.at(0), a.at(1), a.at(2)});
                part.radius = jp.at("radius");
                part.height = jp.at("height");
            } else {
                throw ParseError("unknown part kind '" + kind + "'");
            }
            part.subdivisions = jp.value("subdivisions", 4);
            part.group = jp.value("group", -1);
            spec.parts.push_back(part);
        }
        auto hp = j.at("hinge_point");
        auto ha = j.at("hinge_axis");
        spec.hinge_point = {hp.at(0), hp.at(1), hp.at(2)};
        spec.hinge_axis = normalized(Vec3{ha.at(0), ha.at(1), ha.at(2)});
        spec.observation_points = j.value("observation_points", 2000);

        if (j.contains("angles_deg")) {
            for (double a : j.at("angles_deg")) spec.angles.push_back(a * M_PI / 180.0);
        } else {
            double a0 = j.at("angle_start_deg");
            double a1 = j.at("angle_end_deg");
            int frames = j.at("frames");
            if (frames < 1) throw ParseError("frames must be >= 1");
            for (int t = 0; t < frames; ++t) {
                double u = frames == 1 ? 0.0 : static_cast<double>(t) / (frames - 1);
                spec.angles.push_back((a0 + u * (a1 - a0)) * M_PI / 180.0);
            }
        }
        if (j.value("mirror", false)) {
            // append the same articulation played backwards
            for (size_t t = spec.angles.size(); t-- > 0;) spec.angles.push_back(spec.angles[t]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad synthetic spec JSON: ") + e.what());
    }
    spec.validate();
    return spec;
}

void save_gt_poses(const Sequence& seq, const std::string& path, std::uint64_t seed) {
    nlohmann::json j;
    j["seed"] = seed;
    j["frames"] = nlohmann::json::array();
    for (const SequenceFrame& f : seq.frames) {
        nlohmann::json jf;
        jf["angle_rad"] = f.angle;
        nlohmann::json bones = nlohmann::json::array();
        for (const DualQuat& q : f.gt_pose.bone_poses)
            bones.push_back({q.real.w, q.real.x, q.real.y, q.real.z, q.dual.w, q.dual.x, q.dual.y, q.dual.z});
        jf["bone_poses"] = std::move(bones);
        j["frames"].push_back(std::move(jf));
    }
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace qrfit
