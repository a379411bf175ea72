#pragma once

#include "qrfit/mesh.hpp"
#include "qrfit/skinning.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qrfit {

/// Rigid primitive making up one part of a synthetic articulated object.
struct PartSpec {
    enum class Kind { Box, Cylinder };
    Kind kind = Kind::Box;
    Vec3 center{0, 0, 0};
    Vec3 half_extents{0.5, 0.5, 0.5};  // box
    Vec3 axis{0, 0, 1};                // cylinder
    double radius = 0.5, height = 1.0; // cylinder
    int subdivisions = 4;
    int group = -1;  // rigid group; -1 means "use the part index, capped at 1"
};

/// Two-group hinge sequence description: group 0 stays fixed, group 1
/// rotates about the hinge by the per-frame angle. A group may consist of
/// several primitives, e.g. to build asymmetric parts.
struct SyntheticSpec {
    std::vector<PartSpec> parts;
    Vec3 hinge_point{0, 0, 0};
    Vec3 hinge_axis{0, 0, 1};
    std::vector<double> angles;  // radians per frame
    int observation_points = 2000;

    void validate() const;
};

struct SequenceFrame {
    TriangleMesh mesh;
    PoseState gt_pose;       // bone 0 identity, bone 1 the hinge motion
    PointCloud observation;  // sampled from the frame mesh
    double angle = 0.0;
};

struct Sequence {
    TriangleMesh rest_mesh;
    std::vector<SequenceFrame> frames;
    std::vector<int> part_of_vertex;  // rest-mesh vertex -> rigid group
};

Sequence generate_sequence(const SyntheticSpec& spec, std::uint64_t seed);

/// The rigid transform rotating part 1 by `angle` about the spec's hinge.
RigidTransform hinge_transform(const SyntheticSpec& spec, double angle);

/// Spec JSON: parts, hinge, and either an explicit "angles_deg" array or
/// {"angle_start_deg","angle_end_deg","frames"} with optional "mirror".
SyntheticSpec load_synthetic_spec(const std::string& path);

/// Ground-truth poses: per frame, the angle plus 8 values per bone.
void save_gt_poses(const Sequence& seq, const std::string& path, std::uint64_t seed);

}  // namespace qrfit
