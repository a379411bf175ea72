#include "qrfit/skinning.hpp"

#include "qrfit/error.hpp"
#include "qrfit/geodesic.hpp"
#include "qrfit/kdtree.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace qrfit {

void BoneSet::validate() const {
    if (centers.empty()) throw InvariantError("bone set must contain at least one bone");
    if (orientations.size() != centers.size() || precisions.size() != centers.size())
        throw InvariantError("bone set arrays disagree in length");
    for (size_t b = 0; b < centers.size(); ++b) {
        if (!finite(centers[b])) throw InvariantError("non-finite bone center");
        if (orthonormality_error(orientations[b]) > 1e-6 || std::abs(det(orientations[b]) - 1.0) > 1e-6)
            throw InvariantError("bone orientation is not a rotation");
        if (!(precisions[b].x > 0 && precisions[b].y > 0 && precisions[b].z > 0))
            throw InvariantError("bone precisions must be positive");
    }
}

DeltaWeightField DeltaWeightField::zeros(int bones, int resolution, const Vec3& half_extents) {
    if (resolution < 2) throw InvariantError("delta lattice needs resolution >= 2");
    DeltaWeightField f;
    f.resolution = resolution;
    f.half_extents = half_extents;
    f.values.assign(bones, std::vector<double>(static_cast<size_t>(resolution) * resolution * resolution, 0.0));
    return f;
}

void DeltaWeightField::validate() const {
    if (resolution < 2) throw InvariantError("delta lattice needs resolution >= 2");
    size_t n = static_cast<size_t>(resolution) * resolution * resolution;
    for (const auto& grid : values) {
        if (grid.size() != n) throw InvariantError("delta lattice node count mismatch");
        for (double v : grid)
            if (!std::isfinite(v)) throw InvariantError("non-finite delta lattice value");
    }
}

double DeltaWeightField::eval(int bone, const Vec3& local) const {
    Stencil s;
    return eval_with_stencil(bone, local, s);
}

double DeltaWeightField::eval_with_stencil(int bone, const Vec3& local, Stencil& out) const {
    const int r = resolution;
    const auto& grid = values[bone];
    double u[3], frac[3];
    int cell[3];
    bool clamped[3];
    for (int k = 0; k < 3; ++k) {
        double h = half_extents[k];
        double t = h > 0 ? (local[k] + h) / (2.0 * h) * (r - 1) : 0.0;
        clamped[k] = t <= 0.0 || t >= r - 1;
        t = std::clamp(t, 0.0, static_cast<double>(r - 1));
        cell[k] = std::min(static_cast<int>(t), r - 2);
        frac[k] = t - cell[k];
        u[k] = h > 0 ? (r - 1) / (2.0 * h) : 0.0;  // d(t)/d(local)
    }
    double value = 0.0;
    Vec3 grad{0, 0, 0};
    int c = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                double wx = dx ? frac[0] : 1.0 - frac[0];
                double wy = dy ? frac[1] : 1.0 - frac[1];
                double wz = dz ? frac[2] : 1.0 - frac[2];
                int node = (cell[2] + dz) * r * r + (cell[1] + dy) * r + (cell[0] + dx);
                double w = wx * wy * wz;
                out.node[c] = node;
                out.weight[c] = w;
                ++c;
                double v = grid[node];
                value += w * v;
                grad.x += (dx ? 1.0 : -1.0) * wy * wz * v;
                grad.y += (dy ? 1.0 : -1.0) * wx * wz * v;
                grad.z += (dz ? 1.0 : -1.0) * wx * wy * v;
            }
    out.spatial_grad = {clamped[0] ? 0.0 : grad.x * u[0], clamped[1] ? 0.0 : grad.y * u[1],
                        clamped[2] ? 0.0 : grad.z * u[2]};
    return value;
}

int AssignmentVector::count_on() const {
    int n = 0;
    for (auto v : on) n += v ? 1 : 0;
    return n;
}

void AssignmentVector::validate() const {
    int n = count_on();
    if (n != 1 && n != 2) throw InvariantError("assignment vector must be one- or two-hot");
}

void PoseState::validate() const {
    for (const DualQuat& q : bone_poses) q.validate();
    root.validate();
    cam.validate();
}

SkinBackend skin_backend_from_string(const std::string& name) {
    if (name == "qrbs") return SkinBackend::Qrbs;
    if (name == "lbs") return SkinBackend::Lbs;
    if (name == "rigid") return SkinBackend::Rigid;
    throw ParseError("unknown skinning backend '" + name + "' (expected qrbs, lbs, or rigid)");
}

std::string to_string(SkinBackend backend) {
    switch (backend) {
        case SkinBackend::Qrbs: return "qrbs";
        case SkinBackend::Lbs: return "lbs";
        case SkinBackend::Rigid: return "rigid";
    }
    return "?";
}

std::vector<double> mahalanobis(const BoneSet& bones, const Vec3& X) {
    const int B = bones.count();
    std::vector<double> d(B);
    for (int b = 0; b < B; ++b) {
        Vec3 u = bones.orientations[b] * (X - bones.centers[b]);
        const Vec3& lam = bones.precisions[b];
        d[b] = lam.x * u.x * u.x + lam.y * u.y * u.y + lam.z * u.z * u.z;
    }
    return d;
}

std::vector<double> skin_weights(const BoneSet& bones, const Vec3& X, const DeltaWeightField* delta,
                                 double gamma) {
    if (!(gamma > 0)) throw InvariantError("temperature gamma must be positive");
    const int B = bones.count();
    std::vector<double> score = mahalanobis(bones, X);
    for (int b = 0; b < B; ++b) {
        double wd = 0.0;
        if (delta && !delta->empty()) wd = delta->eval(b, bones.orientations[b] * (X - bones.centers[b]));
        score[b] = (-score[b] + wd) / gamma;
    }
    double m = *std::max_element(score.begin(), score.end());
    double sum = 0.0;
    for (int b = 0; b < B; ++b) {
        score[b] = std::exp(score[b] - m);
        sum += score[b];
    }
    for (int b = 0; b < B; ++b) score[b] /= sum;
    return score;
}

std::vector<double> rigid_binarize(const std::vector<double>& weights) {
    if (weights.empty()) throw InvariantError("cannot binarize empty weights");
    size_t best = 0;
    for (size_t b = 1; b < weights.size(); ++b)
        if (weights[b] > weights[best]) best = b;
    std::vector<double> out(weights.size(), 0.0);
    out[best] = 1.0;
    return out;
}

AssignmentVector assign_point(double dM_i, double dM_j, double dG_i, double dG_j, int i, int j,
                              double eta, double zeta, int bone_count, int* branch_out) {
    if (i == j) throw InvariantError("assign_point needs two distinct bones");
    if (!(eta > 0 && eta < 1) || !(zeta > 0)) throw InvariantError("assign_point needs 0<eta<1 and zeta>0");
    if (dM_i < 0 || dM_j < 0 || dG_i < 0 || dG_j < 0) throw InvariantError("distances must be nonnegative");
    AssignmentVector m;
    m.on.assign(bone_count, 0);
    int branch;
    if (dM_j <= 0.0) {
        // both Mahalanobis distances vanish only at coincident centers: joint
        m.on[i] = m.on[j] = 1;
        branch = 2;
    } else if (dM_i / dM_j < 1.0 - eta) {
        m.on[i] = 1;
        branch = 1;
    } else {
        double g_min = std::min(dG_i, dG_j);
        if (g_min <= 0.0) {
            if (std::max(dG_i, dG_j) <= 0.0) {
                m.on[i] = m.on[j] = 1;  // equal (zero) geodesics: joint
                branch = 2;
            } else {
                m.on[dG_i <= dG_j ? i : j] = 1;
                branch = 3;
            }
        } else if (std::abs(dG_i - dG_j) / g_min < zeta) {
            m.on[i] = m.on[j] = 1;
            branch = 2;
        } else {
            m.on[dG_i <= dG_j ? i : j] = 1;
            branch = 3;
        }
    }
    if (branch_out) *branch_out = branch;
    m.validate();
    return m;
}

AssignResult assign_points(const TriangleMesh& mesh, const BoneSet& bones, const PointCloud& points,
                           double eta, double zeta) {
    bones.validate();
    mesh.validate();
    if (mesh.vertices.empty()) throw InvariantError("assign_points needs a non-empty canonical mesh");
    const int B = bones.count();

    KdTree vertex_tree(mesh.vertices);
    GeodesicSolver solver(mesh);

    // one distance field per bone anchor vertex (bones may share anchors)
    std::vector<int> anchor(B);
    for (int b = 0; b < B; ++b) anchor[b] = vertex_tree.nearest(bones.centers[b]);
    std::vector<std::vector<double>> field(B);
    std::vector<int> share(B, -1);
    for (int b = 0; b < B; ++b) {
        for (int prev = 0; prev < b; ++prev)
            if (anchor[prev] == anchor[b]) share[b] = prev;
    }
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < B; ++b) {
        if (share[b] < 0) field[b] = solver.distances_from(anchor[b]);
    }
    for (int b = 0; b < B; ++b)
        if (share[b] >= 0) field[b] = field[share[b]];

    AssignResult result;
    result.assignments.resize(points.points.size());
    result.diagnostics.resize(points.points.size());

    const std::int64_t n = static_cast<std::int64_t>(points.points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < n; ++p) {
        const Vec3& X = points.points[p];
        std::vector<double> dM = mahalanobis(bones, X);
        int i = 0;
        for (int b = 1; b < B; ++b)
            if (dM[b] < dM[i]) i = b;
        int j = -1;
        for (int b = 0; b < B; ++b) {
            if (b == i) continue;
            if (j < 0 || dM[b] < dM[j]) j = b;
        }

        AssignDiag diag;
        diag.point = static_cast<int>(p);
        diag.bone_i = i;
        diag.bone_j = j;
        diag.dM_i = dM[i];

        if (j < 0) {
            // single-bone rig: everything belongs to it
            AssignmentVector m;
            m.on.assign(B, 0);
            m.on[i] = 1;
            diag.branch = 1;
            diag.assignment = m;
            result.assignments[p] = std::move(m);
            result.diagnostics[p] = std::move(diag);
            continue;
        }
        diag.dM_j = dM[j];

        int x_hat = vertex_tree.nearest(X);
        double gi = field[i][x_hat];
        double gj = field[j][x_hat];
        if (!std::isfinite(gi) && anchor[i] == x_hat) gi = 0.0;
        if (!std::isfinite(gj) && anchor[j] == x_hat) gj = 0.0;

        AssignmentVector m;
        if (!std::isfinite(gi) || !std::isfinite(gj)) {
            // anchors unreachable along the surface: Mahalanobis-only fallback
            m.on.assign(B, 0);
            m.on[i] = 1;
            diag.branch = 0;
            diag.dG_i = gi;
            diag.dG_j = gj;
        } else {
            diag.dG_i = gi;
            diag.dG_j = gj;
            m = assign_point(dM[i], dM[j], gi, gj, i, j, eta, zeta, B, &diag.branch);
        }
        diag.assignment = m;
        result.assignments[p] = std::move(m);
        result.diagnostics[p] = std::move(diag);
    }
    for (const AssignDiag& d : result.diagnostics)
        if (d.branch == 0) ++result.geodesic_fallbacks;
    return result;
}

void write_assignment_csv(const AssignResult& result, const std::string& path, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << "# seed " << seed << "\n";
    out << "point,bone_i,bone_j,dM_i,dM_j,dG_i,dG_j,branch,assignment\n";
    char buf[128];
    for (const AssignDiag& d : result.diagnostics) {
        std::string mask;
        for (auto v : d.assignment.on) mask.push_back(v ? '1' : '0');
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%d,", d.point, d.bone_i, d.bone_j,
                      d.dM_i, d.dM_j, d.dG_i, d.dG_j, d.branch);
        out << buf << mask << "\n";
    }
}

double sparse_skin_loss(const std::vector<std::vector<double>>& weights,
                        const std::vector<AssignmentVector>& assignments) {
    if (weights.size() != assignments.size())
        throw InvariantError("sparse_skin_loss needs one assignment per weight vector");
    double energy = 0.0;
    double masked = 0.0;
    for (size_t p = 0; p < weights.size(); ++p) {
        const auto& w = weights[p];
        const auto& m = assignments[p].on;
        if (w.size() != m.size()) throw InvariantError("weight/assignment dimension mismatch");
        for (size_t b = 0; b < w.size(); ++b) {
            if (!m[b]) {
                energy += w[b] * w[b];
                masked += 1.0;
            }
        }
    }
    return masked > 0.0 ? energy / masked : 0.0;
}

namespace {

Vec3 apply_blend(const std::vector<double>& w, const std::vector<DualQuat>& dqs, const Vec3& X,
                 SkinBackend backend) {
    switch (backend) {
        case SkinBackend::Qrbs:
            return dq_apply(dq_blend(w, dqs), X);
        case SkinBackend::Rigid:
            return dq_apply(dq_blend(rigid_binarize(w), dqs), X);
        case SkinBackend::Lbs: {
            std::vector<RigidTransform> rigs(dqs.size());
            for (size_t b = 0; b < dqs.size(); ++b) rigs[b] = dq_to_rigid(dqs[b]);
            return lbs_blend(w, rigs).apply(X);
        }
    }
    throw InvariantError("unknown skinning backend");
}

}  // namespace

Vec3 qrbs_forward(const Vec3& X, const BoneSet& bones, const DeltaWeightField* delta, double gamma,
                  const PoseState& pose, SkinBackend backend) {
    std::vector<double> w = skin_weights(bones, X, delta, gamma);
    Vec3 obj = apply_blend(w, pose.bone_poses, X, backend);
    return pose.global().apply(obj);
}

BoneSet transported_bones(const BoneSet& bones, const PoseState& pose) {
    BoneSet out = bones;
    for (int b = 0; b < bones.count(); ++b) {
        RigidTransform t = dq_to_rigid(pose.bone_poses[b]);
        out.centers[b] = t.apply(bones.centers[b]);
        out.orientations[b] = bones.orientations[b] * transpose(t.rotation);
    }
    return out;
}

Vec3 qrbs_inverse(const Vec3& Xt, const BoneSet& bones, const DeltaWeightField* delta, double gamma,
                  const PoseState& pose, SkinBackend backend) {
    Vec3 x_obj = pose.global().inverse().apply(Xt);
    BoneSet moved = transported_bones(bones, pose);
    std::vector<double> w = skin_weights(moved, x_obj, delta, gamma);
    std::vector<DualQuat> inv(pose.bone_poses.size());
    for (size_t b = 0; b < inv.size(); ++b) inv[b] = dq_inverse(pose.bone_poses[b]);
    return apply_blend(w, inv, x_obj, backend);
}

std::vector<double> cycle_residual(const PointCloud& points, const BoneSet& bones,
                                   const DeltaWeightField* delta, double gamma, const PoseState& pose,
                                   SkinBackend backend) {
    std::vector<double> out(points.points.size());
    const std::int64_t n = static_cast<std::int64_t>(points.points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < n; ++p) {
        Vec3 there = qrbs_forward(points.points[p], bones, delta, gamma, pose, backend);
        Vec3 back = qrbs_inverse(there, bones, delta, gamma, pose, backend);
        out[p] = norm(back - points.points[p]);
    }
    return out;
}

std::vector<Vec3> deform_points_serial(const std::vector<Vec3>& points, const BoneSet& bones,
                                       const DeltaWeightField* delta, double gamma, const PoseState& pose,
                                       SkinBackend backend) {
    std::vector<Vec3> out(points.size());
    for (size_t p = 0; p < points.size(); ++p)
        out[p] = qrbs_forward(points[p], bones, delta, gamma, pose, backend);
    return out;
}

std::vector<Vec3> deform_points(const std::vector<Vec3>& points, const BoneSet& bones,
                                const DeltaWeightField* delta, double gamma, const PoseState& pose,
                                SkinBackend backend) {
    std::vector<Vec3> out(points.size());
    const std::int64_t n = static_cast<std::int64_t>(points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < n; ++p)
        out[p] = qrbs_forward(points[p], bones, delta, gamma, pose, backend);
    return out;
}

void save_rig(const RigConfig& rig, const std::string& path) {
    rig.bones.validate();
    nlohmann::json j;
    j["bone_count"] = rig.bones.count();
    j["gamma"] = rig.gamma;
    j["eta"] = rig.eta;
    j["zeta"] = rig.zeta;
    nlohmann::json arr = nlohmann::json::array();
    for (int b = 0; b < rig.bones.count(); ++b) {
        Quat q = quat_from_matrix(rig.bones.orientations[b]);
        arr.push_back({
            {"center", {rig.bones.centers[b].x, rig.bones.centers[b].y, rig.bones.centers[b].z}},
            {"orientation", {q.w, q.x, q.y, q.z}},
            {"precision", {rig.bones.precisions[b].x, rig.bones.precisions[b].y, rig.bones.precisions[b].z}},
        });
    }
    j["bones"] = std::move(arr);
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

RigConfig load_rig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open rig file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("bad rig JSON: ") + e.what());
    }
    RigConfig rig;
    try {
        rig.gamma = j.value("gamma", 0.1);
        rig.eta = j.value("eta", 0.2);
        rig.zeta = j.value("zeta", 0.2);
        for (const auto& jb : j.at("bones")) {
            auto c = jb.at("center");
            auto q = jb.at("orientation");
            auto s = jb.at("precision");
            rig.bones.centers.push_back({c.at(0), c.at(1), c.at(2)});
            Quat quat{q.at(0), q.at(1), q.at(2), q.at(3)};
            double n = qnorm(quat);
            if (n < 1e-9) throw ParseError("zero orientation quaternion");
            rig.bones.orientations.push_back(quat_to_matrix((1.0 / n) * quat));
            rig.bones.precisions.push_back({s.at(0), s.at(1), s.at(2)});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad rig JSON: ") + e.what());
    }
    rig.bones.validate();
    return rig;
}

}  // namespace qrfit
