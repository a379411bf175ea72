#include "qrfit/error.hpp"
#include "qrfit/fit.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>

namespace qrfit {

namespace {

const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<float>& data) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data.data());
    size_t n = data.size() * sizeof(float);
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        unsigned v = bytes[i] << 16;
        if (i + 1 < n) v |= bytes[i + 1] << 8;
        if (i + 2 < n) v |= bytes[i + 2];
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(i + 1 < n ? kB64[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? kB64[v & 63] : '=');
    }
    return out;
}

std::vector<float> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> bytes;
    bytes.reserve(text.size() / 4 * 3);
    unsigned acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n') continue;
        int v = value_of(c);
        if (v < 0) throw ParseError("invalid base64 payload in checkpoint");
        acc = (acc << 6) | static_cast<unsigned>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            bytes.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
        }
    }
    if (bytes.size() % sizeof(float) != 0) throw ParseError("checkpoint payload is not float32-aligned");
    std::vector<float> out(bytes.size() / sizeof(float));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

nlohmann::json grid_to_json(const SDFGrid& g) {
    std::vector<float> data(g.values.begin(), g.values.end());
    return {{"nx", g.nx}, {"ny", g.ny}, {"nz", g.nz},
            {"bounds", {g.bounds.lo.x, g.bounds.lo.y, g.bounds.lo.z, g.bounds.hi.x, g.bounds.hi.y, g.bounds.hi.z}},
            {"data_b64", base64_encode(data)}};
}

nlohmann::json color_to_json(const ColorGrid& g) {
    std::vector<float> data(g.values.begin(), g.values.end());
    return {{"nx", g.nx}, {"ny", g.ny}, {"nz", g.nz},
            {"bounds", {g.bounds.lo.x, g.bounds.lo.y, g.bounds.lo.z, g.bounds.hi.x, g.bounds.hi.y, g.bounds.hi.z}},
            {"data_b64", base64_encode(data)}};
}

void bounds_from_json(const nlohmann::json& jb, Aabb& box) {
    box.lo = {jb.at(0), jb.at(1), jb.at(2)};
    box.hi = {jb.at(3), jb.at(4), jb.at(5)};
}

nlohmann::json quat8(const DualQuat& q) {
    return {q.real.w, q.real.x, q.real.y, q.real.z, q.dual.w, q.dual.x, q.dual.y, q.dual.z};
}

DualQuat quat8_parse(const nlohmann::json& a) {
    DualQuat q;
    q.real = {a.at(0), a.at(1), a.at(2), a.at(3)};
    q.dual = {a.at(4), a.at(5), a.at(6), a.at(7)};
    return q;
}

nlohmann::json rigid_to_json(const RigidTransform& t) {
    Quat q = quat_from_matrix(t.rotation);
    return {{"rotation", {q.w, q.x, q.y, q.z}}, {"translation", {t.translation.x, t.translation.y, t.translation.z}}};
}

RigidTransform rigid_from_json(const nlohmann::json& j) {
    auto q = j.at("rotation");
    auto t = j.at("translation");
    Quat quat{q.at(0), q.at(1), q.at(2), q.at(3)};
    double n = qnorm(quat);
    if (n < 1e-9) throw ParseError("zero rotation quaternion in checkpoint");
    return {quat_to_matrix((1.0 / n) * quat), {t.at(0), t.at(1), t.at(2)}};
}

}  // namespace

void save_checkpoint(const FitState& state, const FitConfig& cfg, const std::string& path) {
    state.validate();
    nlohmann::json j;
    j["format"] = "qrfit-checkpoint-1";
    j["seed"] = cfg.seed;
    j["backend"] = to_string(cfg.backend);
    j["gamma"] = state.gamma;
    j["beta"] = state.beta;
    j["eta"] = cfg.eta;
    j["zeta"] = cfg.zeta;

    nlohmann::json bones = nlohmann::json::array();
    for (int b = 0; b < state.bones.count(); ++b) {
        Quat q = quat_from_matrix(state.bones.orientations[b]);
        bones.push_back({
            {"center", {state.bones.centers[b].x, state.bones.centers[b].y, state.bones.centers[b].z}},
            {"orientation", {q.w, q.x, q.y, q.z}},
            {"precision", {state.bones.precisions[b].x, state.bones.precisions[b].y, state.bones.precisions[b].z}},
        });
    }
    j["bones"] = std::move(bones);

    nlohmann::json poses = nlohmann::json::array();
    for (const PoseState& p : state.poses) {
        nlohmann::json jp;
        nlohmann::json bq = nlohmann::json::array();
        for (const DualQuat& q : p.bone_poses) bq.push_back(quat8(q));
        jp["bones"] = std::move(bq);
        jp["root"] = rigid_to_json(p.root);
        jp["cam"] = rigid_to_json(p.cam);
        poses.push_back(std::move(jp));
    }
    j["poses"] = std::move(poses);

    nlohmann::json delta;
    delta["resolution"] = state.delta.resolution;
    delta["half_extents"] = {state.delta.half_extents.x, state.delta.half_extents.y, state.delta.half_extents.z};
    nlohmann::json dv = nlohmann::json::array();
    for (const auto& grid : state.delta.values) {
        std::vector<float> data(grid.begin(), grid.end());
        dv.push_back(base64_encode(data));
    }
    delta["values_b64"] = std::move(dv);
    j["delta"] = std::move(delta);

    j["sdf"] = grid_to_json(state.sdf);
    j["color"] = color_to_json(state.color);

    std::ostringstream csv;
    csv << "iteration,total,data,sparse,cycle,reg\n";
    char buf[160];
    for (size_t i = 0; i < state.loss_history.size(); ++i) {
        const auto& row = state.loss_history[i];
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, row[0], row[1], row[2], row[3], row[4]);
        csv << buf;
    }
    j["loss_history_csv"] = csv.str();

    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << j.dump() << "\n";
}

FitState load_checkpoint(const std::string& path, FitConfig* cfg_out) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("bad checkpoint JSON: ") + e.what());
    }
    FitState st;
    try {
        if (j.value("format", std::string()) != "qrfit-checkpoint-1")
            throw ParseError("not a qrfit checkpoint");
        st.gamma = j.at("gamma");
        st.beta = j.at("beta");
        for (const auto& jb : j.at("bones")) {
            auto c = jb.at("center");
            auto q = jb.at("orientation");
            auto s = jb.at("precision");
            st.bones.centers.push_back({c.at(0), c.at(1), c.at(2)});
            Quat quat{q.at(0), q.at(1), q.at(2), q.at(3)};
            st.bones.orientations.push_back(quat_to_matrix((1.0 / qnorm(quat)) * quat));
            st.bones.precisions.push_back({s.at(0), s.at(1), s.at(2)});
        }
        for (const auto& jp : j.at("poses")) {
            PoseState p;
            for (const auto& bq : jp.at("bones")) p.bone_poses.push_back(dq_normalized(quat8_parse(bq)));
            p.root = rigid_from_json(jp.at("root"));
            p.cam = rigid_from_json(jp.at("cam"));
            st.poses.push_back(std::move(p));
        }
        const auto& jd = j.at("delta");
        st.delta.resolution = jd.at("resolution");
        auto he = jd.at("half_extents");
        st.delta.half_extents = {he.at(0), he.at(1), he.at(2)};
        for (const auto& b64 : jd.at("values_b64")) {
            std::vector<float> data = base64_decode(b64);
            st.delta.values.emplace_back(data.begin(), data.end());
        }
        const auto& js = j.at("sdf");
        st.sdf.nx = js.at("nx");
        st.sdf.ny = js.at("ny");
        st.sdf.nz = js.at("nz");
        bounds_from_json(js.at("bounds"), st.sdf.bounds);
        std::vector<float> sdata = base64_decode(js.at("data_b64"));
        st.sdf.values.assign(sdata.begin(), sdata.end());
        const auto& jc = j.at("color");
        st.color.nx = jc.at("nx");
        st.color.ny = jc.at("ny");
        st.color.nz = jc.at("nz");
        bounds_from_json(jc.at("bounds"), st.color.bounds);
        std::vector<float> cdata = base64_decode(jc.at("data_b64"));
        st.color.values.assign(cdata.begin(), cdata.end());

        if (cfg_out) {
            cfg_out->seed = j.value("seed", 0ull);
            cfg_out->backend = skin_backend_from_string(j.value("backend", std::string("qrbs")));
            cfg_out->eta = j.value("eta", cfg_out->eta);
            cfg_out->zeta = j.value("zeta", cfg_out->zeta);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad checkpoint JSON: ") + e.what());
    }
    st.sdf.validate();
    st.color.validate();
    st.delta.validate();
    st.bones.validate();
    return st;
}

}  // namespace qrfit
