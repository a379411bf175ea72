#include "qrfit/geodesic.hpp"

#include "qrfit/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <unordered_set>

namespace qrfit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; ++i) parent[i] = i;
    }
    int find(int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

GeodesicSolver::GeodesicSolver(const TriangleMesh& mesh) {
    mesh.validate();
    positions_ = mesh.vertices;
    const int nv = static_cast<int>(positions_.size());
    vertex_edges_.resize(nv);
    vertex_faces_.resize(nv);
    emits_pseudosource_.assign(nv, 0);

    std::map<std::pair<int, int>, int> edge_ids;
    face_edges_.resize(mesh.faces.size());
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& tri = mesh.faces[f];
        for (int k = 0; k < 3; ++k) {
            int a = tri[k], b = tri[(k + 1) % 3], opp = tri[(k + 2) % 3];
            auto key = std::minmax(a, b);
            auto it = edge_ids.find(key);
            int e;
            if (it == edge_ids.end()) {
                e = static_cast<int>(edges_.size());
                edge_ids[key] = e;
                EdgeRec rec;
                rec.v0 = key.first;
                rec.v1 = key.second;
                rec.len = norm(positions_[rec.v1] - positions_[rec.v0]);
                edges_.push_back(rec);
                vertex_edges_[rec.v0].push_back(e);
                vertex_edges_[rec.v1].push_back(e);
            } else {
                e = it->second;
            }
            EdgeRec& rec = edges_[e];
            if (rec.face[0] < 0) {
                rec.face[0] = static_cast<int>(f);
                rec.opposite[0] = opp;
            } else if (rec.face[1] < 0) {
                rec.face[1] = static_cast<int>(f);
                rec.opposite[1] = opp;
            }
            // a third face on one edge is non-manifold; propagation simply
            // stops there and edge relaxation takes over
            face_edges_[f][k] = e;
        }
        for (int k = 0; k < 3; ++k) vertex_faces_[tri[k]].push_back(static_cast<int>(f));
    }

    // interior angle sums decide which vertices can emit new wavefronts
    std::vector<double> angle_sum(nv, 0.0);
    for (const auto& tri : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            int a = tri[k], b = tri[(k + 1) % 3], c = tri[(k + 2) % 3];
            Vec3 u = positions_[b] - positions_[a];
            Vec3 v = positions_[c] - positions_[a];
            double nu = norm(u), nv2 = norm(v);
            if (nu < 1e-15 || nv2 < 1e-15) continue;
            double cosang = std::clamp(dot(u, v) / (nu * nv2), -1.0, 1.0);
            angle_sum[a] += std::acos(cosang);
        }
    }
    for (int v = 0; v < nv; ++v) {
        bool boundary = false;
        for (int e : vertex_edges_[v])
            if (edges_[e].face[1] < 0) boundary = true;
        if (boundary || angle_sum[v] >= 2.0 * M_PI - 1e-9) emits_pseudosource_[v] = 1;
    }
    // vertices whose face fan splits into several groups (pinch points) must
    // also emit, or the far side would never be reached
    {
        for (int v = 0; v < nv; ++v) {
            if (emits_pseudosource_[v] || vertex_faces_[v].size() < 2) continue;
            const auto& fan = vertex_faces_[v];
            // O(fan^2) grouping over edges shared at v
            std::vector<int> group(fan.size());
            for (size_t i = 0; i < fan.size(); ++i) group[i] = static_cast<int>(i);
            for (size_t i = 0; i < fan.size(); ++i)
                for (size_t j = i + 1; j < fan.size(); ++j) {
                    for (int k = 0; k < 3; ++k) {
                        int e = face_edges_[fan[i]][k];
                        if ((edges_[e].v0 == v || edges_[e].v1 == v) &&
                            (edges_[e].face[0] == fan[j] || edges_[e].face[1] == fan[j])) {
                            int gi = group[i], gj = group[j];
                            for (auto& g : group)
                                if (g == gj) g = gi;
                        }
                    }
                }
            bool split = false;
            for (size_t i = 1; i < fan.size(); ++i)
                if (group[i] != group[0]) split = true;
            if (split) emits_pseudosource_[v] = 1;
        }
    }

    // connected components over faces sharing vertices (any surface path)
    UnionFind uf(nv);
    for (const auto& tri : mesh.faces) {
        uf.unite(tri[0], tri[1]);
        uf.unite(tri[1], tri[2]);
    }
    component_.assign(nv, -1);
    for (int v = 0; v < nv; ++v)
        if (!vertex_faces_[v].empty()) component_[v] = uf.find(v);

    Aabb box = mesh.bounds();
    scale_ = box.valid() ? std::max(box.diagonal(), 1e-12) : 1.0;
}

namespace {

struct WinRec {
    double b1;
    double d0, d1;
    double sigma;
    int from_face;
    std::uint64_t id;
    bool propagated;
};

// 2D pseudosource position over the edge axis, recovered from interval data
void window_source(double b0, double b1, double d0, double d1, double& px, double& py) {
    px = 0.5 * ((d0 * d0 - d1 * d1) / (b1 - b0) + b0 + b1);
    double h2 = d0 * d0 - (px - b0) * (px - b0);
    py = std::sqrt(std::max(h2, 0.0));
}

double window_min_dist(double b0, double b1, double d0, double d1, double sigma) {
    double px, py;
    window_source(b0, b1, d0, d1, px, py);
    if (px <= b0) return sigma + d0;
    if (px >= b1) return sigma + d1;
    return sigma + py;
}

struct Event {
    double key;
    int kind;  // 0 vertex, 1 window
    int vertex;
    int edge;
    double b0;
    std::uint64_t id;
};

struct EventOrder {
    bool operator()(const Event& a, const Event& b) const { return a.key > b.key; }
};

// solves S + s (P - S) = T0 + t (T1 - T0); returns false when parallel
bool ray_segment(double sx, double sy, double px, double py0, double t0x, double t0y, double t1x,
                 double t1y, double& s, double& t) {
    double dx = px - sx, dy = py0 - sy;
    double ex = t1x - t0x, ey = t1y - t0y;
    double den = dx * ey - dy * ex;
    if (std::abs(den) < 1e-300) return false;
    double rx = t0x - sx, ry = t0y - sy;
    s = (rx * ey - ry * ex) / den;
    t = (rx * dy - ry * dx) / den;
    return true;
}

}  // namespace

std::vector<double> GeodesicSolver::distances_from(int source) const {
    const int nv = vertex_count();
    if (source < 0 || source >= nv) throw InvariantError("geodesic source vertex out of range");

    std::vector<double> dist(nv, kInf);
    dist[source] = 0.0;

    std::vector<std::map<double, WinRec>> windows(edges_.size());
    std::priority_queue<Event, std::vector<Event>, EventOrder> queue;
    std::unordered_set<std::uint64_t> alive;
    std::uint64_t next_id = 1;

    const double eps_imp = 1e-12 * scale_;   // minimum improvement worth keeping
    const double eps_cover = 1e-9 * scale_;  // endpoint coverage slack

    std::uint64_t event_budget = 30ull * 1000 * 1000;

    auto push_vertex = [&](int v) { queue.push({dist[v], 0, v, -1, 0.0, 0}); };

    auto relax_vertex = [&](int v, double cand) {
        if (cand < dist[v] - eps_imp) {
            dist[v] = cand;
            push_vertex(v);
        }
    };

    // A window is worth keeping only if somewhere on its interval it can
    // beat the upper bound given by walking from an endpoint vertex; the
    // bound max(min(d0+x, d1+L-x)) peaks where the two lines cross.
    auto dominated_by_vertices = [&](const EdgeRec& er, double b0, double b1, double fmin) {
        double dv0 = dist[er.v0], dv1 = dist[er.v1];
        if (!std::isfinite(dv0) || !std::isfinite(dv1)) return false;
        double cross_x = 0.5 * (dv1 + er.len - dv0);
        double peak;
        if (cross_x <= b0) peak = std::min(dv0 + b0, dv1 + er.len - b0);
        else if (cross_x >= b1) peak = std::min(dv0 + b1, dv1 + er.len - b1);
        else peak = 0.5 * (dv0 + dv1 + er.len);
        return fmin >= peak - eps_imp;
    };

    // Inserts a candidate window into its edge list, trimming against the
    // intervals already there so the per-edge distance envelope only improves.
    auto add_window = [&](int edge, double b0, double b1, double d0, double d1, double sigma,
                          int from_face) {
        const EdgeRec& er = edges_[edge];
        const double L = er.len;
        const double eps_len = 1e-9 * L + 1e-300;
        if (L <= 0.0) return;

        // clip to the edge span, recomputing endpoint distances from the source point
        double px, py;
        if (b1 - b0 < eps_len) return;
        window_source(b0, b1, d0, d1, px, py);
        auto f_at = [&](double x) { return std::hypot(x - px, py); };
        if (b0 < 0.0) { b0 = 0.0; d0 = f_at(0.0); }
        if (b1 > L) { b1 = L; d1 = f_at(L); }
        if (b1 - b0 < eps_len) return;
        if (!std::isfinite(d0) || !std::isfinite(d1)) return;

        // endpoint coverage always yields valid path bounds, trimmed or not
        if (b0 <= eps_cover) relax_vertex(er.v0, sigma + f_at(0.0));
        if (b1 >= L - eps_cover) relax_vertex(er.v1, sigma + f_at(L));

        if (dominated_by_vertices(er, b0, b1, window_min_dist(b0, b1, d0, d1, sigma))) return;

        auto dist_new = [&](double x) { return sigma + f_at(x); };

        auto& list = windows[edge];

        struct Piece { double b0, b1; };
        std::vector<Piece> pending;  // surviving parts of the new window
        double cursor = b0;

        auto it = list.upper_bound(b0);
        if (it != list.begin()) {
            auto prev = std::prev(it);
            if (prev->second.b1 > b0) it = prev;
        }

        while (cursor < b1 - eps_len && it != list.end() && it->first < b1) {
            double ob0 = it->first;
            const WinRec& old = it->second;
            double ob1 = old.b1;
            if (ob1 <= cursor + eps_len) { ++it; continue; }

            if (ob0 > cursor) {
                double gap_hi = std::min(ob0, b1);
                if (gap_hi - cursor > eps_len) pending.push_back({cursor, gap_hi});
                cursor = gap_hi;
                if (cursor >= b1 - eps_len) break;
            }

            double lo = std::max(cursor, ob0);
            double hi = std::min(b1, ob1);
            if (hi - lo <= eps_len) { ++it; continue; }

            double opx, opy;
            window_source(ob0, ob1, old.d0, old.d1, opx, opy);
            auto dist_old = [&](double x) { return old.sigma + std::hypot(x - opx, opy); };
            auto diff = [&](double x) { return dist_new(x) - dist_old(x); };

            double g_lo = diff(lo), g_hi = diff(hi), g_mid = diff(0.5 * (lo + hi));
            bool new_better = g_lo < -eps_imp || g_hi < -eps_imp || g_mid < -eps_imp;
            bool old_better = g_lo > eps_imp || g_hi > eps_imp || g_mid > eps_imp;

            if (!new_better) {
                // old covers this stretch; skip it
                cursor = hi;
                ++it;
                continue;
            }

            std::vector<double> cuts;  // boundaries between winners inside [lo, hi]
            if (old_better) {
                // locate sign changes among lo, mid, hi by bisection
                double pts[3] = {lo, 0.5 * (lo + hi), hi};
                double gs[3] = {g_lo, g_mid, g_hi};
                for (int seg = 0; seg < 2; ++seg) {
                    if ((gs[seg] < 0) == (gs[seg + 1] < 0)) continue;
                    double a = pts[seg], bb = pts[seg + 1];
                    double ga = gs[seg];
                    for (int iter = 0; iter < 80; ++iter) {
                        double m = 0.5 * (a + bb);
                        double gm = diff(m);
                        if ((gm < 0) == (ga < 0)) { a = m; ga = gm; }
                        else bb = m;
                    }
                    cuts.push_back(0.5 * (a + bb));
                }
            }

            // walk the sub-intervals of [lo, hi], assigning each to a winner
            std::vector<double> bounds{lo};
            for (double c : cuts) bounds.push_back(c);
            bounds.push_back(hi);
            std::vector<Piece> old_pieces;
            for (size_t si = 0; si + 1 < bounds.size(); ++si) {
                double a = bounds[si], bb = bounds[si + 1];
                if (bb - a <= eps_len) continue;
                if (diff(0.5 * (a + bb)) < 0.0) {
                    pending.push_back({a, bb});
                } else {
                    old_pieces.push_back({a, bb});
                }
            }

            // rebuild the old window: its parts outside [lo, hi] plus surviving pieces
            std::vector<Piece> keep;
            if (lo - ob0 > eps_len) keep.push_back({ob0, lo});
            for (const Piece& p : old_pieces) keep.push_back(p);
            if (ob1 - hi > eps_len) keep.push_back({hi, ob1});

            bool unchanged = keep.size() == 1 && std::abs(keep[0].b0 - ob0) <= eps_len &&
                             std::abs(keep[0].b1 - ob1) <= eps_len;
            if (!unchanged) {
                WinRec old_copy = old;
                alive.erase(old_copy.id);
                it = list.erase(it);
                for (const Piece& p : keep) {
                    WinRec rec = old_copy;
                    rec.b1 = p.b1;
                    rec.d0 = std::hypot(p.b0 - opx, opy);
                    rec.d1 = std::hypot(p.b1 - opx, opy);
                    rec.id = next_id++;
                    alive.insert(rec.id);
                    list.emplace(p.b0, rec);
                    if (!rec.propagated)
                        queue.push({window_min_dist(p.b0, rec.b1, rec.d0, rec.d1, rec.sigma), 1, -1,
                                    edge, p.b0, rec.id});
                }
                it = list.lower_bound(hi - eps_len);
            } else {
                ++it;
            }
            cursor = hi;
        }
        if (b1 - cursor > eps_len) pending.push_back({cursor, b1});

        constexpr size_t kMaxWindowsPerEdge = 64;
        for (const Piece& p : pending) {
            if (p.b1 - p.b0 <= eps_len) continue;
            double key = window_min_dist(p.b0, p.b1, f_at(p.b0), f_at(p.b1), sigma);
            auto& target = windows[edge];
            if (target.size() >= kMaxWindowsPerEdge) {
                // degenerate surfaces can shatter an edge into slivers; keep
                // only the strongest wavefronts there
                auto worst = target.begin();
                double worst_key = -1.0;
                for (auto wit = target.begin(); wit != target.end(); ++wit) {
                    double k2 = window_min_dist(wit->first, wit->second.b1, wit->second.d0,
                                                wit->second.d1, wit->second.sigma);
                    if (k2 > worst_key) {
                        worst_key = k2;
                        worst = wit;
                    }
                }
                if (key >= worst_key) continue;
                alive.erase(worst->second.id);
                target.erase(worst);
            }
            WinRec rec;
            rec.b1 = p.b1;
            rec.d0 = f_at(p.b0);
            rec.d1 = f_at(p.b1);
            rec.sigma = sigma;
            rec.from_face = from_face;
            rec.id = next_id++;
            rec.propagated = false;
            alive.insert(rec.id);
            target.emplace(p.b0, rec);
            queue.push({key, 1, -1, edge, p.b0, rec.id});
        }
    };

    // wavefront emitted by a vertex across every face incident to it
    auto emit_pseudosource = [&](int v) {
        for (int f : vertex_faces_[v]) {
            int opp_edge = -1;
            for (int k = 0; k < 3; ++k) {
                const EdgeRec& er = edges_[face_edges_[f][k]];
                if (er.v0 != v && er.v1 != v) opp_edge = face_edges_[f][k];
            }
            if (opp_edge < 0) continue;
            const EdgeRec& er = edges_[opp_edge];
            double d0 = norm(positions_[v] - positions_[er.v0]);
            double d1 = norm(positions_[v] - positions_[er.v1]);
            add_window(opp_edge, 0.0, er.len, d0, d1, dist[v], f);
        }
    };

    // propagate a window across the face on the far side of its edge
    auto propagate = [&](int edge, double b0, const WinRec& w) {
        const EdgeRec& er = edges_[edge];
        int g = -1;
        if (er.face[0] == w.from_face) g = er.face[1];
        else if (er.face[1] == w.from_face) g = er.face[0];
        if (g < 0) return;
        int cv = er.face[0] == g ? er.opposite[0] : er.opposite[1];

        const double L = er.len;
        double px, py;
        window_source(b0, w.b1, w.d0, w.d1, px, py);
        py = std::max(py, 1e-12 * std::max(L, 1.0));

        // unfold the far vertex below the edge axis
        double a2 = norm2(positions_[cv] - positions_[er.v0]);
        double c2 = norm2(positions_[cv] - positions_[er.v1]);
        double cx = (a2 + L * L - c2) / (2.0 * L);
        double cy = -std::sqrt(std::max(a2 - cx * cx, 0.0));
        if (cy > -1e-14 * std::max(L, 1.0)) return;  // degenerate sliver, edge relaxation covers it

        struct Hit { int seg; double t; };  // seg 0: v0->C, seg 1: C->v1
        auto shoot = [&](double x) -> Hit {
            double s, t;
            if (ray_segment(px, py, x, 0.0, 0.0, 0.0, cx, cy, s, t) && s > 1.0 - 1e-9 &&
                t > -1e-9 && t < 1.0 + 1e-9)
                return {0, std::clamp(t, 0.0, 1.0)};
            if (ray_segment(px, py, x, 0.0, cx, cy, L, 0.0, s, t) && s > 1.0 - 1e-9 &&
                t > -1e-9 && t < 1.0 + 1e-9)
                return {1, std::clamp(t, 0.0, 1.0)};
            // numerically through the corner
            return {x <= cx ? 0 : 1, x <= cx ? 1.0 : 0.0};
        };
        Hit h0 = shoot(b0);
        Hit h1 = shoot(w.b1);

        double len_left = std::sqrt(a2);
        double len_right = std::sqrt(c2);

        auto make_window = [&](int seg, double ta, double tb) {
            if (tb < ta) std::swap(ta, tb);
            double seg_len = seg == 0 ? len_left : len_right;
            if ((tb - ta) * seg_len < 1e-12) return;
            double ax = seg == 0 ? 0.0 : cx;
            double ay = seg == 0 ? 0.0 : cy;
            double bx = seg == 0 ? cx : L;
            double by = seg == 0 ? cy : 0.0;
            auto at = [&](double t) -> std::pair<double, double> {
                return {ax + t * (bx - ax), ay + t * (by - ay)};
            };
            auto [xa, ya] = at(ta);
            auto [xb, yb] = at(tb);
            double da = std::hypot(xa - px, ya - py);
            double db = std::hypot(xb - px, yb - py);
            // map onto the canonical orientation of the target edge
            int va = seg == 0 ? er.v0 : cv;
            int vb = seg == 0 ? cv : er.v1;
            int target = -1;
            for (int k = 0; k < 3; ++k) {
                const EdgeRec& te = edges_[face_edges_[g][k]];
                if ((te.v0 == std::min(va, vb)) && (te.v1 == std::max(va, vb))) target = face_edges_[g][k];
            }
            if (target < 0) return;
            const EdgeRec& te = edges_[target];
            double nb0 = ta * seg_len, nb1 = tb * seg_len, nd0 = da, nd1 = db;
            if (te.v0 != va) {  // flip to canonical direction
                double o0 = nb0, o1 = nb1;
                nb0 = seg_len - o1;
                nb1 = seg_len - o0;
                std::swap(nd0, nd1);
            }
            add_window(target, nb0, nb1, nd0, nd1, w.sigma, g);
        };

        if (h0.seg == h1.seg) {
            make_window(h0.seg, h0.t, h1.t);
        } else {
            // beam straddles the far vertex
            make_window(0, h0.t, 1.0);
            make_window(1, 0.0, h1.t);
            relax_vertex(cv, w.sigma + std::hypot(cx - px, cy - py));
        }
    };

    push_vertex(source);
    std::vector<double> vertex_seen(nv, kInf);

    while (!queue.empty()) {
        if (event_budget-- == 0) throw std::runtime_error("geodesic propagation exceeded event budget");
        if (queue.size() > 10ull * 1000 * 1000)
            throw std::runtime_error("geodesic propagation queue overflow (degenerate surface?)");
        Event ev = queue.top();
        queue.pop();
        if (ev.kind == 0) {
            int v = ev.vertex;
            if (ev.key > dist[v] + eps_imp) continue;       // stale
            if (vertex_seen[v] <= dist[v]) continue;        // already expanded at this distance
            vertex_seen[v] = dist[v];
            for (int e : vertex_edges_[v]) {
                const EdgeRec& er = edges_[e];
                int u = er.v0 == v ? er.v1 : er.v0;
                relax_vertex(u, dist[v] + er.len);
            }
            if (v == source || emits_pseudosource_[v]) emit_pseudosource(v);
        } else {
            if (!alive.count(ev.id)) continue;
            auto& list = windows[ev.edge];
            auto it = list.find(ev.b0);
            if (it == list.end() || it->second.id != ev.id) continue;
            const WinRec& w = it->second;
            if (dominated_by_vertices(edges_[ev.edge], it->first, w.b1,
                                      window_min_dist(it->first, w.b1, w.d0, w.d1, w.sigma))) {
                alive.erase(w.id);
                list.erase(it);
                continue;
            }
            it->second.propagated = true;
            propagate(ev.edge, it->first, it->second);
        }
    }
    return dist;
}

std::vector<double> geodesic_distance(const TriangleMesh& mesh, int source, const std::vector<int>& targets) {
    GeodesicSolver solver(mesh);
    const int nv = solver.vertex_count();
    if (source < 0 || source >= nv) throw InvariantError("geodesic source vertex out of range");
    for (int t : targets)
        if (t < 0 || t >= nv) throw InvariantError("geodesic target vertex out of range");
    std::vector<double> all = solver.distances_from(source);
    std::vector<double> out(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        double d = all[targets[i]];
        if (!std::isfinite(d) && targets[i] != source)
            throw InvariantError("geodesic endpoints lie on disconnected components");
        out[i] = targets[i] == source ? 0.0 : d;
    }
    return out;
}

std::vector<double> geodesic_dijkstra_upper_bound(const TriangleMesh& mesh, int source) {
    mesh.validate();
    const int nv = static_cast<int>(mesh.vertices.size());
    if (source < 0 || source >= nv) throw InvariantError("geodesic source vertex out of range");

    std::map<std::pair<int, int>, int> edge_node;
    auto mid_node = [&](int a, int b) {
        auto key = std::minmax(a, b);
        auto it = edge_node.find(key);
        if (it != edge_node.end()) return it->second;
        int id = nv + static_cast<int>(edge_node.size());
        edge_node[key] = id;
        return id;
    };

    std::vector<std::array<int, 6>> face_nodes(mesh.faces.size());
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& [a, b, c] = mesh.faces[f];
        face_nodes[f] = {a, b, c, mid_node(a, b), mid_node(b, c), mid_node(c, a)};
    }
    int total = nv + static_cast<int>(edge_node.size());
    std::vector<Vec3> pos(total);
    for (int v = 0; v < nv; ++v) pos[v] = mesh.vertices[v];
    for (const auto& [key, id] : edge_node) pos[id] = 0.5 * (mesh.vertices[key.first] + mesh.vertices[key.second]);

    std::vector<std::vector<std::pair<int, double>>> adj(total);
    for (const auto& nodes : face_nodes) {
        for (int i = 0; i < 6; ++i)
            for (int j = i + 1; j < 6; ++j) {
                double len = norm(pos[nodes[i]] - pos[nodes[j]]);
                adj[nodes[i]].push_back({nodes[j], len});
                adj[nodes[j]].push_back({nodes[i], len});
            }
    }

    std::vector<double> dist(total, kInf);
    dist[source] = 0.0;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.push({0.0, source});
    while (!pq.empty()) {
        auto [d, n] = pq.top();
        pq.pop();
        if (d > dist[n]) continue;
        for (auto [m, len] : adj[n]) {
            if (d + len < dist[m]) {
                dist[m] = d + len;
                pq.push({dist[m], m});
            }
        }
    }
    dist.resize(nv);
    return dist;
}

}  // namespace qrfit
