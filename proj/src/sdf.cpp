#include "qrfit/sdf.hpp"

#include "qrfit/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace qrfit {

SDFGrid SDFGrid::make(int nx, int ny, int nz, const Aabb& bounds) {
    SDFGrid g;
    g.nx = nx;
    g.ny = ny;
    g.nz = nz;
    g.bounds = bounds;
    g.values.assign(g.node_count(), 1.0);
    g.validate();
    return g;
}

void SDFGrid::validate() const {
    if (nx < 2 || ny < 2 || nz < 2) throw InvariantError("grid resolution must be >= 2 per axis");
    if (!(bounds.lo.x < bounds.hi.x && bounds.lo.y < bounds.hi.y && bounds.lo.z < bounds.hi.z))
        throw InvariantError("grid bounds must have positive extent");
    if (values.size() != node_count()) throw InvariantError("grid value count mismatch");
    for (double v : values)
        if (!std::isfinite(v)) throw InvariantError("non-finite grid value");
}

Vec3 SDFGrid::node_position(int i, int j, int k) const {
    Vec3 e = bounds.hi - bounds.lo;
    return bounds.lo + Vec3{e.x * i / (nx - 1), e.y * j / (ny - 1), e.z * k / (nz - 1)};
}

Vec3 SDFGrid::cell_size() const {
    Vec3 e = bounds.hi - bounds.lo;
    return {e.x / (nx - 1), e.y / (ny - 1), e.z / (nz - 1)};
}

namespace {

struct LatticeCoord {
    int cell[3];
    double frac[3];
    double inv_h[3];
    bool clamped[3];
};

LatticeCoord locate(const Vec3& p, const Aabb& bounds, int nx, int ny, int nz) {
    LatticeCoord lc;
    int res[3] = {nx, ny, nz};
    for (int k = 0; k < 3; ++k) {
        double lo = bounds.lo[k], hi = bounds.hi[k];
        double t = (p[k] - lo) / (hi - lo) * (res[k] - 1);
        lc.clamped[k] = t <= 0.0 || t >= res[k] - 1;
        t = std::clamp(t, 0.0, static_cast<double>(res[k] - 1));
        lc.cell[k] = std::min(static_cast<int>(t), res[k] - 2);
        lc.frac[k] = t - lc.cell[k];
        lc.inv_h[k] = (res[k] - 1) / (hi - lo);
    }
    return lc;
}

}  // namespace

double SDFGrid::sample(const Vec3& p) const {
    Stencil s;
    return sample_with_stencil(p, s);
}

double SDFGrid::sample_with_stencil(const Vec3& p, Stencil& out) const {
    LatticeCoord lc = locate(p, bounds, nx, ny, nz);
    double value = 0.0;
    Vec3 grad{0, 0, 0};
    int c = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                double wx = dx ? lc.frac[0] : 1.0 - lc.frac[0];
                double wy = dy ? lc.frac[1] : 1.0 - lc.frac[1];
                double wz = dz ? lc.frac[2] : 1.0 - lc.frac[2];
                int node = node_index(lc.cell[0] + dx, lc.cell[1] + dy, lc.cell[2] + dz);
                double v = values[node];
                out.node[c] = node;
                out.weight[c] = wx * wy * wz;
                ++c;
                value += wx * wy * wz * v;
                grad.x += (dx ? 1.0 : -1.0) * wy * wz * v;
                grad.y += (dy ? 1.0 : -1.0) * wx * wz * v;
                grad.z += (dz ? 1.0 : -1.0) * wx * wy * v;
            }
    out.spatial_grad = {lc.clamped[0] ? 0.0 : grad.x * lc.inv_h[0],
                        lc.clamped[1] ? 0.0 : grad.y * lc.inv_h[1],
                        lc.clamped[2] ? 0.0 : grad.z * lc.inv_h[2]};
    return value;
}

void SDFGrid::fill(const std::function<double(const Vec3&)>& field) {
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                values[node_index(i, j, k)] = field(node_position(i, j, k));
}

ColorGrid ColorGrid::make(int nx, int ny, int nz, const Aabb& bounds, const Vec3& fill) {
    ColorGrid g;
    g.nx = nx;
    g.ny = ny;
    g.nz = nz;
    g.bounds = bounds;
    g.values.resize(g.node_count() * 3);
    for (size_t n = 0; n < g.node_count(); ++n) {
        g.values[3 * n + 0] = fill.x;
        g.values[3 * n + 1] = fill.y;
        g.values[3 * n + 2] = fill.z;
    }
    g.validate();
    return g;
}

void ColorGrid::validate() const {
    if (nx < 2 || ny < 2 || nz < 2) throw InvariantError("grid resolution must be >= 2 per axis");
    if (!(bounds.lo.x < bounds.hi.x && bounds.lo.y < bounds.hi.y && bounds.lo.z < bounds.hi.z))
        throw InvariantError("grid bounds must have positive extent");
    if (values.size() != node_count() * 3) throw InvariantError("color grid value count mismatch");
    for (double v : values)
        if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("color values must lie in [0,1]");
}

Vec3 ColorGrid::sample(const Vec3& p) const {
    SDFGrid::Stencil s;
    return sample_with_stencil(p, s);
}

Vec3 ColorGrid::sample_with_stencil(const Vec3& p, SDFGrid::Stencil& out) const {
    LatticeCoord lc = locate(p, bounds, nx, ny, nz);
    Vec3 value{0, 0, 0};
    int c = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                double wx = dx ? lc.frac[0] : 1.0 - lc.frac[0];
                double wy = dy ? lc.frac[1] : 1.0 - lc.frac[1];
                double wz = dz ? lc.frac[2] : 1.0 - lc.frac[2];
                int node = ((lc.cell[2] + dz) * ny + (lc.cell[1] + dy)) * nx + (lc.cell[0] + dx);
                out.node[c] = node;
                out.weight[c] = wx * wy * wz;
                ++c;
                value += (wx * wy * wz) * Vec3{values[3 * node], values[3 * node + 1], values[3 * node + 2]};
            }
    out.spatial_grad = {0, 0, 0};
    return value;
}

void ColorGrid::clamp_values() {
    for (double& v : values) v = std::clamp(v, 0.0, 1.0);
}

double density(double sdf_value, double beta) {
    if (!(beta > 0)) throw InvariantError("density scale beta must be positive");
    // Laplace CDF at -s: 1/2 on the surface, ->1 inside, ->0 outside
    if (sdf_value >= 0.0) return 0.5 * std::exp(-sdf_value / beta);
    return 1.0 - 0.5 * std::exp(sdf_value / beta);
}

double density_dsdf(double sdf_value, double beta) {
    return -0.5 / beta * std::exp(-std::abs(sdf_value) / beta);
}

double density_dbeta(double sdf_value, double beta) {
    return 0.5 * std::exp(-std::abs(sdf_value) / beta) * sdf_value / (beta * beta);
}

namespace {

void write_grid_header(std::ofstream& out, const char magic[4], int nx, int ny, int nz, const Aabb& b) {
    out.write(magic, 4);
    std::uint32_t res[3] = {static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                            static_cast<std::uint32_t>(nz)};
    out.write(reinterpret_cast<const char*>(res), sizeof(res));
    double bounds[6] = {b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z};
    out.write(reinterpret_cast<const char*>(bounds), sizeof(bounds));
}

void read_grid_header(std::ifstream& in, const char magic[4], const std::string& path, int& nx, int& ny,
                      int& nz, Aabb& b) {
    char m[4];
    in.read(m, 4);
    if (!in || std::memcmp(m, magic, 4) != 0)
        throw ParseError(path + ": wrong magic (expected " + std::string(magic, 4) + ")");
    std::uint32_t res[3];
    in.read(reinterpret_cast<char*>(res), sizeof(res));
    double bounds[6];
    in.read(reinterpret_cast<char*>(bounds), sizeof(bounds));
    if (!in) throw ParseError(path + ": truncated grid header");
    nx = res[0];
    ny = res[1];
    nz = res[2];
    b.lo = {bounds[0], bounds[1], bounds[2]};
    b.hi = {bounds[3], bounds[4], bounds[5]};
}

}  // namespace

void save_sdf(const SDFGrid& grid, const std::string& path) {
    grid.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    write_grid_header(out, "SDF1", grid.nx, grid.ny, grid.nz, grid.bounds);
    for (double v : grid.values) {
        float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw InvariantError("write failed: " + path);
}

SDFGrid load_sdf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open grid file: " + path);
    SDFGrid g;
    read_grid_header(in, "SDF1", path, g.nx, g.ny, g.nz, g.bounds);
    g.values.resize(static_cast<size_t>(g.nx) * g.ny * g.nz);
    for (double& v : g.values) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        v = f;
    }
    if (!in) throw ParseError(path + ": truncated grid payload");
    g.validate();
    return g;
}

void save_color(const ColorGrid& grid, const std::string& path) {
    grid.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    write_grid_header(out, "COL1", grid.nx, grid.ny, grid.nz, grid.bounds);
    for (double v : grid.values) {
        float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw InvariantError("write failed: " + path);
}

ColorGrid load_color(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open grid file: " + path);
    ColorGrid g;
    read_grid_header(in, "COL1", path, g.nx, g.ny, g.nz, g.bounds);
    g.values.resize(static_cast<size_t>(g.nx) * g.ny * g.nz * 3);
    for (double& v : g.values) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        v = f;
    }
    if (!in) throw ParseError(path + ": truncated grid payload");
    g.validate();
    return g;
}

}  // namespace qrfit
