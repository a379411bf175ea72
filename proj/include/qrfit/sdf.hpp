#pragma once

#include "qrfit/geom.hpp"

#include <functional>
#include <string>
#include <vector>

namespace qrfit {

/// Signed-distance samples on a regular lattice over an axis-aligned box,
/// negative inside. Node (i,j,k) sits at bounds.lo + (i,j,k)/(n-1) * extent,
/// stored x-fastest. Off-node queries interpolate trilinearly; queries
/// outside the box clamp to the border.
struct SDFGrid {
    int nx = 2, ny = 2, nz = 2;
    Aabb bounds;
    std::vector<double> values;

    static SDFGrid make(int nx, int ny, int nz, const Aabb& bounds);
    void validate() const;

    size_t node_count() const { return static_cast<size_t>(nx) * ny * nz; }
    int node_index(int i, int j, int k) const { return (k * ny + j) * nx + i; }
    Vec3 node_position(int i, int j, int k) const;
    Vec3 cell_size() const;

    double sample(const Vec3& p) const;

    struct Stencil {
        int node[8];
        double weight[8];
        Vec3 spatial_grad;
    };
    double sample_with_stencil(const Vec3& p, Stencil& out) const;

    /// Fills every node from an analytic field.
    void fill(const std::function<double(const Vec3&)>& field);
};

/// RGB in [0,1]^3 on the same kind of lattice.
struct ColorGrid {
    int nx = 2, ny = 2, nz = 2;
    Aabb bounds;
    std::vector<double> values;  // 3 per node, x-fastest nodes

    static ColorGrid make(int nx, int ny, int nz, const Aabb& bounds, const Vec3& fill = {0.5, 0.5, 0.5});
    void validate() const;
    size_t node_count() const { return static_cast<size_t>(nx) * ny * nz; }

    Vec3 sample(const Vec3& p) const;
    Vec3 sample_with_stencil(const Vec3& p, SDFGrid::Stencil& out) const;
    void clamp_values();
};

/// Laplace-CDF conversion from signed distance to density in [0,1]:
/// the CDF of a zero-mean Laplace with scale beta evaluated at -s.
double density(double sdf_value, double beta);
/// Partials of density() for the fitting chain.
double density_dsdf(double sdf_value, double beta);
double density_dbeta(double sdf_value, double beta);

/// Grid binaries: magic "SDF1"/"COL1", u32 nx ny nz, f64 bounds (lo xyz, hi
/// xyz), float32 payload x-fastest (3 per node for color).
void save_sdf(const SDFGrid& grid, const std::string& path);
SDFGrid load_sdf(const std::string& path);
void save_color(const ColorGrid& grid, const std::string& path);
ColorGrid load_color(const std::string& path);

}  // namespace qrfit
