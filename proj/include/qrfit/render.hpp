#pragma once

#include "qrfit/dualquat.hpp"
#include "qrfit/sdf.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace qrfit {

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length
    double tnear = 0.0;
    double tfar = 1.0;
    std::uint64_t id = 0;  // jitter stream selector

    void validate() const;
};

struct RenderConfig {
    int samples = 64;
    double beta = 0.01;
    bool jitter = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Maps an observation-space sample point to canonical space before the
/// field lookups; identity when empty.
using DeformFn = std::function<Vec3(const Vec3&)>;

struct RayShade {
    Vec3 rgb{0, 0, 0};
    double opacity = 0.0;
};

/// Front-to-back compositing over stratified samples. Density at a sample is
/// density(sdf, beta) / beta, the Laplace CDF with the VolSDF 1/beta scale so
/// small beta renders solids opaque. Opacity telescopes to 1 - prod(1-alpha),
/// so it stays in [0, 1].
RayShade render_ray(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform, const Ray& ray,
                    const RenderConfig& cfg);

/// Gradient sinks for render_ray_backward; null members are skipped.
/// Sample-position gradients flow through the signed-distance lookup (the
/// opacity path); color lookups contribute node gradients only.
struct RayGradSinks {
    std::vector<double>* sdf_nodes = nullptr;    // node_count entries
    std::vector<double>* color_nodes = nullptr;  // 3 * node_count entries
    double* beta = nullptr;
    /// (observation-space sample, dL/d canonical position) pairs, appended.
    std::vector<std::pair<Vec3, Vec3>>* samples = nullptr;
};

/// Accumulates d(g_rgb . rgb + g_opacity * opacity)/d(fields) by replaying
/// the forward pass; the sampling pattern matches render_ray exactly.
void render_ray_backward(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform,
                         const Ray& ray, const RenderConfig& cfg, const Vec3& g_rgb, double g_opacity,
                         RayGradSinks& sinks);

struct PinholeCamera {
    int width = 64, height = 64;
    double fx = 64, fy = 64, cx = 32, cy = 32;
    RigidTransform world_from_cam;  // camera center at translation, looks down +z

    Ray pixel_ray(int u, int v, const Aabb& scene_bounds) const;
};

struct Image {
    int width = 0, height = 0;
    std::vector<Vec3> rgb;
    std::vector<double> opacity;
};

Image render_image(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform,
                   const PinholeCamera& cam, const RenderConfig& cfg);
Image render_image_serial(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform,
                          const PinholeCamera& cam, const RenderConfig& cfg);

/// Binary PPM (P6), 8-bit, row-major from the top-left pixel.
void save_ppm(const Image& img, const std::string& path);
/// Opacity map: magic "OPA1", u32 width, u32 height, float32 payload.
void save_opacity(const Image& img, const std::string& path);
Image load_opacity(const std::string& path);  // rgb left empty

}  // namespace qrfit
