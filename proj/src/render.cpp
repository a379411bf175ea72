#include "qrfit/render.hpp"

#include "qrfit/error.hpp"
#include "qrfit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace qrfit {

void Ray::validate() const {
    if (std::abs(norm(dir) - 1.0) > 1e-9) throw InvariantError("ray direction must be unit length");
    if (!(tnear >= 0.0 && tnear < tfar)) throw InvariantError("ray needs 0 <= near < far");
}

void RenderConfig::validate() const {
    if (samples < 2) throw InvariantError("render needs at least 2 samples per ray");
    if (!(beta > 0)) throw InvariantError("render beta must be positive");
}

namespace {

// stratified sample stations and spacings along the ray
void ray_stations(const Ray& ray, const RenderConfig& cfg, std::vector<double>& t, std::vector<double>& delta) {
    const int n = cfg.samples;
    t.resize(n);
    delta.resize(n);
    Rng rng(Rng::derive(cfg.seed, "ray-jitter") ^ (ray.id * 0x9e3779b97f4a7c15ull + 0x5851f42d4c957f2dull));
    double span = ray.tfar - ray.tnear;
    for (int i = 0; i < n; ++i) {
        double u = cfg.jitter ? rng.uniform() : 0.5;
        t[i] = ray.tnear + (i + u) / n * span;
    }
    for (int i = 0; i + 1 < n; ++i) delta[i] = t[i + 1] - t[i];
    delta[n - 1] = ray.tfar - t[n - 1];
}

}  // namespace

RayShade render_ray(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform, const Ray& ray,
                    const RenderConfig& cfg) {
    ray.validate();
    cfg.validate();
    std::vector<double> t, delta;
    ray_stations(ray, cfg, t, delta);

    RayShade out;
    double transmittance = 1.0;
    for (int n = 0; n < cfg.samples; ++n) {
        Vec3 x_obs = ray.origin + t[n] * ray.dir;
        Vec3 x_canon = deform ? deform(x_obs) : x_obs;
        double sigma = density(sdf.sample(x_canon), cfg.beta) / cfg.beta;
        double alpha = 1.0 - std::exp(-sigma * delta[n]);
        double tau = alpha * transmittance;
        if (color) out.rgb += tau * color->sample(x_canon);
        out.opacity += tau;
        transmittance *= 1.0 - alpha;
    }
    return out;
}

void render_ray_backward(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform,
                         const Ray& ray, const RenderConfig& cfg, const Vec3& g_rgb, double g_opacity,
                         RayGradSinks& sinks) {
    ray.validate();
    cfg.validate();
    const int N = cfg.samples;
    std::vector<double> t, delta;
    ray_stations(ray, cfg, t, delta);

    // forward replay, caching per-sample state
    std::vector<double> sdf_val(N), sigma(N), alpha(N), trans_before(N), tau(N);
    std::vector<Vec3> x_canon(N), rgb_val(N);
    std::vector<SDFGrid::Stencil> sdf_stencil(N);
    std::vector<SDFGrid::Stencil> color_stencil(N);
    double transmittance = 1.0;
    for (int n = 0; n < N; ++n) {
        Vec3 x_obs = ray.origin + t[n] * ray.dir;
        x_canon[n] = deform ? deform(x_obs) : x_obs;
        sdf_val[n] = sdf.sample_with_stencil(x_canon[n], sdf_stencil[n]);
        sigma[n] = density(sdf_val[n], cfg.beta) / cfg.beta;
        alpha[n] = 1.0 - std::exp(-sigma[n] * delta[n]);
        trans_before[n] = transmittance;
        tau[n] = alpha[n] * transmittance;
        if (color) rgb_val[n] = color->sample_with_stencil(x_canon[n], color_stencil[n]);
        transmittance *= 1.0 - alpha[n];
    }

    // dL/dtau_n, then dL/dalpha_m = q_m T_{m-1} - (sum_{n>m} q_n tau_n)/(1-alpha_m)
    std::vector<double> q(N);
    for (int n = 0; n < N; ++n) q[n] = dot(g_rgb, rgb_val[n]) + g_opacity;

    double suffix = 0.0;
    for (int m = N - 1; m >= 0; --m) {
        double one_minus = 1.0 - alpha[m];
        double g_alpha = q[m] * trans_before[m];
        if (suffix != 0.0 && one_minus > 0.0) g_alpha -= suffix / one_minus;
        suffix += q[m] * tau[m];

        double g_sigma = g_alpha * delta[m] * (1.0 - alpha[m]);  // d alpha/d sigma = delta e^{-sigma delta}
        double g_s = g_sigma * density_dsdf(sdf_val[m], cfg.beta) / cfg.beta;

        if (sinks.sdf_nodes)
            for (int c = 0; c < 8; ++c)
                (*sinks.sdf_nodes)[sdf_stencil[m].node[c]] += g_s * sdf_stencil[m].weight[c];
        if (sinks.beta)
            *sinks.beta += g_sigma * (density_dbeta(sdf_val[m], cfg.beta) / cfg.beta -
                                      density(sdf_val[m], cfg.beta) / (cfg.beta * cfg.beta));
        if (sinks.color_nodes && color) {
            Vec3 g_c = tau[m] * g_rgb;
            for (int c = 0; c < 8; ++c) {
                int node = color_stencil[m].node[c];
                double w = color_stencil[m].weight[c];
                (*sinks.color_nodes)[3 * node + 0] += w * g_c.x;
                (*sinks.color_nodes)[3 * node + 1] += w * g_c.y;
                (*sinks.color_nodes)[3 * node + 2] += w * g_c.z;
            }
        }
        if (sinks.samples) {
            Vec3 x_obs = ray.origin + t[m] * ray.dir;
            sinks.samples->push_back({x_obs, g_s * sdf_stencil[m].spatial_grad});
        }
    }
}

Ray PinholeCamera::pixel_ray(int u, int v, const Aabb& scene_bounds) const {
    Vec3 d_cam{(u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0};
    Vec3 d = normalized(world_from_cam.rotation * d_cam);
    Ray ray;
    ray.origin = world_from_cam.translation;
    ray.dir = d;
    ray.id = static_cast<std::uint64_t>(v) * width + u;

    // slab intersection against the scene box, padded by one step
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        double inv = 1.0 / d[k];
        double a = (scene_bounds.lo[k] - ray.origin[k]) * inv;
        double b = (scene_bounds.hi[k] - ray.origin[k]) * inv;
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
    }
    if (!(t0 < t1)) {
        ray.tnear = 0.0;  // misses the box: degenerate but valid span, renders empty
        ray.tfar = 1e-6;
    } else {
        ray.tnear = std::max(0.0, t0 - 1e-6);
        ray.tfar = t1 + 1e-6;
    }
    return ray;
}

Image render_image_serial(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform,
                          const PinholeCamera& cam, const RenderConfig& cfg) {
    Image img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgb.resize(static_cast<size_t>(cam.width) * cam.height);
    img.opacity.resize(img.rgb.size());
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            RayShade shade = render_ray(sdf, color, deform, cam.pixel_ray(u, v, sdf.bounds), cfg);
            img.rgb[static_cast<size_t>(v) * cam.width + u] = shade.rgb;
            img.opacity[static_cast<size_t>(v) * cam.width + u] = shade.opacity;
        }
    return img;
}

Image render_image(const SDFGrid& sdf, const ColorGrid* color, const DeformFn& deform,
                   const PinholeCamera& cam, const RenderConfig& cfg) {
    Image img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgb.resize(static_cast<size_t>(cam.width) * cam.height);
    img.opacity.resize(img.rgb.size());
    const std::int64_t total = static_cast<std::int64_t>(img.rgb.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t p = 0; p < total; ++p) {
        int u = static_cast<int>(p % cam.width);
        int v = static_cast<int>(p / cam.width);
        RayShade shade = render_ray(sdf, color, deform, cam.pixel_ray(u, v, sdf.bounds), cfg);
        img.rgb[p] = shade.rgb;
        img.opacity[p] = shade.opacity;
    }
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (const Vec3& c : img.rgb) {
        unsigned char px[3];
        for (int k = 0; k < 3; ++k)
            px[k] = static_cast<unsigned char>(std::clamp(c[k], 0.0, 1.0) * 255.0 + 0.5);
        out.write(reinterpret_cast<const char*>(px), 3);
    }
    if (!out) throw InvariantError("write failed: " + path);
}

void save_opacity(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out.write("OPA1", 4);
    std::uint32_t dims[2] = {static_cast<std::uint32_t>(img.width), static_cast<std::uint32_t>(img.height)};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (double o : img.opacity) {
        float f = static_cast<float>(o);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw InvariantError("write failed: " + path);
}

Image load_opacity(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open opacity map: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "OPA1", 4) != 0) throw ParseError(path + ": not an OPA1 opacity map");
    std::uint32_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    Image img;
    img.width = dims[0];
    img.height = dims[1];
    img.opacity.resize(static_cast<size_t>(img.width) * img.height);
    for (double& o : img.opacity) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        o = f;
    }
    if (!in) throw ParseError(path + ": truncated opacity payload");
    return img;
}

}  // namespace qrfit
