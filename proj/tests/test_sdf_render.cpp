#include <doctest.h>

#include "qrfit/error.hpp"
#include "qrfit/march.hpp"
#include "qrfit/render.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/sdf.hpp"

#include <map>

using namespace qrfit;

namespace {

SDFGrid sphere_grid(int res, double radius, double half_box) {
    Aabb box{{-half_box, -half_box, -half_box}, {half_box, half_box, half_box}};
    SDFGrid g = SDFGrid::make(res, res, res, box);
    g.fill([&](const Vec3& p) { return norm(p) - radius; });
    return g;
}

}  // namespace

TEST_CASE("Laplace-CDF density hits its pinned values") {
    for (double beta : {1.0, 0.1, 0.003}) {
        CHECK(density(0.0, beta) == doctest::Approx(0.5));
        CHECK(density(-10.0 * beta, beta) == doctest::Approx(1.0 - 0.5 * std::exp(-10.0)));
        CHECK(density(10.0 * beta, beta) == doctest::Approx(0.5 * std::exp(-10.0)));
    }
    CHECK_THROWS_AS(density(0.0, 0.0), InvariantError);
}

TEST_CASE("density is monotone non-increasing in the signed distance") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        double beta = rng.uniform(0.001, 1.0);
        double s1 = rng.uniform(-2, 2), s2 = rng.uniform(-2, 2);
        if (s1 > s2) std::swap(s1, s2);
        CHECK(density(s1, beta) >= density(s2, beta));
    }
}

TEST_CASE("density derivatives match finite differences") {
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        double beta = rng.uniform(0.01, 0.5);
        double s = rng.uniform(-0.5, 0.5);
        double h = 1e-6;
        double fd_s = (density(s + h, beta) - density(s - h, beta)) / (2 * h);
        double fd_b = (density(s, beta + h) - density(s, beta - h)) / (2 * h);
        CHECK(density_dsdf(s, beta) == doctest::Approx(fd_s).epsilon(1e-5));
        CHECK(density_dbeta(s, beta) == doctest::Approx(fd_b).epsilon(1e-5));
    }
}

TEST_CASE("trilinear sampling reproduces a linear field exactly") {
    Aabb box{{-1, -1, -1}, {1, 1, 1}};
    SDFGrid g = SDFGrid::make(5, 6, 7, box);
    g.fill([](const Vec3& p) { return 0.3 * p.x - 0.7 * p.y + 0.2 * p.z + 0.05; });
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        CHECK(g.sample(p) == doctest::Approx(0.3 * p.x - 0.7 * p.y + 0.2 * p.z + 0.05).epsilon(1e-12));
        SDFGrid::Stencil st;
        g.sample_with_stencil(p, st);
        CHECK(st.spatial_grad.x == doctest::Approx(0.3).epsilon(1e-9));
        CHECK(st.spatial_grad.y == doctest::Approx(-0.7).epsilon(1e-9));
        CHECK(st.spatial_grad.z == doctest::Approx(0.2).epsilon(1e-9));
    }
}

TEST_CASE("grid binaries round trip") {
    SDFGrid g = sphere_grid(9, 0.5, 1.0);
    save_sdf(g, "tmp_grid.sdf");
    SDFGrid back = load_sdf("tmp_grid.sdf");
    CHECK(back.nx == 9);
    CHECK(back.bounds.lo.x == -1.0);
    for (size_t i = 0; i < g.values.size(); ++i)
        CHECK(back.values[i] == static_cast<float>(g.values[i]));

    ColorGrid c = ColorGrid::make(4, 4, 4, g.bounds, {0.25, 0.5, 0.75});
    save_color(c, "tmp_grid.col");
    ColorGrid cback = load_color("tmp_grid.col");
    CHECK(cback.values[1] == 0.5);
    CHECK_THROWS_AS(load_sdf("tmp_grid.col"), ParseError);
}

TEST_CASE("marching extraction: sphere area, empty grid, plane slice") {
    // sphere of radius 0.5 at 128^3: area within 2% of pi
    SDFGrid g = sphere_grid(128, 0.5, 0.5);
    TriangleMesh mesh = extract_mesh(g, 0.0);
    REQUIRE(!mesh.faces.empty());
    CHECK(mesh.total_area() == doctest::Approx(M_PI).epsilon(0.02));

    // all positive: no surface
    SDFGrid pos = SDFGrid::make(8, 8, 8, g.bounds);
    CHECK(extract_mesh(pos, 0.0).vertices.empty());

    // plane z = 0
    Aabb box{{-1, -1, -1}, {1, 1, 1}};
    SDFGrid plane = SDFGrid::make(9, 9, 9, box);
    plane.fill([](const Vec3& p) { return p.z; });
    TriangleMesh slice = extract_mesh(plane, 0.0);
    REQUIRE(!slice.vertices.empty());
    double cell = 2.0 / 8.0;
    for (const Vec3& v : slice.vertices) CHECK(std::abs(v.z) <= cell + 1e-12);
}

TEST_CASE("extraction is watertight with outward orientation") {
    SDFGrid g = sphere_grid(24, 0.5, 1.0);
    TriangleMesh mesh = extract_mesh(g, 0.0);
    REQUIRE(!mesh.faces.empty());
    // closed surface: every edge borders exactly two faces
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& [a, b, c] : mesh.faces) {
        edge_count[std::minmax(a, b)]++;
        edge_count[std::minmax(b, c)]++;
        edge_count[std::minmax(c, a)]++;
    }
    for (const auto& [edge, count] : edge_count) CHECK(count == 2);

    // normals point away from the center (positive SDF side)
    int outward = 0;
    for (const auto& [a, b, c] : mesh.faces) {
        Vec3 n = cross(mesh.vertices[b] - mesh.vertices[a], mesh.vertices[c] - mesh.vertices[a]);
        Vec3 centroid = (mesh.vertices[a] + mesh.vertices[b] + mesh.vertices[c]) / 3.0;
        if (dot(n, centroid) > 0) ++outward;
    }
    CHECK(outward == static_cast<int>(mesh.faces.size()));

    // extracted vertices sit near the zero level set
    for (const Vec3& v : mesh.vertices) CHECK(std::abs(g.sample(v)) < norm(g.cell_size()));
}

TEST_CASE("extraction error shrinks with resolution") {
    double err64 = std::abs(extract_mesh(sphere_grid(64, 0.5, 0.5), 0.0).total_area() - M_PI);
    double err128 = std::abs(extract_mesh(sphere_grid(128, 0.5, 0.5), 0.0).total_area() - M_PI);
    CHECK(err64 > err128);
}

TEST_CASE("rays through empty space are transparent; through solids opaque") {
    SDFGrid g = sphere_grid(48, 1.0, 2.0);
    RenderConfig cfg;
    cfg.samples = 64;
    cfg.beta = 1e-3;

    Ray miss{{-3, 1.8, 0}, {1, 0, 0}, 0.0, 6.0, 1};
    CHECK(render_ray(g, nullptr, nullptr, miss, cfg).opacity < 1e-3);

    Ray hit{{-3, 0, 0}, {1, 0, 0}, 0.0, 6.0, 2};
    CHECK(render_ray(g, nullptr, nullptr, hit, cfg).opacity > 0.99);
}

TEST_CASE("uniform color factors out of the rendered rgb") {
    SDFGrid g = sphere_grid(32, 1.0, 2.0);
    ColorGrid c = ColorGrid::make(4, 4, 4, g.bounds, {0.3, 0.6, 0.9});
    RenderConfig cfg;
    cfg.samples = 48;
    cfg.beta = 0.01;
    Ray ray{{-3, 0.2, 0.1}, {1, 0, 0}, 0.0, 6.0, 7};
    RayShade shade = render_ray(g, &c, nullptr, ray, cfg);
    CHECK(shade.rgb.x == doctest::Approx(0.3 * shade.opacity).epsilon(1e-6));
    CHECK(shade.rgb.y == doctest::Approx(0.6 * shade.opacity).epsilon(1e-6));
    CHECK(shade.rgb.z == doctest::Approx(0.9 * shade.opacity).epsilon(1e-6));
}

TEST_CASE("opacity stays within [0,1] and sharpens as beta anneals") {
    SDFGrid g = sphere_grid(32, 1.0, 2.0);
    Rng rng(31);
    for (int i = 0; i < 300; ++i) {
        Vec3 origin{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        Vec3 dir = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
        Ray ray{origin, dir, 0.0, rng.uniform(1.0, 8.0), static_cast<std::uint64_t>(i)};
        RenderConfig cfg;
        cfg.samples = 16;
        cfg.beta = rng.uniform(0.005, 0.2);
        double op = render_ray(g, nullptr, nullptr, ray, cfg).opacity;
        CHECK(op >= 0.0);
        CHECK(op <= 1.0 + 1e-12);
    }

    Ray crossing{{-3, 0.4, 0}, {1, 0, 0}, 0.0, 6.0, 11};
    double prev = -1.0;
    for (double beta : {0.1, 0.01, 0.001}) {
        RenderConfig cfg;
        cfg.samples = 64;
        cfg.beta = beta;
        double op = render_ray(g, nullptr, nullptr, crossing, cfg).opacity;
        CHECK(op >= prev);
        prev = op;
    }
}

TEST_CASE("render backward matches finite differences on grids and beta") {
    Aabb box{{-1, -1, -1}, {1, 1, 1}};
    SDFGrid g = SDFGrid::make(6, 6, 6, box);
    Rng rng(47);
    g.fill([&](const Vec3& p) { return norm(p) - 0.6 + 0.05 * rng.uniform(-1, 1); });
    ColorGrid c = ColorGrid::make(6, 6, 6, box, {0.5, 0.5, 0.5});
    for (double& v : c.values) v = rng.uniform(0.1, 0.9);

    RenderConfig cfg;
    cfg.samples = 24;
    cfg.beta = 0.05;
    Ray ray{{-2, 0.12, 0.07}, {1, 0, 0}, 0.5, 3.5, 3};

    Vec3 g_rgb{0.3, -0.2, 0.5};
    double g_op = 0.7;
    auto objective = [&](const SDFGrid& sg, const ColorGrid& cg, double beta) {
        RenderConfig c2 = cfg;
        c2.beta = beta;
        RayShade s = render_ray(sg, &cg, nullptr, ray, c2);
        return dot(g_rgb, s.rgb) + g_op * s.opacity;
    };

    std::vector<double> g_sdf(g.node_count(), 0.0), g_col(c.node_count() * 3, 0.0);
    double g_beta = 0.0;
    RayGradSinks sinks;
    sinks.sdf_nodes = &g_sdf;
    sinks.color_nodes = &g_col;
    sinks.beta = &g_beta;
    render_ray_backward(g, &c, nullptr, ray, cfg, g_rgb, g_op, sinks);

    double h = 1e-6;
    for (int probe = 0; probe < 12; ++probe) {
        size_t node = rng.uniform_index(g.node_count());
        SDFGrid gp = g, gm = g;
        gp.values[node] += h;
        gm.values[node] -= h;
        double fd = (objective(gp, c, cfg.beta) - objective(gm, c, cfg.beta)) / (2 * h);
        CHECK(g_sdf[node] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
    for (int probe = 0; probe < 12; ++probe) {
        size_t idx = rng.uniform_index(c.values.size());
        ColorGrid cp = c, cm = c;
        cp.values[idx] += h;
        cm.values[idx] -= h;
        double fd = (objective(g, cp, cfg.beta) - objective(g, cm, cfg.beta)) / (2 * h);
        CHECK(g_col[idx] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
    double fd_beta = (objective(g, c, cfg.beta + h) - objective(g, c, cfg.beta - h)) / (2 * h);
    CHECK(g_beta == doctest::Approx(fd_beta).epsilon(1e-4).scale(1.0));
}

TEST_CASE("image rendering: parallel equals serial, files get written") {
    SDFGrid g = sphere_grid(24, 0.8, 1.5);
    ColorGrid c = ColorGrid::make(8, 8, 8, g.bounds, {0.8, 0.4, 0.2});
    PinholeCamera cam;
    cam.width = 32;
    cam.height = 24;
    cam.fx = cam.fy = 28;
    cam.cx = 16;
    cam.cy = 12;
    cam.world_from_cam = {quat_to_matrix(Quat::from_axis_angle({0, 1, 0}, M_PI / 2)), {-4, 0, 0}};
    RenderConfig cfg;
    cfg.samples = 24;
    cfg.beta = 0.01;

    Image par = render_image(g, &c, nullptr, cam, cfg);
    Image ser = render_image_serial(g, &c, nullptr, cam, cfg);
    double peak = 0.0;
    for (size_t i = 0; i < par.opacity.size(); ++i) {
        CHECK(par.opacity[i] == ser.opacity[i]);
        CHECK(par.rgb[i].x == ser.rgb[i].x);
        peak = std::max(peak, par.opacity[i]);
    }
    CHECK(peak > 0.9);  // the sphere is in frame

    save_ppm(par, "tmp_render.ppm");
    save_opacity(par, "tmp_render.opa");
    Image back = load_opacity("tmp_render.opa");
    CHECK(back.width == 32);
    CHECK(back.opacity[par.opacity.size() / 2] == doctest::Approx(par.opacity[par.opacity.size() / 2]).epsilon(1e-6));
}
