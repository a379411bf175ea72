#include <doctest.h>

#include "qrfit/dualquat.hpp"
#include "qrfit/error.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/shapes.hpp"

using namespace qrfit;

namespace {

RigidTransform random_rigid(Rng& rng, double tmax = 2.0) {
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    double angle = rng.uniform(-M_PI, M_PI);
    Quat q = Quat::from_axis_angle(axis, angle);
    return {quat_to_matrix(q), {rng.uniform(-tmax, tmax), rng.uniform(-tmax, tmax), rng.uniform(-tmax, tmax)}};
}

Vec3 random_point(Rng& rng) { return {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}; }

}  // namespace

TEST_CASE("dq_from_rigid maps identity and pure translations to the textbook forms") {
    DualQuat id = dq_from_rigid({Mat3::identity(), {0, 0, 0}});
    CHECK(id.real.w == doctest::Approx(1.0));
    CHECK(qnorm(id.dual) == doctest::Approx(0.0));

    DualQuat tz = dq_from_rigid({Mat3::identity(), {0, 0, 2}});
    CHECK(tz.real.w == doctest::Approx(1.0));
    CHECK(tz.dual.w == doctest::Approx(0.0));
    CHECK(tz.dual.x == doctest::Approx(0.0));
    CHECK(tz.dual.y == doctest::Approx(0.0));
    CHECK(tz.dual.z == doctest::Approx(1.0));  // dual = 0.5 (0,t) real
}

TEST_CASE("rotation plus translation acts like the composed matrix") {
    RigidTransform t{quat_to_matrix(Quat::from_axis_angle({0, 0, 1}, M_PI / 2)), {1, 0, 0}};
    DualQuat q = dq_from_rigid(t);
    Vec3 out = dq_apply(q, {1, 0, 0});
    CHECK(out.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.y == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.z == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("dq_to_rigid round trips and ignores the double-cover sign") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        RigidTransform t = random_rigid(rng);
        DualQuat q = dq_from_rigid(t);
        DualQuat neg{-q.real, -q.dual};
        RigidTransform t1 = dq_to_rigid(q);
        RigidTransform t2 = dq_to_rigid(neg);
        for (int k = 0; k < 9; ++k) {
            CHECK(t1.rotation.m[k] == doctest::Approx(t.rotation.m[k]).epsilon(1e-9));
            CHECK(t2.rotation.m[k] == doctest::Approx(t.rotation.m[k]).epsilon(1e-9));
        }
        Vec3 p = random_point(rng);
        CHECK(norm(dq_apply(q, p) - t.apply(p)) < 1e-9);
        CHECK(norm(t1.apply(p) - t.apply(p)) < 1e-9);
    }
}

TEST_CASE("dq_apply preserves pairwise distances") {
    Rng rng(11);
    for (int i = 0; i < 10; ++i) {
        DualQuat q = dq_from_rigid(random_rigid(rng));
        Vec3 a = random_point(rng), b = random_point(rng);
        CHECK(norm(dq_apply(q, a) - dq_apply(q, b)) == doctest::Approx(norm(a - b)).epsilon(1e-12));
    }
}

TEST_CASE("identity, translation and half-turn actions match closed forms") {
    CHECK(norm(dq_apply(DualQuat::identity(), {1, 2, 3}) - Vec3{1, 2, 3}) == 0.0);
    DualQuat tz = dq_from_rigid({Mat3::identity(), {0, 0, 2}});
    CHECK(norm(dq_apply(tz, {0, 0, 0}) - Vec3{0, 0, 2}) < 1e-15);
    DualQuat half = dq_from_rigid({quat_to_matrix(Quat::from_axis_angle({0, 0, 1}, M_PI)), {0, 0, 0}});
    CHECK(norm(dq_apply(half, {1, 0, 0}) - Vec3{-1, 0, 0}) < 1e-12);
}

TEST_CASE("dq_blend honors one-hot weights and idempotence") {
    Rng rng(23);
    DualQuat a = dq_from_rigid(random_rigid(rng));
    DualQuat b = dq_from_rigid(random_rigid(rng));
    DualQuat picked = dq_blend({0, 1, 0}, {a, b, a});
    CHECK(std::abs(std::abs(qdot(picked.real, b.real)) - 1.0) < 1e-9);
    Vec3 p = random_point(rng);
    CHECK(norm(dq_apply(picked, p) - dq_apply(b, p)) < 1e-9);

    DualQuat same = dq_blend({0.2, 0.3, 0.5}, {a, a, a});
    CHECK(norm(dq_apply(same, p) - dq_apply(a, p)) < 1e-9);
}

TEST_CASE("a 50/50 blend of identity and a quarter turn is the eighth turn") {
    DualQuat id = DualQuat::identity();
    DualQuat quarter = dq_from_rigid({quat_to_matrix(Quat::from_axis_angle({0, 0, 1}, M_PI / 2)), {0, 0, 0}});
    DualQuat mid = dq_blend({0.5, 0.5}, {id, quarter});
    Quat expected = Quat::from_axis_angle({0, 0, 1}, M_PI / 4);  // slerp midpoint
    CHECK(std::abs(std::abs(qdot(mid.real, expected)) - 1.0) < 1e-12);
    CHECK(qnorm(mid.dual) < 1e-12);
}

TEST_CASE("blends of unit dual quaternions stay rigid (the property LBS lacks)") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        int B = 2 + static_cast<int>(rng.uniform_index(4));
        std::vector<DualQuat> dqs;
        std::vector<double> w(B);
        double sum = 0;
        for (int b = 0; b < B; ++b) {
            dqs.push_back(dq_from_rigid(random_rigid(rng)));
            w[b] = rng.uniform() + 1e-3;
            sum += w[b];
        }
        for (double& x : w) x /= sum;
        DualQuat out = dq_blend(w, dqs);
        RigidTransform t = dq_to_rigid(out);
        CHECK(orthonormality_error(t.rotation) < 1e-6);
        CHECK(std::abs(det(t.rotation) - 1.0) < 1e-6);
    }
}

TEST_CASE("lbs_blend is the entrywise average and collapses half-turn blends") {
    RigidTransform id{Mat3::identity(), {0, 0, 0}};
    RigidTransform half{quat_to_matrix(Quat::from_axis_angle({0, 0, 1}, M_PI)), {0, 0, 0}};
    Affine34 mid = lbs_blend({0.5, 0.5}, {id, half});
    CHECK(std::abs(mid.linear(0, 0)) < 1e-12);
    CHECK(std::abs(mid.linear(1, 1)) < 1e-12);
    CHECK(mid.linear(2, 2) == doctest::Approx(1.0));

    Affine34 one = lbs_blend({1, 0}, {half, id});
    for (int k = 0; k < 9; ++k) CHECK(one.linear.m[k] == doctest::Approx(half.rotation.m[k]));

    RigidTransform ta{Mat3::identity(), {2, 0, 0}};
    RigidTransform tb{Mat3::identity(), {0, 4, 0}};
    Affine34 avg = lbs_blend({0.5, 0.5}, {ta, tb});
    CHECK(norm(avg.translation - Vec3{1, 2, 0}) < 1e-15);
}

TEST_CASE("composition and inverse behave through the dual quaternion algebra") {
    Rng rng(47);
    for (int i = 0; i < 20; ++i) {
        RigidTransform t1 = random_rigid(rng), t2 = random_rigid(rng);
        Vec3 p = random_point(rng);
        DualQuat q12 = dq_from_rigid(compose(t1, t2));
        CHECK(norm(dq_apply(q12, p) - t1.apply(t2.apply(p))) < 1e-9);
        DualQuat q = dq_from_rigid(t1);
        CHECK(norm(dq_apply(dq_inverse(q), dq_apply(q, p)) - p) < 1e-9);
        DualQuat prod = dq_mul(dq_from_rigid(t1), dq_from_rigid(t2));
        CHECK(norm(dq_apply(prod, p) - t1.apply(t2.apply(p))) < 1e-9);
    }
}

TEST_CASE("candy wrapper: half-turn midline collapses under LBS but not DQB") {
    // two bones along z, the far cap twisted by pi; the midline blends 50/50
    RigidTransform fixed{Mat3::identity(), {0, 0, 0}};
    RigidTransform twist{quat_to_matrix(Quat::from_axis_angle({0, 0, 1}, M_PI)), {0, 0, 0}};
    Vec3 mid{1.0, 0.0, 0.0};  // radius 1 on the midline

    Affine34 lbs = lbs_blend({0.5, 0.5}, {fixed, twist});
    Vec3 lbs_out = lbs.apply(mid);
    CHECK(std::hypot(lbs_out.x, lbs_out.y) < 0.1);

    DualQuat dqb = dq_blend({0.5, 0.5}, {dq_from_rigid(fixed), dq_from_rigid(twist)});
    Vec3 dqb_out = dq_apply(dqb, mid);
    double r = std::hypot(dqb_out.x, dqb_out.y);
    CHECK(r > 0.9);
    CHECK(r < 1.1);
}

TEST_CASE("dq_blend validates its inputs") {
    CHECK_THROWS_AS(dq_blend({0.5, 0.6}, {DualQuat::identity(), DualQuat::identity()}), InvariantError);
    CHECK_THROWS_AS(dq_blend({}, {}), InvariantError);
}
