#pragma once

#include <array>
#include <cmath>
#include <limits>

namespace qrfit {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 operator*(const Vec3& a, double s) { return s * a; }
inline Vec3 operator/(const Vec3& a, double s) { return {a.x / s, a.y / s, a.z / s}; }
inline Vec3& operator+=(Vec3& a, const Vec3& b) { a = a + b; return a; }
inline Vec3& operator-=(Vec3& a, const Vec3& b) { a = a - b; return a; }
inline Vec3& operator*=(Vec3& a, double s) { a = a * s; return a; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline Vec3 normalized(const Vec3& a) { return a / norm(a); }
inline bool finite(const Vec3& a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double& operator()(int r, int c) { return m[3 * r + c]; }
    double operator()(int r, int c) const { return m[3 * r + c]; }

    static Mat3 identity() { return Mat3{}; }

    Vec3 row(int r) const { return {m[3 * r], m[3 * r + 1], m[3 * r + 2]}; }
    Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
};

inline Vec3 operator*(const Mat3& A, const Vec3& v) {
    return {dot(A.row(0), v), dot(A.row(1), v), dot(A.row(2), v)};
}

inline Mat3 operator*(const Mat3& A, const Mat3& B) {
    Mat3 C;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            C(r, c) = A(r, 0) * B(0, c) + A(r, 1) * B(1, c) + A(r, 2) * B(2, c);
    return C;
}

inline Mat3 operator+(const Mat3& A, const Mat3& B) {
    Mat3 C;
    for (int i = 0; i < 9; ++i) C.m[i] = A.m[i] + B.m[i];
    return C;
}

inline Mat3 operator*(double s, const Mat3& A) {
    Mat3 C;
    for (int i = 0; i < 9; ++i) C.m[i] = s * A.m[i];
    return C;
}

inline Mat3 transpose(const Mat3& A) {
    Mat3 T;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            T(r, c) = A(c, r);
    return T;
}

inline double det(const Mat3& A) {
    return A(0, 0) * (A(1, 1) * A(2, 2) - A(1, 2) * A(2, 1))
         - A(0, 1) * (A(1, 0) * A(2, 2) - A(1, 2) * A(2, 0))
         + A(0, 2) * (A(1, 0) * A(2, 1) - A(1, 1) * A(2, 0));
}

/// Max absolute entry of A^T A - I; zero for orthonormal A.
inline double orthonormality_error(const Mat3& A) {
    Mat3 G = transpose(A) * A;
    double e = 0.0;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            e = std::max(e, std::abs(G(r, c) - (r == c ? 1.0 : 0.0)));
    return e;
}

/// Skew-symmetric cross-product matrix [v]x so that [v]x w = v x w.
inline Mat3 skew(const Vec3& v) {
    Mat3 S;
    S.m = {0, -v.z, v.y, v.z, 0, -v.x, -v.y, v.x, 0};
    return S;
}

/// Rodrigues exponential of an axis-angle vector.
inline Mat3 rotation_exp(const Vec3& w) {
    double t = norm(w);
    if (t < 1e-12) {
        return Mat3::identity() + skew(w);
    }
    Vec3 a = w / t;
    Mat3 K = skew(a);
    return Mat3::identity() + std::sin(t) * K + (1.0 - std::cos(t)) * (K * K);
}

struct Aabb {
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};

    void expand(const Vec3& p) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    void expand(const Aabb& b) { expand(b.lo); expand(b.hi); }
    bool valid() const { return lo.x <= hi.x; }
    double diagonal() const { return valid() ? norm(hi - lo) : 0.0; }
    Vec3 center() const { return 0.5 * (lo + hi); }
};

}  // namespace qrfit
