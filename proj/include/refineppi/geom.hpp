#pragma once
/*
geom.hpp
--------
3D vector / rotation algebra and the Gaussian probability-density-cloud
(PDC) calculus: difference distributions, closed-form squared-distance
moments with a Monte Carlo cross-check, angle moment estimation, and
rigid-motion transforms.

Units: positions in Angstrom, covariances in Angstrom^2, squared
distances in Angstrom^2.
*/

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace refineppi {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    double operator[](int i) const { return (i == 0) ? x : (i == 1) ? y : z; }
    double& operator[](int i) { return (i == 0) ? x : (i == 1) ? y : z; }

    Vec3 operator+(const Vec3& v) const { return {x + v.x, y + v.y, z + v.z}; }
    Vec3 operator-(const Vec3& v) const { return {x - v.x, y - v.y, z - v.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& v) { x += v.x; y += v.y; z += v.z; return *this; }
    bool operator==(const Vec3& v) const { return x == v.x && y == v.y && z == v.z; }
    Vec3& operator-=(const Vec3& v) { x -= v.x; y -= v.y; z -= v.z; return *this; }

    double dot(const Vec3& v) const { return x * v.x + y * v.y + z * v.z; }
    Vec3 cross(const Vec3& v) const {
        return {y * v.z - z * v.y, z * v.x - x * v.z, x * v.y - y * v.x};
    }
    double norm2() const { return x * x + y * y + z * z; }
    double norm() const { return std::sqrt(norm2()); }
    Vec3 normalized() const {
        double n = norm();
        if (n < 1e-12) throw std::invalid_argument("Vec3::normalized: near-zero vector");
        return *this / n;
    }

    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.dot(b); }

// Row-major 3x3 matrix. Enough linear algebra for covariance handling;
// symmetric eigenproblems are solved with cyclic Jacobi sweeps.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 zero() { return {}; }
    static Mat3 identity() { return diag(1.0, 1.0, 1.0); }
    static Mat3 isotropic(double s) { return diag(s, s, s); }
    static Mat3 diag(double a, double b, double c) {
        Mat3 r;
        r.m = {a, 0, 0, 0, b, 0, 0, 0, c};
        return r;
    }

    double at(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
    double& at(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }

    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 operator-(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
        return r;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
                r.at(i, j) = s;
            }
        return r;
    }
    Vec3 operator*(const Vec3& v) const {
        return {at(0, 0) * v.x + at(0, 1) * v.y + at(0, 2) * v.z,
                at(1, 0) * v.x + at(1, 1) * v.y + at(1, 2) * v.z,
                at(2, 0) * v.x + at(2, 1) * v.y + at(2, 2) * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
        return r;
    }

    double trace() const { return m[0] + m[4] + m[8]; }

    double det() const {
        return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
               at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
               at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
    }

    double frobenius2() const {
        double s = 0.0;
        for (double v : m) s += v * v;
        return s;
    }

    double max_abs() const {
        double s = 0.0;
        for (double v : m) s = std::max(s, std::abs(v));
        return s;
    }

    bool finite() const {
        for (double v : m)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool is_symmetric(double tol = 1e-12) const {
        return std::abs(at(0, 1) - at(1, 0)) <= tol &&
               std::abs(at(0, 2) - at(2, 0)) <= tol &&
               std::abs(at(1, 2) - at(2, 1)) <= tol;
    }

    Mat3 symmetrized() const {
        Mat3 r = *this;
        double a = 0.5 * (at(0, 1) + at(1, 0));
        double b = 0.5 * (at(0, 2) + at(2, 0));
        double c = 0.5 * (at(1, 2) + at(2, 1));
        r.at(0, 1) = r.at(1, 0) = a;
        r.at(0, 2) = r.at(2, 0) = b;
        r.at(1, 2) = r.at(2, 1) = c;
        return r;
    }

    // Jacobi eigen-decomposition for symmetric input. Eigenvalues ascending,
    // eigenvectors in the columns of `vecs`.
    void sym_eigen(std::array<double, 3>& vals, Mat3& vecs) const {
        Mat3 a = symmetrized();
        Mat3 v = identity();
        for (int sweep = 0; sweep < 64; ++sweep) {
            double off = a.at(0, 1) * a.at(0, 1) + a.at(0, 2) * a.at(0, 2) +
                         a.at(1, 2) * a.at(1, 2);
            double scale = a.frobenius2();
            if (off <= 1e-30 * std::max(scale, 1e-300)) break;
            for (int p = 0; p < 2; ++p) {
                for (int q = p + 1; q < 3; ++q) {
                    double apq = a.at(p, q);
                    if (apq == 0.0) continue;
                    double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                    double t = (theta >= 0 ? 1.0 : -1.0) /
                               (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    double c = 1.0 / std::sqrt(t * t + 1.0);
                    double s = t * c;
                    Mat3 r = identity();
                    r.at(p, p) = c; r.at(q, q) = c;
                    r.at(p, q) = s; r.at(q, p) = -s;
                    a = r.transposed() * a * r;
                    a = a.symmetrized();
                    v = v * r;
                }
            }
        }
        std::array<int, 3> order = {0, 1, 2};
        std::array<double, 3> d = {a.at(0, 0), a.at(1, 1), a.at(2, 2)};
        for (int i = 0; i < 2; ++i)
            for (int j = i + 1; j < 3; ++j)
                if (d[order[j]] < d[order[i]]) std::swap(order[i], order[j]);
        Mat3 sorted_vecs;
        for (int k = 0; k < 3; ++k) {
            vals[k] = d[order[k]];
            for (int r = 0; r < 3; ++r) sorted_vecs.at(r, k) = v.at(r, order[k]);
        }
        vecs = sorted_vecs;
    }

    std::array<double, 3> sym_eigenvalues() const {
        std::array<double, 3> vals;
        Mat3 vecs;
        sym_eigen(vals, vecs);
        return vals;
    }

    double min_eigenvalue() const { return sym_eigenvalues()[0]; }

    // Nearest PSD reconstruction: eigenvalues below `floor` are raised to it.
    Mat3 clamped_psd(double floor = 0.0) const {
        std::array<double, 3> vals;
        Mat3 v;
        sym_eigen(vals, v);
        Mat3 d = diag(std::max(vals[0], floor), std::max(vals[1], floor),
                      std::max(vals[2], floor));
        return v * d * v.transposed();
    }
};

// Deterministic RNG used everywhere randomness is needed. Gaussian draws go
// through Box-Muller on explicit 53-bit uniforms so that streams are
// bit-identical across standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(split_mix(seed)), inc_(split_mix(seed ^ 0x9e3779b97f4a7c15ULL) | 1ULL) {}

    std::uint64_t next_u64() {
        // xorshift128+ style step on two words; deterministic and fast.
        std::uint64_t s1 = state_;
        const std::uint64_t s0 = inc_;
        state_ = s0;
        s1 ^= s1 << 23;
        inc_ = s1 ^ s0 ^ (s1 >> 18) ^ (s0 >> 5);
        return inc_ + s0;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
        return static_cast<int>(uniform() * static_cast<double>(n)) % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Vec3 normal_vec3() {
        double a = normal(), b = normal(), c = normal();
        return {a, b, c};
    }

  private:
    static std::uint64_t split_mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    std::uint64_t inc_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Proper rotation: Q^T Q = I and det Q = +1, both within 1e-12.
struct Rotation {
    Mat3 q;

    static Rotation from_matrix(const Mat3& q) {
        Mat3 qtq = q.transposed() * q;
        Mat3 err = qtq - Mat3::identity();
        if (err.max_abs() > 1e-12)
            throw std::invalid_argument("Rotation: matrix is not orthogonal");
        if (std::abs(q.det() - 1.0) > 1e-12)
            throw std::invalid_argument("Rotation: determinant is not +1");
        return Rotation{q};
    }

    Vec3 apply(const Vec3& v) const { return q * v; }
    Mat3 conjugate(const Mat3& s) const { return q * s * q.transposed(); }
};

// Uniform (Haar) sample from SO(3) via a normalized random quaternion.
inline Rotation random_rotation(Rng& rng) {
    double w, x, y, z, n;
    do {
        w = rng.normal(); x = rng.normal(); y = rng.normal(); z = rng.normal();
        n = std::sqrt(w * w + x * x + y * y + z * z);
    } while (n < 1e-6);
    w /= n; x /= n; y /= n; z /= n;
    Mat3 q;
    q.at(0, 0) = 1 - 2 * (y * y + z * z);
    q.at(0, 1) = 2 * (x * y - z * w);
    q.at(0, 2) = 2 * (x * z + y * w);
    q.at(1, 0) = 2 * (x * y + z * w);
    q.at(1, 1) = 1 - 2 * (x * x + z * z);
    q.at(1, 2) = 2 * (y * z - x * w);
    q.at(2, 0) = 2 * (x * z - y * w);
    q.at(2, 1) = 2 * (y * z + x * w);
    q.at(2, 2) = 1 - 2 * (x * x + y * y);
    return Rotation{q};
}

inline Rotation random_rotation(std::uint64_t seed) {
    Rng rng(seed);
    return random_rotation(rng);
}

struct RigidMotion {
    Rotation rot;
    Vec3 shift;

    Vec3 apply(const Vec3& v) const { return rot.apply(v) + shift; }
};

inline RigidMotion random_rigid_motion(Rng& rng, double shift_scale = 10.0) {
    Rotation r = random_rotation(rng);
    Vec3 g{rng.uniform(-shift_scale, shift_scale), rng.uniform(-shift_scale, shift_scale),
           rng.uniform(-shift_scale, shift_scale)};
    return {r, g};
}

// One particle's positional distribution N(mean, cov).
struct GaussianPDC {
    Vec3 mean;
    Mat3 cov;

    // Enforces symmetry within 1e-12 and eigenvalues >= -1e-10; small
    // negative eigenvalues (floating-point drift) are clamped to zero.
    GaussianPDC validated() const {
        if (!mean.finite() || !cov.finite())
            throw std::invalid_argument("GaussianPDC: non-finite entries");
        if (!cov.is_symmetric(1e-12))
            throw std::invalid_argument("GaussianPDC: covariance is not symmetric");
        std::array<double, 3> vals;
        Mat3 vecs;
        cov.sym_eigen(vals, vecs);
        if (vals[0] < -1e-10)
            throw std::invalid_argument("GaussianPDC: covariance is not positive semi-definite");
        if (vals[0] < 0.0) {
            Mat3 d = Mat3::diag(std::max(vals[0], 0.0), std::max(vals[1], 0.0),
                                std::max(vals[2], 0.0));
            return {mean, vecs * d * vecs.transposed()};
        }
        return *this;
    }
};

inline GaussianPDC pdc_difference(const GaussianPDC& a, const GaussianPDC& b) {
    return {a.mean - b.mean, a.cov + b.cov};
}

struct DistanceMoments {
    double mean = 0.0;      // E[d^2], A^2
    double variance = 0.0;  // Var[d^2], A^4
};

struct AngleMoments {
    double mean = 0.0;      // radians, in [0, pi]
    double variance = 0.0;
};

// Variance formula for the squared distance between two PDCs.
// Standard is the textbook moment of ||X||^2 for Gaussian X and is the
// Monte Carlo verified default; LinearTrace keeps tr(S) in place of
// tr(S^2) as sometimes printed, retained for traceability.
enum class DistanceFormula { Standard, LinearTrace };

inline DistanceMoments squared_distance_moments(const GaussianPDC& a, const GaussianPDC& b,
                                                DistanceFormula formula = DistanceFormula::Standard) {
    Mat3 s = a.cov + b.cov;
    Vec3 m = a.mean - b.mean;
    double mean = s.trace() + m.norm2();
    double quad = dot(m, s * m);
    double variance;
    if (formula == DistanceFormula::Standard)
        variance = 2.0 * (s * s).trace() + 4.0 * quad;
    else
        variance = 2.0 * s.trace() + 4.0 * quad;
    return {mean, variance};
}

// Linear map L with L L^T = cov, from the eigen-decomposition so that
// rank-deficient (including zero) covariances sample exactly.
inline Mat3 sampling_transform(const Mat3& cov) {
    std::array<double, 3> vals;
    Mat3 vecs;
    cov.sym_eigen(vals, vecs);
    if (vals[0] < -1e-10)
        throw std::invalid_argument("sampling_transform: covariance is not positive semi-definite");
    Mat3 d = Mat3::diag(std::sqrt(std::max(vals[0], 0.0)), std::sqrt(std::max(vals[1], 0.0)),
                        std::sqrt(std::max(vals[2], 0.0)));
    return vecs * d;
}

inline Vec3 sample_pdc(const GaussianPDC& p, const Mat3& transform, Rng& rng) {
    return p.mean + transform * rng.normal_vec3();
}

struct McDistanceMoments {
    double mean = 0.0;
    double variance = 0.0;   // unbiased sample variance
    double se_mean = 0.0;    // standard error of the mean estimate
    double se_variance = 0.0;  // standard error of the variance estimate
};

// Sample moments of ||x_a - x_b||^2 with x_a ~ a, x_b ~ b independent.
// Also returns standard errors (from the 2nd/4th central moments) so the
// closed form can be tested at an n-sigma level.
inline McDistanceMoments mc_squared_distance_moments_detail(const GaussianPDC& a,
                                                            const GaussianPDC& b,
                                                            std::size_t n_samples,
                                                            std::uint64_t seed) {
    if (n_samples < 10000)
        throw std::invalid_argument("mc_squared_distance_moments: need at least 1e4 samples");
    Mat3 la = sampling_transform(a.cov);
    Mat3 lb = sampling_transform(b.cov);
    Rng rng(seed);
    // Welford accumulation up to the 4th central moment.
    double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        Vec3 xa = sample_pdc(a, la, rng);
        Vec3 xb = sample_pdc(b, lb, rng);
        double v = (xa - xb).norm2();
        double n1 = static_cast<double>(i);
        double n = n1 + 1.0;
        double delta = v - mean;
        double delta_n = delta / n;
        double delta_n2 = delta_n * delta_n;
        double term1 = delta * delta_n * n1;
        mean += delta_n;
        m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * m2 - 4.0 * delta_n * m3;
        m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * m2;
        m2 += term1;
    }
    double n = static_cast<double>(n_samples);
    double var = m2 / (n - 1.0);
    double mu4 = m4 / n;
    double var_of_var = (mu4 - var * var * (n - 3.0) / (n - 1.0)) / n;
    McDistanceMoments out;
    out.mean = mean;
    out.variance = var;
    out.se_mean = std::sqrt(var / n);
    out.se_variance = std::sqrt(std::max(var_of_var, 0.0));
    return out;
}

inline DistanceMoments mc_squared_distance_moments(const GaussianPDC& a, const GaussianPDC& b,
                                                   std::size_t n_samples, std::uint64_t seed) {
    McDistanceMoments d = mc_squared_distance_moments_detail(a, b, n_samples, seed);
    return {d.mean, d.variance};
}

// Monte Carlo moments of the angle at b formed by (a, b, c): the angle
// between the rays b->a and b->c, i.e. arccos of the normalized inner
// product of (x_a - x_b) and (x_c - x_b). A straight chain gives pi.
// No closed form is implemented; triplets with a near-zero bond vector
// (norm < 1e-9) are rejected and resampled.
inline AngleMoments mc_angle_moments(const GaussianPDC& a, const GaussianPDC& b,
                                     const GaussianPDC& c, std::size_t n_samples,
                                     std::uint64_t seed) {
    if (n_samples < 10000)
        throw std::invalid_argument("mc_angle_moments: need at least 1e4 samples");
    const bool ab_degenerate =
        a.cov.max_abs() == 0.0 && b.cov.max_abs() == 0.0 && (a.mean - b.mean).norm() < 1e-9;
    const bool bc_degenerate =
        b.cov.max_abs() == 0.0 && c.cov.max_abs() == 0.0 && (b.mean - c.mean).norm() < 1e-9;
    if (ab_degenerate || bc_degenerate)
        throw std::invalid_argument("mc_angle_moments: angle undefined for coincident deterministic points");
    Mat3 la = sampling_transform(a.cov);
    Mat3 lb = sampling_transform(b.cov);
    Mat3 lc = sampling_transform(c.cov);
    Rng rng(seed);
    double mean = 0.0, m2 = 0.0;
    std::size_t kept = 0;
    while (kept < n_samples) {
        Vec3 xa = sample_pdc(a, la, rng);
        Vec3 xb = sample_pdc(b, lb, rng);
        Vec3 xc = sample_pdc(c, lc, rng);
        Vec3 u = xa - xb;
        Vec3 v = xc - xb;
        double nu = u.norm(), nv = v.norm();
        if (nu < 1e-9 || nv < 1e-9) continue;  // rejected, resample
        double cosang = dot(u, v) / (nu * nv);
        cosang = std::min(1.0, std::max(-1.0, cosang));
        double ang = std::acos(cosang);
        ++kept;
        double delta = ang - mean;
        mean += delta / static_cast<double>(kept);
        m2 += delta * (ang - mean);
    }
    double var = (n_samples > 1) ? m2 / static_cast<double>(n_samples - 1) : 0.0;
    return {mean, var};
}

// Action induced by x' = Q x + g: mean' = Q mean + g, cov' = Q cov Q^T.
inline GaussianPDC transform_pdc(const GaussianPDC& p, const Rotation& q, const Vec3& g) {
    return {q.apply(p.mean) + g, q.conjugate(p.cov)};
}

}  // namespace refineppi
