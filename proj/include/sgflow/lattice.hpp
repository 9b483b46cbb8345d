#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <fftw3.h>

namespace sgflow {

inline constexpr double pi = std::numbers::pi;

// Periodic N x N lattice with spacing a, box side L = N*a.
// Momenta k = (2*pi/L) * (n1, n2), n_i in {-N/2, ..., N/2-1}.
struct LatticeSpec {
    int N = 0;
    double a = 1.0;

    double L() const { return N * a; }
    int size() const { return N * N; }

    void validate() const {
        if (N < 4 || N % 2 != 0) throw std::invalid_argument("lattice: N must be even and >= 4");
        if ((N & (N - 1)) != 0) throw std::invalid_argument("lattice: N must be a power of two");
        if (!(a > 0)) throw std::invalid_argument("lattice: a must be positive");
    }

    // wrapped integer frequency for row/col index
    int freq(int i) const { return i < N / 2 ? i : i - N; }

    double k_component(int i) const { return 2.0 * pi / L() * freq(i); }

    double k_squared(int i, int j) const {
        const double k1 = k_component(i), k2 = k_component(j);
        return k1 * k1 + k2 * k2;
    }

    // min-image displacement components in length units
    double dx(int i, int j) const {
        int d = std::abs(i - j);
        d = std::min(d, N - d);
        return d * a;
    }

    // min-image distance between sites (i1,j1) and (i2,j2)
    double distance(int i1, int j1, int i2, int j2) const {
        const double d1 = dx(i1, i2), d2 = dx(j1, j2);
        return std::sqrt(d1 * d1 + d2 * d2);
    }

    bool operator==(const LatticeSpec& o) const { return N == o.N && a == o.a; }
};

struct Field {
    int N = 0;
    std::vector<double> v;

    Field() = default;
    explicit Field(const LatticeSpec& spec, double fill = 0.0) : N(spec.N), v(spec.size(), fill) {}

    double& at(int i, int j) { return v[size_t(i) * N + j]; }
    double at(int i, int j) const { return v[size_t(i) * N + j]; }
    size_t size() const { return v.size(); }

    Field& operator+=(const Field& o) {
        for (size_t n = 0; n < v.size(); ++n) v[n] += o.v[n];
        return *this;
    }
    Field& operator-=(const Field& o) {
        for (size_t n = 0; n < v.size(); ++n) v[n] -= o.v[n];
        return *this;
    }
    Field& operator*=(double c) {
        for (double& x : v) x *= c;
        return *this;
    }
};

inline Field operator+(Field f, const Field& g) { return f += g; }
inline Field operator-(Field f, const Field& g) { return f -= g; }
inline Field operator*(double c, Field f) { return f *= c; }

inline double max_abs(const Field& f) {
    double m = 0.0;
    for (double x : f.v) m = std::max(m, std::abs(x));
    return m;
}

inline bool all_finite(const Field& f) {
    for (double x : f.v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// Hermitian-symmetric complex coefficients so the inverse transform is real.
struct SpectralField {
    int N = 0;
    std::vector<std::complex<double>> v;

    SpectralField() = default;
    explicit SpectralField(const LatticeSpec& spec) : N(spec.N), v(spec.size()) {}

    std::complex<double>& at(int i, int j) { return v[size_t(i) * N + j]; }
    std::complex<double> at(int i, int j) const { return v[size_t(i) * N + j]; }
};

namespace detail {

// fftw plans are cached per N; plan creation is the only non-thread-safe part
struct FftPlans {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;
};

inline FftPlans& plans_for(int N) {
    static std::mutex mu;
    static std::map<int, FftPlans> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(N);
    if (it != cache.end()) return it->second;
    std::vector<std::complex<double>> buf(size_t(N) * N);
    auto* p = reinterpret_cast<fftw_complex*>(buf.data());
    FftPlans pl;
    pl.fwd = fftw_plan_dft_2d(N, N, p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    pl.bwd = fftw_plan_dft_2d(N, N, p, p, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    return cache.emplace(N, pl).first->second;
}

} // namespace detail

// Forward transform: unnormalised sum over sites. Inverse divides by N^2.
inline SpectralField to_spectral(const Field& f) {
    SpectralField g;
    g.N = f.N;
    g.v.assign(f.v.begin(), f.v.end());
    auto* p = reinterpret_cast<fftw_complex*>(g.v.data());
    fftw_execute_dft(detail::plans_for(f.N).fwd, p, p);
    return g;
}

inline Field from_spectral(const SpectralField& g) {
    std::vector<std::complex<double>> buf = g.v;
    auto* p = reinterpret_cast<fftw_complex*>(buf.data());
    fftw_execute_dft(detail::plans_for(g.N).bwd, p, p);
    Field f;
    f.N = g.N;
    f.v.resize(buf.size());
    const double inv = 1.0 / double(buf.size());
    for (size_t n = 0; n < buf.size(); ++n) f.v[n] = buf[n].real() * inv;
    return f;
}

// multiply spectral coefficients by a multiplier evaluated on discrete momenta
template <class Mult>
inline Field apply_multiplier(const LatticeSpec& spec, const Field& f, Mult&& mult) {
    SpectralField g = to_spectral(f);
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j) g.at(i, j) *= mult(spec.k_squared(i, j));
    return from_spectral(g);
}

// ---------------------------------------------------------------------------
// Littlewood-Paley blocks: smooth dyadic partition of unity in |k|, radii
// 2^i in units of the fundamental mode 2*pi/L, i = -1 ... log2(N/2).

inline int lp_max_block(const LatticeSpec& spec) {
    int i = 0, half = spec.N / 2;
    while ((1 << (i + 1)) <= half) ++i;
    return i;
}

namespace detail {

// chi(x): 1 for x <= 1, raised cosine in log2(x) down to 0 at x = 2
inline double lp_chi(double x) {
    if (x <= 1.0) return 1.0;
    if (x >= 2.0) return 0.0;
    return 0.5 * (1.0 + std::cos(pi * std::log2(x)));
}

inline double lp_profile(const LatticeSpec& spec, int block, double k_abs) {
    const double x = k_abs * spec.L() / (2.0 * pi);
    const int imax = lp_max_block(spec);
    if (block == -1) return lp_chi(x);
    double lo = lp_chi(x / double(1 << block));
    double hi = (block == imax) ? 1.0 : lp_chi(x / double(1 << (block + 1)));
    return hi - lo;
}

} // namespace detail

inline Field lp_project(const LatticeSpec& spec, const Field& f, int block) {
    SpectralField g = to_spectral(f);
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j) {
            const double k_abs = std::sqrt(spec.k_squared(i, j));
            g.at(i, j) *= detail::lp_profile(spec, block, k_abs);
        }
    return from_spectral(g);
}

// weight <x - centre>^{-n}, distance to the torus centre by min-image
inline double centre_weight(const LatticeSpec& spec, int i, int j, double n) {
    const int c = spec.N / 2;
    const double d1 = spec.dx(i, c), d2 = spec.dx(j, c);
    return std::pow(1.0 + d1 * d1 + d2 * d2, -0.5 * n);
}

// weighted L^p norm ||f||_{L^{p,-n}} with lattice measure a^2
inline double weighted_lp_norm(const LatticeSpec& spec, const Field& f, double p, double n) {
    double s = 0.0;
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j)
            s += std::pow(std::abs(f.at(i, j)) * centre_weight(spec, i, j, n), p);
    return std::pow(s * spec.a * spec.a, 1.0 / p);
}

// block norms (i, ||Delta_i f||_{L^{p,-n}}) for the dyadic partition above
inline std::vector<std::pair<int, double>> besov_block_norms(const LatticeSpec& spec,
                                                             const Field& f, double p = 2.0,
                                                             double weight_exponent = 3.0) {
    std::vector<std::pair<int, double>> out;
    for (int block = -1; block <= lp_max_block(spec); ++block) {
        Field blk = lp_project(spec, f, block);
        out.emplace_back(block, weighted_lp_norm(spec, blk, p, weight_exponent));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Steiner diameter for 2 or 3 points: shortest tree connecting the set.

struct Point2 {
    double x = 0, y = 0;
};

inline double dist(const Point2& p, const Point2& q) {
    return std::hypot(p.x - q.x, p.y - q.y);
}

inline double steiner_diameter(const std::vector<Point2>& pts) {
    if (pts.size() == 2) return dist(pts[0], pts[1]);
    if (pts.size() != 3) throw std::invalid_argument("steiner_diameter: supports 2 or 3 points");
    const double s12 = dist(pts[0], pts[1]);
    const double s13 = dist(pts[0], pts[2]);
    const double s23 = dist(pts[1], pts[2]);
    // degenerate configurations: tree is the spanning segment
    const double eps = 1e-15 * (s12 + s13 + s23 + 1.0);
    if (s12 < eps || s13 < eps || s23 < eps)
        return std::max({s12, s13, s23});
    // if any angle >= 120 degrees the Fermat point sits on that vertex
    auto cos_angle = [](double opp, double e1, double e2) {
        return (e1 * e1 + e2 * e2 - opp * opp) / (2.0 * e1 * e2);
    };
    const double c1 = cos_angle(s23, s12, s13);
    const double c2 = cos_angle(s13, s12, s23);
    const double c3 = cos_angle(s12, s13, s23);
    if (c1 <= -0.5) return s12 + s13;
    if (c2 <= -0.5) return s12 + s23;
    if (c3 <= -0.5) return s13 + s23;
    // all angles < 120: Fermat-Torricelli length
    const double sq = s12 * s12 + s13 * s13 + s23 * s23;
    const double per = 0.5 * (s12 + s13 + s23);
    const double area =
        std::sqrt(std::max(0.0, per * (per - s12) * (per - s13) * (per - s23)));
    return std::sqrt(0.5 * (sq + 4.0 * std::sqrt(3.0) * area));
}

// ---------------------------------------------------------------------------
// Spatial cut-off: raised-cosine plateau, rho = 1 on an inner disc around the
// torus centre, 0 outside plateau_radius + edge_width. Radial, hence symmetric
// under reflections through the centre.

struct CutoffRho {
    LatticeSpec spec;
    Field values;
    double plateau_radius = 0.0;
    double edge_width = 0.0;

    static CutoffRho plateau(const LatticeSpec& spec, double plateau_radius, double edge_width) {
        CutoffRho rho;
        rho.spec = spec;
        rho.plateau_radius = plateau_radius;
        rho.edge_width = edge_width;
        rho.values = Field(spec);
        const int c = spec.N / 2;
        for (int i = 0; i < spec.N; ++i)
            for (int j = 0; j < spec.N; ++j) {
                const double r = spec.distance(i, j, c, c);
                double val = 0.0;
                if (r <= plateau_radius)
                    val = 1.0;
                else if (r < plateau_radius + edge_width)
                    val = 0.5 * (1.0 + std::cos(pi * (r - plateau_radius) / edge_width));
                rho.values.at(i, j) = val;
            }
        return rho;
    }

    static CutoffRho ones(const LatticeSpec& spec) {
        CutoffRho rho;
        rho.spec = spec;
        rho.plateau_radius = spec.L();
        rho.values = Field(spec, 1.0);
        return rho;
    }

    double outer_radius() const { return plateau_radius + edge_width; }
    double support_area() const {
        double s = 0.0;
        for (double x : values.v) s += (x > 0.0) ? 1.0 : 0.0;
        return s * spec.a * spec.a;
    }
};

// ---------------------------------------------------------------------------
// Field snapshot file ("SGF1"): little-endian u32 N, f64 a, f64 m,
// u64 scale index, then N^2 f64 values row-major.

inline void write_sgf1(const std::string& path, const LatticeSpec& spec, double m,
                       uint64_t scale_index, const Field& f) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("write_sgf1: cannot open " + path);
    std::fwrite("SGF1", 1, 4, fp);
    const uint32_t n32 = uint32_t(spec.N);
    std::fwrite(&n32, sizeof n32, 1, fp);
    std::fwrite(&spec.a, sizeof spec.a, 1, fp);
    std::fwrite(&m, sizeof m, 1, fp);
    std::fwrite(&scale_index, sizeof scale_index, 1, fp);
    std::fwrite(f.v.data(), sizeof(double), f.v.size(), fp);
    std::fclose(fp);
}

struct Sgf1Snapshot {
    LatticeSpec spec;
    double m = 0.0;
    uint64_t scale_index = 0;
    Field field;
};

inline Sgf1Snapshot read_sgf1(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("read_sgf1: cannot open " + path);
    char magic[4];
    Sgf1Snapshot snap;
    uint32_t n32 = 0;
    bool ok = std::fread(magic, 1, 4, fp) == 4 && std::memcmp(magic, "SGF1", 4) == 0 &&
              std::fread(&n32, sizeof n32, 1, fp) == 1 &&
              std::fread(&snap.spec.a, sizeof(double), 1, fp) == 1 &&
              std::fread(&snap.m, sizeof(double), 1, fp) == 1 &&
              std::fread(&snap.scale_index, sizeof(uint64_t), 1, fp) == 1;
    if (ok) {
        snap.spec.N = int(n32);
        snap.field = Field(snap.spec);
        ok = std::fread(snap.field.v.data(), sizeof(double), snap.field.v.size(), fp) ==
             snap.field.v.size();
    }
    std::fclose(fp);
    if (!ok) throw std::runtime_error("read_sgf1: malformed file " + path);
    return snap;
}

} // namespace sgflow
