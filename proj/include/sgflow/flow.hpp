#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <vector>

#include "sgflow/kernels.hpp"
#include "sgflow/lattice.hpp"
#include "sgflow/quadrature.hpp"
#include "sgflow/util.hpp"

namespace sgflow {

struct CouplingParams {
    double lambda = 0.1;
    double beta2 = 2.0 * pi; // beta^2
    int ell_star = 1;

    double beta() const { return std::sqrt(beta2); }
    double delta() const { return 1.0 - beta2 / (8.0 * pi); }

    // relevant-term threshold: only levels <= ell are relevant iff beta2 < this
    static double beta2_threshold(int ell) { return 8.0 * pi * ell / double(ell + 1); }

    void validate() const {
        if (ell_star < 1 || ell_star > 3)
            throw std::invalid_argument("coupling: truncation order must be 1, 2 or 3");
        if (!(beta2 > 0) || beta2 >= beta2_threshold(ell_star))
            throw std::invalid_argument("coupling: beta^2 must lie in (0, threshold(ell_star))");
    }
};

struct ChargeVector {
    std::vector<int> sigma; // entries +-1

    int q() const {
        int s = 0;
        for (int v : sigma) s += v;
        return s;
    }
    bool neutral() const { return q() == 0; }
};

using cfield = std::vector<std::complex<double>>;

namespace detail {

inline void fft_inplace(cfield& buf, int N, bool forward) {
    auto* p = reinterpret_cast<fftw_complex*>(buf.data());
    fftw_execute_dft(forward ? plans_for(N).fwd : plans_for(N).bwd, p, p);
    if (!forward) {
        const double inv = 1.0 / double(buf.size());
        for (auto& z : buf) z *= inv;
    }
}

} // namespace detail

// circular convolution (K * u)(x) = a^2 sum_y K(x-y) u(y) with a real kernel image
inline cfield convolve_image(const LatticeSpec& spec, const std::vector<double>& kernel_image,
                             const cfield& u) {
    cfield kh(kernel_image.begin(), kernel_image.end());
    cfield uh = u;
    detail::fft_inplace(kh, spec.N, true);
    detail::fft_inplace(uh, spec.N, true);
    for (size_t i = 0; i < uh.size(); ++i) uh[i] *= kh[i];
    detail::fft_inplace(uh, spec.N, false);
    const double a2 = spec.a * spec.a;
    for (auto& z : uh) z *= a2;
    return uh;
}

// ---------------------------------------------------------------------------
// ForceTables: renormalisation constants lambda_t, radial f^[2] kernels per
// charge sector, per-knot kernel images for convolution, and the cached scale
// quadrature nodes used by the on-demand f^[3] evaluator.
//
// Conventions (potential-level kernels, fully symmetric, rho applied at
// assembly):
//   v1_t = lambda_t / 2
//   f2_t(r; p) = (beta^2/8) p int_t^T ds lambda_s^2
//                  exp(-beta^2 [ (D(s)-D(t)) + p (C(r,s)-C(r,t)) ]) Gdot_s(r)
//   with p = sigma1 sigma2, D(s) = lattice G_s(0), C(r,s) = continuum radial
//   G_s(r). The diagonal uses the lattice mode sum so that the Wick factors
//   lambda_s are absorbed exactly (neutral integrand = lambda_t^2
//   e^{beta^2 (C(r,s)-C(r,t))} Gdot_s(r), finite as s -> T for r > 0).

struct ForceTables {
    LatticeSpec spec;
    MassParam mass;
    CouplingParams params;
    ScaleGrid grid;
    Field rho; // spatial cut-off values

    double r_max = 0.0;

    // per scale knot
    std::vector<double> lambda_knot;
    std::vector<double> diag_knot; // D(t) = lattice G_t(0)

    // distinct lattice squared-radius index (within r_max) plus table radii
    std::map<long long, int> radius_index; // key: round(r^2/a^2 * 4)
    std::vector<double> radii;

    // f2 values: [knot][sector(0:+,1:-)][radius index]
    std::vector<std::array<std::vector<double>, 2>> f2_values;

    // kernel images (zero beyond r_max): [knot][sector]
    std::vector<std::array<std::vector<double>, 2>> f2_images;

    // radial dump table on {0, a, 2a, ...}: [knot][sector][j]
    std::vector<double> dump_radii;
    std::vector<std::array<std::vector<double>, 2>> f2_dump;

    // continuum radial C(r, t) at knots for every indexed radius: [knot][radius]
    std::vector<std::vector<double>> c_knot;

    // f3 scale-quadrature weights: trapezoid over knots j >= i
    std::vector<std::vector<double>> f3_weights;

    double lambda_at_knot(int i) const { return lambda_knot[i]; }

    int knot_of(double t) const { return grid.index_of(t); }

    double f2_at(int knot, int sector, double r) const {
        const long long key = llround(4.0 * r * r / (spec.a * spec.a));
        auto it = radius_index.find(key);
        if (it == radius_index.end()) return 0.0;
        return f2_values[knot][sector][it->second];
    }
};

namespace detail {

// composite Gauss-Legendre 7 panels refined from the scale grid
struct ScaleQuadrature {
    std::vector<double> s;      // nodes, ascending
    std::vector<double> w;      // weights
    std::vector<int> panel_of;  // scale-grid interval containing each node

    static constexpr double gl_x[7] = {-0.9491079123427585, -0.7415311855993944,
                                       -0.4058451513773972, 0.0,
                                       0.4058451513773972,  0.7415311855993944,
                                       0.9491079123427585};
    static constexpr double gl_w[7] = {0.1294849661688697, 0.2797053914892767,
                                       0.3818300505051189, 0.4179591836734694,
                                       0.3818300505051189, 0.2797053914892767,
                                       0.1294849661688697};

    explicit ScaleQuadrature(const ScaleGrid& grid, int refine = 2) {
        for (size_t i = 0; i + 1 < grid.knots.size(); ++i) {
            const double lo = grid.knots[i], hi = grid.knots[i + 1];
            for (int r = 0; r < refine; ++r) {
                const double a = lo + (hi - lo) * r / refine;
                const double b = lo + (hi - lo) * (r + 1) / refine;
                const double c = 0.5 * (a + b), h = 0.5 * (b - a);
                for (int g = 0; g < 7; ++g) {
                    s.push_back(c + h * gl_x[g]);
                    w.push_back(h * gl_w[g]);
                    panel_of.push_back(int(i));
                }
            }
        }
    }
};

} // namespace detail

inline double lambda_t(double t, const CouplingParams& params, const MassParam& mass,
                       const LatticeSpec& spec) {
    return params.lambda * std::exp(0.5 * params.beta2 * green_diag_lattice(t, mass.m, spec));
}

inline ForceTables build_force_tables(const LatticeSpec& spec, const MassParam& mass,
                                      const CouplingParams& params, const ScaleGrid& grid,
                                      const Field& rho) {
    spec.validate();
    mass.validate();
    params.validate();
    const double T = grid.T();
    if (T > 0.25 / (spec.a * spec.a) * (1.0 + 1e-12))
        throw std::invalid_argument("force tables: T exceeds the resolved window 0.25/a^2");
    if (params.ell_star >= 3 && spec.N > 64)
        throw std::invalid_argument("force tables: ell*=3 runs restricted to N <= 64");

    ForceTables tab;
    tab.spec = spec;
    tab.mass = mass;
    tab.params = params;
    tab.grid = grid;
    tab.rho = rho;
    tab.r_max = std::min(spec.L() / 3.0, 12.0 / mass.m);

    const int K = int(grid.knots.size());
    const double m = mass.m, beta2 = params.beta2;

    // distinct lattice radii within r_max, plus the dump radii {0, a, 2a, ...}
    const double a = spec.a;
    auto key_of = [&](double r) { return llround(4.0 * r * r / (a * a)); };
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j) {
            const double r = spec.distance(i, j, 0, 0);
            if (r > tab.r_max) continue;
            const long long key = key_of(r);
            if (!tab.radius_index.count(key)) {
                tab.radius_index[key] = 0;
            }
        }
    for (double r = 0.0; r <= tab.r_max + 1e-12; r += a) {
        tab.dump_radii.push_back(r);
        const long long key = key_of(r);
        if (!tab.radius_index.count(key)) tab.radius_index[key] = 0;
    }
    {
        int idx = 0;
        for (auto& [key, val] : tab.radius_index) {
            val = idx++;
            tab.radii.push_back(0.5 * a * std::sqrt(double(key)));
        }
    }
    const int R = int(tab.radii.size());

    // scale quadrature nodes shared by every (knot, radius, sector)
    detail::ScaleQuadrature quad(grid, 2);
    const int Q = int(quad.s.size());

    // lattice diagonal D(s): bin degenerate kappa values once
    std::map<long long, int> kappa_mult;
    std::vector<double> kappas;
    {
        std::map<long long, std::pair<double, int>> bins;
        for (int i = 0; i < spec.N; ++i)
            for (int j = 0; j < spec.N; ++j) {
                const double kap = m * m + spec.k_squared(i, j);
                const long long key = llround(kap * 1e10);
                auto& b = bins[key];
                b.first = kap;
                b.second += 1;
            }
        for (auto& [key, b] : bins) {
            kappas.push_back(b.first);
            kappa_mult[key] = b.second;
        }
    }
    auto lattice_diag = [&](double t) {
        if (!(t > 0)) return 0.0;
        double s = 0.0;
        int idx = 0;
        for (auto& [key, mult] : kappa_mult) {
            const double kap = kappas[idx++];
            s += mult * g_hat(t, kap);
        }
        return s / (spec.L() * spec.L());
    };

    std::vector<double> diag_node(Q), lambda_node(Q);
    for (int qn = 0; qn < Q; ++qn) {
        diag_node[qn] = lattice_diag(quad.s[qn]);
        lambda_node[qn] = params.lambda * std::exp(0.5 * beta2 * diag_node[qn]);
    }
    tab.diag_knot.resize(K);
    tab.lambda_knot.resize(K);
    for (int i = 0; i < K; ++i) {
        tab.diag_knot[i] = lattice_diag(grid.knots[i]);
        tab.lambda_knot[i] = params.lambda * std::exp(0.5 * beta2 * tab.diag_knot[i]);
    }

    // continuum radial C(r, s) cumulatively on the union of nodes and knots
    std::vector<double> times;
    times.reserve(Q + K);
    std::vector<std::pair<int, int>> where; // (0 node / 1 knot, index)
    for (int qn = 0; qn < Q; ++qn) {
        times.push_back(quad.s[qn]);
        where.emplace_back(0, qn);
    }
    for (int i = 0; i < K; ++i) {
        times.push_back(grid.knots[i]);
        where.emplace_back(1, i);
    }
    std::vector<int> order(times.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::sort(order.begin(), order.end(), [&](int x, int y) { return times[x] < times[y]; });

    // r = 0 carries the lattice diagonal so every Wick cancellation
    // (coincident-point W, neutral f2 exponent) is exact on the lattice
    std::vector<std::vector<double>> c_node(Q, std::vector<double>(R));
    tab.c_knot.assign(K, std::vector<double>(R));
    for (int r = 0; r < R; ++r) {
        const double rad = tab.radii[r];
        if (rad == 0.0) {
            for (int qn = 0; qn < Q; ++qn) c_node[qn][r] = diag_node[qn];
            for (int i = 0; i < K; ++i) tab.c_knot[i][r] = tab.diag_knot[i];
            continue;
        }
        double acc = 0.0, prev = 0.0;
        for (int oi : order) {
            const double t = times[oi];
            if (t > prev) {
                acc += integrate([&](double s) { return gdot_realspace(s, rad, m); }, prev, t,
                                 1e-11);
                prev = t;
            }
            if (where[oi].first == 0)
                c_node[where[oi].second][r] = acc;
            else
                tab.c_knot[where[oi].second][r] = acc;
        }
    }

    // f2 accumulation: suffix sums over quadrature nodes per knot
    tab.f2_values.assign(K, {std::vector<double>(R, 0.0), std::vector<double>(R, 0.0)});
    tab.f2_dump.assign(
        K, {std::vector<double>(tab.dump_radii.size(), 0.0),
            std::vector<double>(tab.dump_radii.size(), 0.0)});
    if (params.ell_star >= 2) {
        for (int i = 0; i < K; ++i) {
            const double t = grid.knots[i];
            for (int r = 0; r < R; ++r) {
                const double rad = tab.radii[r];
                double acc[2] = {0.0, 0.0};
                for (int qn = 0; qn < Q; ++qn) {
                    if (quad.s[qn] < t) continue;
                    const double gdot = gdot_realspace(quad.s[qn], rad, m);
                    const double d_diff = diag_node[qn] - tab.diag_knot[i];
                    const double c_diff = c_node[qn][r] - tab.c_knot[i][r];
                    const double l2 = lambda_node[qn] * lambda_node[qn];
                    for (int sec = 0; sec < 2; ++sec) {
                        const double p = sec == 0 ? 1.0 : -1.0;
                        acc[sec] += quad.w[qn] * l2 *
                                    std::exp(-beta2 * (d_diff + p * c_diff)) * gdot * p;
                    }
                }
                for (int sec = 0; sec < 2; ++sec)
                    tab.f2_values[i][sec][r] = 0.125 * beta2 * acc[sec];
            }
            for (size_t j = 0; j < tab.dump_radii.size(); ++j) {
                const int r = tab.radius_index.at(key_of(tab.dump_radii[j]));
                tab.f2_dump[i][0][j] = tab.f2_values[i][0][r];
                tab.f2_dump[i][1][j] = tab.f2_values[i][1][r];
            }
        }
    }

    // kernel images on lattice displacements, zeroed beyond r_max
    tab.f2_images.assign(K, {std::vector<double>(spec.size(), 0.0),
                             std::vector<double>(spec.size(), 0.0)});
    if (params.ell_star >= 2) {
        for (int i = 0; i < K; ++i)
            for (int x1 = 0; x1 < spec.N; ++x1)
                for (int x2 = 0; x2 < spec.N; ++x2) {
                    const double r = spec.distance(x1, x2, 0, 0);
                    if (r > tab.r_max) continue;
                    const int idx = tab.radius_index.at(key_of(r));
                    tab.f2_images[i][0][size_t(x1) * spec.N + x2] = tab.f2_values[i][0][idx];
                    tab.f2_images[i][1][size_t(x1) * spec.N + x2] = tab.f2_values[i][1][idx];
                }
    }

    // trapezoid weights in s over knots j >= i (f3 quadrature)
    tab.f3_weights.assign(K, {});
    for (int i = 0; i < K; ++i) {
        std::vector<double> w(K, 0.0);
        for (int j = i; j + 1 < K; ++j) {
            const double h = grid.knots[j + 1] - grid.knots[j];
            w[j] += 0.5 * h;
            w[j + 1] += 0.5 * h;
        }
        tab.f3_weights[i] = std::move(w);
    }
    return tab;
}

// ---------------------------------------------------------------------------
// Pair covariance W_{t,s}(xi) = -(beta^2/2) sum_{i,j} s_i s_j (G_s - G_t)(x_i - x_j)

inline double pair_covariance_w(const ForceTables& tab, int knot_t, int knot_s,
                                const std::vector<std::pair<int, int>>& sites,
                                const ChargeVector& charges) {
    const int n = int(sites.size());
    double quad = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double ss = charges.sigma[i] * charges.sigma[j];
            if (i == j) {
                quad += ss * (tab.diag_knot[knot_s] - tab.diag_knot[knot_t]);
            } else {
                const double r = tab.spec.distance(sites[i].first, sites[i].second,
                                                   sites[j].first, sites[j].second);
                const long long key = llround(4.0 * r * r / (tab.spec.a * tab.spec.a));
                auto it = tab.radius_index.find(key);
                const double c_s = it != tab.radius_index.end()
                                       ? tab.c_knot[knot_s][it->second]
                                       : green_radial_diff_continuum(0, tab.grid.knots[knot_s], r,
                                                                     tab.mass.m);
                const double c_t = it != tab.radius_index.end()
                                       ? tab.c_knot[knot_t][it->second]
                                       : green_radial_diff_continuum(0, tab.grid.knots[knot_t], r,
                                                                     tab.mass.m);
                quad += ss * (c_s - c_t);
            }
        }
    return -0.5 * tab.params.beta2 * quad;
}

// Lemma 3.3 check: returns (W_{t,s}(xi), (beta^2/8pi)(G_t(0) - G_s(0)))
inline std::pair<double, double> charged_bound_check(const ForceTables& tab, int knot_t,
                                                     int knot_s,
                                                     const std::vector<std::pair<int, int>>& sites,
                                                     const ChargeVector& charges) {
    if (charges.neutral()) throw std::invalid_argument("charged_bound_check: neutral input");
    if (knot_t > knot_s) throw std::invalid_argument("charged_bound_check: need t <= s");
    const double lhs = pair_covariance_w(tab, knot_t, knot_s, sites, charges);
    const double rhs = tab.params.beta2 / (8.0 * pi) *
                       (tab.diag_knot[knot_t] - tab.diag_knot[knot_s]);
    return {lhs, rhs};
}

// ---------------------------------------------------------------------------
// f^[3] on demand (symmetrised kernel):
//   f3_t(xi_{1:3}) = (beta^2/3) int_t^T ds e^{W_{t,s}} sum_j (lambda_s/2)
//                     [sum_{i != j} s_j s_i Gdot_s(|x_j - x_i|)] f2_s(rest pair)
// evaluated by the cached trapezoid over scale knots; pair distances beyond
// r_max contribute zero.

inline double f3_evaluate(const ForceTables& tab, int knot_t,
                          const std::vector<std::pair<int, int>>& sites,
                          const ChargeVector& charges) {
    if (tab.params.ell_star < 3)
        throw std::invalid_argument("f3_evaluate: requires ell* = 3 tables");
    const int K = int(tab.grid.knots.size());
    const double m = tab.mass.m;
    const double r12 = tab.spec.distance(sites[0].first, sites[0].second, sites[1].first,
                                         sites[1].second);
    const double r13 = tab.spec.distance(sites[0].first, sites[0].second, sites[2].first,
                                         sites[2].second);
    const double r23 = tab.spec.distance(sites[1].first, sites[1].second, sites[2].first,
                                         sites[2].second);
    if (r12 > tab.r_max || r13 > tab.r_max || r23 > tab.r_max) return 0.0;
    const double rr[3][3] = {{0, r12, r13}, {r12, 0, r23}, {r13, r23, 0}};
    double acc = 0.0;
    for (int ks = knot_t; ks < K; ++ks) {
        const double w = tab.f3_weights[knot_t][ks];
        if (w == 0.0) continue;
        const double s = tab.grid.knots[ks];
        if (!(s > 0)) continue;
        const double ew = std::exp(pair_covariance_w(tab, knot_t, ks, sites, charges));
        double inner = 0.0;
        for (int j = 0; j < 3; ++j) {
            double link = 0.0;
            for (int i = 0; i < 3; ++i) {
                if (i == j) continue;
                link += charges.sigma[j] * charges.sigma[i] * gdot_realspace(s, rr[j][i], m);
            }
            const int i1 = (j + 1) % 3, i2 = (j + 2) % 3;
            const int sector = charges.sigma[i1] * charges.sigma[i2] > 0 ? 0 : 1;
            const double f2 = tab.f2_at(ks, sector, rr[i1][i2]);
            inner += 0.5 * tab.lambda_knot[ks] * link * f2;
        }
        acc += w * ew * inner;
    }
    return tab.params.beta2 / 3.0 * acc;
}

// ---------------------------------------------------------------------------
// Force and derivative assembly through the exponential ansatz. Products with
// rho(x) keep the spatial cut-off on every vertex. Everything is translation
// invariant, so level-3 coefficients are tabulated over relative offsets once
// per knot and shared (lazily built behind a mutex, logically const).

namespace detail {

inline cfield charge_field(const ForceTables& tab, const Field& phi, int sigma) {
    const double beta = tab.params.beta();
    cfield u(phi.v.size());
    for (size_t n = 0; n < u.size(); ++n) {
        const double ang = beta * phi.v[n] * sigma;
        u[n] = tab.rho.v[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    return u;
}

// A(x) = u^+(x) a^2 [ (K_+ * u^+)(x) + (K_- * u^-)(x) ]; F2 = -4 beta Im A
inline cfield f2_bracket(const ForceTables& tab, int knot, const cfield& up, const cfield& um) {
    cfield conv = convolve_image(tab.spec, tab.f2_images[knot][0], up);
    cfield conv_m = convolve_image(tab.spec, tab.f2_images[knot][1], um);
    for (size_t n = 0; n < conv.size(); ++n) conv[n] = up[n] * (conv[n] + conv_m[n]);
    return conv;
}

struct F3Offsets {
    std::vector<std::pair<int, int>> d; // offsets with |d| <= r_max
};

inline F3Offsets f3_offsets(const ForceTables& tab) {
    F3Offsets off;
    const int reach = int(std::floor(tab.r_max / tab.spec.a));
    for (int dx = -reach; dx <= reach; ++dx)
        for (int dy = -reach; dy <= reach; ++dy)
            if (tab.spec.a * std::hypot(double(dx), double(dy)) <= tab.r_max)
                off.d.emplace_back(dx, dy);
    return off;
}

// coefficients f3_t((+1,0), (p2,d2), (p3,d3)) for all offset pairs and charge
// products; by global charge-flip invariance these cover sigma1 = -1 as well
struct F3KnotTable {
    std::vector<double> coef; // [pair index * 4 + (p2>0)*2 + (p3>0)]
};

inline const F3KnotTable& f3_knot_table(const ForceTables& tab, int knot);

} // namespace detail

// level-resolved force F^[l](phi)
inline Field force_apply_level(const ForceTables& tab, int knot, const Field& phi, int level) {
    if (level > tab.params.ell_star)
        throw std::invalid_argument("force_apply_level: level exceeds ell*");
    const LatticeSpec& spec = tab.spec;
    const double beta = tab.params.beta();
    Field out(spec);
    if (level == 1) {
        const double c = -tab.lambda_knot[knot] * beta;
        for (size_t n = 0; n < out.v.size(); ++n)
            out.v[n] = c * tab.rho.v[n] * std::sin(beta * phi.v[n]);
        return out;
    }
    if (level == 2) {
        cfield up = detail::charge_field(tab, phi, +1);
        cfield um(up.size());
        for (size_t n = 0; n < up.size(); ++n) um[n] = std::conj(up[n]);
        cfield A = detail::f2_bracket(tab, knot, up, um);
        for (size_t n = 0; n < out.v.size(); ++n) out.v[n] = -4.0 * beta * A[n].imag();
        return out;
    }
    // level 3: T^+(x) = a^4 sum f3 u^{p2}(x+d2) u^{p3}(x+d3); F3 = -6 beta Im(u^+ T^+)
    const auto& table = detail::f3_knot_table(tab, knot);
    const auto off = detail::f3_offsets(tab);
    cfield up = detail::charge_field(tab, phi, +1);
    const int N = spec.N;
    const double a4 = std::pow(spec.a, 4);
    parallel_for(N, [&](int x) {
        for (int y = 0; y < N; ++y) {
            std::complex<double> acc = 0.0;
            for (size_t i2 = 0; i2 < off.d.size(); ++i2) {
                const int x2 = (x + off.d[i2].first + N) % N, y2 = (y + off.d[i2].second + N) % N;
                const std::complex<double> u2p = up[size_t(x2) * N + y2];
                const std::complex<double> u2m = std::conj(u2p);
                for (size_t i3 = 0; i3 < off.d.size(); ++i3) {
                    const size_t base = (i2 * off.d.size() + i3) * 4;
                    if (table.coef[base] == 0.0 && table.coef[base + 1] == 0.0 &&
                        table.coef[base + 2] == 0.0 && table.coef[base + 3] == 0.0)
                        continue;
                    const int x3 = (x + off.d[i3].first + N) % N,
                              y3 = (y + off.d[i3].second + N) % N;
                    const std::complex<double> u3p = up[size_t(x3) * N + y3];
                    const std::complex<double> u3m = std::conj(u3p);
                    acc += table.coef[base + 3] * u2p * u3p; // (p2,p3)=(+,+)
                    acc += table.coef[base + 2] * u2p * u3m; // (+,-)
                    acc += table.coef[base + 1] * u2m * u3p; // (-,+)
                    acc += table.coef[base + 0] * u2m * u3m; // (-,-)
                }
            }
            const std::complex<double> t_plus = a4 * acc;
            out.at(x, y) = -6.0 * beta * (up[size_t(x) * N + y] * t_plus).imag();
        }
    });
    return out;
}

// total truncated force F^{[<= ell*]}
inline Field force_apply(const ForceTables& tab, int knot, const Field& phi) {
    Field total(tab.spec);
    for (int l = 1; l <= tab.params.ell_star; ++l) total += force_apply_level(tab, knot, phi, l);
    return total;
}

inline Field q_force_apply(const ForceTables& tab, int knot, const Field& phi) {
    const double t = tab.grid.knots[knot];
    return convolve_q(tab.spec, force_apply(tab, knot, phi), t, tab.mass.m);
}

// directional derivative DF^[l](phi) w (= the adjoint: F = DV makes DF symmetric)
inline Field df_apply_level(const ForceTables& tab, int knot, const Field& phi, const Field& w,
                            int level) {
    const LatticeSpec& spec = tab.spec;
    const double beta = tab.params.beta();
    Field out(spec);
    if (level == 1) {
        const double c = -tab.lambda_knot[knot] * beta * beta;
        for (size_t n = 0; n < out.v.size(); ++n)
            out.v[n] = c * tab.rho.v[n] * std::cos(beta * phi.v[n]) * w.v[n];
        return out;
    }
    if (level == 2) {
        cfield up = detail::charge_field(tab, phi, +1);
        cfield um(up.size()), upw(up.size()), umw(up.size());
        for (size_t n = 0; n < up.size(); ++n) {
            um[n] = std::conj(up[n]);
            upw[n] = up[n] * w.v[n];
            umw[n] = um[n] * w.v[n];
        }
        // d/de A(phi + e w): differentiate both vertices
        cfield conv_p = convolve_image(spec, tab.f2_images[knot][0], up);
        cfield conv_m = convolve_image(spec, tab.f2_images[knot][1], um);
        cfield conv_pw = convolve_image(spec, tab.f2_images[knot][0], upw);
        cfield conv_mw = convolve_image(spec, tab.f2_images[knot][1], umw);
        for (size_t n = 0; n < out.v.size(); ++n) {
            const std::complex<double> ib(0.0, beta);
            const std::complex<double> dA = ib * std::complex<double>(w.v[n]) * up[n] *
                                                (conv_p[n] + conv_m[n]) +
                                            up[n] * (ib * conv_pw[n] - ib * conv_mw[n]);
            out.v[n] = -4.0 * beta * dA.imag();
        }
        return out;
    }
    // level 3
    const auto& table = detail::f3_knot_table(tab, knot);
    const auto off = detail::f3_offsets(tab);
    cfield up = detail::charge_field(tab, phi, +1);
    const int N = spec.N;
    const double a4 = std::pow(spec.a, 4);
    parallel_for(N, [&](int x) {
        for (int y = 0; y < N; ++y) {
            std::complex<double> t_acc = 0.0, dt_acc = 0.0;
            for (size_t i2 = 0; i2 < off.d.size(); ++i2) {
                const int x2 = (x + off.d[i2].first + N) % N, y2 = (y + off.d[i2].second + N) % N;
                const std::complex<double> u2p = up[size_t(x2) * N + y2];
                const double w2 = w.at(x2, y2);
                for (size_t i3 = 0; i3 < off.d.size(); ++i3) {
                    const size_t base = (i2 * off.d.size() + i3) * 4;
                    const double c_mm = table.coef[base + 0], c_mp = table.coef[base + 1],
                                 c_pm = table.coef[base + 2], c_pp = table.coef[base + 3];
                    if (c_mm == 0.0 && c_mp == 0.0 && c_pm == 0.0 && c_pp == 0.0) continue;
                    const int x3 = (x + off.d[i3].first + N) % N,
                              y3 = (y + off.d[i3].second + N) % N;
                    const std::complex<double> u3p = up[size_t(x3) * N + y3];
                    const double w3 = w.at(x3, y3);
                    auto term = [&](double coef, int p2, int p3) {
                        if (coef == 0.0) return;
                        const std::complex<double> f2v = p2 > 0 ? u2p : std::conj(u2p);
                        const std::complex<double> f3v = p3 > 0 ? u3p : std::conj(u3p);
                        const std::complex<double> prod = coef * f2v * f3v;
                        t_acc += prod;
                        dt_acc += prod * std::complex<double>(0.0, beta * (p2 * w2 + p3 * w3));
                    };
                    term(c_mm, -1, -1);
                    term(c_mp, -1, +1);
                    term(c_pm, +1, -1);
                    term(c_pp, +1, +1);
                }
            }
            const std::complex<double> u1 = up[size_t(x) * N + y];
            const std::complex<double> ibw(0.0, beta * w.at(x, y));
            out.at(x, y) =
                -6.0 * beta * (ibw * u1 * (a4 * t_acc) + u1 * (a4 * dt_acc)).imag();
        }
    });
    return out;
}

inline Field df_apply(const ForceTables& tab, int knot, const Field& phi, const Field& w) {
    Field total(tab.spec);
    for (int l = 1; l <= tab.params.ell_star; ++l)
        total += df_apply_level(tab, knot, phi, w, l);
    return total;
}

// DF(phi) applied to Gdot_t R (the backward-equation coefficient)
inline Field df_gdot_apply(const ForceTables& tab, int knot, const Field& phi, const Field& R) {
    const double t = tab.grid.knots[knot];
    if (!(t > 0)) return Field(tab.spec);
    return df_apply(tab, knot, phi, convolve_gdot(tab.spec, R, t, tab.mass.m));
}

// FBSDE source H_t = -(1/2) sum_{l'+l''>ell*, l',l''<=ell*} D(F^[l'] Gdot_t F^[l''])
// = -sum over ordered pairs of DF^[l'](phi)[Gdot_t F^[l'']] (DF symmetric)
inline Field h_source(const ForceTables& tab, int knot, const Field& phi) {
    const double t = tab.grid.knots[knot];
    Field out(tab.spec);
    if (!(t > 0)) return out;
    const int ls = tab.params.ell_star;
    std::vector<Field> forces(ls + 1, Field(tab.spec));
    std::vector<Field> gdot_forces(ls + 1, Field(tab.spec));
    for (int l = 1; l <= ls; ++l) {
        forces[l] = force_apply_level(tab, knot, phi, l);
        gdot_forces[l] = convolve_gdot(tab.spec, forces[l], t, tab.mass.m);
    }
    for (int a = 1; a <= ls; ++a)
        for (int b = 1; b <= ls; ++b) {
            if (a + b <= ls) continue;
            out -= df_apply_level(tab, knot, phi, gdot_forces[b], a);
        }
    return out;
}

// potential-level remainder: scalar
//   H_t(phi) = -(1/2) sum_{l'+l''>ell*} a^2 sum_x F^[l'](x) (Gdot_t * F^[l''])(x)
inline double potential_remainder(const ForceTables& tab, int knot, const Field& phi) {
    const double t = tab.grid.knots[knot];
    if (!(t > 0)) return 0.0;
    const int ls = tab.params.ell_star;
    std::vector<Field> forces(ls + 1, Field(tab.spec));
    std::vector<Field> gdot_forces(ls + 1, Field(tab.spec));
    for (int l = 1; l <= ls; ++l) {
        forces[l] = force_apply_level(tab, knot, phi, l);
        gdot_forces[l] = convolve_gdot(tab.spec, forces[l], t, tab.mass.m);
    }
    const double a2 = tab.spec.a * tab.spec.a;
    double total = 0.0;
    for (int a = 1; a <= ls; ++a)
        for (int b = 1; b <= ls; ++b) {
            if (a + b <= ls) continue;
            double pair = 0.0;
            for (size_t n = 0; n < phi.v.size(); ++n) pair += forces[a].v[n] * gdot_forces[b].v[n];
            total -= 0.5 * a2 * pair;
        }
    return total;
}

// truncated potential V^{[<=2]}(phi) (levels beyond 2 are not assembled; used
// by the terminal-consistency tests where higher tables vanish anyway)
inline double potential_value(const ForceTables& tab, int knot, const Field& phi) {
    const double beta = tab.params.beta();
    const double a2 = tab.spec.a * tab.spec.a;
    double v1 = 0.0;
    for (size_t n = 0; n < phi.v.size(); ++n)
        v1 += tab.rho.v[n] * std::cos(beta * phi.v[n]);
    v1 *= tab.lambda_knot[knot] * a2;
    if (tab.params.ell_star < 2) return v1;
    cfield up = detail::charge_field(tab, phi, +1);
    cfield um(up.size());
    for (size_t n = 0; n < up.size(); ++n) um[n] = std::conj(up[n]);
    cfield A = detail::f2_bracket(tab, knot, up, um);
    double v2 = 0.0;
    for (auto& z : A) v2 += 2.0 * z.real();
    return v1 + v2 * a2;
}

// f^[1] coefficient of Eq (3.16)-type normalisation: -lambda_t beta / (2i)
inline std::complex<double> f1_coefficient(const ForceTables& tab, int knot) {
    return std::complex<double>(0.0, 0.5 * tab.params.beta() * tab.lambda_knot[knot]);
}

// ---------------------------------------------------------------------------
// Diagnostic norm of Lemma 3.5: ||| f2^{(0)} k_t |||_t with the kernel (3.25)
// at alpha = 1/2, c = 0.2, tree weight zeta = 0.5:
//   sup_x1 int dx2 |f2(r)| t^{1/2} r e^{0.2 t r^2} e^{zeta m r}
//   = 2 pi int_0^{rmax} dr r^2 |f2(r)| t^{1/2} e^{0.2 t r^2 + zeta m r}

inline double f2_neutral_diagnostic_norm(const ForceTables& tab, int knot) {
    const double t = tab.grid.knots[knot];
    const double zeta = 0.5, alpha_factor = std::sqrt(std::max(t, 0.0)), c = 0.2;
    auto integrand = [&](double r) {
        // linear interpolation on the dump table
        const double a = tab.spec.a;
        const size_t j = std::min(size_t(r / a), tab.dump_radii.size() - 2);
        const double frac = (r - tab.dump_radii[j]) / a;
        const double f2 = (1.0 - frac) * tab.f2_dump[knot][1][j] +
                          frac * tab.f2_dump[knot][1][j + 1];
        return 2.0 * pi * r * r * std::abs(f2) * alpha_factor *
               std::exp(c * t * r * r + zeta * tab.mass.m * r);
    };
    return integrate(integrand, 0.0, tab.dump_radii.back(), 1e-8);
}

// ---------------------------------------------------------------------------
// CSV dumps (External Interfaces)

inline void write_lambda_csv(const ForceTables& tab, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("write_lambda_csv: cannot open " + path);
    std::fprintf(fp, "t,lambda_t\n");
    for (size_t i = 0; i < tab.grid.knots.size(); ++i)
        std::fprintf(fp, "%.17g,%.17g\n", tab.grid.knots[i], tab.lambda_knot[i]);
    std::fclose(fp);
}

inline void write_f2_csv(const ForceTables& tab, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("write_f2_csv: cannot open " + path);
    std::fprintf(fp, "t,r,sector,value\n");
    for (size_t i = 0; i < tab.grid.knots.size(); ++i)
        for (int sec = 0; sec < 2; ++sec)
            for (size_t j = 0; j < tab.dump_radii.size(); ++j)
                std::fprintf(fp, "%.17g,%.17g,%+d,%.17g\n", tab.grid.knots[i], tab.dump_radii[j],
                             sec == 0 ? 1 : -1, tab.f2_dump[i][sec][j]);
    std::fclose(fp);
}

namespace detail {

inline const F3KnotTable& f3_knot_table(const ForceTables& tab, int knot) {
    static std::mutex mu;
    static std::map<std::pair<const ForceTables*, int>, F3KnotTable> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(&tab, knot);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    const auto off = f3_offsets(tab);
    F3KnotTable table;
    table.coef.assign(off.d.size() * off.d.size() * 4, 0.0);
    const int P = int(off.d.size());
    std::vector<double> buf(table.coef.size());
    parallel_for(P, [&](int i2) {
        for (int i3 = 0; i3 < P; ++i3) {
            const std::vector<std::pair<int, int>> sites = {
                {0, 0},
                {(off.d[i2].first + tab.spec.N) % tab.spec.N,
                 (off.d[i2].second + tab.spec.N) % tab.spec.N},
                {(off.d[i3].first + tab.spec.N) % tab.spec.N,
                 (off.d[i3].second + tab.spec.N) % tab.spec.N}};
            for (int p2 = 0; p2 < 2; ++p2)
                for (int p3 = 0; p3 < 2; ++p3) {
                    ChargeVector cv{{+1, p2 ? +1 : -1, p3 ? +1 : -1}};
                    buf[(size_t(i2) * P + i3) * 4 + p2 * 2 + p3] =
                        f3_evaluate(tab, knot, sites, cv);
                }
        }
    });
    table.coef = std::move(buf);
    return cache.emplace(key, std::move(table)).first->second;
}

} // namespace detail

} // namespace sgflow
