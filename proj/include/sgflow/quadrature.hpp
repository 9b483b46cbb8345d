#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace sgflow {

namespace detail {

// 15-point Kronrod / 7-point Gauss pair (QUADPACK dqk15 constants)
inline constexpr double gk_xgk[8] = {
    0.9914553711208126, 0.9491079123427585, 0.8648644233597691, 0.7415311855993944,
    0.5860872354676911, 0.4058451513773972, 0.2077849550078985, 0.0};
inline constexpr double gk_wgk[8] = {
    0.0229353220105292, 0.0630920926299786, 0.1047900103222502, 0.1406532597155259,
    0.1690047266392679, 0.1903505780647854, 0.2044329400752989, 0.2094821410847278};
inline constexpr double gk_wg[4] = {0.1294849661688697, 0.2797053914892767,
                                    0.3818300505051189, 0.4179591836734694};

template <class F>
inline void gk15(const F& f, double a, double b, double& result, double& err) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    const double fc = f(c);
    double res_g = gk_wg[3] * fc;
    double res_k = gk_wgk[7] * fc;
    for (int i = 0; i < 7; ++i) {
        const double x = h * gk_xgk[i];
        const double fsum = f(c - x) + f(c + x);
        res_k += gk_wgk[i] * fsum;
        if (i % 2 == 1) res_g += gk_wg[i / 2] * fsum;
    }
    result = res_k * h;
    err = std::abs((res_k - res_g) * h);
}

template <class F>
inline double adaptive_gk(const F& f, double a, double b, double rel_tol, double abs_tol,
                          int depth) {
    double res, err;
    gk15(f, a, b, res, err);
    if (err <= abs_tol || err <= rel_tol * std::abs(res) || depth >= 48) return res;
    const double c = 0.5 * (a + b);
    return adaptive_gk(f, a, c, rel_tol, 0.5 * abs_tol, depth + 1) +
           adaptive_gk(f, c, b, rel_tol, 0.5 * abs_tol, depth + 1);
}

} // namespace detail

template <class F>
inline double integrate(const F& f, double a, double b, double rel_tol = 1e-9,
                        double abs_tol = 1e-300) {
    if (!(b > a)) return 0.0;
    return detail::adaptive_gk(f, a, b, rel_tol, abs_tol, 0);
}

// integral over [a, infinity) via x = a + t/(1-t)
template <class F>
inline double integrate_to_inf(const F& f, double a, double rel_tol = 1e-9) {
    auto mapped = [&](double t) {
        const double one_m = 1.0 - t;
        const double x = a + t / one_m;
        return f(x) / (one_m * one_m);
    };
    return integrate(mapped, 0.0, 1.0, rel_tol);
}

// exponential integral E1(x), x > 0
inline double expint_e1(double x) {
    if (!(x > 0)) throw std::invalid_argument("expint_e1: x must be positive");
    if (x <= 1.0) {
        constexpr double euler_gamma = 0.57721566490153286060651209008240;
        double sum = 0.0, term = 1.0;
        for (int k = 1; k <= 60; ++k) {
            term *= -x / k;
            const double add = -term / k;
            sum += add;
            if (std::abs(add) < 1e-18 * std::abs(sum)) break;
        }
        return -euler_gamma - std::log(x) + sum;
    }
    // modified Lentz continued fraction
    double b = x + 1.0, c = 1e308, d = 1.0 / b, h = d;
    for (int i = 1; i <= 200; ++i) {
        const double an = -double(i) * double(i);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-307) d = 1e-307;
        c = b + an / c;
        if (std::abs(c) < 1e-307) c = 1e-307;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x);
}

// Gauss-Hermite rule: sum_i w_i f(x_i) = int e^{-x^2} f(x) dx.
// Works with the weighted functions psi_k = h_k e^{-x^2/2} (orthonormal h_k),
// which stay O(1), so the rule is stable at n = 200. Roots located by a sign
// scan plus bisection; weights via the Christoffel identity
// w_i = 1 / sum_{k<n} h_k(x_i)^2 = e^{-x_i^2} / sum_{k<n} psi_k(x_i)^2.
struct GaussHermite {
    std::vector<double> x, w;

    explicit GaussHermite(int n) : x(n), w(n) {
        constexpr double h0 = 0.7511255444649425; // pi^{-1/4}
        auto psi_n = [n](double z) {
            double pm = 0.0, p0 = h0 * std::exp(-0.5 * z * z);
            for (int k = 0; k < n; ++k) {
                const double pk = z * std::sqrt(2.0 / (k + 1)) * p0 -
                                  std::sqrt(double(k) / (k + 1)) * pm;
                pm = p0;
                p0 = pk;
            }
            return p0;
        };
        const double zmax = std::sqrt(2.0 * n + 1.0) + 1.0;
        const double min_gap = std::numbers::pi / std::sqrt(2.0 * n + 1.0); // central spacing
        const double step = 0.125 * min_gap;
        int found = 0;
        double z_prev = zmax, f_prev = psi_n(z_prev);
        for (double z = zmax - step; found < (n + 1) / 2 && z > -step; z -= step) {
            double f = psi_n(z);
            if ((f_prev <= 0) != (f <= 0)) {
                double lo = z, hi = z_prev;
                for (int it = 0; it < 80; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    if ((psi_n(mid) <= 0) == (f <= 0))
                        lo = mid;
                    else
                        hi = mid;
                    if (hi - lo < 1e-15 * (1.0 + std::abs(mid))) break;
                }
                const double root = 0.5 * (lo + hi);
                x[found] = root;
                x[n - 1 - found] = -root;
                ++found;
            }
            z_prev = z;
            f_prev = f;
        }
        if (found < (n + 1) / 2) throw std::runtime_error("GaussHermite: root scan failed");
        for (int i = 0; i < (n + 1) / 2; ++i) {
            const double z = x[i];
            double pm = 0.0, p0 = h0 * std::exp(-0.5 * z * z);
            double s = p0 * p0;
            for (int k = 0; k < n - 1; ++k) {
                const double pk = z * std::sqrt(2.0 / (k + 1)) * p0 -
                                  std::sqrt(double(k) / (k + 1)) * pm;
                pm = p0;
                p0 = pk;
                s += p0 * p0;
            }
            w[i] = std::exp(-z * z - std::log(s));
            w[n - 1 - i] = w[i];
        }
    }

    // E[f(xi)] for xi ~ N(mu, sigma^2)
    template <class F>
    double gaussian_mean(const F& f, double mu, double sigma) const {
        constexpr double inv_sqrt_pi = 0.5641895835477562869480794515608;
        double s = 0.0;
        const double c = std::sqrt(2.0) * sigma;
        for (size_t i = 0; i < x.size(); ++i) s += w[i] * f(mu + c * x[i]);
        return s * inv_sqrt_pi;
    }
};

} // namespace sgflow
