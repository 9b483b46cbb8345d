#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgflow/lattice.hpp"
#include "sgflow/quadrature.hpp"

namespace sgflow {

struct MassParam {
    double m = 1.0;
    void validate() const {
        if (!(m > 0)) throw std::invalid_argument("mass must be positive");
    }
};

// ---------------------------------------------------------------------------
// Heat-kernel scale decomposition of (m^2 - Delta)^{-1}:
//   Q_t(k)    = t^{-1} exp(-(m^2+|k|^2)/(2t))
//   Gdot_t(k) = t^{-2} exp(-(m^2+|k|^2)/t)      (= Q_t(k)^2)
//   G_t(k)    = (m^2+|k|^2)^{-1} exp(-(m^2+|k|^2)/t)
// with kappa := m^2 + |k|^2 evaluated on discrete momenta.

inline double q_hat(double t, double kappa) {
    return t > 0 ? std::exp(-0.5 * kappa / t) / t : 0.0;
}

inline double gdot_hat(double t, double kappa) {
    return t > 0 ? std::exp(-kappa / t) / (t * t) : 0.0;
}

inline double g_hat(double t, double kappa) {
    return t > 0 ? std::exp(-kappa / t) / kappa : 0.0;
}

inline double g_hat_inf(double kappa) { return 1.0 / kappa; }

// closed-form antiderivative: int_{t1}^{t2} gdot_hat(s) ds, t2 may be +inf
inline double g_hat_diff(double t1, double t2, double kappa) {
    const double hi = std::isinf(t2) ? 1.0 : std::exp(-kappa / t2);
    const double lo = t1 > 0 ? std::exp(-kappa / t1) : 0.0;
    return (hi - lo) / kappa;
}

// real-space kernels of Eq-(2.4) type profiles
inline double gdot_realspace(double t, double r, double m) {
    if (!(t > 0)) throw std::invalid_argument("gdot_realspace: t must be positive");
    return std::exp(-m * m / t - 0.25 * t * r * r) / (4.0 * pi * t);
}

inline double q_realspace(double t, double r, double m) {
    if (!(t > 0)) throw std::invalid_argument("q_realspace: t must be positive");
    return std::exp(-0.5 * m * m / t - 0.5 * t * r * r) / (2.0 * pi);
}

// ---------------------------------------------------------------------------
// Scale grid: 0 = t_0 < ... < t_K = T, uniform on [0,1], geometric above.

struct ScaleGrid {
    std::vector<double> knots;

    double T() const { return knots.back(); }
    int intervals() const { return int(knots.size()) - 1; }

    // geometric ratio 2^{1/4} above t = 1, head_intervals uniform knots on [0,1];
    // refine > 1 subdivides every interval
    static ScaleGrid standard(double T, int head_intervals = 8, double ratio = std::pow(2.0, 0.25),
                              int refine = 1) {
        if (!(T > 0)) throw std::invalid_argument("scale grid: T must be positive");
        ScaleGrid g;
        std::vector<double> base;
        base.push_back(0.0);
        const double head_top = std::min(1.0, T);
        for (int i = 1; i <= head_intervals; ++i) base.push_back(head_top * i / head_intervals);
        if (T > 1.0) {
            double t = 1.0;
            while (t * ratio < T * (1.0 - 1e-12)) {
                t *= ratio;
                base.push_back(t);
            }
            base.push_back(T);
        }
        for (size_t i = 0; i + 1 < base.size(); ++i) {
            for (int r = 0; r < refine; ++r)
                g.knots.push_back(base[i] + (base[i + 1] - base[i]) * r / refine);
        }
        g.knots.push_back(base.back());
        g.validate();
        return g;
    }

    void validate() const {
        if (knots.size() < 2 || knots.front() != 0.0)
            throw std::invalid_argument("scale grid: need knots starting at 0");
        for (size_t i = 0; i + 1 < knots.size(); ++i)
            if (!(knots[i] < knots[i + 1]))
                throw std::invalid_argument("scale grid: knots must increase strictly");
    }

    int index_of(double t) const {
        for (size_t i = 0; i < knots.size(); ++i)
            if (std::abs(knots[i] - t) <= 1e-12 * (1.0 + t)) return int(i);
        throw std::invalid_argument("scale grid: t is not a knot");
    }
};

// ---------------------------------------------------------------------------
// Diagonal of G_t: lattice mode sum and continuum quadrature for comparison.

inline double green_diag_lattice(double t, double m, const LatticeSpec& spec) {
    if (!(t > 0)) return 0.0;
    double s = 0.0;
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j) s += g_hat(t, m * m + spec.k_squared(i, j));
    return s / (spec.L() * spec.L());
}

inline double green_diag_lattice_inf(double m, const LatticeSpec& spec) {
    double s = 0.0;
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j) s += g_hat_inf(m * m + spec.k_squared(i, j));
    return s / (spec.L() * spec.L());
}

// continuum G_t(0) = int_0^t (4 pi s)^{-1} e^{-m^2/s} ds = (4 pi)^{-1} E_1(m^2/t)
inline double green_diag_continuum(double t, double m) {
    if (!(t > 0)) return 0.0;
    return expint_e1(m * m / t) / (4.0 * pi);
}

// continuum radial values (G_t2 - G_t1)(r) = int_{t1}^{t2} Gdot_s(r) ds;
// integrated in log s so wide scale ranges cannot hide the integrand's bump
inline double green_radial_diff_continuum(double t1, double t2, double r, double m) {
    if (!(t2 > t1)) return 0.0;
    if (r == 0.0) return t1 > 0 ? green_diag_continuum(t2, m) - green_diag_continuum(t1, m)
                                : green_diag_continuum(t2, m);
    const double lo = std::max(t1, 1e-12);
    return integrate([&](double u) {
        const double s = std::exp(u);
        return s * gdot_realspace(s, r, m);
    }, std::log(lo), std::log(t2), 1e-10);
}

// ---------------------------------------------------------------------------
// Spectral convolutions (pure multiplier application; linear in f).

inline Field convolve_gdot(const LatticeSpec& spec, const Field& f, double t, double m) {
    if (!(t > 0)) throw std::invalid_argument("convolve_gdot: t must be positive");
    return apply_multiplier(spec, f, [&](double k2) { return gdot_hat(t, m * m + k2); });
}

inline Field convolve_q(const LatticeSpec& spec, const Field& f, double t, double m) {
    if (!(t > 0)) throw std::invalid_argument("convolve_q: t must be positive");
    return apply_multiplier(spec, f, [&](double k2) { return q_hat(t, m * m + k2); });
}

// int_{t1}^{t2} Gdot_s ds applied as one exact multiplier
inline Field convolve_g_diff(const LatticeSpec& spec, const Field& f, double t1, double t2,
                             double m) {
    return apply_multiplier(spec, f, [&](double k2) { return g_hat_diff(t1, t2, m * m + k2); });
}

// real-space image K(x) = L^{-2} sum_k K_hat(k) e^{ikx} of a multiplier
template <class Mult>
inline Field multiplier_image(const LatticeSpec& spec, Mult&& mult) {
    SpectralField g(spec);
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j) g.at(i, j) = mult(spec.k_squared(i, j));
    Field img = from_spectral(g);
    const double inv_a2 = 1.0 / (spec.a * spec.a);
    for (double& x : img.v) x *= inv_a2;
    return img;
}

inline Field green_image_lattice(const LatticeSpec& spec, double t, double m) {
    return multiplier_image(spec, [&](double k2) { return g_hat(t, m * m + k2); });
}

inline Field green_image_lattice_inf(const LatticeSpec& spec, double m) {
    return multiplier_image(spec, [&](double k2) { return g_hat_inf(m * m + k2); });
}

inline Field gdot_image_lattice(const LatticeSpec& spec, double t, double m) {
    return multiplier_image(spec, [&](double k2) { return gdot_hat(t, m * m + k2); });
}

// ---------------------------------------------------------------------------
// Weighted kernel moments (test-suite diagnostics for the Appendix-A scaling):
// int |x|^{2 alpha} K_t(x) e^{gamma m |x|} dx over R^2, K in {Gdot, Q}.

enum class KernelKind { Gdot, Q };

inline double kernel_moment(double t, double alpha, double gamma, double m,
                            KernelKind kind = KernelKind::Gdot) {
    if (!(t > 0)) throw std::invalid_argument("kernel_moment: t must be positive");
    if (alpha <= -1.0) throw std::invalid_argument("kernel_moment: alpha <= -1 diverges");
    if (!(gamma > -1.0 && gamma < 1.0))
        throw std::invalid_argument("kernel_moment: gamma must lie in (-1,1)");
    auto radial = [&](double r) {
        const double k = kind == KernelKind::Gdot ? gdot_realspace(t, r, m) : q_realspace(t, r, m);
        return 2.0 * pi * std::pow(r, 2.0 * alpha + 1.0) * k * std::exp(gamma * m * r);
    };
    const double width = kind == KernelKind::Gdot ? 2.0 / std::sqrt(t) : std::sqrt(2.0 / t);
    // Gaussian tail is dead beyond ~60 widths even with the exponential weight
    const double cut = 60.0 * width + 60.0 * std::abs(gamma) * m / t + 1.0;
    return integrate(radial, 0.0, cut, 1e-9);
}

} // namespace sgflow
