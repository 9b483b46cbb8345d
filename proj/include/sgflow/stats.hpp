#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sgflow {

inline double mean(const std::vector<double>& x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
}

inline double variance(const std::vector<double>& x) {
    const double mu = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - mu) * (v - mu);
    return s / double(x.size() - 1);
}

inline double std_error(const std::vector<double>& x) {
    return std::sqrt(variance(x) / double(x.size()));
}

struct LinearFit {
    double slope = 0, intercept = 0, slope_se = 0, r_squared = 0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y,
                            const std::vector<double>& w = {}) {
    const size_t n = x.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("linear_fit: need matching n >= 2");
    std::vector<double> ww = w.empty() ? std::vector<double>(n, 1.0) : w;
    double sw = 0, sx = 0, sy = 0;
    for (size_t i = 0; i < n; ++i) {
        sw += ww[i];
        sx += ww[i] * x[i];
        sy += ww[i] * y[i];
    }
    const double xb = sx / sw, yb = sy / sw;
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += ww[i] * (x[i] - xb) * (x[i] - xb);
        sxy += ww[i] * (x[i] - xb) * (y[i] - yb);
        syy += ww[i] * (y[i] - yb) * (y[i] - yb);
    }
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = yb - fit.slope * xb;
    double ss_res = 0;
    for (size_t i = 0; i < n; ++i) {
        const double r = y[i] - fit.intercept - fit.slope * x[i];
        ss_res += ww[i] * r * r;
    }
    fit.r_squared = syy > 0 ? 1.0 - ss_res / syy : 1.0;
    if (n > 2) fit.slope_se = std::sqrt(ss_res / (double(n - 2) * sxx));
    return fit;
}

inline LinearFit loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx(x.size()), ly(y.size());
    for (size_t i = 0; i < x.size(); ++i) {
        lx[i] = std::log(x[i]);
        ly[i] = std::log(std::abs(y[i]));
    }
    return linear_fit(lx, ly);
}

inline std::vector<double> ranks(const std::vector<double>& x) {
    std::vector<size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (size_t pos = 0; pos < idx.size();) {
        size_t stop = pos;
        while (stop + 1 < idx.size() && x[idx[stop + 1]] == x[idx[pos]]) ++stop;
        const double avg = 0.5 * (pos + stop) + 1.0;
        for (size_t k = pos; k <= stop; ++k) r[idx[k]] = avg;
        pos = stop + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const auto rx = ranks(x), ry = ranks(y);
    const double mx = mean(rx), my = mean(ry);
    double num = 0, dx = 0, dy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    return num / std::sqrt(dx * dy);
}

// ---------------------------------------------------------------------------
// Unbiased k-statistics (estimators of cumulants) with delete-1 jackknife.

struct Cumulants {
    double k2 = 0, k3 = 0, k4 = 0;
    double k2_se = 0, k3_se = 0, k4_se = 0;
};

namespace detail {

inline void kstats(const std::vector<double>& x, double& k2, double& k3, double& k4) {
    const double n = double(x.size());
    const double mu = mean(x);
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : x) {
        const double d = v - mu;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    k2 = n / (n - 1) * m2;
    k3 = n * n / ((n - 1) * (n - 2)) * m3;
    k4 = n * n * ((n + 1) * m4 - 3 * (n - 1) * m2 * m2) / ((n - 1) * (n - 2) * (n - 3));
}

} // namespace detail

inline Cumulants connected_cumulants_1d(const std::vector<double>& x, int jackknife_blocks = 50) {
    if (x.size() < 8)
        throw std::invalid_argument("connected_cumulants: need at least 8 samples");
    Cumulants c;
    detail::kstats(x, c.k2, c.k3, c.k4);
    const int nb = std::min<int>(jackknife_blocks, int(x.size() / 4));
    std::vector<double> j2(nb), j3(nb), j4(nb);
    for (int b = 0; b < nb; ++b) {
        std::vector<double> sub;
        sub.reserve(x.size());
        for (size_t i = 0; i < x.size(); ++i)
            if (int(i % nb) != b) sub.push_back(x[i]);
        detail::kstats(sub, j2[b], j3[b], j4[b]);
    }
    auto jse = [nb](const std::vector<double>& j) {
        const double mu = mean(j);
        double s = 0;
        for (double v : j) s += (v - mu) * (v - mu);
        return std::sqrt(s * double(nb - 1) / double(nb));
    };
    c.k2_se = jse(j2);
    c.k3_se = jse(j3);
    c.k4_se = jse(j4);
    return c;
}

// effective sample size of self-normalised importance weights
inline double ess_weights(const std::vector<double>& w) {
    double s = 0, s2 = 0;
    for (double v : w) {
        s += v;
        s2 += v * v;
    }
    return s * s / s2;
}

// integrated autocorrelation time with Sokal's automatic window (c = 6)
inline double autocorr_time(const std::vector<double>& x) {
    const size_t n = x.size();
    if (n < 16) return 1.0;
    const double mu = mean(x);
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = x[i] - mu;
    double c0 = 0;
    for (double v : d) c0 += v * v;
    c0 /= double(n);
    if (c0 <= 0) return 1.0;
    double tau = 1.0;
    for (size_t lag = 1; lag < n / 2; ++lag) {
        double ck = 0;
        for (size_t i = 0; i + lag < n; ++i) ck += d[i] * d[i + lag];
        ck /= double(n - lag);
        tau += 2.0 * ck / c0;
        if (double(lag) >= 6.0 * tau) break;
    }
    return std::max(1.0, tau);
}

inline double two_sample_z(double m1, double se1, double m2, double se2) {
    return (m1 - m2) / std::sqrt(se1 * se1 + se2 * se2);
}

} // namespace sgflow
