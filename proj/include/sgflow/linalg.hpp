#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sgflow {

// dense symmetric positive definite solve via Cholesky (small systems)
inline std::vector<double> solve_spd(std::vector<double> A, std::vector<double> b) {
    const size_t n = b.size();
    if (A.size() != n * n) throw std::invalid_argument("solve_spd: dimension mismatch");
    // in-place LL^T with diagonal ridge fallback
    for (size_t attempt = 0;; ++attempt) {
        std::vector<double> L = A;
        bool ok = true;
        for (size_t i = 0; i < n && ok; ++i) {
            for (size_t j = 0; j <= i; ++j) {
                double s = L[i * n + j];
                for (size_t k = 0; k < j; ++k) s -= L[i * n + k] * L[j * n + k];
                if (i == j) {
                    if (s <= 0) {
                        ok = false;
                        break;
                    }
                    L[i * n + i] = std::sqrt(s);
                } else {
                    L[i * n + j] = s / L[j * n + j];
                }
            }
        }
        if (ok) {
            std::vector<double> y(n), x(n);
            for (size_t i = 0; i < n; ++i) {
                double s = b[i];
                for (size_t k = 0; k < i; ++k) s -= L[i * n + k] * y[k];
                y[i] = s / L[i * n + i];
            }
            for (size_t ii = n; ii-- > 0;) {
                double s = y[ii];
                for (size_t k = ii + 1; k < n; ++k) s -= L[k * n + ii] * x[k];
                x[ii] = s / L[ii * n + ii];
            }
            return x;
        }
        if (attempt >= 12) throw std::runtime_error("solve_spd: matrix not positive definite");
        double trace = 0;
        for (size_t i = 0; i < n; ++i) trace += A[i * n + i];
        const double ridge = std::max(1e-12 * trace / double(n), 1e-300) * std::pow(10.0, double(attempt));
        for (size_t i = 0; i < n; ++i) A[i * n + i] += ridge;
    }
}

// eigenvalues of a symmetric matrix by cyclic Jacobi rotations (small n)
inline std::vector<double> symmetric_eigenvalues(std::vector<double> A, size_t n) {
    if (A.size() != n * n) throw std::invalid_argument("symmetric_eigenvalues: bad size");
    auto at = [&](size_t i, size_t j) -> double& { return A[i * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-30) break;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(n);
    for (size_t i = 0; i < n; ++i) ev[i] = at(i, i);
    return ev;
}

} // namespace sgflow
