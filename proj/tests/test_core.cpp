#include <catch2/catch_amalgamated.hpp>

#include "sgflow/kernels.hpp"
#include "sgflow/lattice.hpp"
#include "sgflow/quadrature.hpp"
#include "sgflow/rng.hpp"
#include "sgflow/stats.hpp"

#include <cstdio>
#include <random>

using namespace sgflow;

namespace {

Field random_field(const LatticeSpec& spec, uint64_t seed) {
    Rng rng(seed, 0);
    Field f(spec);
    for (double& x : f.v) x = rng.gaussian();
    return f;
}

} // namespace

TEST_CASE("philox known-answer vectors") {
    auto r0 = Philox4x32::block({0, 0, 0, 0}, {0, 0});
    CHECK(r0[0] == 0x6627e8d5u);
    CHECK(r0[1] == 0xe169c58du);
    CHECK(r0[2] == 0xbc57ac4cu);
    CHECK(r0[3] == 0x9b00dbd8u);

    auto r1 = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                {0xffffffffu, 0xffffffffu});
    CHECK(r1[0] == 0x408f276du);
    CHECK(r1[1] == 0x41c83b0eu);
    CHECK(r1[2] == 0xa20bc7c6u);
    CHECK(r1[3] == 0x6d5451fdu);

    auto r2 = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                {0xa4093822u, 0x299f31d0u});
    CHECK(r2[0] == 0xd16cfe09u);
    CHECK(r2[1] == 0x94fdccebu);
    CHECK(r2[2] == 0x5001e420u);
    CHECK(r2[3] == 0x24126ea1u);
}

TEST_CASE("rng streams are independent and reproducible") {
    Rng a(42, 7), b(42, 7), c(42, 8);
    for (int i = 0; i < 100; ++i) {
        const uint64_t x = a.next_u64();
        CHECK(x == b.next_u64());
    }
    bool any_diff = false;
    Rng a2(42, 7);
    for (int i = 0; i < 100; ++i) any_diff |= (a2.next_u64() != c.next_u64());
    CHECK(any_diff);
}

TEST_CASE("rng gaussian moments") {
    Rng rng(1, 0);
    const int n = 200000;
    double s = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        s += g;
        s2 += g * g;
        s4 += g * g * g * g;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
    CHECK(std::abs(s4 / n - 3.0) < 0.1);
}

TEST_CASE("transform: DC mode, round trip, Parseval") {
    LatticeSpec spec{16, 0.5};
    spec.validate();

    Field c(spec, 2.5);
    SpectralField ch = to_spectral(c);
    CHECK(ch.at(0, 0).real() == Catch::Approx(2.5 * spec.size()).epsilon(1e-13));
    double off = 0;
    for (int i = 0; i < spec.N; ++i)
        for (int j = 0; j < spec.N; ++j)
            if (i || j) off = std::max(off, std::abs(ch.at(i, j)));
    CHECK(off < 1e-10);

    for (uint64_t seed = 0; seed < 100; ++seed) {
        Field f = random_field(spec, seed);
        Field g = from_spectral(to_spectral(f));
        double rel = 0, norm = 0;
        for (size_t n = 0; n < f.v.size(); ++n) {
            rel = std::max(rel, std::abs(f.v[n] - g.v[n]));
            norm = std::max(norm, std::abs(f.v[n]));
        }
        REQUIRE(rel / norm < 1e-12);
    }

    Field f = random_field(spec, 3);
    SpectralField fh = to_spectral(f);
    double sx = 0, sk = 0;
    for (double x : f.v) sx += x * x;
    for (auto& z : fh.v) sk += std::norm(z);
    CHECK(sx == Catch::Approx(sk / spec.size()).epsilon(1e-12));
}

TEST_CASE("Littlewood-Paley blocks resum to identity and localise modes") {
    LatticeSpec spec{32, 1.0};
    Field zero(spec);
    for (auto& [i, nrm] : besov_block_norms(spec, zero)) CHECK(nrm == 0.0);

    Field f = random_field(spec, 11);
    Field sum(spec);
    for (int b = -1; b <= lp_max_block(spec); ++b) sum += lp_project(spec, f, b);
    double err = 0;
    for (size_t n = 0; n < f.v.size(); ++n) err = std::max(err, std::abs(sum.v[n] - f.v[n]));
    CHECK(err < 1e-10);

    // single Fourier mode at |k| ~ 2^j lands in at most two adjacent blocks
    const int j = 3;
    Field mode(spec);
    for (int i2 = 0; i2 < spec.N; ++i2)
        for (int j2 = 0; j2 < spec.N; ++j2)
            mode.at(i2, j2) = std::cos(2.0 * pi / spec.N * ((1 << j) * i2));
    auto norms = besov_block_norms(spec, mode);
    double tot = 0;
    for (auto& [b, nrm] : norms) tot += nrm;
    double close = 0;
    for (auto& [b, nrm] : norms)
        if (std::abs(b - j) <= 1) close += nrm;
    CHECK(close / tot > 0.999);
}

TEST_CASE("steiner diameter") {
    CHECK(steiner_diameter({{0, 0}, {3, 4}}) == Catch::Approx(5.0));
    CHECK(steiner_diameter({{0, 0}, {1, 0}, {2, 0}}) == Catch::Approx(2.0));
    CHECK(steiner_diameter({{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2}}) ==
          Catch::Approx(std::sqrt(3.0)).epsilon(1e-9));
    // obtuse (>= 120 degrees): two shortest sides
    CHECK(steiner_diameter({{0, 0}, {1, 0}, {-1, 0.05}}) ==
          Catch::Approx(std::hypot(1, 0.05) + 1.0).epsilon(1e-12));
    CHECK_THROWS(steiner_diameter({{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
}

TEST_CASE("steiner vs numerical minimisation over junction point") {
    std::mt19937 gen(5);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<Point2> pts = {{u(gen), u(gen)}, {u(gen), u(gen)}, {u(gen), u(gen)}};
        const double st = steiner_diameter(pts);
        // brute-force the optimal junction on a refined grid
        double best = 1e300;
        double cx = (pts[0].x + pts[1].x + pts[2].x) / 3, cy = (pts[0].y + pts[1].y + pts[2].y) / 3;
        double span = 4.0;
        for (int level = 0; level < 12; ++level) {
            double bx = cx, by = cy;
            for (int a = -20; a <= 20; ++a)
                for (int b = -20; b <= 20; ++b) {
                    const Point2 q{cx + span * a / 20.0, cy + span * b / 20.0};
                    const double len =
                        dist(q, pts[0]) + dist(q, pts[1]) + dist(q, pts[2]);
                    if (len < best) {
                        best = len;
                        bx = q.x;
                        by = q.y;
                    }
                }
            cx = bx;
            cy = by;
            span *= 0.15;
        }
        REQUIRE(st == Catch::Approx(best).epsilon(1e-5));
    }
}

TEST_CASE("steiner invariance under translation and rotation") {
    std::vector<Point2> pts = {{0.3, 0.1}, {1.7, -0.4}, {0.9, 2.2}};
    const double st = steiner_diameter(pts);
    std::vector<Point2> moved;
    for (auto& p : pts) moved.push_back({-p.y + 5.0, p.x - 2.0}); // rotate 90 + translate
    CHECK(steiner_diameter(moved) == Catch::Approx(st).epsilon(1e-12));
}

TEST_CASE("SGF1 snapshot round trip") {
    LatticeSpec spec{8, 0.25};
    Field f = random_field(spec, 77);
    const std::string path = "test_snapshot.sgf1";
    write_sgf1(path, spec, 1.5, 42, f);
    auto snap = read_sgf1(path);
    CHECK(snap.spec.N == 8);
    CHECK(snap.spec.a == 0.25);
    CHECK(snap.m == 1.5);
    CHECK(snap.scale_index == 42);
    for (size_t n = 0; n < f.v.size(); ++n) REQUIRE(snap.field.v[n] == f.v[n]);
    std::remove(path.c_str());
}

TEST_CASE("quadrature: E1 and Gauss-Hermite") {
    CHECK(expint_e1(1.0) == Catch::Approx(0.21938393439552062).epsilon(1e-12));
    CHECK(expint_e1(0.1) == Catch::Approx(1.8229239584193906).epsilon(1e-10));
    CHECK(expint_e1(5.0) == Catch::Approx(0.001148295591275326).epsilon(1e-10));

    GaussHermite gh(200);
    double sw = 0;
    for (double w : gh.w) sw += w;
    CHECK(sw == Catch::Approx(std::sqrt(pi)).epsilon(1e-12));
    // E[xi^2] and E[cos(xi)] for xi ~ N(0, 2.25)
    CHECK(gh.gaussian_mean([](double x) { return x * x; }, 0.0, 1.5) ==
          Catch::Approx(2.25).epsilon(1e-12));
    CHECK(gh.gaussian_mean([](double x) { return std::cos(x); }, 0.0, 1.5) ==
          Catch::Approx(std::exp(-0.5 * 2.25)).epsilon(1e-12));

    CHECK(integrate([](double x) { return std::exp(-x); }, 0.0, 40.0) ==
          Catch::Approx(1.0).epsilon(1e-10));
    CHECK(integrate_to_inf([](double x) { return std::exp(-x * x); }, 0.0) ==
          Catch::Approx(0.5 * std::sqrt(pi)).epsilon(1e-9));
}

TEST_CASE("kernel closed forms") {
    // Gdot_1(0) with m=1: e^{-1}/(4 pi)
    CHECK(gdot_realspace(1.0, 0.0, 1.0) ==
          Catch::Approx(std::exp(-1.0) / (4.0 * pi)).epsilon(1e-14));
    // Gaussian decay at large |x|
    CHECK(gdot_realspace(2.0, 50.0, 1.0) < 1e-200);
    // L1 mass equals the k=0 multiplier: t^{-2} e^{-m^2/t}
    const double mass = kernel_moment(2.0, 0.0, 0.0, 1.0, KernelKind::Gdot);
    CHECK(mass == Catch::Approx(0.25 * std::exp(-0.5)).epsilon(1e-9));
    CHECK(mass == Catch::Approx(gdot_hat(2.0, 1.0)).epsilon(1e-9));
    CHECK(mass == Catch::Approx(0.151632664928158).epsilon(1e-6));

    // continuum diagonal at t=1, m=1: (1/4pi) E_1(1), cross-checked by quadrature
    const double diag = green_diag_continuum(1.0, 1.0);
    const double diag_quad =
        integrate([](double s) { return std::exp(-1.0 / s) / (4.0 * pi * s); }, 1e-6, 1.0, 1e-11);
    CHECK(diag == Catch::Approx(diag_quad).epsilon(1e-8));
    CHECK(diag == Catch::Approx(0.0174580).margin(2e-6));
    CHECK(green_diag_continuum(1e-9, 1.0) < 1e-200);

    // multiplier identity Gdot = Q^2
    for (double kappa : {1.0, 3.7, 10.0})
        for (double t : {0.5, 2.0, 8.0})
            CHECK(gdot_hat(t, kappa) == Catch::Approx(q_hat(t, kappa) * q_hat(t, kappa)));
}

TEST_CASE("semigroup consistency: antiderivative vs quadrature") {
    for (double kappa : {1.0, 5.0}) {
        for (auto [t1, t2] : std::vector<std::pair<double, double>>{{0.5, 2.0}, {1.0, 16.0}}) {
            const double direct = g_hat(t2, kappa) - g_hat(t1, kappa);
            const double quad =
                integrate([&](double s) { return gdot_hat(s, kappa); }, t1, t2, 1e-12);
            REQUIRE(direct == Catch::Approx(quad).epsilon(1e-10));
            REQUIRE(direct == Catch::Approx(g_hat_diff(t1, t2, kappa)).epsilon(1e-13));
        }
    }
    CHECK(g_hat_inf(1.0) == 1.0); // m=1, k=0: G_inf = m^{-2}
}

TEST_CASE("convolutions: linearity, Q*Q = Gdot, delta profile") {
    // box large enough that periodisation images stay below 1% out to |x| = 3
    LatticeSpec spec{64, 0.15625};
    const double m = 1.0, t = 1.0;

    Field zero(spec);
    Field out = convolve_gdot(spec, zero, t, m);
    CHECK(max_abs(out) == 0.0);

    Field f = random_field(spec, 1);
    Field qq = convolve_q(spec, convolve_q(spec, f, t, m), t, m);
    Field gd = convolve_gdot(spec, f, t, m);
    double diff = 0;
    for (size_t n = 0; n < f.v.size(); ++n) diff = std::max(diff, std::abs(qq.v[n] - gd.v[n]));
    CHECK(diff < 1e-12 * max_abs(gd));

    // delta at origin: lattice delta has mass a^{-2}
    Field delta(spec);
    delta.at(0, 0) = 1.0 / (spec.a * spec.a);
    Field img = convolve_gdot(spec, delta, t, m);
    for (int i = 0; i <= 24; ++i) {
        const double r = i * spec.a;
        if (r > 3.0) break;
        REQUIRE(img.at(i, 0) ==
                Catch::Approx(gdot_realspace(t, r, m)).epsilon(0.01));
    }
}

TEST_CASE("Lemma A.1: log asymptotics of the diagonal") {
    const double m = 1.0;
    // continuum diagonal: residual of G_t(0) - log(t)/4pi stays within +-0.05
    // of its best constant over [1, 64]
    std::vector<double> resid;
    for (double t = 1.0; t <= 64.0; t *= 2.0)
        resid.push_back(green_diag_continuum(t, m) - std::log(t) / (4.0 * pi));
    const auto [lo, hi] = std::minmax_element(resid.begin(), resid.end());
    CHECK(0.5 * (*hi - *lo) < 0.05);

    // lattice diagonal tracks the same slope in the resolved window
    LatticeSpec spec{64, 0.0625};
    std::vector<double> ts, gs;
    for (double t = 16.0; t <= 64.0; t *= std::sqrt(2.0)) {
        ts.push_back(std::log(t));
        gs.push_back(green_diag_lattice(t, m, spec));
    }
    const auto fit = linear_fit(ts, gs);
    CHECK(fit.slope == Catch::Approx(1.0 / (4.0 * pi)).margin(0.006));
}

TEST_CASE("Lemma A.1: (G_inf - G_t)(x) log bound over resolved window") {
    const double m = 1.0;
    std::vector<double> resid;
    for (double t : {1.0, 4.0, 16.0})
        for (double x : {0.05, 0.1, 0.2, 0.5, 1.0}) {
            const double c_t = integrate_to_inf(
                [&](double s) { return gdot_realspace(s, x, m); }, t, 1e-10);
            const double lead = std::log(std::max(1.0, 1.0 / (x * x * t))) / (4.0 * pi);
            resid.push_back(c_t - lead);
        }
    const auto [lo, hi] = std::minmax_element(resid.begin(), resid.end());
    CHECK(std::abs(*hi) < 0.2);
    CHECK(std::abs(*lo) < 0.2);
}

TEST_CASE("Lemma A.4 moments: exact value and t-scaling") {
    // alpha=0, gamma=0 exact Gaussian integral checked above; non-trivial alpha:
    // int |x|^{2a} Gdot_t = (4/t)^{a} Gamma(a+1) t^{-2} e^{-m^2/t}
    const double t = 3.0, m = 1.0, a = 0.7;
    const double expect = std::pow(4.0 / t, a) * std::tgamma(a + 1.0) *
                          std::exp(-m * m / t) / (t * t);
    CHECK(kernel_moment(t, a, 0.0, m) == Catch::Approx(expect).epsilon(1e-8));

    // fitted slopes over t in [16, 256]: Gdot row -(2+alpha), Q row -(1+alpha)
    for (double alpha : {0.0, 0.5}) {
        std::vector<double> ts, mg, mq;
        for (double tt = 16.0; tt <= 256.0; tt *= 2.0) {
            ts.push_back(tt);
            mg.push_back(kernel_moment(tt, alpha, 0.0, m, KernelKind::Gdot));
            mq.push_back(kernel_moment(tt, alpha, 0.0, m, KernelKind::Q));
        }
        CHECK(loglog_slope(ts, mg).slope == Catch::Approx(-(2.0 + alpha)).margin(0.05));
        CHECK(loglog_slope(ts, mq).slope == Catch::Approx(-(1.0 + alpha)).margin(0.05));
    }

    // exponential weight stays finite for |gamma| < 1
    CHECK(std::isfinite(kernel_moment(2.0, 0.5, 0.9, m)));
    CHECK_THROWS(kernel_moment(2.0, -1.5, 0.0, m));
}

TEST_CASE("Lipschitz bound Eq A.4: |Gdot_t(0) - Gdot_t(x)| <= C |x| <t>^{-1/2}") {
    const double m = 1.0;
    std::vector<double> cs;
    for (double t : {1.0, 4.0, 16.0, 64.0}) {
        double worst = 0;
        for (double x : {0.01, 0.05, 0.2, 1.0}) {
            const double lhs = std::abs(gdot_realspace(t, 0, m) - gdot_realspace(t, x, m));
            worst = std::max(worst, lhs * std::sqrt(1.0 + t) / x);
        }
        cs.push_back(worst);
    }
    const auto [lo, hi] = std::minmax_element(cs.begin(), cs.end());
    CHECK(*hi < 10.0 * std::max(*lo, 1e-6)); // fitted constant stable across t
}

TEST_CASE("scale grid construction") {
    auto grid = ScaleGrid::standard(16.0);
    CHECK(grid.knots.front() == 0.0);
    CHECK(grid.T() == Catch::Approx(16.0));
    for (size_t i = 0; i + 1 < grid.knots.size(); ++i)
        REQUIRE(grid.knots[i] < grid.knots[i + 1]);
    // geometric spacing above 1
    const int i1 = grid.index_of(1.0);
    for (size_t i = i1 + 1; i + 1 < grid.knots.size(); ++i) {
        const double r = grid.knots[i + 1] / grid.knots[i];
        REQUIRE(r < std::pow(2.0, 0.26));
    }
    CHECK_THROWS(ScaleGrid::standard(-1.0));
}
