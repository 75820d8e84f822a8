#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <knd/homotopy.hpp>

#include "test_support.hpp"

using namespace knd;

namespace {

Box2 unit_box() { return {Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)}; }

// torus spectral gradient of an analytic function sampled on a G x G grid
struct SpectralGrad {
    int G;
    MatC coeff;  // mode matrix, entry (a0,a1) = mode (a0-G/2, a1-G/2)

    template <class F>
    SpectralGrad(F&& f, int G_) : G(G_), coeff(G_, G_) {
        MatC samples(G, G);
        for (int iy = 0; iy < G; ++iy)
            for (int ix = 0; ix < G; ++ix) {
                Vec x(2);
                x << double(ix) / G, double(iy) / G;
                samples(ix, iy) = f(x);
            }
        MatC E(G, G);
        for (int a = 0; a < G; ++a)
            for (int g = 0; g < G; ++g)
                E(a, g) = std::polar(1.0 / G, -two_pi * (a - G / 2) * double(g) / G);
        coeff = E * samples * E.transpose();
    }
    // d/dx_c at x
    cplx grad(int c, const Vec& x) const {
        cplx s = 0;
        for (int a1 = 0; a1 < G; ++a1)
            for (int a0 = 0; a0 < G; ++a0) {
                int k0 = a0 - G / 2, k1 = a1 - G / 2;
                cplx e = coeff(a0, a1) * std::polar(1.0, two_pi * (k0 * x[0] + k1 * x[1]));
                s += e * cplx(0, two_pi) * double(c == 0 ? k0 : k1);
            }
        return s;
    }
};

}  // namespace

TEST_CASE("sigma closed forms in dimension 2") {
    // sigma_0(x,y) = (u2 dy1 - u1 dy2)/(2 pi |u|^2), sigma_1 = (u1 dx2 - u2 dx1)/(2 pi |u|^2)
    for (int t = 0; t < 20; ++t) {
        Vec x = kndtest::random_point(2), y = kndtest::random_point(2);
        if ((x - y).norm() < 1e-3) continue;
        Vec u = x - y;
        double r2 = u.squaredNorm();
        Mat s0 = sigma_eval(2, 0, x, y);
        CHECK(s0.rows() == 1);
        CHECK(s0(0, 0) == doctest::Approx(u[1] / (two_pi * r2)).epsilon(1e-12));
        CHECK(s0(0, 1) == doctest::Approx(-u[0] / (two_pi * r2)).epsilon(1e-12));
        Mat s1 = sigma_eval(2, 1, x, y);
        CHECK(s1(0, 0) == doctest::Approx(-u[1] / (two_pi * r2)).epsilon(1e-12));
        CHECK(s1(1, 0) == doctest::Approx(u[0] / (two_pi * r2)).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)sigma_eval(2, 0, Vec::Zero(2), Vec::Zero(2)), Error);
}

TEST_CASE("sigma components are homogeneous of degree 1-n") {
    for (int n : {2, 3}) {
        for (int k = 0; k < n; ++k) {
            for (int t = 0; t < 100; ++t) {
                Vec u(n);
                for (int i = 0; i < n; ++i) u[i] = kndtest::random_point(1)[0] - 0.5;
                if (u.norm() < 1e-2) continue;
                Mat a = sigma_eval(n, k, 2.0 * u, Vec::Zero(n));
                Mat b = sigma_eval(n, k, u, Vec::Zero(n));
                CHECK((a - std::pow(2.0, 1 - n) * b).cwiseAbs().maxCoeff() < 1e-12);
            }
        }
    }
}

TEST_CASE("codifferential of the Green kernel reproduces sigma") {
    auto sc = calibrate_orientation(64);  // codiff path is closed-form
    CHECK(sc.residual_codiff < 1e-12);
}

TEST_CASE("d sigma = delta in the weak pairing sense") {
    auto sc = calibrate_orientation(256);
    CHECK(sc.orientation == 1);
    CHECK(sc.residual_pairing < 1e-3);
}

TEST_CASE("apply_S: zero input, linearity") {
    Box2 box = unit_box();
    FormSampler2 zero;
    zero.k = 1;
    zero.support = box;
    zero.value = [](int, const Vec&) { return 0.0; };
    QuadSpec q;
    Vec x(2);
    x << 0.2, -0.1;
    auto v = apply_S_point(0, zero, q, x);
    CHECK(std::abs(v[0]) < 1e-15);

    std::vector<Bump2> ba = {Bump2{(Vec(2) << 0.1, 0.0).finished(), 0.4, 1.0},
                             Bump2{(Vec(2) << -0.1, 0.2).finished(), 0.35, 0.8}};
    std::vector<Bump2> bb = {Bump2{(Vec(2) << -0.2, -0.1).finished(), 0.5, 0.6},
                             Bump2{(Vec(2) << 0.0, 0.1).finished(), 0.3, -0.4}};
    auto fa = bump_form(1, ba, box), fb = bump_form(1, bb, box);
    FormSampler2 combo;
    combo.k = 1;
    combo.support = box;
    combo.value = [&](int c, const Vec& p) { return 2.0 * fa.value(c, p) - 0.5 * fb.value(c, p); };
    auto va = apply_S_point(0, fa, q, x), vb = apply_S_point(0, fb, q, x);
    auto vc = apply_S_point(0, combo, q, x);
    CHECK(std::abs(vc[0] - (2.0 * va[0] - 0.5 * vb[0])) < 1e-12);
}

TEST_CASE("S0 d0 recovers a bump at 256^2 quadrature") {
    Box2 box = unit_box();
    std::vector<Bump2> b = {Bump2{(Vec(2) << 0.1, -0.05).finished(), 0.45, 1.0}};
    auto phi = bump_form(0, b, box);
    auto dphi = bump_form_d(0, b, box);
    QuadSpec q;
    q.res = 256;
    double worst = 0;
    for (int t = 0; t < 9; ++t) {
        Vec x(2);
        x << -0.3 + 0.3 * (t % 3), -0.3 + 0.3 * (t / 3);
        double v = apply_S_point(0, dphi, q, x).at(0);
        worst = std::max(worst, std::abs(v - phi.value(0, x)));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("homotopy identity: 5-bump battery, monotone decay, 1e-3 at finest") {
    Box2 box = unit_box();
    Box2 probe{Vec::Constant(2, -0.5), Vec::Constant(2, 0.5)};
    std::vector<HomotopyBatteryItem> battery;
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << 0.1, -0.05).finished(), 0.45, 1.0}};
        battery.push_back({0, bump_form(0, b, box), bump_form_d(0, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << -0.15, 0.1).finished(), 0.55, -0.7}};
        battery.push_back({0, bump_form(0, b, box), bump_form_d(0, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << 0.05, 0.0).finished(), 0.4, 1.0},
                                Bump2{(Vec(2) << -0.05, 0.1).finished(), 0.45, 0.7}};
        battery.push_back({1, bump_form(1, b, box), bump_form_d(1, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << 0.2, 0.15).finished(), 0.5, -0.6},
                                Bump2{(Vec(2) << -0.1, -0.15).finished(), 0.35, 0.9}};
        battery.push_back({1, bump_form(1, b, box), bump_form_d(1, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << -0.1, 0.1).finished(), 0.5, 1.0}};
        battery.push_back({2, bump_form(2, b, box), bump_form_d(2, b, box), probe});
    }

    QuadSpec q;
    q.res = 64;
    for (const auto& item : battery) {
        auto curve = check_homotopy(item, q, 3, 7, 2);
        REQUIRE(curve.residual.size() == 3);
        CHECK(curve.residual[2] <= 1e-3);
        // monotone decay within 10% noise
        CHECK(curve.residual[1] <= curve.residual[0] * 1.1);
        CHECK(curve.residual[2] <= curve.residual[1] * 1.1);
    }
}

TEST_CASE("zero form gives zero homotopy residual") {
    Box2 box = unit_box();
    FormSampler2 zero0, zero1;
    zero0.k = 0;
    zero0.support = box;
    zero0.value = [](int, const Vec&) { return 0.0; };
    zero1.k = 1;
    zero1.support = box;
    zero1.value = [](int, const Vec&) { return 0.0; };
    QuadSpec q;
    Vec x(2);
    x << 0.1, 0.1;
    CHECK(homotopy_residual_at(0, zero0, zero1, q, x, 0.01) < 1e-15);
}

TEST_CASE("projector algebra and S o S at default quadrature") {
    auto rep = check_algebra(2);
    MESSAGE("SS ", rep.ss_residual, "  (dS)^2 ", rep.ds_projector, "  (Sd)^2 ", rep.sd_projector,
            "  dS.Sd ", rep.ds_sd_residual);
    CHECK(rep.ss_residual < 1e-2);
    CHECK(rep.ds_projector < 1e-2);
    CHECK(rep.sd_projector < 1e-2);
    CHECK(rep.ds_sd_residual < 1e-2);
}

TEST_CASE("dS boundedness probe: L2 ratios stay below a fixed constant") {
    Box2 supp{Vec::Constant(2, -0.8), Vec::Constant(2, 0.8)};
    Box2 big{Vec::Constant(2, -1.6), Vec::Constant(2, 1.6)};
    std::uniform_real_distribution<double> u(-1, 1);
    double worst_ratio = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Bump2 env{(Vec(2) << 0.3 * u(kndtest::rng()), 0.3 * u(kndtest::rng())).finished(),
                  0.35 + 0.2 * std::abs(u(kndtest::rng())), 1.0};
        double f0 = 1 + std::floor(2.9 * std::abs(u(kndtest::rng())));
        double f1 = 1 + std::floor(2.9 * std::abs(u(kndtest::rng())));
        double a = u(kndtest::rng()), b = u(kndtest::rng());
        FormSampler2 phi;
        phi.k = 1;
        phi.support = supp;
        phi.value = [=](int c, const Vec& x) {
            double t = std::sin(two_pi * (f0 * x[0] + f1 * x[1]));
            return env.value(x) * t * (c == 0 ? a : b);
        };
        for (int res : {64, 128}) {
            QuadSpec q;
            q.res = res;
            auto s0 = apply_S_grid(0, phi, q, big, 64, 2);
            auto ds = grid_d(s0, 0);
            double num = 0, den = 0;
            double cell = (big.hi[0] - big.lo[0]) / 64;
            for (int iy = 0; iy < 64; ++iy)
                for (int ix = 0; ix < 64; ++ix) {
                    Vec p = ds.node(ix, iy);
                    for (int c = 0; c < 2; ++c) {
                        num += ds.at(c, ix, iy) * ds.at(c, ix, iy) * cell * cell;
                        double pv = phi.value(c, p);
                        den += pv * pv * cell * cell;
                    }
                }
            double ratio = std::sqrt(num / std::max(den, 1e-30));
            worst_ratio = std::max(worst_ratio, ratio);
        }
    }
    MESSAGE("dS L2 ratio across trials: ", worst_ratio);
    CHECK(worst_ratio < 10.0);
}

TEST_CASE("apply_N: vanishing cases and the defining identity") {
    // constant weight: dg = 0 so N phi = 0
    auto lin = BranchSystem::torus(kndtest::linear_model_const_weight());
    auto phi0 = [](int, const Vec& x) { return cplx(std::sin(two_pi * x[0]), 0); };
    Vec x(2);
    x << 0.3, 0.7;
    CHECK(apply_N_point(lin, 0, phi0, x).cwiseAbs().maxCoeff() < 1e-13);

    // zero form maps to zero
    auto psys = BranchSystem::torus(kndtest::perturbed_model());
    auto zero = [](int, const Vec&) { return cplx(0); };
    CHECK(apply_N_point(psys, 0, zero, x).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(apply_N_point(psys, 1, zero, x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("N_k = d M_k - M_{k+1} d on trig forms, spectral-derivative oracle") {
    auto model = kndtest::perturbed_model(false);  // trig weight with dg != 0
    auto sys = BranchSystem::torus(model);

    // k = 0: phi scalar trig polynomial
    auto phi = [](int, const Vec& x) {
        return std::polar(1.0, two_pi * (x[0] + 2 * x[1])) * cplx(0.7, 0.1) +
               std::polar(1.0, two_pi * (-x[0])) * cplx(0.2, -0.3);
    };
    auto dphi = [&](int c, const Vec& x) -> cplx {
        cplx a = std::polar(1.0, two_pi * (x[0] + 2 * x[1])) * cplx(0.7, 0.1) * cplx(0, two_pi);
        cplx b = std::polar(1.0, two_pi * (-x[0])) * cplx(0.2, -0.3) * cplx(0, two_pi);
        return c == 0 ? a * 1.0 + b * (-1.0) : a * 2.0;
    };
    // M_0 phi sampled on a grid; spectral gradient
    SpectralGrad m0phi(
        [&](const Vec& p) {
            cplx s = 0;
            for (int w = 0; w < sys.size(); ++w) {
                BranchStep st = sys.branch(w).step(p);
                s += st.w * phi(0, st.y);
            }
            return s;
        },
        64);
    for (int t = 0; t < 6; ++t) {
        Vec p = kndtest::random_point(2);
        VecC lhs = apply_N_point(sys, 0, phi, p);
        // M_1 d phi at p
        VecC m1d = VecC::Zero(2);
        for (int w = 0; w < sys.size(); ++w) {
            BranchStep st = sys.branch(w).step(p);
            for (int I = 0; I < 2; ++I)
                for (int J = 0; J < 2; ++J) m1d[I] += st.w * dphi(J, st.y) * st.Dpsi(J, I);
        }
        for (int c = 0; c < 2; ++c) {
            cplx rhs = m0phi.grad(c, p) - m1d[c];
            CHECK(std::abs(lhs[c] - rhs) < 1e-10);
        }
    }

    // k = 1: phi a trig 1-form
    auto phi1 = [](int c, const Vec& x) -> cplx {
        if (c == 0) return std::polar(1.0, two_pi * x[1]) * cplx(0.5, 0.2);
        return std::polar(1.0, two_pi * (x[0] - x[1])) * cplx(-0.3, 0.4);
    };
    auto dphi1 = [&](int, const Vec& x) -> cplx {
        // d(a dx1 + b dx2) = (d1 b - d2 a) dx1^dx2
        cplx d1b = std::polar(1.0, two_pi * (x[0] - x[1])) * cplx(-0.3, 0.4) * cplx(0, two_pi);
        cplx d2a = std::polar(1.0, two_pi * x[1]) * cplx(0.5, 0.2) * cplx(0, two_pi);
        return d1b - d2a;
    };
    auto m1phi_comp = [&](int I, const Vec& p) {
        cplx s = 0;
        for (int w = 0; w < sys.size(); ++w) {
            BranchStep st = sys.branch(w).step(p);
            for (int J = 0; J < 2; ++J) s += st.w * phi1(J, st.y) * st.Dpsi(J, I);
        }
        return s;
    };
    SpectralGrad c0([&](const Vec& p) { return m1phi_comp(0, p); }, 64);
    SpectralGrad c1([&](const Vec& p) { return m1phi_comp(1, p); }, 64);
    for (int t = 0; t < 6; ++t) {
        Vec p = kndtest::random_point(2);
        VecC lhs = apply_N_point(sys, 1, phi1, p);
        // d M_1 phi = (d1 c1 - d2 c0); M_2 d phi = sum_w w det(Dpsi) dphi(psi)
        cplx dm = c1.grad(0, p) - c0.grad(1, p);
        cplx m2d = 0;
        for (int w = 0; w < sys.size(); ++w) {
            BranchStep st = sys.branch(w).step(p);
            m2d += st.w * dphi1(0, st.y) * st.Dpsi.determinant();
        }
        CHECK(std::abs(lhs[0] - (dm - m2d)) < 1e-10);
    }
}
