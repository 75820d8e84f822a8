#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_support.hpp"

using namespace knd;
using kndtest::fd_jacobian;

TEST_CASE("branch offsets form a transversal of Z^n / A Z^n") {
    auto m = kndtest::linear_model_const_weight();
    auto offs = branch_offsets(m.A);
    CHECK(offs.size() == 4);

    Eigen::MatrixXi A23(2, 2);
    A23 << 2, 0, 0, 3;
    CHECK(branch_offsets(A23).size() == 6);

    Eigen::MatrixXi shear(2, 2);
    shear << 2, 1, 0, 2;
    auto so = branch_offsets(shear);
    CHECK(so.size() == 4);
    // offsets are pairwise distinct mod A Z^2: A^{-1}(j - j') never integral
    for (size_t a = 0; a < so.size(); ++a)
        for (size_t b = a + 1; b < so.size(); ++b) {
            Vec d = (so[a] - so[b]).cast<double>();
            Vec t = shear.cast<double>().inverse() * d;
            bool integral = std::abs(t[0] - std::round(t[0])) < 1e-12 &&
                            std::abs(t[1] - std::round(t[1])) < 1e-12;
            CHECK(!integral);
        }
}

TEST_CASE("eval_branch: affine inverses of the doubling map") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    Vec x(2);
    x << 0.5, 0.5;
    // branch index of offset (0,0)
    int b00 = -1, b10 = -1;
    for (int i = 0; i < sys.size(); ++i) {
        auto& tb = dynamic_cast<const TorusBranch&>(sys.branch(i));
        if (tb.offset()[0] == 0 && tb.offset()[1] == 0) b00 = i;
        if (tb.offset()[0] == 1 && tb.offset()[1] == 0) b10 = i;
    }
    REQUIRE(b00 >= 0);
    REQUIRE(b10 >= 0);
    Vec y = sys.branch(b00).eval(x);
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(y[1] == doctest::Approx(0.25).epsilon(1e-14));
    Vec z = sys.branch(b10).eval(Vec::Zero(2));
    CHECK(z[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::abs(z[1]) < 1e-14);
}

TEST_CASE("eval_branch: Newton solve of the perturbed implicit equation") {
    auto model = kndtest::perturbed_model();
    auto sys = BranchSystem::torus(model);
    // residual f(psi(x)) - x below tolerance on a grid, all branches
    for (int gx = 0; gx < 7; ++gx)
        for (int gy = 0; gy < 7; ++gy) {
            Vec x(2);
            x << gx / 7.0, gy / 7.0;
            for (int i = 0; i < sys.size(); ++i) {
                Vec y = sys.branch(i).eval(x);
                Vec fy = model.lift(y);
                double res = 0;
                for (int c = 0; c < 2; ++c) res = std::max(res, std::abs(wrap_half(fy[c] - x[c])));
                CHECK(res < 1e-12);
            }
        }
}

TEST_CASE("branch_jacobian: closed forms and finite differences") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    Vec x = kndtest::random_point(2);
    Mat J = sys.branch(0).jacobian(x);
    CHECK((J - 0.5 * Mat::Identity(2, 2)).norm() < 1e-14);

    auto sys23 = BranchSystem::torus(kndtest::diag23_model());
    Mat J23 = sys23.branch(0).jacobian(x);
    CHECK(J23(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(J23(1, 1) == doctest::Approx(1.0 / 3).epsilon(1e-14));
    CHECK(std::abs(J23(0, 1)) + std::abs(J23(1, 0)) < 1e-14);

    auto psys = BranchSystem::torus(kndtest::perturbed_model());
    Vec xp(2);
    xp << 0.1, 0.2;
    for (int i = 0; i < psys.size(); ++i) {
        Mat Ja = psys.branch(i).jacobian(xp);
        Mat Jf = fd_jacobian([&](const Vec& q) { return psys.branch(i).eval(q); }, xp);
        CHECK((Ja - Jf).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("branch Jacobians match finite differences at random points") {
    auto psys = BranchSystem::torus(kndtest::perturbed_model(false));
    for (int t = 0; t < 10; ++t) {
        Vec x = kndtest::random_point(2);
        for (int i = 0; i < psys.size(); ++i) {
            Mat Ja = psys.branch(i).jacobian(x);
            Mat Jf = fd_jacobian([&](const Vec& q) { return psys.branch(i).eval(q); }, x);
            CHECK((Ja - Jf).cwiseAbs().maxCoeff() < 1e-7);
        }
    }
}

TEST_CASE("compose_word: chain rule along words") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    Vec x = kndtest::random_point(2);
    for (int m : {1, 3, 5}) {
        std::vector<int> w(m, 1);
        auto r = sys.compose_word(w, x);
        CHECK((r.J - std::pow(0.5, m) * Mat::Identity(2, 2)).norm() < 1e-13);
    }
    // length 1 equals eval_branch
    auto r1 = sys.compose_word({2}, x);
    CHECK((r1.y - sys.branch(2).eval(x)).norm() < 1e-15);

    // direct two-step product oracle on the perturbed model
    auto psys = BranchSystem::torus(kndtest::perturbed_model());
    for (int j1 = 0; j1 < 4; ++j1)
        for (int j2 = 0; j2 < 4; ++j2) {
            auto rc = psys.compose_word({j1, j2}, x);
            Vec mid = psys.branch(j1).eval(x);
            Mat direct = psys.branch(j2).jacobian(mid) * psys.branch(j1).jacobian(x);
            CHECK((rc.J - direct).cwiseAbs().maxCoeff() < 1e-12);
        }
}

TEST_CASE("theta_estimate: exact linear values, refinement stability, monotonicity") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    CHECK(sys.theta_estimate(16) == doctest::Approx(0.5).epsilon(1e-13));
    auto sys23 = BranchSystem::torus(kndtest::diag23_model());
    CHECK(sys23.theta_estimate(16) == doctest::Approx(0.5).epsilon(1e-13));

    auto psys = BranchSystem::torus(kndtest::perturbed_model());
    double t32 = psys.theta_estimate(32);
    double t64 = psys.theta_estimate(64);
    CHECK(t32 > 0.4);
    CHECK(t32 < 0.6);
    CHECK(std::abs(t64 - t32) < 1e-3);
    CHECK(t64 >= t32);  // nested grids
    CHECK_THROWS_AS((void)psys.theta_estimate(4), Error);
}

TEST_CASE("invariant: f(psi(x)) = x on the torus to 1e-12") {
    auto model = kndtest::perturbed_model(false);
    auto sys = BranchSystem::torus(model);
    for (int t = 0; t < 25; ++t) {
        Vec x = kndtest::random_point(2);
        for (int i = 0; i < sys.size(); ++i) {
            Vec y = sys.branch(i).eval(x);
            Vec fy = model.lift(y);
            Vec d(2);
            for (int c = 0; c < 2; ++c) d[c] = wrap_half(fy[c] - x[c]);
            CHECK(d.norm() < 1e-12);
        }
    }
}

TEST_CASE("non-expanding models are rejected") {
    TorusMapModel m;
    m.n = 2;
    m.A = Eigen::MatrixXi::Identity(2, 2) * 2;
    m.eps = 0.9;  // large enough to destroy uniform expansion along x2 = 3/4
    m.perturbation.push_back({0, {0, 1}, 1.0, 0.0});
    TrigScalar w;
    w.modes.push_back({{0, 0}, 1.0});
    m.weight = w;
    CHECK_THROWS_AS((void)BranchSystem::torus(m), Error);
}

TEST_CASE("weight gradients match finite differences") {
    auto model = kndtest::perturbed_model();  // acip weight
    auto sys = BranchSystem::torus(model);
    Vec x(2);
    x << 0.37, 0.81;
    for (int i = 0; i < sys.size(); ++i) {
        VecC ga = sys.branch(i).weight_grad(x);
        Mat gf = fd_jacobian(
            [&](const Vec& q) {
                Vec out(1);
                out[0] = sys.branch(i).weight(q).real();
                return out;
            },
            x);
        CHECK(std::abs(ga[0].real() - gf(0, 0)) < 1e-7);
        CHECK(std::abs(ga[1].real() - gf(0, 1)) < 1e-7);
    }
}
