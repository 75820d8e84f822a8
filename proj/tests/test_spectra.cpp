#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <knd/orbits.hpp>
#include <knd/series.hpp>
#include <knd/spectra.hpp>

#include "test_support.hpp"

using namespace knd;

TEST_CASE("doubling map acts on Fourier modes by halving even modes") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    AssemblyOpts o;
    o.threads = 2;
    auto op = assemble_transfer_matrix(sys, 0, 8, o);
    int N = 8, B = 2 * N + 1, P = B * B;
    REQUIRE(op.m.rows() == P);

    auto idx = [&](int k0, int k1) { return (k1 + N) * B + (k0 + N); };
    // even mode (4,-6) -> (2,-3) with coefficient 1
    for (auto [k0, k1] : std::vector<std::pair<int, int>>{{4, -6}, {0, 0}, {2, 2}, {-8, 4}}) {
        VecC col = op.m.col(idx(k0, k1));
        for (int b1 = -N; b1 <= N; ++b1)
            for (int b0 = -N; b0 <= N; ++b0) {
                cplx expect = (b0 == k0 / 2 && b1 == k1 / 2 && k0 % 2 == 0 && k1 % 2 == 0) ? 1.0 : 0.0;
                CHECK(std::abs(col[idx(b0, b1)] - expect) < 1e-12);
            }
    }
    // odd modes are annihilated
    VecC codd = op.m.col(idx(3, 0));
    CHECK(codd.cwiseAbs().maxCoeff() < 1e-12);

    auto ev = eigenvalues(op);
    CHECK(std::abs(ev[0] - cplx(1.0)) < 1e-12);
    // the rest of the spectrum is a nilpotent mode-halving chain; QR resolves
    // its zero eigenvalues only to eps^(1/chain-length)
    CHECK(std::abs(ev[1]) < 1e-3);
}

TEST_CASE("linear model eigenvalues on 1-forms and 2-forms") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    AssemblyOpts o;
    o.threads = 2;
    auto op1 = assemble_transfer_matrix(sys, 1, 6, o);
    auto ev1 = eigenvalues(op1, 3);
    CHECK(std::abs(ev1[0] - cplx(0.5)) < 1e-12);
    CHECK(std::abs(ev1[1] - cplx(0.5)) < 1e-12);
    CHECK(std::abs(ev1[2]) < 1e-5);  // nilpotent tail: non-normal eigensolve accuracy

    auto op2 = assemble_transfer_matrix(sys, 2, 6, o);
    auto ev2 = eigenvalues(op2, 2);
    CHECK(std::abs(ev2[0] - cplx(0.25)) < 1e-12);
    CHECK(std::abs(ev2[1]) < 1e-5);
}

TEST_CASE("acip weight: leading eigenvalue 1 and Lebesgue-invariance row") {
    auto sys = BranchSystem::torus(kndtest::perturbed_model());
    AssemblyOpts o;
    o.threads = 2;
    auto op = assemble_transfer_matrix(sys, 0, 12, o);
    // adjoint fixes the constant: the mode-0 row of the matrix is e_0
    int N = 12, B = 2 * N + 1, P = B * B;
    int zero = (0 + N) * B + (0 + N);
    for (int c = 0; c < P; ++c) {
        cplx expect = (c == zero) ? 1.0 : 0.0;
        CHECK(std::abs(op.m(zero, c) - expect) < 1e-10);
    }
    auto ev = eigenvalues(op, 1);
    CHECK(std::abs(ev[0] - cplx(1.0)) < 1e-10);
}

TEST_CASE("pressure normalization") {
    auto lin = BranchSystem::torus(kndtest::linear_model_const_weight());
    CHECK(pressure_estimate(lin, 6, 2) == doctest::Approx(1.0).epsilon(1e-10));

    auto half = BranchSystem::torus(kndtest::linear_model_const_weight(0.5));
    CHECK(pressure_estimate(half, 6, 2) == doctest::Approx(2.0).epsilon(1e-10));

    auto acip = BranchSystem::torus(kndtest::perturbed_model());
    CHECK(pressure_estimate(acip, 10, 2) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("essential radius bound formula") {
    CHECK(essential_radius_bound(0.5, 1.0, 0, 2) == doctest::Approx(0.25));
    CHECK(essential_radius_bound(0.5, 1.0, 1, 2) == doctest::Approx(0.125));
    auto sys = BranchSystem::torus(kndtest::perturbed_model());
    double theta = sys.theta_estimate(32);
    double eP = pressure_estimate(sys, 8, 2);
    CHECK(essential_radius_bound(theta, eP, 1, 2) ==
          doctest::Approx(theta * theta * theta * eP).epsilon(1e-12));
}

TEST_CASE("matrix application equals direct pointwise evaluation") {
    auto sys = BranchSystem::torus(kndtest::perturbed_model());
    AssemblyOpts o;
    o.threads = 2;
    int N = 5;
    for (int k = 0; k <= 2; ++k) {
        auto op = assemble_transfer_matrix(sys, k, N, o);
        int C = binomial(2, k), P = (2 * N + 1) * (2 * N + 1);
        for (int trial = 0; trial < (k == 1 ? 8 : 6); ++trial) {
            FormField phi = FormField::zero(2, k, N);
            std::uniform_real_distribution<double> u(-1, 1);
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < 5; ++t) {
                    // sparse random trig polynomial, modes within +-2
                    std::vector<int> kap = {int(u(kndtest::rng()) * 2.4), int(u(kndtest::rng()) * 2.4)};
                    phi.comps[c][phi.mode_index(kap)] += cplx(u(kndtest::rng()), u(kndtest::rng()));
                }
            FormField direct = apply_transfer_pointwise(sys, phi, 2);
            VecC packed(C * P);
            for (int c = 0; c < C; ++c) packed.segment((Eigen::Index)c * P, P) = phi.comps[c];
            VecC image = op.m * packed;
            double err = 0;
            for (int c = 0; c < C; ++c)
                err = std::max(err,
                               (image.segment((Eigen::Index)c * P, P) - direct.comps[c]).cwiseAbs().maxCoeff());
            CHECK(err < 1e-10);
        }
    }
}

TEST_CASE("real weights preserve Hermitian symmetry of coefficients") {
    auto sys = BranchSystem::torus(kndtest::perturbed_model());
    AssemblyOpts o;
    o.threads = 2;
    int N = 4, B = 2 * N + 1, P = B * B;
    auto op = assemble_transfer_matrix(sys, 0, N, o);
    // real input: c_{-k} = conj(c_k)
    FormField phi = FormField::zero(2, 0, N);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 6; ++t) {
        std::vector<int> kap = {1 + (t % 3), t % 2 ? 1 : -2};
        cplx v(u(kndtest::rng()), u(kndtest::rng()));
        std::vector<int> neg = {-kap[0], -kap[1]};
        phi.comps[0][phi.mode_index(kap)] += v;
        phi.comps[0][phi.mode_index(neg)] += std::conj(v);
    }
    phi.comps[0][phi.mode_index({0, 0})] += 0.7;
    VecC image = op.m * phi.comps[0];
    for (int k1 = -N; k1 <= N; ++k1)
        for (int k0 = -N; k0 <= N; ++k0) {
            int a = (k1 + N) * B + (k0 + N);
            int b = (-k1 + N) * B + (-k0 + N);
            CHECK(std::abs(image[a] - std::conj(image[b])) < 1e-11);
        }
    (void)P;
}

TEST_CASE("trusted eigenvalues are stable under N -> N+4") {
    auto sys = BranchSystem::torus(kndtest::perturbed_model());
    AssemblyOpts o;
    o.threads = 2;
    double theta = sys.theta_estimate(32);
    double eP = pressure_estimate(sys, 8, 2);
    for (int k = 0; k <= 1; ++k) {
        auto evA = eigenvalues(assemble_transfer_matrix(sys, k, 8, o));
        auto evB = eigenvalues(assemble_transfer_matrix(sys, k, 12, o));
        double bound = essential_radius_bound(theta, eP, k, 6);
        for (size_t i = 0; i < evA.size(); ++i) {
            if (std::abs(evA[i]) <= std::max(bound, 0.05)) break;
            CHECK(std::abs(evA[i] - evB[i]) < 1e-6);
        }
    }
}

TEST_CASE("spectral radius ordering for the acip weight") {
    auto sys = BranchSystem::torus(kndtest::perturbed_model());
    AssemblyOpts o;
    o.threads = 2;
    double theta = sys.theta_estimate(32);
    double eP = pressure_estimate(sys, 10, 2);
    for (int k = 0; k <= 2; ++k) {
        auto ev = eigenvalues(assemble_transfer_matrix(sys, k, 10, o), 1);
        CHECK(std::abs(ev[0]) <= std::pow(theta, k) * eP * (1 + 1e-6));
    }
}

TEST_CASE("zeros of d_k match inverse eigenvalues on the linear model") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    auto tab = build_orbit_table(sys, 8, 2);
    AssemblyOpts o;
    o.threads = 2;

    auto d0 = ruelle_flat_determinant_series(tab, 0, 8);
    auto z0 = find_zeros(d0, 3.9);
    auto ev0 = eigenvalues(assemble_transfer_matrix(sys, 0, 6, o));
    auto rep0 = match_zeros_eigenvalues(z0, ev0, 0.26);
    REQUIRE(rep0.pairs.size() == 1);
    CHECK(rep0.pairs[0].dist < 1e-12);
    CHECK(rep0.unmatched_zeros.empty());

    auto d1 = ruelle_flat_determinant_series(tab, 1, 8);
    auto z1 = find_zeros(d1, 3.9);
    REQUIRE(z1.zeros.size() == 1);
    CHECK(z1.zeros[0].mult == 2);
    auto ev1 = eigenvalues(assemble_transfer_matrix(sys, 1, 6, o));
    auto rep1 = match_zeros_eigenvalues(z1, ev1, 0.26);
    REQUIRE(rep1.pairs.size() == 2);  // double zero consumes both eigenvalues 1/2
    CHECK(rep1.max_dist < 1e-10);
    CHECK(rep1.unmatched_zeros.empty());
}

TEST_CASE("memory guard rejects oversized assemblies") {
    auto sys = BranchSystem::torus(kndtest::linear_model_const_weight());
    AssemblyOpts o;
    o.max_dim = 100;
    CHECK_THROWS_AS((void)assemble_transfer_matrix(sys, 0, 8, o), Error);
}
