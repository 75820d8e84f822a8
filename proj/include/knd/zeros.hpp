#pragma once

// Disc-constrained zero finding for truncated series: companion-matrix roots,
// Newton refinement on the series, multiplicity clustering and a stability
// flag from the M-2 truncation.

#include <knd/series.hpp>

#include <Eigen/Eigenvalues>

namespace knd {

struct Zero {
    cplx z;
    int mult = 1;
    bool stable = false;
};

struct ZeroSet {
    std::vector<Zero> zeros;
    double radius = 0.0;
};

namespace detail {

inline std::vector<cplx> polynomial_roots(const std::vector<cplx>& coef) {
    // trim negligible leading coefficients for companion conditioning
    double cmax = 0;
    for (auto& c : coef) cmax = std::max(cmax, std::abs(c));
    int deg = (int)coef.size() - 1;
    while (deg > 0 && std::abs(coef[deg]) < 1e-14 * cmax) --deg;
    if (deg < 1) return {};
    MatC comp = MatC::Zero(deg, deg);
    for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -coef[i] / coef[deg];
    Eigen::ComplexEigenSolver<MatC> es(comp, false);
    if (es.info() != Eigen::Success) throw EigensolverError("companion eigensolve failed");
    std::vector<cplx> roots(es.eigenvalues().data(), es.eigenvalues().data() + deg);
    return roots;
}

inline cplx newton_refine(const TruncatedSeries& s, cplx z, int iters = 60) {
    for (int i = 0; i < iters; ++i) {
        cplx f = s.eval(z), df = s.eval_derivative(z);
        if (std::abs(df) < 1e-300) break;
        cplx step = f / df;
        z -= step;
        if (std::abs(step) < 1e-15 * (1.0 + std::abs(z))) break;
    }
    return z;
}

}  // namespace detail

namespace detail {

inline TruncatedSeries formal_derivative(const TruncatedSeries& s) {
    TruncatedSeries d(std::max(0, s.order() - 1));
    for (int i = 1; i <= s.order(); ++i) d[i - 1] = double(i) * s[i];
    return d;
}

inline double term_scale(const TruncatedSeries& s, cplx z) {
    double scale = 0, zp = 1;
    for (int i = 0; i <= s.order(); ++i) {
        scale += std::abs(s[i]) * zp;
        zp *= std::abs(z);
    }
    return std::max(scale, 1e-300);
}

}  // namespace detail

inline ZeroSet find_zeros(const TruncatedSeries& s, double radius) {
    if (s[0] == 0.0) throw Error("find_zeros requires a nonzero constant term");
    if (!(radius > 0)) throw Error("find_zeros requires a positive radius");

    // Companion roots are accurate enough to filter on before refinement;
    // refining far roots first would drag truncation-noise roots into the disc.
    auto roots = detail::polynomial_roots(s.coeffs());
    std::vector<cplx> kept;
    for (cplx r : roots) {
        if (std::abs(r) > 1.25 * radius) continue;
        cplx z = detail::newton_refine(s, r);
        if (std::abs(z) < radius) kept.push_back(z);
    }
    // deterministic order before clustering
    std::sort(kept.begin(), kept.end(), [](cplx a, cplx b) {
        if (std::abs(std::abs(a) - std::abs(b)) > 1e-14) return std::abs(a) < std::abs(b);
        if (std::abs(a.real() - b.real()) > 1e-14) return a.real() < b.real();
        return a.imag() < b.imag();
    });

    // multiplicity: cluster refined roots within 1e-5, then verify the order
    // against derivative magnitudes (clusters can pick up truncation noise)
    ZeroSet out;
    out.radius = radius;
    std::vector<char> used(kept.size(), 0);
    for (size_t i = 0; i < kept.size(); ++i) {
        if (used[i]) continue;
        cplx sum = kept[i];
        int cnt = 1;
        used[i] = 1;
        for (size_t j = i + 1; j < kept.size(); ++j) {
            if (!used[j] && std::abs(kept[j] - kept[i]) < 1e-5) {
                sum += kept[j];
                ++cnt;
                used[j] = 1;
            }
        }
        Zero zr;
        zr.z = sum / double(cnt);

        int order = 1;
        TruncatedSeries der = s;
        for (int j = 1; j <= cnt; ++j) {
            der = detail::formal_derivative(der);
            if (std::abs(der.eval(zr.z)) > 1e-6 * detail::term_scale(der, zr.z)) break;
            if (j < cnt) ++order;
        }
        zr.mult = std::min(cnt, order);

        if (zr.mult >= 2) {
            // a multiple zero is a simple zero of the (mult-1)-th derivative
            TruncatedSeries dm = s;
            for (int j = 1; j < zr.mult; ++j) dm = detail::formal_derivative(dm);
            cplx zref = detail::newton_refine(dm, zr.z);
            if (std::abs(zref - zr.z) < 2e-5) zr.z = zref;
        }
        out.zeros.push_back(zr);
    }

    // stability: the M-2 truncation must reproduce each zero within 1e-4
    if (s.order() >= 3) {
        TruncatedSeries s2 = s.truncated(s.order() - 2);
        for (auto& zr : out.zeros) {
            cplx z2 = detail::newton_refine(s2, zr.z);
            double scale = 0;
            double zp = 1.0;
            for (int i = 0; i <= s2.order(); ++i) {
                scale += std::abs(s2[i]) * zp;
                zp *= std::abs(z2);
            }
            zr.stable = std::abs(z2 - zr.z) < 1e-4 &&
                        std::abs(s2.eval(z2)) <= 1e-8 * std::max(scale, 1e-30);
        }
    }
    return out;
}

}  // namespace knd
