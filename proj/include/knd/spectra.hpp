#pragma once

// Fourier collocation of the transfer operators M_k on k-forms of T^2,
// dense eigensolves, pressure and essential-radius bounds, and the matching
// of determinant zeros against inverse eigenvalues.

#include <knd/model.hpp>
#include <knd/zeros.hpp>

#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#define lapack_complex_float std::complex<float>
#endif
#include <lapacke.h>

namespace knd {

// Coefficients of a k-form on T^n, one array per ordered component, modes
// kappa in [-N, N]^n flattened lexicographically (axis 0 fastest).
struct FormField {
    int n = 2;
    int k = 0;
    int N = 0;
    std::vector<VecC> comps;

    static FormField zero(int n, int k, int N) {
        FormField f;
        f.n = n;
        f.k = k;
        f.N = N;
        int P = 1;
        for (int i = 0; i < n; ++i) P *= (2 * N + 1);
        f.comps.assign(binomial(n, k), VecC::Zero(P));
        return f;
    }
    int modes_per_axis() const { return 2 * N + 1; }
    int mode_count() const { return (int)comps.at(0).size(); }
    int mode_index(const std::vector<int>& kappa) const {
        int idx = 0, stride = 1;
        for (int i = 0; i < n; ++i) {
            idx += (kappa[i] + N) * stride;
            stride *= modes_per_axis();
        }
        return idx;
    }
    // pointwise synthesis sum_kappa c_kappa e^{2 pi i kappa.x}
    cplx eval_comp(int comp, const Vec& x) const {
        cplx s = 0;
        int P = mode_count(), B = modes_per_axis();
        for (int idx = 0; idx < P; ++idx) {
            int t = idx;
            double ph = 0;
            for (int i = 0; i < n; ++i) {
                int ka = t % B - N;
                t /= B;
                ph += ka * x[i];
            }
            s += comps[comp][idx] * std::polar(1.0, two_pi * ph);
        }
        return s;
    }
};

struct OperatorMatrix {
    MatC m;
    int n = 2;
    int k = 0;
    int N = 0;
    uint64_t model_hash = 0;
};

struct AssemblyOpts {
    int threads = 1;
    bool abs_weight = false;       // |g_omega| for the pressure operator M_0^+
    size_t max_dim = 6000;         // memory guard on the matrix dimension
};

// Dense collocation of M_k phi = sum_omega g_omega psi_omega^* phi on T^2.
// Columns are images of basis forms e_kappa dx_J, sampled on a 2(2N+1)-per-axis
// grid and forward-transformed (oversampling keeps modes <= N alias-free).
inline OperatorMatrix assemble_transfer_matrix(const BranchSystem& sys, int k, int N,
                                               const AssemblyOpts& opts = {}) {
    if (sys.mode() != BranchSystem::Mode::Torus)
        throw Error("transfer-matrix assembly requires a torus system");
    if (sys.n() != 2) throw Error("collocation assembly implemented for n = 2");
    if (N < 4) throw Error("mode cutoff must be at least 4");
    const int n = 2;
    const int B = 2 * N + 1;
    const int G = 2 * B;
    const int P = B * B;
    const auto subsets = ordered_subsets(n, k);
    const int C = (int)subsets.size();
    const size_t D = (size_t)C * P;
    if (D > opts.max_dim)
        throw Error("operator dimension " + std::to_string(D) + " exceeds the configured cap");

    const int nb = sys.size();
    // Per branch and grid point: weight * pullback minor for each (J_in, I_out),
    // plus per-axis mode powers of the branch image.
    std::vector<MatC> pw0((size_t)nb), pw1((size_t)nb);  // (B x G*G) powers per axis
    std::vector<std::vector<VecC>> wmin((size_t)nb);     // [omega][J*C+I] over grid

    for (int w = 0; w < nb; ++w) {
        pw0[w].resize(B, G * G);
        pw1[w].resize(B, G * G);
        wmin[w].assign((size_t)C * C, VecC(G * G));
    }

    parallel_for((size_t)G * G, opts.threads, [&](size_t gidx) {
        int gx = int(gidx % G), gy = int(gidx / G);
        Vec x(2);
        x << double(gx) / G, double(gy) / G;
        for (int w = 0; w < nb; ++w) {
            BranchStep st = sys.branch(w).step(x);
            cplx wt = opts.abs_weight ? cplx(std::abs(st.w)) : st.w;
            for (int a = 0; a < B; ++a) {
                int ka = a - N;
                pw0[w](a, (Eigen::Index)gidx) = std::polar(1.0, two_pi * ka * st.y[0]);
                pw1[w](a, (Eigen::Index)gidx) = std::polar(1.0, two_pi * ka * st.y[1]);
            }
            for (int J = 0; J < C; ++J)
                for (int I = 0; I < C; ++I)
                    wmin[w][(size_t)J * C + I][(Eigen::Index)gidx] =
                        wt * minor_det(st.Dpsi, subsets[J], subsets[I]);
        }
    });

    // forward transform: coeffs = E * Field * E^T, E(a,g) = e^{-2 pi i k_a g / G}/G
    MatC E(B, G);
    for (int a = 0; a < B; ++a)
        for (int g = 0; g < G; ++g)
            E(a, g) = std::polar(1.0 / G, -two_pi * (a - N) * double(g) / G);

    OperatorMatrix op;
    op.n = n;
    op.k = k;
    op.N = N;
    op.model_hash = model_fingerprint(sys.model());
    op.m = MatC::Zero(D, D);

    parallel_for(D, opts.threads, [&](size_t col) {
        int Jin = int(col / P);
        int midx = int(col % P);
        int k0 = midx % B - N;
        int k1 = midx / B - N;
        MatC field(G, G);
        for (int I = 0; I < C; ++I) {
            for (int gidx = 0; gidx < G * G; ++gidx) {
                cplx s = 0;
                for (int w = 0; w < nb; ++w)
                    s += wmin[w][(size_t)Jin * C + I][gidx] * pw0[w](k0 + N, gidx) *
                         pw1[w](k1 + N, gidx);
                field(gidx % G, gidx / G) = s;
            }
            MatC coeffs = E * field * E.transpose();
            // coeffs(a0, a1) is the mode (a0-N, a1-N) of the image component I
            for (int a1 = 0; a1 < B; ++a1)
                for (int a0 = 0; a0 < B; ++a0)
                    op.m((size_t)I * P + a1 * B + a0, col) = coeffs(a0, a1);
        }
    });
    return op;
}

inline std::vector<cplx> eigenvalues(const OperatorMatrix& op, int count = -1) {
    lapack_int dim = (lapack_int)op.m.rows();
    if (count < 0 || count > dim) count = dim;
    MatC A = op.m;  // zgeev overwrites
    VecC w(dim);
    lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'N', dim,
                                    reinterpret_cast<lapack_complex_double*>(A.data()), dim,
                                    reinterpret_cast<lapack_complex_double*>(w.data()), nullptr, 1,
                                    nullptr, 1);
    if (info != 0)
        throw EigensolverError("zgeev failed, info = " + std::to_string(info) +
                               (info > 0 ? " (QR iteration did not converge)" : ""));
    std::vector<cplx> ev(w.data(), w.data() + dim);
    std::sort(ev.begin(), ev.end(), [](cplx a, cplx b) {
        if (std::abs(std::abs(a) - std::abs(b)) > 0) return std::abs(a) > std::abs(b);
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    ev.resize(count);
    return ev;
}

// Leading eigenvalue modulus of the modulus-weight operator M_0^+.
inline double pressure_estimate(const BranchSystem& sys, int N, int threads = 1) {
    AssemblyOpts o;
    o.threads = threads;
    o.abs_weight = true;
    OperatorMatrix op = assemble_transfer_matrix(sys, 0, N, o);
    auto ev = eigenvalues(op, 1);
    return std::abs(ev.at(0));
}

inline double essential_radius_bound(double theta, double pressure_eP, int k, int m_smooth) {
    return std::pow(theta, m_smooth + k) * pressure_eP;
}

struct MatchPair {
    cplx zero;
    cplx inv_eig;
    double dist;
};

struct MatchReport {
    std::vector<MatchPair> pairs;
    std::vector<cplx> unmatched_zeros;
    std::vector<cplx> unmatched_inv_eigs;
    double max_dist = 0.0;
};

// Greedy bipartite matching between stable zeros (with multiplicity) and
// inverse eigenvalues of modulus bound^{-1} or larger.
inline MatchReport match_zeros_eigenvalues(const ZeroSet& zs, const std::vector<cplx>& eigs,
                                           double bound) {
    std::vector<cplx> zslots;
    for (const auto& z : zs.zeros)
        if (z.stable)
            for (int i = 0; i < z.mult; ++i) zslots.push_back(z.z);
    std::vector<cplx> islots;
    for (cplx l : eigs)
        if (std::abs(l) > bound) islots.push_back(1.0 / l);

    MatchReport rep;
    std::vector<char> zu(zslots.size(), 0), iu(islots.size(), 0);
    while (true) {
        double best = std::numeric_limits<double>::infinity();
        int bi = -1, bj = -1;
        for (size_t i = 0; i < zslots.size(); ++i) {
            if (zu[i]) continue;
            for (size_t j = 0; j < islots.size(); ++j) {
                if (iu[j]) continue;
                double d = std::abs(zslots[i] - islots[j]);
                if (d < best) {
                    best = d;
                    bi = (int)i;
                    bj = (int)j;
                }
            }
        }
        if (bi < 0) break;
        zu[bi] = iu[bj] = 1;
        rep.pairs.push_back({zslots[bi], islots[bj], best});
        rep.max_dist = std::max(rep.max_dist, best);
    }
    for (size_t i = 0; i < zslots.size(); ++i)
        if (!zu[i]) rep.unmatched_zeros.push_back(zslots[i]);
    for (size_t j = 0; j < islots.size(); ++j)
        if (!iu[j]) rep.unmatched_inv_eigs.push_back(islots[j]);
    return rep;
}

// Direct pointwise image of a trig-polynomial form under Eq-style pullback,
// sampled and transformed exactly like the assembly (test oracle path).
inline FormField apply_transfer_pointwise(const BranchSystem& sys, const FormField& phi,
                                          int threads = 1) {
    if (sys.n() != 2) throw Error("pointwise transfer application implemented for n = 2");
    const int n = 2, N = phi.N, B = 2 * N + 1, G = 2 * B;
    const auto subsets = ordered_subsets(n, phi.k);
    const int C = (int)subsets.size();
    FormField out = FormField::zero(n, phi.k, N);

    MatC E(B, G);
    for (int a = 0; a < B; ++a)
        for (int g = 0; g < G; ++g)
            E(a, g) = std::polar(1.0 / G, -two_pi * (a - N) * double(g) / G);

    std::vector<MatC> fields((size_t)C, MatC::Zero(G, G));
    parallel_for((size_t)G * G, threads, [&](size_t gidx) {
        int gx = int(gidx % G), gy = int(gidx / G);
        Vec x(2);
        x << double(gx) / G, double(gy) / G;
        for (int w = 0; w < sys.size(); ++w) {
            BranchStep st = sys.branch(w).step(x);
            for (int I = 0; I < C; ++I) {
                cplx s = 0;
                for (int J = 0; J < C; ++J)
                    s += minor_det(st.Dpsi, subsets[J], subsets[I]) * phi.eval_comp(J, st.y);
                fields[I](gx, gy) += st.w * s;
            }
        }
    });
    for (int I = 0; I < C; ++I) {
        MatC coeffs = E * fields[I] * E.transpose();
        for (int a1 = 0; a1 < B; ++a1)
            for (int a0 = 0; a0 < B; ++a0) out.comps[I][a1 * B + a0] = coeffs(a0, a1);
    }
    return out;
}

}  // namespace knd
