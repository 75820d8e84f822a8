#pragma once

// Low-order flat-trace coefficients of the kneading operators D_k(z) by
// singular quadrature along the diagonal, and the order-by-order check of the
// Milnor-Thurston identity against sharp traces.
//
// The torus data is transplanted to R^2 through one fundamental cell with a
// smooth lattice partition of unity riding on the branch images:
//     g_omega(x) = g(psi_omega(x)) * chi(psi_omega(x)),
// where sum_{m in Z^2} chi(y + m) = 1. Branch words then run over the finite
// offset set interacting with supp chi; summed over k, the diagonal integrals
// localize at the fixed points of the words and reproduce exactly the
// deduplicated torus orbit sums (each torus fixed point is counted once with
// its full weight, split across representatives by the cutoff).

#include <knd/homotopy.hpp>
#include <knd/orbits.hpp>

namespace knd {

// Per-axis window w with lattice-sum 1: quintic rise/fall of half-width delta.
struct ChiCutoff {
    double delta = 0.25;

    double w(double t) const {
        if (t <= -delta || t >= 1.0 + delta) return 0.0;
        if (t < delta) return detail::smoothstep5((t + delta) / (2 * delta));
        if (t <= 1.0 - delta) return 1.0;
        return detail::smoothstep5((1.0 + delta - t) / (2 * delta));
    }
    double dw(double t) const {
        auto ds = [](double u) { return 30.0 * u * u * (1 - u) * (1 - u); };
        if (t <= -delta || t >= 1.0 + delta) return 0.0;
        if (t < delta) return ds((t + delta) / (2 * delta)) / (2 * delta);
        if (t <= 1.0 - delta) return 0.0;
        return -ds((1.0 + delta - t) / (2 * delta)) / (2 * delta);
    }
    double chi(const Vec& y) const { return w(y[0]) * w(y[1]); }
    Vec grad(const Vec& y) const {
        Vec g(2);
        g << dw(y[0]) * w(y[1]), w(y[0]) * dw(y[1]);
        return g;
    }
    // supp chi as a box
    double lo() const { return -delta; }
    double hi() const { return 1.0 + delta; }
};

struct KneadingBudget {
    int base_res = 96;       // tensor resolution per axis on each word's x-box
    double local_cells = 6;  // blend radius around word fixed points, in cells
    int polar_ang = 32;
    int polar_rad = 24;
    int pair_outer_res = 24;  // order-2 composed kernel: x grid
    int pair_inner_res = 56;  // order-2: w grid over the union box
    int pair_polar_ang = 16;
    int pair_polar_rad = 10;

    KneadingBudget refined() const {
        KneadingBudget b = *this;
        b.base_res *= 2;
        b.pair_outer_res = (3 * b.pair_outer_res) / 2;
        b.pair_inner_res = (3 * b.pair_inner_res) / 2;
        return b;
    }
    KneadingBudget coarsened() const {
        KneadingBudget b = *this;
        b.base_res /= 2;
        return b;
    }
};

namespace kdetail {

// Offsets whose branch image of supp chi meets supp chi (interval bound).
inline std::vector<Eigen::VectorXi> interaction_offsets(const TorusMapModel& m,
                                                        const ChiCutoff& chi) {
    double pmax = 0;
    for (const auto& t : m.perturbation) pmax += std::abs(t.c_sin) + std::abs(t.c_cos);
    pmax *= std::abs(m.eps);
    // psi_w(S) intersects S iff w in F(S) - S (componentwise interval hull)
    Mat A = m.A.cast<double>();
    Vec lo = Vec::Constant(2, chi.lo()), hi = Vec::Constant(2, chi.hi());
    Vec Flo(2), Fhi(2);
    for (int i = 0; i < 2; ++i) {
        double a = 0, b = 0;
        for (int j = 0; j < 2; ++j) {
            a += std::min(A(i, j) * lo[j], A(i, j) * hi[j]);
            b += std::max(A(i, j) * lo[j], A(i, j) * hi[j]);
        }
        Flo[i] = a - pmax;
        Fhi[i] = b + pmax;
    }
    std::vector<Eigen::VectorXi> out;
    for (int o1 = (int)std::ceil(Flo[1] - hi[1]); o1 <= (int)std::floor(Fhi[1] - lo[1]); ++o1)
        for (int o0 = (int)std::ceil(Flo[0] - hi[0]); o0 <= (int)std::floor(Fhi[0] - lo[0]); ++o0) {
            Eigen::VectorXi w(2);
            w << o0, o1;
            out.push_back(w);
        }
    return out;
}

// x-range of the first branch factor: {x : psi_w1(x) in supp chi} = F(S) - w1.
inline Box2 word_xbox(const TorusMapModel& m, const ChiCutoff& chi, const Eigen::VectorXi& w1) {
    double pmax = 0;
    for (const auto& t : m.perturbation) pmax += std::abs(t.c_sin) + std::abs(t.c_cos);
    pmax *= std::abs(m.eps);
    Mat A = m.A.cast<double>();
    Vec lo = Vec::Constant(2, chi.lo()), hi = Vec::Constant(2, chi.hi());
    Box2 b;
    b.lo = Vec(2);
    b.hi = Vec(2);
    for (int i = 0; i < 2; ++i) {
        double a = 0, c = 0;
        for (int j = 0; j < 2; ++j) {
            a += std::min(A(i, j) * lo[j], A(i, j) * hi[j]);
            c += std::max(A(i, j) * lo[j], A(i, j) * hi[j]);
        }
        b.lo[i] = a - pmax - w1[i];
        b.hi[i] = c + pmax - w1[i];
    }
    return b;
}

// Orbit data of one word evaluation at x.
struct WordEval {
    Vec u;             // Psi_W(x) - x
    Mat DPsi;          // chain Jacobian
    cplx h[2];         // components of the differentiated-weight one-form h_W
    bool zero = true;  // all weight factors vanished
};

inline WordEval eval_word_integrand(const TorusMapModel& m, const ChiCutoff& chi,
                                    const std::vector<Eigen::VectorXi>& word, const Vec& x) {
    WordEval ev;
    Vec cur = x;
    Mat DPsi = Mat::Identity(2, 2);
    cplx P = 1.0;     // product of the later factors
    cplx hc[2] = {0.0, 0.0};
    for (size_t i = 0; i < word.size(); ++i) {
        Vec y = torus_branch_eval(m, word[i], cur);
        Mat Dpsi = torus_branch_jacobian(m, y);
        double cy = chi.chi(y);
        if (i == 0) {
            cplx g = m.weight_value(y);
            VecC dgy = m.weight_grad(y);
            Vec dchi = chi.grad(y);
            // d[g(psi x) chi(psi x)] = Dpsi^T (chi grad g + g grad chi)
            VecC inner(2);
            for (int c = 0; c < 2; ++c) inner[c] = cy * dgy[c] + g * cplx(dchi[c]);
            VecC h = Dpsi.transpose().cast<cplx>() * inner;
            hc[0] = h[0];
            hc[1] = h[1];
            if (hc[0] == 0.0 && hc[1] == 0.0) return ev;  // support exhausted
        } else {
            if (cy == 0.0) return ev;
            P *= m.weight_value(y) * cy;
        }
        DPsi = Dpsi * DPsi;
        cur = y;
    }
    ev.zero = false;
    ev.u = cur - x;
    ev.DPsi = DPsi;
    ev.h[0] = hc[0] * P;
    ev.h[1] = hc[1] * P;
    return ev;
}

// Diagonal kernel density K_{k,l}|_W (x,x) per unit area.
inline cplx word_kernel_density(int k, const WordEval& ev) {
    double r2 = ev.u.squaredNorm();
    if (k == 0) {
        // -(h . u) / (2 pi |u|^2)
        return -(ev.h[0] * ev.u[0] + ev.h[1] * ev.u[1]) / (two_pi * r2);
    }
    // k = 1: (h1 c2 - h2 c1)/(2 pi |u|^2), c_j = u1 DPsi(2,j) - u2 DPsi(1,j)
    cplx c1 = ev.u[0] * ev.DPsi(1, 0) - ev.u[1] * ev.DPsi(0, 0);
    cplx c2 = ev.u[0] * ev.DPsi(1, 1) - ev.u[1] * ev.DPsi(0, 1);
    return (ev.h[0] * c2 - ev.h[1] * c1) / (two_pi * r2);
}

// Fixed point of the composed word in R^2 (global contraction).
inline Vec word_fixed_point(const TorusMapModel& m, const std::vector<Eigen::VectorXi>& word,
                            const Vec& seed) {
    Vec x = seed;
    for (int it = 0; it < 400; ++it) {
        Vec cur = x;
        for (const auto& w : word) cur = torus_branch_eval(m, w, cur);
        double step = (cur - x).norm();
        x = cur;
        if (step < 1e-12) break;
    }
    return x;
}

struct WordIntegral {
    cplx value = 0.0;
    int shifted_nodes = 0;
};

inline WordIntegral word_diagonal_integral(const TorusMapModel& m, const ChiCutoff& chi, int k,
                                           const std::vector<Eigen::VectorXi>& word,
                                           const KneadingBudget& budget) {
    WordIntegral res;
    Box2 box = word_xbox(m, chi, word[0]);
    const int R = budget.base_res;
    const double hx = (box.hi[0] - box.lo[0]) / R, hy = (box.hi[1] - box.lo[1]) / R;
    const double rho = budget.local_cells * std::max(hx, hy);

    Vec xstar = word_fixed_point(m, word, 0.5 * (box.lo + box.hi));
    bool singular = xstar[0] > box.lo[0] - rho && xstar[0] < box.hi[0] + rho &&
                    xstar[1] > box.lo[1] - rho && xstar[1] < box.hi[1] + rho;

    cplx acc = 0;
    for (int iy = 0; iy < R; ++iy) {
        for (int ix = 0; ix < R; ++ix) {
            Vec x(2);
            x << box.lo[0] + (ix + 0.5) * hx, box.lo[1] + (iy + 0.5) * hy;
            double blend = 1.0;
            if (singular) {
                double r = (x - xstar).norm();
                if (r < 1e-6) {  // node on the singularity: shift it
                    x[0] += 0.5 * hx;
                    ++res.shifted_nodes;
                    r = (x - xstar).norm();
                }
                if (r < 0.5 * rho) continue;
                blend = detail::smoothstep5((r / rho - 0.5) * 2.0);
                if (blend <= 0) continue;
            }
            WordEval ev = eval_word_integrand(m, chi, word, x);
            if (ev.zero) continue;
            acc += blend * hx * hy * word_kernel_density(k, ev);
        }
    }
    if (singular) {
        for (int ir = 0; ir < budget.polar_rad; ++ir) {
            double r = rho * (ir + 0.5) / budget.polar_rad;
            double dr = rho / budget.polar_rad;
            double blend = 1.0 - detail::smoothstep5((r / rho - 0.5) * 2.0);
            if (blend <= 0) continue;
            for (int ia = 0; ia < budget.polar_ang; ++ia) {
                double th = two_pi * ia / budget.polar_ang;
                Vec x(2);
                x << xstar[0] + r * std::cos(th), xstar[1] + r * std::sin(th);
                WordEval ev = eval_word_integrand(m, chi, word, x);
                if (ev.zero) continue;
                acc += blend * r * dr * (two_pi / budget.polar_ang) * word_kernel_density(k, ev);
            }
        }
    }
    res.value = acc;
    return res;
}

}  // namespace kdetail

struct KneadingCoeff {
    int k = 0;
    int ell = 0;
    cplx value = 0.0;           // (-1)^{k+1} * orientation * integral sum
    cplx raw_integral = 0.0;    // sum over words of the diagonal integrals
    double refine_residual = 0;  // |value(budget) - value(coarser budget)|
    int shifted_nodes = 0;
};

// Sum over branch words of length ell+1 of int K_{k,ell}(x,x) dx; deterministic
// ordered reduction over the lexicographic word list.
inline cplx kneading_raw_integral(const TorusMapModel& m, int k, int ell,
                                  const KneadingBudget& budget, int threads = 1,
                                  int* shifted_out = nullptr) {
    if (k < 0 || k > 1) throw Error("kneading traces implemented for k = 0, 1 (n = 2)");
    ChiCutoff chi;
    auto offsets = kdetail::interaction_offsets(m, chi);
    const int L = ell + 1;
    uint64_t nwords = 1;
    for (int i = 0; i < L; ++i) nwords *= offsets.size();

    std::vector<cplx> buf(nwords, 0.0);
    std::vector<int> shifted(nwords, 0);
    parallel_for(nwords, threads, [&](size_t rank) {
        std::vector<Eigen::VectorXi> word(L);
        uint64_t r = rank;
        for (int i = L - 1; i >= 0; --i) {
            word[i] = offsets[r % offsets.size()];
            r /= offsets.size();
        }
        auto wi = kdetail::word_diagonal_integral(m, chi, k, word, budget);
        buf[rank] = wi.value;
        shifted[rank] = wi.shifted_nodes;
    });
    cplx total = 0;
    int sh = 0;
    for (size_t i = 0; i < buf.size(); ++i) {
        total += buf[i];
        sh += shifted[i];
    }
    if (shifted_out) *shifted_out = sh;
    return total;
}

inline KneadingCoeff kneading_trace_coeff(const TorusMapModel& m, int k, int ell,
                                          const KneadingBudget& budget, int orientation = 1,
                                          int threads = 1, bool with_refinement = true) {
    KneadingCoeff c;
    c.k = k;
    c.ell = ell;
    double sgn = ((k + 1) % 2 == 0) ? 1.0 : -1.0;
    int sh = 0;
    c.raw_integral = kneading_raw_integral(m, k, ell, budget, threads, &sh);
    c.shifted_nodes = sh;
    c.value = sgn * double(orientation) * c.raw_integral;
    if (with_refinement) {
        cplx coarse = kneading_raw_integral(m, k, ell, budget.coarsened(), threads, nullptr);
        c.refine_residual = std::abs(c.raw_integral - coarse);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Order-2 ingredient: diagonal integral of the composed kernel (K * K)_k,
//   int_x int_w K_{k,0}(x,w) ^ K_{k,0}(w,x).
// Letters a, b run over the interaction offsets; the w integral is done on a
// union grid with polar patches at the two kernel singularities
// w = psi_a(x) and w = F(x) - b.

namespace kdetail {

struct LetterEval {
    Vec y;       // psi_a(x)
    Mat Dpsi;
    cplx h[2];
    bool zero;
};

inline LetterEval eval_letter(const TorusMapModel& m, const ChiCutoff& chi,
                              const Eigen::VectorXi& off, const Vec& x) {
    LetterEval ev;
    ev.zero = true;
    Vec y = torus_branch_eval(m, off, x);
    Mat Dpsi = torus_branch_jacobian(m, y);
    double cy = chi.chi(y);
    Vec dchi = chi.grad(y);
    if (cy == 0.0 && dchi[0] == 0.0 && dchi[1] == 0.0) return ev;
    cplx g = m.weight_value(y);
    VecC dgy = m.weight_grad(y);
    VecC inner(2);
    for (int c = 0; c < 2; ++c) inner[c] = cy * dgy[c] + g * cplx(dchi[c]);
    VecC h = Dpsi.transpose().cast<cplx>() * inner;
    ev.y = y;
    ev.Dpsi = Dpsi;
    ev.h[0] = h[0];
    ev.h[1] = h[1];
    ev.zero = (h[0] == 0.0 && h[1] == 0.0);
    return ev;
}

// scalar kernel factors of K_{k,0}: k=0 pairs the one-form h with the sigma
// vector; k=1 contracts through the pullback.
inline cplx pair_kernel_factor(int k, const LetterEval& ev, const Vec& target, bool first_slot) {
    // first_slot: K(x,w) with v = psi(x) - w; else K(w,x) with s = psi(w) - x
    Vec v = ev.y - target;
    double r2 = v.squaredNorm();
    if (k == 0) {
        // K0(x,w) = [h(x) (x-form)] tensor [ (v2 dw1 - v1 dw2)/(2 pi r2) ]
        // composition contracts h with the sigma vector of the other factor;
        // the scalar carried by this slot is 1/(2 pi r2) with v kept aside.
        (void)first_slot;
        return cplx(1.0) / (two_pi * r2);
    }
    // k = 1: full scalar kernel (2-form coefficient in its base variable)
    cplx c1 = v[0] * ev.Dpsi(1, 0) - v[1] * ev.Dpsi(0, 0);
    cplx c2 = v[0] * ev.Dpsi(1, 1) - v[1] * ev.Dpsi(0, 1);
    return (ev.h[0] * c2 - ev.h[1] * c1) / (two_pi * r2);
}

}  // namespace kdetail

// int_x int_w of the composed diagonal kernel for degree k, all letter pairs.
inline cplx kneading_pair_integral(const TorusMapModel& m, int k, const KneadingBudget& budget,
                                   int threads = 1) {
    if (k < 0 || k > 1) throw Error("composed kneading kernel implemented for k = 0, 1");
    ChiCutoff chi;
    auto offsets = kdetail::interaction_offsets(m, chi);
    const int nOff = (int)offsets.size();

    // outer x-box: union over a of B_a; inner w-box likewise
    Box2 xbox = kdetail::word_xbox(m, chi, offsets.front());
    for (const auto& o : offsets) {
        Box2 b = kdetail::word_xbox(m, chi, o);
        for (int c = 0; c < 2; ++c) {
            xbox.lo[c] = std::min(xbox.lo[c], b.lo[c]);
            xbox.hi[c] = std::max(xbox.hi[c], b.hi[c]);
        }
    }
    const Box2 wbox = xbox;

    const int RO = budget.pair_outer_res, RI = budget.pair_inner_res;
    const double hx = (xbox.hi[0] - xbox.lo[0]) / RO, hy = (xbox.hi[1] - xbox.lo[1]) / RO;
    const double wx = (wbox.hi[0] - wbox.lo[0]) / RI, wy = (wbox.hi[1] - wbox.lo[1]) / RI;
    const double rho = 3.0 * std::max(wx, wy);

    std::vector<cplx> buf((size_t)RO * RO, 0.0);
    parallel_for((size_t)RO * RO, threads, [&](size_t idx) {
        int ix = int(idx % RO), iy = int(idx / RO);
        Vec x(2);
        x << xbox.lo[0] + (ix + 0.5) * hx, xbox.lo[1] + (iy + 0.5) * hy;

        // letter data at x for every offset a
        std::vector<kdetail::LetterEval> at_x(nOff);
        std::vector<char> active_a(nOff, 0);
        for (int a = 0; a < nOff; ++a) {
            at_x[a] = kdetail::eval_letter(m, chi, offsets[a], x);
            active_a[a] = !at_x[a].zero;
        }
        bool any = false;
        for (int a = 0; a < nOff; ++a) any = any || active_a[a];
        if (!any) return;

        // singular points in w: psi_a(x) (one per active a) and F(x) - b
        Vec Fx = m.lift(x);
        auto inner_integrand = [&](const Vec& w, double& /*unused*/) -> cplx {
            // sum over a,b of K(x,w) K(w,x) scalar contractions
            cplx sum = 0;
            std::vector<kdetail::LetterEval> at_w(nOff);
            std::vector<char> active_b(nOff, 0);
            for (int b = 0; b < nOff; ++b) {
                at_w[b] = kdetail::eval_letter(m, chi, offsets[b], w);
                active_b[b] = !at_w[b].zero;
            }
            for (int a = 0; a < nOff; ++a) {
                if (!active_a[a]) continue;
                for (int b = 0; b < nOff; ++b) {
                    if (!active_b[b]) continue;
                    if (k == 0) {
                        Vec v = at_x[a].y - w;       // K(x,w) sigma argument
                        Vec s = at_w[b].y - x;       // K(w,x) sigma argument
                        double rv = v.squaredNorm(), rs = s.squaredNorm();
                        if (rv < 1e-28 || rs < 1e-28) continue;
                        // w-pairing gives +(v . h_b(w)); diagonal wedge -(h_a(x) . s)
                        cplx ha_s = at_x[a].h[0] * s[0] + at_x[a].h[1] * s[1];
                        cplx v_hb = v[0] * at_w[b].h[0] + v[1] * at_w[b].h[1];
                        sum += -(ha_s * v_hb) / (two_pi * rv * two_pi * rs);
                    } else {
                        Vec v = at_x[a].y - w;
                        Vec s = at_w[b].y - x;
                        if (v.squaredNorm() < 1e-28 || s.squaredNorm() < 1e-28) continue;
                        cplx ka = kdetail::pair_kernel_factor(1, at_x[a], w, true);
                        cplx kb = kdetail::pair_kernel_factor(1, at_w[b], x, false);
                        sum += ka * kb;
                    }
                }
            }
            return sum;
        };

        // blend weights for the polar patches
        std::vector<Vec> centers;
        for (int a = 0; a < nOff; ++a)
            if (active_a[a]) centers.push_back(at_x[a].y);
        for (int b = 0; b < nOff; ++b) {
            Vec c = Fx - offsets[b].cast<double>();
            if (c[0] > wbox.lo[0] - rho && c[0] < wbox.hi[0] + rho && c[1] > wbox.lo[1] - rho &&
                c[1] < wbox.hi[1] + rho)
                centers.push_back(c);
        }
        auto tensor_blend = [&](const Vec& w) {
            double bl = 1.0;
            for (const auto& c : centers) {
                double r = (w - c).norm();
                if (r < rho) bl *= detail::smoothstep5((r / rho - 0.5) * 2.0);
            }
            return bl;
        };

        cplx inner = 0.0;
        double dummy = 0;
        for (int jy = 0; jy < RI; ++jy)
            for (int jx = 0; jx < RI; ++jx) {
                Vec w(2);
                w << wbox.lo[0] + (jx + 0.5) * wx, wbox.lo[1] + (jy + 0.5) * wy;
                double bl = tensor_blend(w);
                if (bl <= 0) continue;
                inner += bl * wx * wy * inner_integrand(w, dummy);
            }
        // polar patches: integrand * (1 - blend restricted to one center),
        // weighted so overlapping patches partition correctly
        for (size_t ci = 0; ci < centers.size(); ++ci) {
            for (int ir = 0; ir < budget.pair_polar_rad; ++ir) {
                double r = rho * (ir + 0.5) / budget.pair_polar_rad;
                double blc = 1.0 - detail::smoothstep5((r / rho - 0.5) * 2.0);
                if (blc <= 0) continue;
                for (int ia = 0; ia < budget.pair_polar_ang; ++ia) {
                    double th = two_pi * ia / budget.pair_polar_ang;
                    Vec w(2);
                    w << centers[ci][0] + r * std::cos(th), centers[ci][1] + r * std::sin(th);
                    // partition: remove this center's blend, keep the others'
                    double rest = 1.0;
                    for (size_t cj = 0; cj < centers.size(); ++cj) {
                        if (cj == ci) continue;
                        double rr = (w - centers[cj]).norm();
                        if (rr < rho) rest *= detail::smoothstep5((rr / rho - 0.5) * 2.0);
                    }
                    inner += blc * rest * r * (rho / budget.pair_polar_rad) *
                             (two_pi / budget.pair_polar_ang) * inner_integrand(w, dummy);
                }
            }
        }
        buf[idx] = inner * hx * hy;
    });

    cplx total = 0;
    for (const auto& v : buf) total += v;
    return total;
}

// ---------------------------------------------------------------------------

struct MTOrderResult {
    int order;
    cplx lhs;       // z^order coefficient of log Det#(Id - zM)
    cplx rhs;       // same coefficient from the kneading side
    double residual;
};

// Order-by-order Milnor-Thurston check: compares coefficients of the log of
// both sides. Order 1 uses the length-1 diagonal integrals; order 2 adds the
// composed-kernel correction.
inline MTOrderResult mt_identity_check(const BranchSystem& sys, const PeriodicOrbitTable& tab,
                                       int order, const KneadingBudget& budget, int orientation = 1,
                                       int threads = 1) {
    if (order < 1 || order > 2) throw Error("mt_identity_check supports orders 1 and 2 only");
    const TorusMapModel& m = sys.model();
    MTOrderResult r;
    r.order = order;
    if (order == 1) {
        r.lhs = -sharp_trace(tab, 1);
        cplx rhs = 0;
        for (int k = 0; k <= 1; ++k) rhs += kneading_raw_integral(m, k, 0, budget, threads);
        r.rhs = double(orientation) * rhs;
    } else {
        r.lhs = -sharp_trace(tab, 2) / 2.0;
        cplx rhs = 0;
        for (int k = 0; k <= 1; ++k) {
            cplx first = kneading_raw_integral(m, k, 1, budget, threads);
            cplx second = kneading_pair_integral(m, k, budget, threads);
            rhs += first - 0.5 * second;
        }
        r.rhs = double(orientation) * rhs;
    }
    r.residual = std::abs(r.lhs - r.rhs);
    return r;
}

}  // namespace knd
