#pragma once

// The singular kernels sigma_k solving d sigma = delta, the convolution
// operators S_k with blended polar quadrature near the singularity, the
// auxiliary operators N_k, and the numerical homotopy/projector checks.

#include <knd/model.hpp>

#include <array>
#include <functional>

namespace knd {

// ---------------------------------------------------------------------------
// Kernel structure tables.

// sigma_k(x,y) = sum of terms  coef * c_n * u_axis / |u|^n  dx_{S(xcomp)} (x) dy_{S(ycomp)},
// u = x - y, where xcomp indexes I(k) and ycomp indexes I(n-k-1).
struct SigmaTerm {
    int xcomp;
    int ycomp;
    int axis;
    double coef;
};

inline double sigma_normalization(int n) {
    // Gamma(n/2) / (2 pi^{n/2})
    return std::tgamma(0.5 * n) / (2.0 * std::pow(M_PI, 0.5 * n));
}

inline std::vector<SigmaTerm> sigma_terms(int n, int k) {
    if (k < 0 || k > n - 1) throw Error("sigma_k requires 0 <= k <= n-1");
    auto xsubs = ordered_subsets(n, k);
    auto ysubs = ordered_subsets(n, n - k - 1);
    auto index_of = [](const std::vector<std::vector<int>>& subs, const std::vector<int>& s) {
        for (size_t i = 0; i < subs.size(); ++i)
            if (subs[i] == s) return (int)i;
        throw Error("subset lookup failed");
    };
    std::vector<SigmaTerm> terms;
    for (int i = 0; i < n; ++i) {
        // slots {0..n-1} \ {i} in increasing order carry (dx_j - dy_j)
        std::vector<int> slots;
        for (int j = 0; j < n; ++j)
            if (j != i) slots.push_back(j);
        int base_sign = (i % 2 == 0) ? 1 : -1;  // (-1)^{i+1} with 1-based i
        // choose the dx positions among the n-1 slots
        for (uint32_t mask = 0; mask < (1u << slots.size()); ++mask) {
            if (__builtin_popcount(mask) != k) continue;
            std::vector<int> S, T;
            std::vector<bool> is_dx;
            int dy_sign = 1;
            for (size_t p = 0; p < slots.size(); ++p) {
                if (mask & (1u << p)) {
                    S.push_back(slots[p]);
                    is_dx.push_back(true);
                } else {
                    T.push_back(slots[p]);
                    is_dx.push_back(false);
                    dy_sign = -dy_sign;  // each dy slot carries -dy_j
                }
            }
            int sign = base_sign * dy_sign * shuffle_sign(is_dx);
            if (n % 2) sign = -sign;  // sigma_k = (-1)^n (bidegree-k part)
            terms.push_back({index_of(xsubs, S), index_of(ysubs, T), i, double(sign)});
        }
    }
    return terms;
}

// Component matrix sigma_k(x,y): entry (xcomp, ycomp).
inline Mat sigma_eval(int n, int k, const Vec& x, const Vec& y) {
    Vec u = x - y;
    double r = u.norm();
    if (r < 1e-14) throw Error("sigma kernel evaluated on the diagonal");
    double cn = sigma_normalization(n);
    double rn = std::pow(r, n);
    Mat out = Mat::Zero(binomial(n, k), binomial(n, n - k - 1));
    for (const auto& t : sigma_terms(n, k)) out(t.xcomp, t.ycomp) += cn * t.coef * u[t.axis] / rn;
    return out;
}

// Green kernel coefficient E(u) (an n-form) and its codifferential, n = 2.
inline double green_coeff_2d(const Vec& u) { return std::log(u.norm()) / two_pi; }

// d* of (phi dx1^dx2) has components (-d2 phi, +d1 phi) on (dx1, dx2);
// applied to E this reproduces sigma in closed form.
inline Vec green_codifferential_2d(const Vec& u) {
    double r2 = u.squaredNorm();
    Vec s(2);
    s[0] = -u[1] / (two_pi * r2);
    s[1] = u[0] / (two_pi * r2);
    return s;
}

// ---------------------------------------------------------------------------
// Forms on R^2 given by closed-form component samplers.

struct Box2 {
    Vec lo, hi;
};

struct FormSampler2 {
    int k = 0;
    std::function<double(int comp, const Vec& x)> value;
    Box2 support;
    int comps() const { return binomial(2, k); }
};

// Radial C^inf bump amp*exp(1 - 1/(1-t)), t = |x-c|^2/R^2.
struct Bump2 {
    Vec c;
    double R = 0.25;
    double amp = 1.0;

    double value(const Vec& x) const {
        double t = (x - c).squaredNorm() / (R * R);
        if (t >= 1.0) return 0.0;
        return amp * std::exp(1.0 - 1.0 / (1.0 - t));
    }
    Vec grad(const Vec& x) const {
        double t = (x - c).squaredNorm() / (R * R);
        if (t >= 1.0) return Vec::Zero(2);
        double b = amp * std::exp(1.0 - 1.0 / (1.0 - t));
        double dbdt = -b / ((1.0 - t) * (1.0 - t));
        return dbdt * 2.0 / (R * R) * (x - c);
    }
};

inline FormSampler2 bump_form(int k, const std::vector<Bump2>& bumps, const Box2& box) {
    FormSampler2 f;
    f.k = k;
    f.support = box;
    f.value = [bumps](int comp, const Vec& x) { return bumps.at(comp).value(x); };
    return f;
}

// Exterior derivative of a bump-component form, in closed form.
inline FormSampler2 bump_form_d(int k, const std::vector<Bump2>& bumps, const Box2& box) {
    FormSampler2 f;
    f.k = k + 1;
    f.support = box;
    if (k == 0) {
        f.value = [bumps](int comp, const Vec& x) { return bumps.at(0).grad(x)[comp]; };
    } else if (k == 1) {
        f.value = [bumps](int, const Vec& x) {
            return bumps.at(1).grad(x)[0] - bumps.at(0).grad(x)[1];
        };
    } else {
        f.value = [](int, const Vec&) { return 0.0; };
    }
    return f;
}

// ---------------------------------------------------------------------------
// S_k by blended quadrature: tensor midpoint rule away from the target with a
// smooth cut, plus a polar rule capturing the integrable 1/r singularity.

struct QuadSpec {
    int res = 128;        // tensor cells per axis over the support box
    int local_cells = 4;  // blend radius in cells
    int polar_ang = 32;
    int polar_rad = 16;

    QuadSpec refined() const {
        QuadSpec q = *this;
        q.res *= 2;
        return q;
    }
};

namespace detail {

inline double smoothstep5(double t) {
    if (t <= 0) return 0;
    if (t >= 1) return 1;
    return t * t * t * (10 + t * (-15 + 6 * t));
}

// y-pairing signs: sigma_k's dy_T wedged with the (k+1)-form component dy_J
// gives sign * dy_1^...^dy_n when T and J partition {0,...,n-1}.
inline int pairing_sign(const std::vector<int>& T, const std::vector<int>& J, int n) {
    std::vector<int> mark(n, 0);
    for (int t : T) mark[t] = 1;
    for (int j : J) {
        if (mark[j]) return 0;  // shared slot: wedge vanishes
        mark[j] = 2;
    }
    std::vector<bool> is_first;
    for (int i = 0; i < n; ++i) is_first.push_back(mark[i] == 1);
    // sign to reorder dy_{T then J} into increasing order equals the shuffle
    // sign of the inverse rearrangement
    return shuffle_sign(is_first);
}

}  // namespace detail

// S_k phi(x) = (-1)^n int sigma_k(x,y) ^ phi(y); phi is a (k+1)-form.
// Returns the C(2,k) components of the k-form at x.
inline std::vector<double> apply_S_point(int k, const FormSampler2& phi, const QuadSpec& q,
                                         const Vec& x) {
    if (phi.k != k + 1) throw Error("apply_S_point: degree mismatch");
    if (!(phi.support.hi[0] > phi.support.lo[0])) throw Error("apply_S needs compact support");
    const int n = 2;
    const auto terms = sigma_terms(n, k);
    const auto ysubs = ordered_subsets(n, n - k - 1);
    const auto jsubs = ordered_subsets(n, k + 1);
    const double cn = sigma_normalization(n);

    // precompute the (ycomp, jcomp) pairing table
    const int nyc = (int)ysubs.size(), njc = (int)jsubs.size();
    std::vector<int> pair_sign((size_t)nyc * njc);
    for (int b = 0; b < nyc; ++b)
        for (int j = 0; j < njc; ++j)
            pair_sign[(size_t)b * njc + j] = detail::pairing_sign(ysubs[b], jsubs[j], n);

    const int C = binomial(n, k);
    std::vector<double> out(C, 0.0);
    const Vec lo = phi.support.lo, hi = phi.support.hi;
    const double hx = (hi[0] - lo[0]) / q.res, hy = (hi[1] - lo[1]) / q.res;
    const double rho = q.local_cells * std::max(hx, hy);

    auto kernel_accumulate = [&](const Vec& y, double wvol) {
        Vec u = x - y;
        double r2 = u.squaredNorm();
        std::array<double, 2> phiv{};  // at most C(2,k+1) <= 2 components
        for (int j = 0; j < njc; ++j) phiv[j] = phi.value(j, y);
        for (const auto& t : terms) {
            double base = cn * t.coef * u[t.axis] / r2;  // n = 2: |u|^n = r2
            for (int j = 0; j < njc; ++j) {
                int ps = pair_sign[(size_t)t.ycomp * njc + j];
                if (ps) out[t.xcomp] += wvol * base * ps * phiv[j];
            }
        }
    };

    // tensor part with the singular disc blended out
    for (int iy = 0; iy < q.res; ++iy) {
        for (int ix = 0; ix < q.res; ++ix) {
            Vec y(2);
            y << lo[0] + (ix + 0.5) * hx, lo[1] + (iy + 0.5) * hy;
            double r = (x - y).norm();
            if (r < 0.5 * rho) continue;
            double blend = detail::smoothstep5((r / rho - 0.5) * 2.0);
            if (blend <= 0) continue;
            kernel_accumulate(y, blend * hx * hy);
        }
    }

    // polar part: integrand * (1 - blend) on the disc of radius rho around x;
    // in polar coordinates the 1/r kernel is regular
    std::array<double, 2> phiv{};
    for (int ir = 0; ir < q.polar_rad; ++ir) {
        // midpoint in r against dr (kernel ~ 1/r times Jacobian r is smooth)
        double r = rho * (ir + 0.5) / q.polar_rad;
        double dr = rho / q.polar_rad;
        double blend = 1.0 - detail::smoothstep5((r / rho - 0.5) * 2.0);
        if (blend <= 0) continue;
        for (int ia = 0; ia < q.polar_ang; ++ia) {
            double th = two_pi * ia / q.polar_ang;
            Vec e(2);
            e << std::cos(th), std::sin(th);
            Vec y = x - r * e;
            double wvol = blend * r * dr * (two_pi / q.polar_ang);
            Vec u = r * e;
            for (int j = 0; j < njc; ++j) phiv[j] = phi.value(j, y);
            for (const auto& t : terms) {
                double base = cn * t.coef * u[t.axis] / (r * r);
                for (int j = 0; j < njc; ++j) {
                    int ps = pair_sign[(size_t)t.ycomp * njc + j];
                    if (ps) out[t.xcomp] += wvol * base * ps * phiv[j];
                }
            }
        }
    }
    return out;
}

// Sample S_k phi on a uniform grid over `box` (targets), reusing one
// quadrature table; parallel over targets.
struct GridField2 {
    Box2 box;
    int res = 0;
    int comps = 1;
    std::vector<double> v;  // comps * res * res, x-fastest

    double at(int comp, int ix, int iy) const { return v[(size_t)comp * res * res + iy * res + ix]; }
    Vec node(int ix, int iy) const {
        Vec p(2);
        p << box.lo[0] + (ix + 0.5) * (box.hi[0] - box.lo[0]) / res,
            box.lo[1] + (iy + 0.5) * (box.hi[1] - box.lo[1]) / res;
        return p;
    }
    // Catmull-Rom bicubic interpolation, zero outside the box
    double interp(int comp, const Vec& p) const {
        double fx = (p[0] - box.lo[0]) / (box.hi[0] - box.lo[0]) * res - 0.5;
        double fy = (p[1] - box.lo[1]) / (box.hi[1] - box.lo[1]) * res - 0.5;
        int ix = (int)std::floor(fx), iy = (int)std::floor(fy);
        double ax = fx - ix, ay = fy - iy;
        auto val = [&](int jx, int jy) -> double {
            if (jx < 0 || jy < 0 || jx >= res || jy >= res) return 0.0;
            return at(comp, jx, jy);
        };
        auto cr = [](double vm, double v0, double v1, double v2, double t) {
            return v0 + 0.5 * t * (v1 - vm + t * (2 * vm - 5 * v0 + 4 * v1 - v2 +
                                                  t * (3 * (v0 - v1) + v2 - vm)));
        };
        double rows[4];
        for (int r = -1; r <= 2; ++r)
            rows[r + 1] = cr(val(ix - 1, iy + r), val(ix, iy + r), val(ix + 1, iy + r),
                             val(ix + 2, iy + r), ax);
        return cr(rows[0], rows[1], rows[2], rows[3], ay);
    }
    FormSampler2 as_form(int k) const {
        FormSampler2 f;
        f.k = k;
        f.support = box;
        GridField2 copy = *this;
        f.value = [copy](int comp, const Vec& x) { return copy.interp(comp, x); };
        return f;
    }
};

inline GridField2 apply_S_grid(int k, const FormSampler2& phi, const QuadSpec& q, const Box2& box,
                               int res, int threads = 1) {
    GridField2 g;
    g.box = box;
    g.res = res;
    g.comps = binomial(2, k);
    g.v.assign((size_t)g.comps * res * res, 0.0);

    // the tensor-part integrand values are target independent: sample once
    const int n = 2;
    const auto terms = sigma_terms(n, k);
    const auto ysubs = ordered_subsets(n, n - k - 1);
    const auto jsubs = ordered_subsets(n, k + 1);
    const double cn = sigma_normalization(n);
    const int nyc = (int)ysubs.size(), njc = (int)jsubs.size();
    std::vector<int> pair_sign((size_t)nyc * njc);
    for (int b = 0; b < nyc; ++b)
        for (int j = 0; j < njc; ++j)
            pair_sign[(size_t)b * njc + j] = detail::pairing_sign(ysubs[b], jsubs[j], n);

    const Vec lo = phi.support.lo, hi = phi.support.hi;
    const double hx = (hi[0] - lo[0]) / q.res, hy = (hi[1] - lo[1]) / q.res;
    const double rho = q.local_cells * std::max(hx, hy);
    std::vector<double> phig((size_t)njc * q.res * q.res);
    parallel_for((size_t)q.res * q.res, threads, [&](size_t c) {
        int cx = int(c % q.res), cy = int(c / q.res);
        Vec y(2);
        y << lo[0] + (cx + 0.5) * hx, lo[1] + (cy + 0.5) * hy;
        for (int j = 0; j < njc; ++j) phig[(size_t)j * q.res * q.res + c] = phi.value(j, y);
    });

    parallel_for((size_t)res * res, threads, [&](size_t idx) {
        int ixg = int(idx % res), iyg = int(idx / res);
        Vec x = g.node(ixg, iyg);
        std::vector<double> out(g.comps, 0.0);

        for (int cy = 0; cy < q.res; ++cy) {
            double y1 = lo[1] + (cy + 0.5) * hy;
            double dy = x[1] - y1;
            for (int cx = 0; cx < q.res; ++cx) {
                double y0 = lo[0] + (cx + 0.5) * hx;
                double dx = x[0] - y0;
                double r2 = dx * dx + dy * dy;
                double r = std::sqrt(r2);
                if (r < 0.5 * rho) continue;
                double blend = detail::smoothstep5((r / rho - 0.5) * 2.0);
                if (blend <= 0) continue;
                double wvol = blend * hx * hy;
                size_t c = (size_t)cy * q.res + cx;
                double u[2] = {dx, dy};
                for (const auto& t : terms) {
                    double base = cn * t.coef * u[t.axis] / r2;
                    for (int j = 0; j < njc; ++j) {
                        int ps = pair_sign[(size_t)t.ycomp * njc + j];
                        if (ps) out[t.xcomp] += wvol * base * ps * phig[(size_t)j * q.res * q.res + c];
                    }
                }
            }
        }

        // polar part near the target
        for (int ir = 0; ir < q.polar_rad; ++ir) {
            double r = rho * (ir + 0.5) / q.polar_rad;
            double dr = rho / q.polar_rad;
            double blend = 1.0 - detail::smoothstep5((r / rho - 0.5) * 2.0);
            if (blend <= 0) continue;
            for (int ia = 0; ia < q.polar_ang; ++ia) {
                double th = two_pi * ia / q.polar_ang;
                double e0 = std::cos(th), e1 = std::sin(th);
                Vec y(2);
                y << x[0] - r * e0, x[1] - r * e1;
                double wvol = blend * r * dr * (two_pi / q.polar_ang);
                double u[2] = {r * e0, r * e1};
                for (const auto& t : terms) {
                    double base = cn * t.coef * u[t.axis] / (r * r);
                    for (int j = 0; j < njc; ++j) {
                        int ps = pair_sign[(size_t)t.ycomp * njc + j];
                        if (ps) out[t.xcomp] += wvol * base * ps * phi.value(j, y);
                    }
                }
            }
        }
        for (int c = 0; c < g.comps; ++c) g.v[(size_t)c * res * res + idx] = out[c];
    });
    return g;
}

// 4th-order finite-difference exterior derivative of a grid-sampled form;
// stencils shift one-sidedly at the box edge.
inline GridField2 grid_d(const GridField2& g, int k) {
    GridField2 out;
    out.box = g.box;
    out.res = g.res;
    out.comps = binomial(2, k + 1);
    out.v.assign((size_t)out.comps * g.res * g.res, 0.0);
    double hx = (g.box.hi[0] - g.box.lo[0]) / g.res, hy = (g.box.hi[1] - g.box.lo[1]) / g.res;
    auto deriv = [&](int comp, int ix, int iy, int axis) -> double {
        int N = g.res;
        auto val = [&](int jx, int jy) {
            jx = std::clamp(jx, 0, N - 1);
            jy = std::clamp(jy, 0, N - 1);
            return g.at(comp, jx, jy);
        };
        double h = axis == 0 ? hx : hy;
        int i = axis == 0 ? ix : iy;
        auto pt = [&](int s) { return axis == 0 ? val(ix + s, iy) : val(ix, iy + s); };
        if (i >= 2 && i <= N - 3)
            return (-pt(2) + 8 * pt(1) - 8 * pt(-1) + pt(-2)) / (12 * h);
        if (i <= 1) return (pt(1) - pt(0)) / h * 1.0 + (pt(2) - 2 * pt(1) + pt(0)) / (2 * h) * 0.0;
        return (pt(0) - pt(-1)) / h;
    };
    for (int iy = 0; iy < g.res; ++iy)
        for (int ix = 0; ix < g.res; ++ix) {
            size_t idx = (size_t)iy * g.res + ix;
            if (k == 0) {
                out.v[idx] = deriv(0, ix, iy, 0);
                out.v[(size_t)g.res * g.res + idx] = deriv(0, ix, iy, 1);
            } else if (k == 1) {
                out.v[idx] = deriv(1, ix, iy, 0) - deriv(0, ix, iy, 1);
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Homotopy identity check: sup-norm of (d S + S d - Id) phi over probe points.

struct ResidualCurve {
    std::vector<int> levels;      // tensor resolution per level
    std::vector<double> h;        // cell size
    std::vector<double> residual;
};

// FD stencil step used to differentiate quadrature output at a probe point.
inline Vec s_derivative_at(int k, int comp, const FormSampler2& phi, const QuadSpec& q,
                           const Vec& x, double step) {
    Vec gderiv(2);
    for (int axis = 0; axis < 2; ++axis) {
        double acc = 0;
        for (int s : {-2, -1, 1, 2}) {
            Vec xp = x;
            xp[axis] += s * step;
            double v = apply_S_point(k, phi, q, xp).at(comp);
            acc += (s == 1 ? 8.0 : s == -1 ? -8.0 : s == 2 ? -1.0 : 1.0) * v;
        }
        gderiv[axis] = acc / (12 * step);
    }
    return gderiv;
}

// Residual of the homotopy identity on degree-k forms at one probe point.
// k = 0: S0 d0 phi = phi; k = 2: d1 S1 phi = phi; k = 1: d0 S0 + S1 d1.
inline double homotopy_residual_at(int k, const FormSampler2& phi, const FormSampler2& dphi,
                                   const QuadSpec& q, const Vec& x, double fd_step) {
    if (k == 0) {
        double v = apply_S_point(0, dphi, q, x).at(0);
        return std::abs(v - phi.value(0, x));
    }
    if (k == 1) {
        // d0 (S0 phi) components + S1 (d1 phi) components - phi
        Vec g = s_derivative_at(0, 0, phi, q, x, fd_step);
        auto sdv = apply_S_point(1, dphi, q, x);
        double r = 0;
        for (int c = 0; c < 2; ++c) r = std::max(r, std::abs(g[c] + sdv[c] - phi.value(c, x)));
        return r;
    }
    if (k == 2) {
        // d1 (S1 phi): curl of the 1-form S1 phi by finite differences
        Vec d_of_c1 = s_derivative_at(1, 1, phi, q, x, fd_step);
        Vec d_of_c0 = s_derivative_at(1, 0, phi, q, x, fd_step);
        double v = d_of_c1[0] - d_of_c0[1];
        return std::abs(v - phi.value(0, x));
    }
    throw Error("homotopy check: k out of range");
}

struct HomotopyBatteryItem {
    int k;                 // degree of the identity being checked
    FormSampler2 phi;      // degree-k test form
    FormSampler2 dphi;     // its exterior derivative (closed form)
    Box2 probe;            // probe window for the sup norm
};

inline ResidualCurve check_homotopy(const HomotopyBatteryItem& item, const QuadSpec& base,
                                    int n_levels, int probe_res = 9, int threads = 1) {
    ResidualCurve curve;
    QuadSpec q = base;
    for (int lev = 0; lev < n_levels; ++lev) {
        double cell = (item.phi.support.hi[0] - item.phi.support.lo[0]) / q.res;
        double fd_step = std::max(1.5 * cell, 1e-3);
        std::vector<double> vals((size_t)probe_res * probe_res, 0.0);
        QuadSpec qq = q;
        parallel_for(vals.size(), threads, [&](size_t idx) {
            int ix = int(idx % probe_res), iy = int(idx / probe_res);
            Vec x(2);
            x << item.probe.lo[0] + (ix + 0.5) * (item.probe.hi[0] - item.probe.lo[0]) / probe_res,
                item.probe.lo[1] + (iy + 0.5) * (item.probe.hi[1] - item.probe.lo[1]) / probe_res;
            vals[idx] = homotopy_residual_at(item.k, item.phi, item.dphi, qq, x, fd_step);
        });
        double sup = 0;
        for (double v : vals) sup = std::max(sup, v);
        curve.levels.push_back(q.res);
        curve.h.push_back(cell);
        curve.residual.push_back(sup);
        q = q.refined();
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Projector algebra: S S = 0 and the dS / Sd projector relations, probed on
// grid pipelines at a default quadrature.

struct AlgebraReport {
    double ss_residual = 0;     // ||S0 S1 psi||_sup
    double ds_projector = 0;    // ||(dS)^2 - dS||_sup
    double sd_projector = 0;    // ||(Sd)^2 - Sd||_sup
    double ds_sd_residual = 0;  // ||dS Sd phi||_sup

    double worst() const {
        return std::max(std::max(ss_residual, ds_projector),
                        std::max(sd_projector, ds_sd_residual));
    }
};

inline AlgebraReport check_algebra(int threads = 1) {
    AlgebraReport rep;
    Box2 supp{Vec::Constant(2, -0.8), Vec::Constant(2, 0.8)};
    Box2 big{Vec::Constant(2, -2.0), Vec::Constant(2, 2.0)};
    Box2 win{Vec::Constant(2, -0.55), Vec::Constant(2, 0.55)};
    const int gbig = 128, gwin = 40;
    QuadSpec q1;
    q1.res = 128;
    QuadSpec q2;
    q2.res = 192;

    std::vector<Bump2> b2 = {Bump2{(Vec(2) << 0.08, -0.06).finished(), 0.5, 1.0}};
    auto psi = bump_form(2, b2, supp);
    auto s1 = apply_S_grid(1, psi, q1, big, gbig, threads);
    auto s1f = s1.as_form(1);
    for (int t = 0; t < 25; ++t) {
        Vec x(2);
        x << -0.4 + 0.8 * (t % 5) / 4.0, -0.4 + 0.8 * (t / 5) / 4.0;
        rep.ss_residual = std::max(rep.ss_residual, std::abs(apply_S_point(0, s1f, q2, x).at(0)));
    }

    std::vector<Bump2> b1 = {Bump2{(Vec(2) << 0.05, 0.0).finished(), 0.4, 1.0},
                             Bump2{(Vec(2) << -0.05, 0.1).finished(), 0.45, 0.7}};
    auto phi = bump_form(1, b1, supp);
    auto dphi = bump_form_d(1, b1, supp);
    auto resample = [&](const GridField2& src) {
        GridField2 out;
        out.box = win;
        out.res = gwin;
        out.comps = 2;
        out.v.assign((size_t)2 * gwin * gwin, 0.0);
        for (int c = 0; c < 2; ++c)
            for (int iy = 0; iy < gwin; ++iy)
                for (int ix = 0; ix < gwin; ++ix)
                    out.v[(size_t)c * gwin * gwin + iy * gwin + ix] = src.interp(c, out.node(ix, iy));
        return out;
    };
    auto sup_diff = [](const GridField2& a, const GridField2& b) {
        double s = 0;
        for (size_t i = 0; i < a.v.size(); ++i) s = std::max(s, std::abs(a.v[i] - b.v[i]));
        return s;
    };

    auto s0_big = apply_S_grid(0, phi, q1, big, gbig, threads);
    auto A_big = grid_d(s0_big, 0);
    auto s0_win =
        apply_S_grid(0, phi, q1, Box2{Vec::Constant(2, -0.7), Vec::Constant(2, 0.7)}, 72, threads);
    auto A_ref = resample(grid_d(s0_win, 0));
    auto s0A = apply_S_grid(0, A_big.as_form(1), q2,
                            Box2{Vec::Constant(2, -0.6), Vec::Constant(2, 0.6)}, 44, threads);
    rep.ds_projector = sup_diff(resample(grid_d(s0A, 0)), A_ref);

    auto P_big = apply_S_grid(1, dphi, q1, big, gbig, threads);
    auto P2 = apply_S_grid(1, grid_d(P_big, 1).as_form(2), q2, win, gwin, threads);
    auto P_ref = resample(
        apply_S_grid(1, dphi, q1, Box2{Vec::Constant(2, -0.7), Vec::Constant(2, 0.7)}, 72, threads));
    rep.sd_projector = sup_diff(P2, P_ref);

    auto s0P = apply_S_grid(0, P_big.as_form(1), q2,
                            Box2{Vec::Constant(2, -0.6), Vec::Constant(2, 0.6)}, 44, threads);
    auto QP = grid_d(s0P, 0);
    for (int c = 0; c < 2; ++c)
        for (int iy = 4; iy < 40; ++iy)
            for (int ix = 4; ix < 40; ++ix)
                rep.ds_sd_residual = std::max(rep.ds_sd_residual, std::abs(QP.at(c, ix, iy)));
    return rep;
}

// ---------------------------------------------------------------------------
// Auxiliary operators N_k phi = sum_omega d g_omega ^ psi_omega^* phi.

// Components of the (k+1)-form N_k phi at x for a closed-form k-form phi
// given as complex component values.
inline VecC apply_N_point(const BranchSystem& sys, int k,
                          const std::function<cplx(int, const Vec&)>& phi, const Vec& x) {
    const int n = sys.n();
    auto ksubs = ordered_subsets(n, k);
    auto lsubs = ordered_subsets(n, k + 1);
    VecC out = VecC::Zero((int)lsubs.size());
    for (int b = 0; b < sys.size(); ++b) {
        const Branch& br = sys.branch(b);
        if (!br.in_domain(x)) continue;
        BranchStep st = br.step(x);
        VecC dg = br.weight_grad(x);
        // pullback components (psi^* phi)_I = sum_J phi_J(psi x) minor(Dpsi, J, I)
        VecC pb = VecC::Zero((int)ksubs.size());
        for (size_t I = 0; I < ksubs.size(); ++I)
            for (size_t J = 0; J < ksubs.size(); ++J)
                pb[(int)I] += phi((int)J, st.y) * minor_det(st.Dpsi, ksubs[J], ksubs[I]);
        // wedge dg ^ pb: (dg ^ beta)_L = sum_t (-1)^t dg_{L_t} beta_{L minus L_t}
        for (size_t L = 0; L < lsubs.size(); ++L) {
            cplx acc = 0;
            for (size_t t = 0; t < lsubs[L].size(); ++t) {
                std::vector<int> rest;
                for (size_t s = 0; s < lsubs[L].size(); ++s)
                    if (s != t) rest.push_back(lsubs[L][s]);
                int Iidx = -1;
                for (size_t I = 0; I < ksubs.size(); ++I)
                    if (ksubs[I] == rest) Iidx = (int)I;
                acc += double((t % 2) ? -1 : 1) * dg[lsubs[L][t]] * pb[Iidx];
            }
            out[(int)L] += acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Orientation calibration: the two closed-form identities that pin the
// two-variable integration signs; downstream (kneading) signs inherit from it.

struct SignConvention {
    int orientation = 1;          // +1: d sigma = delta with the standard pairing
    double residual_pairing = 0;  // |int sigma ^ d phi - phi(0)|
    double residual_codiff = 0;   // max |d* E - sigma| over sample points
};

inline SignConvention calibrate_orientation(int quad_res = 256) {
    SignConvention sc;
    // (1) int sigma(u) ^ d phi(u) = phi(0) for compactly supported phi
    Bump2 bump{Vec::Zero(2), 0.6, 1.0};
    double total = 0;
    double L = 0.7;
    double h = 2 * L / quad_res;
    for (int iy = 0; iy < quad_res; ++iy)
        for (int ix = 0; ix < quad_res; ++ix) {
            Vec u(2);
            u << -L + (ix + 0.5) * h, -L + (iy + 0.5) * h;
            double r = u.norm();
            if (r < 2.5 * h) continue;  // integrable hole, O(h) area contribution
            Vec g = bump.grad(u);
            // sigma ^ dphi = (1/2pi r^2)(u1 du2 - u2 du1) ^ (g1 du1 + g2 du2)
            //            = -(1/2pi r^2)(u1 g1 + u2 g2) du1^du2
            total += -(u[0] * g[0] + u[1] * g[1]) / (two_pi * r * r) * h * h;
        }
    // polar correction inside the hole: integrand = -(e.grad)/2pi, regular
    double rho = 2.5 * h;
    for (int ir = 0; ir < 8; ++ir)
        for (int ia = 0; ia < 32; ++ia) {
            double r = rho * (ir + 0.5) / 8, th = two_pi * ia / 32;
            Vec u(2);
            u << r * std::cos(th), r * std::sin(th);
            Vec g = bump.grad(u);
            total += -(u[0] * g[0] + u[1] * g[1]) / (two_pi * r * r) * r * (rho / 8) * (two_pi / 32);
        }
    sc.residual_pairing = std::abs(total - bump.value(Vec::Zero(2)));
    sc.orientation = total > 0 ? 1 : -1;

    // (2) d* E = sigma componentwise at sample points
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        double th = 0.0629 * (t + 1), r = 0.05 + 0.021 * t;
        Vec u(2);
        u << r * std::cos(th), r * std::sin(th);
        Vec de = green_codifferential_2d(u);
        Mat sig = sigma_eval(2, 1, u, Vec::Zero(2));  // 1-form in x, 0-form in y
        worst = std::max(worst, std::abs(de[0] - sig(0, 0)));
        worst = std::max(worst, std::abs(de[1] - sig(1, 0)));
    }
    sc.residual_codiff = worst;
    return sc;
}

}  // namespace knd
