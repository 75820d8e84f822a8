#pragma once

// Truncated complex power series with exact-mod-z^{M+1} arithmetic, plus the
// determinant/zeta series built from orbit traces.

#include <knd/orbits.hpp>

#include <initializer_list>

namespace knd {

class TruncatedSeries {
public:
    TruncatedSeries() : c_(1, 0.0) {}
    explicit TruncatedSeries(int M) : c_(M + 1, 0.0) {}
    TruncatedSeries(std::initializer_list<cplx> cs) : c_(cs) {
        if (c_.empty()) c_.assign(1, 0.0);
    }
    static TruncatedSeries one(int M) {
        TruncatedSeries s(M);
        s.c_[0] = 1.0;
        return s;
    }

    int order() const { return (int)c_.size() - 1; }
    cplx& operator[](int i) { return c_[i]; }
    const cplx& operator[](int i) const { return c_[i]; }
    const std::vector<cplx>& coeffs() const { return c_; }

    TruncatedSeries truncated(int M) const {
        TruncatedSeries r(M);
        for (int i = 0; i <= std::min(M, order()); ++i) r.c_[i] = c_[i];
        return r;
    }

    TruncatedSeries operator+(const TruncatedSeries& o) const {
        TruncatedSeries r(std::max(order(), o.order()));
        for (int i = 0; i <= r.order(); ++i) r.c_[i] = get(i) + o.get(i);
        return r;
    }
    TruncatedSeries operator-(const TruncatedSeries& o) const {
        TruncatedSeries r(std::max(order(), o.order()));
        for (int i = 0; i <= r.order(); ++i) r.c_[i] = get(i) - o.get(i);
        return r;
    }
    TruncatedSeries operator*(const TruncatedSeries& o) const {
        TruncatedSeries r(std::max(order(), o.order()));
        for (int i = 0; i <= r.order(); ++i) {
            cplx s = 0;
            for (int j = 0; j <= i; ++j) s += get(j) * o.get(i - j);
            r.c_[i] = s;
        }
        return r;
    }
    TruncatedSeries operator*(cplx a) const {
        TruncatedSeries r = *this;
        for (auto& v : r.c_) v *= a;
        return r;
    }

    // 1/s, requires c_0 != 0.
    TruncatedSeries reciprocal() const {
        if (c_[0] == 0.0) throw Error("series reciprocal needs a unit constant term");
        TruncatedSeries r(order());
        r.c_[0] = 1.0 / c_[0];
        for (int i = 1; i <= order(); ++i) {
            cplx s = 0;
            for (int j = 1; j <= i; ++j) s += c_[j] * r.c_[i - j];
            r.c_[i] = -s / c_[0];
        }
        return r;
    }
    TruncatedSeries operator/(const TruncatedSeries& o) const { return *this * o.reciprocal(); }

    // exp(s): e' = s' e, so m e_m = sum_{j=1}^m j s_j e_{m-j}.
    TruncatedSeries exp() const {
        TruncatedSeries r(order());
        r.c_[0] = std::exp(c_[0]);
        for (int m = 1; m <= order(); ++m) {
            cplx s = 0;
            for (int j = 1; j <= m; ++j) s += double(j) * c_[j] * r.c_[m - j];
            r.c_[m] = s / double(m);
        }
        return r;
    }

    // log(s), requires c_0 != 0: s = exp(l) gives m s_m = sum j l_j s_{m-j}.
    TruncatedSeries log() const {
        if (c_[0] == 0.0) throw Error("series log needs a nonzero constant term");
        TruncatedSeries l(order());
        l.c_[0] = std::log(c_[0]);
        for (int m = 1; m <= order(); ++m) {
            cplx s = double(m) * c_[m];
            for (int j = 1; j < m; ++j) s -= double(j) * l.c_[j] * c_[m - j];
            l.c_[m] = s / (double(m) * c_[0]);
        }
        return l;
    }

    TruncatedSeries pow(int p) const {
        TruncatedSeries r = one(order());
        TruncatedSeries base = *this;
        int e = p;
        while (e > 0) {
            if (e & 1) r = r * base;
            base = base * base;
            e >>= 1;
        }
        return r;
    }

    cplx eval(cplx z) const {
        cplx s = 0;
        for (int i = order(); i >= 0; --i) s = s * z + c_[i];
        return s;
    }
    cplx eval_derivative(cplx z) const {
        cplx s = 0;
        for (int i = order(); i >= 1; --i) s = s * z + double(i) * c_[i];
        return s;
    }

    double max_abs_diff(const TruncatedSeries& o) const {
        double d = 0;
        for (int i = 0; i <= std::max(order(), o.order()); ++i)
            d = std::max(d, std::abs(get(i) - o.get(i)));
        return d;
    }

private:
    cplx get(int i) const { return (i >= 0 && i <= order()) ? c_[i] : cplx(0); }
    std::vector<cplx> c_;
};

// exp(-sum_{m>=1} z^m t_m / m) truncated at z^M.
inline TruncatedSeries series_exp_neg_sum(const std::vector<cplx>& traces, int M) {
    TruncatedSeries s(M);
    for (int m = 1; m <= M; ++m) {
        cplx t = (m - 1 < (int)traces.size()) ? traces[m - 1] : cplx(0);
        s[m] = -t / double(m);
    }
    return s.exp();
}

inline TruncatedSeries sharp_determinant_series(const PeriodicOrbitTable& tab, int M) {
    std::vector<cplx> t(M);
    for (int m = 1; m <= M; ++m) t[m - 1] = sharp_trace(tab, m);
    return series_exp_neg_sum(t, M);
}

inline TruncatedSeries zeta_series(const PeriodicOrbitTable& tab, int M) {
    std::vector<cplx> t(M);
    for (int m = 1; m <= M; ++m) t[m - 1] = -zeta_trace(tab, m);  // plus sign in the exponent
    return series_exp_neg_sum(t, M);
}

inline TruncatedSeries ruelle_flat_determinant_series(const PeriodicOrbitTable& tab, int k, int M) {
    std::vector<cplx> t(M);
    for (int m = 1; m <= M; ++m) t[m - 1] = flat_trace_coeff(tab, k, m);
    return series_exp_neg_sum(t, M);
}

// Scalar-trace check of the regularisation identity: with u(w) the scalar
// reduction of the regularised operator series (every z^m coefficient is a
// multiple of the m-th operator power), compare
//   Det(Id - u) == Det(Id - w) * exp(sum_{j<l} w^j t_j / j)
// where each w^m carries the flat trace t_m of the m-th power.
inline double regularized_identity_check(const PeriodicOrbitTable& tab, int k, int ell, int M) {
    if (ell < 1 || M < ell) throw Error("regularized_identity_check needs 1 <= ell <= M");
    std::vector<cplx> t(M + 1, 0.0);
    for (int m = 1; m <= M; ++m) t[m] = flat_trace_coeff(tab, k, m);

    // u(w) = 1 - (1 - w) exp(sum_{j=1}^{ell-1} w^j / j)
    TruncatedSeries expo(M);
    for (int j = 1; j < ell; ++j) expo[j] = 1.0 / double(j);
    TruncatedSeries one_minus_w(M);
    one_minus_w[0] = 1.0;
    one_minus_w[1] = -1.0;
    TruncatedSeries u = TruncatedSeries::one(M) - one_minus_w * expo.exp();

    // log Det(Id - u(w)M): -sum_p (1/p) [u^p]_m t_m per z^m
    std::vector<cplx> lhs_log(M + 1, 0.0);
    TruncatedSeries up = TruncatedSeries::one(M);
    for (int p = 1; p <= M; ++p) {
        up = up * u;
        for (int m = p; m <= M; ++m) lhs_log[m] -= up[m] * t[m] / double(p);
    }
    TruncatedSeries lhs(M);
    for (int m = 0; m <= M; ++m) lhs[m] = lhs_log[m];
    lhs = lhs.exp();

    // rhs: Det(Id - wM) * exp(sum_{j<ell} w^j t_j / j)
    TruncatedSeries det(M), extra(M);
    for (int m = 1; m <= M; ++m) det[m] = -t[m] / double(m);
    for (int j = 1; j < ell; ++j) extra[j] = t[j] / double(j);
    TruncatedSeries rhs = det.exp() * extra.exp();

    return lhs.max_abs_diff(rhs);
}

}  // namespace knd
