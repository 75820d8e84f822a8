#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace knd {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;

inline constexpr double two_pi = 6.283185307179586476925286766559;

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ModelInvalidError : Error { using Error::Error; };
struct BranchEvalError : Error { using Error::Error; };
struct NotExpandingError : Error { using Error::Error; };
struct TransversalityError : Error { using Error::Error; };
struct EnumerationError : Error { using Error::Error; };
struct EigensolverError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Representative of t in [0,1).
inline double wrap01(double t) {
    double r = t - std::floor(t);
    if (r >= 1.0) r -= 1.0;
    return r;
}

// Representative of t in (-1/2, 1/2].
inline double wrap_half(double t) {
    double r = t - std::round(t);
    if (r <= -0.5) r += 1.0;
    return r;
}

inline Vec wrap01(Vec x) {
    for (int i = 0; i < x.size(); ++i) x[i] = wrap01(x[i]);
    return x;
}

inline double torus_dist(const Vec& a, const Vec& b) {
    double s = 0;
    for (int i = 0; i < a.size(); ++i) {
        double d = wrap_half(a[i] - b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

// Ordered k-subsets of {0,...,n-1}, lexicographic. I(0) = { {} }.
inline std::vector<std::vector<int>> ordered_subsets(int n, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    auto rec = [&](auto&& self, int start) -> void {
        if ((int)cur.size() == k) { out.push_back(cur); return; }
        for (int i = start; i <= n - (k - (int)cur.size()); ++i) {
            cur.push_back(i);
            self(self, i + 1);
            cur.pop_back();
        }
    };
    rec(rec, 0);
    return out;
}

inline int binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    long r = 1;
    for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
    return (int)r;
}

// det of the submatrix with rows `rows` and columns `cols`.
inline double minor_det(const Mat& J, const std::vector<int>& rows, const std::vector<int>& cols) {
    int k = (int)rows.size();
    if (k == 0) return 1.0;
    if (k == 1) return J(rows[0], cols[0]);
    if (k == 2)
        return J(rows[0], cols[0]) * J(rows[1], cols[1]) - J(rows[0], cols[1]) * J(rows[1], cols[0]);
    Mat sub(k, k);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) sub(a, b) = J(rows[a], cols[b]);
    return sub.determinant();
}

// Sum of k-by-k principal minors (= tr of the k-th exterior power).
inline double exterior_trace(const Mat& J, int k) {
    int n = (int)J.rows();
    double s = 0;
    for (const auto& idx : ordered_subsets(n, k)) s += minor_det(J, idx, idx);
    return s;
}

inline double operator_norm_2x2(const Mat& M) {
    Eigen::JacobiSVD<Mat> svd(M);
    return svd.singularValues()(0);
}

// Sign of the permutation that moves the `is_first`-marked slots to the front,
// keeping relative order within both groups.
inline int shuffle_sign(const std::vector<bool>& is_first) {
    int swaps = 0, seconds_seen = 0;
    for (bool f : is_first) {
        if (f) swaps += seconds_seen;
        else ++seconds_seen;
    }
    return (swaps % 2 == 0) ? 1 : -1;
}

// Static chunked parallel map: fn(i) for i in [0, count). Results must be
// written to index-addressed storage by the caller so reductions stay ordered.
template <class F>
void parallel_for(std::size_t count, int threads, F&& fn) {
    if (threads <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    int nt = std::min<std::size_t>(threads, count);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::size_t chunk = (count + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        std::size_t lo = t * chunk, hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace knd
