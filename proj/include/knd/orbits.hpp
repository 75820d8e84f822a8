#pragma once

// Periodic points of branch-word compositions: enumeration, weight products,
// Lefschetz signs, sharp traces and flat-trace ingredients per form degree.

#include <knd/model.hpp>

#include <algorithm>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>

namespace knd {

inline int lefschetz_sign(const Mat& J) {
    int n = (int)J.rows();
    double d = (Mat::Identity(n, n) - J).determinant();
    if (std::abs(d) <= 1e-10)
        throw TransversalityError("det(I - J) too close to zero at a fixed point");
    return d > 0 ? 1 : -1;
}

// x is the fixed point of the composed contraction in R^n coordinates; the
// torus representative is wrap01(x) (deduplication and exports wrap, the
// residual invariant holds for the R^n point itself).
struct PeriodicPoint {
    std::vector<int> word;
    Vec x;
    Mat J;
    cplx weight = 0.0;
    int lefschetz = 1;
    double det_ImJ = 0.0;
    bool canonical = true;
};

// Decode the lexicographic word of length m with the given rank.
inline std::vector<int> decode_word(uint64_t rank, int m, int alphabet) {
    std::vector<int> w(m);
    for (int i = m - 1; i >= 0; --i) {
        w[i] = int(rank % alphabet);
        rank /= alphabet;
    }
    return w;
}

// Unique fixed point of the composed contraction psi_w; nullopt in R^n mode
// when the composition leaves the branch domains.
inline std::optional<PeriodicPoint> find_fixed_point(const BranchSystem& sys,
                                                     const std::vector<int>& word) {
    if (word.empty()) throw Error("find_fixed_point: empty word");
    const int n = sys.n();
    Vec x = Vec::Constant(n, 0.5);
    if (sys.mode() == BranchSystem::Mode::Rn) {
        // seed at the centroid of first-branch images of the origin
        x = sys.branch(word[0]).eval(Vec::Zero(n));
    }

    auto apply = [&](const Vec& p) -> std::optional<Vec> {
        Vec cur = p;
        for (int wi : word) {
            const Branch& b = sys.branch(wi);
            if (!b.in_domain(cur)) return std::nullopt;
            cur = b.eval(cur);
        }
        return cur;
    };

    bool converged = false;
    for (int it = 0; it < 600; ++it) {
        auto nx = apply(x);
        if (!nx) {
            if (sys.mode() == BranchSystem::Mode::Rn) break;
            throw EnumerationError("torus branch left its domain");
        }
        double step = (*nx - x).norm();
        x = *nx;
        if (step < 1e-11) {
            converged = true;
            break;
        }
    }

    if (!converged) {
        // Newton multi-start on psi_w(x) - x = 0.
        std::vector<Vec> seeds;
        seeds.push_back(Vec::Constant(n, 0.5));
        seeds.push_back(Vec::Zero(n));
        for (int i = 0; i < sys.size(); ++i) seeds.push_back(sys.branch(i).eval(Vec::Zero(n)));
        bool found = false;
        for (const Vec& s : seeds) {
            Vec y = s;
            bool ok = true;
            for (int it = 0; it < 60; ++it) {
                WordResult r = sys.compose_word(word, y);
                if (!r.defined) {
                    ok = false;
                    break;
                }
                Vec res = r.y - y;
                if (res.norm() < 1e-12) break;
                Mat M = r.J - Mat::Identity(n, n);
                y -= M.lu().solve(res);
            }
            if (ok) {
                WordResult r = sys.compose_word(word, y);
                if (r.defined && (r.y - y).norm() < 1e-11) {
                    x = y;
                    found = true;
                    break;
                }
            }
        }
        if (!found) {
            if (sys.mode() == BranchSystem::Mode::Rn) return std::nullopt;
            throw EnumerationError("fixed-point search failed for a branch word");
        }
    }

    // Newton polish with the chain-rule Jacobian.
    for (int it = 0; it < 4; ++it) {
        WordResult r = sys.compose_word(word, x);
        if (!r.defined) {
            if (sys.mode() == BranchSystem::Mode::Rn) return std::nullopt;
            throw EnumerationError("composition undefined at candidate fixed point");
        }
        Vec res = r.y - x;
        if (res.norm() < 1e-15) break;
        Mat M = r.J - Mat::Identity(n, n);
        x -= M.lu().solve(res);
    }

    WordResult r = sys.compose_word(word, x);
    if (!r.defined) {
        if (sys.mode() == BranchSystem::Mode::Rn) return std::nullopt;
        throw EnumerationError("composition undefined at fixed point");
    }
    if ((r.y - x).norm() > 1e-11)
        throw EnumerationError("fixed-point residual above tolerance");

    PeriodicPoint p;
    p.word = word;
    p.J = r.J;
    p.weight = r.weight;
    double d = (Mat::Identity(n, n) - r.J).determinant();
    p.det_ImJ = d;
    p.lefschetz = lefschetz_sign(r.J);
    p.x = x;
    if (sys.mode() == BranchSystem::Mode::Rn && std::abs(p.weight) == 0.0) {
        // weight product vanished: composition effectively leaves the system
        return std::nullopt;
    }
    return p;
}

// ---------------------------------------------------------------------------

// One period's worth of per-word records (structure-of-arrays to stay compact
// at period 10 in torus mode, ~10^6 words).
struct PeriodRecords {
    int m = 0;
    int n = 2;
    uint64_t words_total = 0;
    uint64_t words_found = 0;
    std::vector<double> x;        // found * n
    std::vector<double> J;        // found * n * n (row major)
    std::vector<cplx> weight;     // found
    std::vector<double> det_ImJ;  // found
    std::vector<uint64_t> rank;   // lexicographic word rank
    std::vector<int8_t> lefschetz;
    std::vector<uint8_t> canonical;
    uint64_t distinct = 0;

    Vec point(size_t i) const {
        Vec v(n);
        std::memcpy(v.data(), &x[i * n], sizeof(double) * n);
        return v;
    }
    Mat jac(size_t i) const {
        Mat M(n, n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) M(r, c) = J[i * n * n + r * n + c];
        return M;
    }
};

struct PeriodicOrbitTable {
    int M_max = 0;
    int alphabet = 0;
    int n = 2;
    bool torus_mode = true;
    std::vector<PeriodRecords> periods;  // index m-1

    const PeriodRecords& period(int m) const { return periods.at(m - 1); }
};

namespace detail {

// Cluster fixed points on the torus within tol; returns canonical flags
// (first record of each cluster in storage order) and the cluster count.
inline uint64_t mark_canonical(PeriodRecords& rec, double tol = 1e-9) {
    const size_t cnt = rec.weight.size();
    rec.canonical.assign(cnt, 0);
    struct KeyHash {
        size_t operator()(const std::vector<long long>& k) const {
            size_t h = 1469598103934665603ull;
            for (long long v : k) {
                h ^= (size_t)v;
                h *= 1099511628211ull;
            }
            return h;
        }
    };
    const long long grid = 1000000000ll;  // 1e-9 keying
    std::unordered_map<std::vector<long long>, std::vector<size_t>, KeyHash> buckets;
    auto key_of = [&](size_t i) {
        std::vector<long long> k(rec.n);
        for (int c = 0; c < rec.n; ++c) {
            long long v = (long long)std::llround(rec.x[i * rec.n + c] * (double)grid);
            v %= grid;
            if (v < 0) v += grid;
            k[c] = v;
        }
        return k;
    };
    for (size_t i = 0; i < cnt; ++i) buckets[key_of(i)].push_back(i);

    // union clusters across neighboring keys (handles points astride a key line)
    std::vector<size_t> parent(cnt);
    for (size_t i = 0; i < cnt; ++i) parent[i] = i;
    std::function<size_t(size_t)> find = [&](size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    auto unite = [&](size_t a, size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (auto& [key, members] : buckets)
        for (size_t i = 1; i < members.size(); ++i) unite(members[0], members[i]);
    std::vector<long long> probe(rec.n);
    for (auto& [key, members] : buckets) {
        std::vector<int> off(rec.n, -1);
        while (true) {
            bool all0 = true;
            for (int c = 0; c < rec.n; ++c) all0 = all0 && off[c] == 0;
            if (!all0) {
                for (int c = 0; c < rec.n; ++c) {
                    long long v = (key[c] + off[c]) % grid;
                    if (v < 0) v += grid;
                    probe[c] = v;
                }
                auto it = buckets.find(probe);
                if (it != buckets.end()) {
                    size_t a = members[0], b = it->second[0];
                    Vec pa(rec.n), pb(rec.n);
                    for (int c = 0; c < rec.n; ++c) {
                        pa[c] = rec.x[a * rec.n + c];
                        pb[c] = rec.x[b * rec.n + c];
                    }
                    if (torus_dist(pa, pb) < 2 * tol) unite(a, b);
                }
            }
            int c = 0;
            while (c < rec.n && ++off[c] > 1) off[c++] = -1;
            if (c == rec.n) break;
        }
    }

    uint64_t clusters = 0;
    std::vector<char> seen(cnt, 0);
    for (size_t i = 0; i < cnt; ++i) {
        size_t r = find(i);
        if (!seen[r]) {
            seen[r] = 1;
            rec.canonical[r] = 1;  // lowest storage index is the representative
            ++clusters;
        }
    }
    return clusters;
}

}  // namespace detail

inline PeriodicOrbitTable build_orbit_table(const BranchSystem& sys, int M_max, int threads = 1) {
    if (M_max < 1) throw Error("orbit table needs M_max >= 1");
    PeriodicOrbitTable tab;
    tab.M_max = M_max;
    tab.alphabet = sys.size();
    tab.n = sys.n();
    tab.torus_mode = sys.mode() == BranchSystem::Mode::Torus;
    tab.periods.resize(M_max);

    for (int m = 1; m <= M_max; ++m) {
        PeriodRecords& rec = tab.periods[m - 1];
        rec.m = m;
        rec.n = tab.n;
        uint64_t total = 1;
        for (int i = 0; i < m; ++i) total *= (uint64_t)sys.size();
        rec.words_total = total;

        std::vector<uint8_t> found(total, 0);
        std::vector<double> xs(total * tab.n), js(total * tab.n * tab.n), dets(total);
        std::vector<cplx> ws(total);
        std::vector<int8_t> lf(total);

        parallel_for(total, threads, [&](size_t rank) {
            auto word = decode_word(rank, m, sys.size());
            auto p = find_fixed_point(sys, word);
            if (!p) return;
            found[rank] = 1;
            for (int c = 0; c < tab.n; ++c) xs[rank * tab.n + c] = p->x[c];
            for (int r = 0; r < tab.n; ++r)
                for (int c = 0; c < tab.n; ++c) js[rank * tab.n * tab.n + r * tab.n + c] = p->J(r, c);
            ws[rank] = p->weight;
            dets[rank] = p->det_ImJ;
            lf[rank] = (int8_t)p->lefschetz;
        });

        for (uint64_t rank = 0; rank < total; ++rank) {
            if (!found[rank]) continue;
            ++rec.words_found;
            rec.rank.push_back(rank);
            for (int c = 0; c < tab.n; ++c) rec.x.push_back(xs[rank * tab.n + c]);
            for (int k = 0; k < tab.n * tab.n; ++k) rec.J.push_back(js[rank * tab.n * tab.n + k]);
            rec.weight.push_back(ws[rank]);
            rec.det_ImJ.push_back(dets[rank]);
            rec.lefschetz.push_back(lf[rank]);
        }

        if (tab.torus_mode) {
            rec.distinct = detail::mark_canonical(rec);
        } else {
            rec.canonical.assign(rec.weight.size(), 1);
            rec.distinct = rec.weight.size();
        }
    }
    return tab;
}

// Sum over the deduplicated fixed-point view of weight * Lefschetz sign.
inline cplx sharp_trace(const PeriodicOrbitTable& tab, int m) {
    const PeriodRecords& rec = tab.period(m);
    cplx s = 0;
    for (size_t i = 0; i < rec.weight.size(); ++i)
        if (rec.canonical[i]) s += rec.weight[i] * double(rec.lefschetz[i]);
    return s;
}

// Sum of plain weight products (the zeta ingredient, all signs +1).
inline cplx zeta_trace(const PeriodicOrbitTable& tab, int m) {
    const PeriodRecords& rec = tab.period(m);
    cplx s = 0;
    for (size_t i = 0; i < rec.weight.size(); ++i)
        if (rec.canonical[i]) s += rec.weight[i];
    return s;
}

// m-th Taylor ingredient of -log d_k: sum of weight * tr Lambda^k(J) / det(I-J).
inline cplx flat_trace_coeff(const PeriodicOrbitTable& tab, int k, int m) {
    const PeriodRecords& rec = tab.period(m);
    cplx s = 0;
    for (size_t i = 0; i < rec.weight.size(); ++i) {
        if (!rec.canonical[i]) continue;
        Mat J = rec.jac(i);
        s += rec.weight[i] * exterior_trace(J, k) / rec.det_ImJ[i];
    }
    return s;
}

struct TransversalityReport {
    bool pass = true;
    double min_abs_det = std::numeric_limits<double>::infinity();
    struct Violation {
        int m;
        std::vector<int> word;
        Vec x;
        double det;
    };
    std::vector<Violation> violations;
};

inline TransversalityReport validate_transversality(const PeriodicOrbitTable& tab,
                                                    double tol = 1e-10) {
    TransversalityReport rep;
    for (const auto& rec : tab.periods) {
        for (size_t i = 0; i < rec.weight.size(); ++i) {
            double d = std::abs(rec.det_ImJ[i]);
            rep.min_abs_det = std::min(rep.min_abs_det, d);
            if (d <= tol) {
                rep.pass = false;
                rep.violations.push_back(
                    {rec.m, decode_word(rec.rank[i], rec.m, tab.alphabet), rec.point(i), rec.det_ImJ[i]});
            }
        }
    }
    return rep;
}

}  // namespace knd
