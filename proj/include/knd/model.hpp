#pragma once

// Expanding torus maps f(x) = A x + eps*p(x) mod 1 with trig-polynomial data,
// their global inverse branches, and generic contracting branch systems on R^n.

#include <knd/core.hpp>

#include <cstdio>
#include <memory>
#include <optional>
#include <variant>

namespace knd {

// One term of a real trigonometric-polynomial vector field:
// p_c(x) += c_sin*sin(2 pi k.x) + c_cos*cos(2 pi k.x).
struct TrigTerm {
    int comp = 0;
    std::vector<int> freq;
    double c_sin = 0.0;
    double c_cos = 0.0;
};

// Complex trigonometric polynomial g(x) = sum_m c_m exp(2 pi i m.x).
struct TrigScalar {
    struct Mode {
        std::vector<int> freq;
        cplx c;
    };
    std::vector<Mode> modes;

    cplx eval(const Vec& x) const {
        cplx s = 0;
        for (const auto& m : modes) {
            double ph = 0;
            for (size_t i = 0; i < m.freq.size(); ++i) ph += m.freq[i] * x[(int)i];
            s += m.c * std::polar(1.0, two_pi * ph);
        }
        return s;
    }
    VecC grad(const Vec& x) const {
        VecC g = VecC::Zero(x.size());
        for (const auto& m : modes) {
            double ph = 0;
            for (size_t i = 0; i < m.freq.size(); ++i) ph += m.freq[i] * x[(int)i];
            cplx e = m.c * std::polar(1.0, two_pi * ph) * cplx(0, two_pi);
            for (size_t i = 0; i < m.freq.size(); ++i) g[(int)i] += e * double(m.freq[i]);
        }
        return g;
    }
};

struct AcipWeight {};
using WeightSpec = std::variant<AcipWeight, TrigScalar>;

struct TorusMapModel {
    int n = 2;
    Eigen::MatrixXi A;
    double eps = 0.0;
    std::vector<TrigTerm> perturbation;
    WeightSpec weight = AcipWeight{};
    int r = -1;  // smoothness order; -1 means C^inf (trig-polynomial data)

    // Lift F(x) = A x + eps p(x).
    Vec lift(const Vec& x) const {
        Vec y = A.cast<double>() * x;
        for (const auto& t : perturbation) {
            double ph = two_pi * phase(t, x);
            y[t.comp] += eps * (t.c_sin * std::sin(ph) + t.c_cos * std::cos(ph));
        }
        return y;
    }

    Mat dlift(const Vec& x) const {
        Mat J = A.cast<double>();
        for (const auto& t : perturbation) {
            double ph = two_pi * phase(t, x);
            double d = eps * two_pi * (t.c_sin * std::cos(ph) - t.c_cos * std::sin(ph));
            for (int j = 0; j < n; ++j) J(t.comp, j) += d * t.freq[j];
        }
        return J;
    }

    // d/dx_j of (d/dx_i p_c), needed for gradients of det Df.
    Mat dlift_hess(const Vec& x, int comp) const {
        Mat H = Mat::Zero(n, n);
        for (const auto& t : perturbation) {
            if (t.comp != comp) continue;
            double ph = two_pi * phase(t, x);
            double d2 = -eps * two_pi * two_pi * (t.c_sin * std::sin(ph) + t.c_cos * std::cos(ph));
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) H(i, j) += d2 * t.freq[i] * t.freq[j];
        }
        return H;
    }

    double det_dlift(const Vec& x) const { return dlift(x).determinant(); }

    Vec grad_det_dlift(const Vec& x) const {
        // d(det J)/dx_j = det J * tr(J^{-1} dJ/dx_j)
        Mat J = dlift(x);
        double d = J.determinant();
        Mat Jinv = J.inverse();
        std::vector<Mat> H(n);
        for (int c = 0; c < n; ++c) H[c] = dlift_hess(x, c);
        Vec g(n);
        for (int j = 0; j < n; ++j) {
            double tr = 0;
            for (int c = 0; c < n; ++c)
                for (int i = 0; i < n; ++i) tr += Jinv(i, c) * H[c](i, j);
            g[j] = d * tr;
        }
        return g;
    }

    // Weight g evaluated at a point of the torus (post-branch point).
    cplx weight_value(const Vec& y) const {
        if (std::holds_alternative<AcipWeight>(weight)) return 1.0 / std::abs(det_dlift(y));
        return std::get<TrigScalar>(weight).eval(y);
    }

    VecC weight_grad(const Vec& y) const {
        if (std::holds_alternative<AcipWeight>(weight)) {
            double d = det_dlift(y);
            Vec gd = grad_det_dlift(y);
            double sgn = d >= 0 ? 1.0 : -1.0;
            return (-sgn / (d * d)) * gd.cast<cplx>();
        }
        return std::get<TrigScalar>(weight).grad(y);
    }

private:
    static double phase(const TrigTerm& t, const Vec& x) {
        double ph = 0;
        for (size_t i = 0; i < t.freq.size(); ++i) ph += t.freq[i] * x[(int)i];
        return ph;
    }
};

// ---------------------------------------------------------------------------
// Integer lattice helpers for the branch offsets.

inline long long int_det(const Eigen::MatrixXi& M) {
    int n = (int)M.rows();
    if (n == 1) return M(0, 0);
    if (n == 2) return (long long)M(0, 0) * M(1, 1) - (long long)M(0, 1) * M(1, 0);
    long long s = 0;
    for (int j = 0; j < n; ++j) {
        Eigen::MatrixXi sub(n - 1, n - 1);
        for (int r = 1; r < n; ++r) {
            int cc = 0;
            for (int c = 0; c < n; ++c)
                if (c != j) sub(r - 1, cc++) = M(r, c);
        }
        s += ((j % 2) ? -1ll : 1ll) * M(0, j) * int_det(sub);
    }
    return s;
}

inline Eigen::MatrixXi int_adjugate(const Eigen::MatrixXi& M) {
    int n = (int)M.rows();
    Eigen::MatrixXi adj(n, n);
    if (n == 1) {
        adj(0, 0) = 1;
        return adj;
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Eigen::MatrixXi sub(n - 1, n - 1);
            int rr = 0;
            for (int r = 0; r < n; ++r) {
                if (r == i) continue;
                int cc = 0;
                for (int c = 0; c < n; ++c)
                    if (c != j) sub(rr, cc++) = M(r, c);
                ++rr;
            }
            adj(j, i) = (((i + j) % 2) ? -1 : 1) * (int)int_det(sub);
        }
    return adj;
}

// The |det A| offsets j with A^{-1} j in [0,1)^n, a transversal of Z^n / A Z^n.
inline std::vector<Eigen::VectorXi> branch_offsets(const Eigen::MatrixXi& A) {
    int n = (int)A.rows();
    long long d = int_det(A);
    if (std::llabs(d) < 2) throw ModelInvalidError("expansion matrix must have |det A| >= 2");
    Eigen::MatrixXi adj = int_adjugate(A);
    int bound = 0;
    for (int i = 0; i < n; ++i) {
        int row = 0;
        for (int j = 0; j < n; ++j) row += std::abs(A(i, j));
        bound = std::max(bound, row);
    }
    std::vector<Eigen::VectorXi> out;
    std::vector<int> idx(n, -bound);
    while (true) {
        Eigen::VectorXi j(n);
        for (int i = 0; i < n; ++i) j[i] = idx[i];
        bool inside = true;
        for (int i = 0; i < n && inside; ++i) {
            long long num = 0;
            for (int c = 0; c < n; ++c) num += (long long)adj(i, c) * j[c];
            if (d < 0) num = -num;
            long long dd = std::llabs(d);
            inside = (num >= 0 && num < dd);
        }
        if (inside) out.push_back(j);
        int k = 0;
        while (k < n && ++idx[k] > bound) idx[k++] = -bound;
        if (k == n) break;
    }
    if ((long long)out.size() != std::llabs(d))
        throw ModelInvalidError("branch offset enumeration failed");
    return out;
}

// ---------------------------------------------------------------------------
// Torus branches: psi_j solves F(y) = x + j, Newton-seeded by the affine part.

struct NewtonOpts {
    double tol = 1e-13;
    int max_iter = 50;
};

inline Vec torus_branch_eval(const TorusMapModel& m, const Eigen::VectorXi& offset, const Vec& x,
                             const NewtonOpts& opts = {}) {
    Vec target = x + offset.cast<double>();
    Mat Ainv = m.A.cast<double>().inverse();
    Vec y = Ainv * target;
    if (m.eps == 0.0 || m.perturbation.empty()) return y;
    for (int it = 0; it < opts.max_iter; ++it) {
        Vec res = m.lift(y) - target;
        if (res.norm() <= opts.tol) return y;
        Mat J = m.dlift(y);
        double dj = J.determinant();
        if (std::abs(dj) < 1e-300) throw ModelInvalidError("singular Df in branch solve");
        y -= J.lu().solve(res);
    }
    if ((m.lift(y) - target).norm() <= 10 * opts.tol) return y;
    throw BranchEvalError("inverse branch Newton did not converge");
}

// Dpsi at x, given y = psi(x): (Df(y))^{-1}.
inline Mat torus_branch_jacobian(const TorusMapModel& m, const Vec& y) {
    Mat J = m.dlift(y);
    double d = J.determinant();
    if (std::abs(d) < 1e-12) throw ModelInvalidError("singular Df");
    return J.inverse();
}

// ---------------------------------------------------------------------------
// Branch systems: the torus mode (global inverse branches of f) and the
// generic R^n mode (explicit contractions with compactly supported weights).

// One branch application with everything derived from a single implicit solve.
struct BranchStep {
    Vec y;
    Mat Dpsi;
    cplx w;
};

class Branch {
public:
    virtual ~Branch() = default;
    virtual Vec eval(const Vec& x) const = 0;
    virtual Mat jacobian(const Vec& x) const = 0;
    virtual cplx weight(const Vec& x) const = 0;       // g_omega(x) = g(psi_omega(x)) in torus mode
    virtual VecC weight_grad(const Vec& x) const = 0;  // d g_omega
    virtual bool in_domain(const Vec&) const { return true; }
    virtual BranchStep step(const Vec& x) const {
        return {eval(x), jacobian(x), weight(x)};
    }
};

class TorusBranch final : public Branch {
public:
    TorusBranch(const TorusMapModel* m, Eigen::VectorXi offset) : m_(m), offset_(std::move(offset)) {}
    Vec eval(const Vec& x) const override { return torus_branch_eval(*m_, offset_, x); }
    Mat jacobian(const Vec& x) const override { return torus_branch_jacobian(*m_, eval(x)); }
    cplx weight(const Vec& x) const override { return m_->weight_value(eval(x)); }
    VecC weight_grad(const Vec& x) const override {
        Vec y = eval(x);
        Mat Dpsi = torus_branch_jacobian(*m_, y);
        return Dpsi.transpose().cast<cplx>() * m_->weight_grad(y);
    }
    BranchStep step(const Vec& x) const override {
        Vec y = eval(x);
        return {y, torus_branch_jacobian(*m_, y), m_->weight_value(y)};
    }
    const Eigen::VectorXi& offset() const { return offset_; }

private:
    const TorusMapModel* m_;
    Eigen::VectorXi offset_;
};

// C^inf bump, supported in |x - c| < R: amp * exp(1 - 1/(1 - t)), t = |x-c|^2/R^2.
struct BumpWeight {
    Vec center;
    double radius = 1.0;
    cplx amp = 1.0;

    cplx value(const Vec& x) const {
        double t = (x - center).squaredNorm() / (radius * radius);
        if (t >= 1.0) return 0.0;
        return amp * std::exp(1.0 - 1.0 / (1.0 - t));
    }
    VecC grad(const Vec& x) const {
        double t = (x - center).squaredNorm() / (radius * radius);
        if (t >= 1.0) return VecC::Zero(x.size());
        double b = std::exp(1.0 - 1.0 / (1.0 - t));
        double dbdt = -b / ((1.0 - t) * (1.0 - t));
        Vec dtdx = 2.0 * (x - center) / (radius * radius);
        return (amp * dbdt) * dtdx.cast<cplx>();
    }
};

class AffineBranch final : public Branch {
public:
    AffineBranch(Mat C, Vec b, BumpWeight w, std::optional<std::pair<Vec, double>> domain = {})
        : C_(std::move(C)), b_(std::move(b)), w_(std::move(w)), domain_(std::move(domain)) {}
    Vec eval(const Vec& x) const override { return C_ * x + b_; }
    Mat jacobian(const Vec&) const override { return C_; }
    cplx weight(const Vec& x) const override { return w_.value(x); }
    VecC weight_grad(const Vec& x) const override { return w_.grad(x); }
    bool in_domain(const Vec& x) const override {
        if (!domain_) return true;
        return (x - domain_->first).norm() <= domain_->second;
    }

private:
    Mat C_;
    Vec b_;
    BumpWeight w_;
    std::optional<std::pair<Vec, double>> domain_;
};

// Deterministic fingerprint of the model data (reports tag artifacts with it).
inline uint64_t model_fingerprint(const TorusMapModel& m) {
    std::string blob = std::to_string(m.n) + "|";
    for (int r = 0; r < m.n; ++r)
        for (int c = 0; c < m.n; ++c) blob += std::to_string(m.A(r, c)) + ",";
    auto num = [&](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.17g;", v);
        blob += b;
    };
    num(m.eps);
    for (const auto& t : m.perturbation) {
        blob += std::to_string(t.comp) + ":";
        for (int f : t.freq) blob += std::to_string(f) + ",";
        num(t.c_sin);
        num(t.c_cos);
    }
    if (std::holds_alternative<AcipWeight>(m.weight)) {
        blob += "acip";
    } else {
        for (const auto& md : std::get<TrigScalar>(m.weight).modes) {
            for (int f : md.freq) blob += std::to_string(f) + ",";
            num(md.c.real());
            num(md.c.imag());
        }
    }
    blob += "|r" + std::to_string(m.r);
    return fnv1a(blob);
}

struct WordResult {
    Vec y;                       // psi_w(x), composed right-to-left: psi_{w_m} o ... o psi_{w_1}
    Mat J;                       // chain-rule Jacobian of the composition at x
    cplx weight = 1.0;           // product of branch weights along the orbit
    std::vector<Vec> points;     // x = points[0], psi_{w_1}(x), ..., psi_w(x)
    bool defined = true;
};

class BranchSystem {
public:
    enum class Mode { Torus, Rn };

    static BranchSystem torus(TorusMapModel model, int validation_res = 16) {
        BranchSystem s;
        s.mode_ = Mode::Torus;
        s.n_ = model.n;
        s.model_ = std::make_shared<TorusMapModel>(std::move(model));
        for (auto& j : branch_offsets(s.model_->A))
            s.branches_.push_back(std::make_unique<TorusBranch>(s.model_.get(), j));
        s.validate_torus(validation_res);
        return s;
    }

    static BranchSystem contraction(std::vector<std::unique_ptr<Branch>> branches, int n, double box_T) {
        BranchSystem s;
        s.mode_ = Mode::Rn;
        s.n_ = n;
        s.box_T_ = box_T;
        s.branches_ = std::move(branches);
        return s;
    }

    Mode mode() const { return mode_; }
    int n() const { return n_; }
    int size() const { return (int)branches_.size(); }
    double box_T() const { return box_T_; }
    const Branch& branch(int i) const { return *branches_[i]; }
    const TorusMapModel& model() const {
        if (!model_) throw Error("not a torus system");
        return *model_;
    }

    WordResult compose_word(const std::vector<int>& word, const Vec& x) const {
        WordResult r;
        r.points.reserve(word.size() + 1);
        r.points.push_back(x);
        r.J = Mat::Identity(n_, n_);
        r.weight = 1.0;
        Vec cur = x;
        for (int wi : word) {
            const Branch& b = *branches_[wi];
            if (!b.in_domain(cur)) {
                r.defined = false;
                r.weight = 0.0;
                r.y = cur;
                return r;
            }
            BranchStep s = b.step(cur);
            r.weight *= s.w;
            r.J = s.Dpsi * r.J;  // right-to-left product along the orbit
            cur = s.y;
            r.points.push_back(cur);
        }
        r.y = cur;
        return r;
    }

    // Product of branch weights along the first m points of the orbit of x.
    cplx weight_product(const std::vector<int>& word, const Vec& x) const {
        cplx p = 1.0;
        Vec cur = x;
        for (int wi : word) {
            const Branch& b = *branches_[wi];
            if (!b.in_domain(cur)) return 0.0;
            BranchStep s = b.step(cur);
            p *= s.w;
            cur = s.y;
        }
        return p;
    }

    // max over grid and branches of ||Dpsi||_2; throws if >= 1.
    double theta_estimate(int res = 32) const {
        if (res < 8) throw Error("theta_estimate: resolution must be >= 8 per axis");
        double th = 0;
        if (mode_ == Mode::Torus) {
            std::vector<int> idx(n_, 0);
            while (true) {
                Vec x(n_);
                for (int i = 0; i < n_; ++i) x[i] = double(idx[i]) / res;
                for (const auto& b : branches_) th = std::max(th, operator_norm(b->jacobian(x)));
                int k = 0;
                while (k < n_ && ++idx[k] >= res) idx[k++] = 0;
                if (k == n_) break;
            }
        } else {
            for (const auto& b : branches_) {
                // affine contractions have constant Jacobians; sample anyway
                Vec x = Vec::Zero(n_);
                th = std::max(th, operator_norm(b->jacobian(x)));
            }
        }
        if (th >= 1.0) throw NotExpandingError("contraction estimate theta >= 1");
        return th;
    }

private:
    double operator_norm(const Mat& M) const {
        if (n_ == 2) return operator_norm_2x2(M);
        Eigen::JacobiSVD<Mat> svd(M);
        return svd.singularValues()(0);
    }

    void validate_torus(int res) {
        // Expansion check plus Newton-basin validation on a grid.
        std::vector<int> idx(n_, 0);
        while (true) {
            Vec x(n_);
            for (int i = 0; i < n_; ++i) x[i] = double(idx[i]) / res;
            Mat J = model_->dlift(x);
            if (std::abs(J.determinant()) < 1e-12)
                throw ModelInvalidError("det Df vanishes on validation grid");
            Eigen::JacobiSVD<Mat> svd(J);
            if (svd.singularValues()(n_ - 1) <= 1.0)
                throw NotExpandingError("minimum singular value of Df <= 1 on validation grid");
            for (const auto& b : branches_) b->eval(x);  // throws if Newton fails
            int k = 0;
            while (k < n_ && ++idx[k] >= res) idx[k++] = 0;
            if (k == n_) break;
        }
    }

    Mode mode_ = Mode::Torus;
    int n_ = 2;
    double box_T_ = 0.0;
    std::shared_ptr<TorusMapModel> model_;
    std::vector<std::unique_ptr<Branch>> branches_;
};

}  // namespace knd
