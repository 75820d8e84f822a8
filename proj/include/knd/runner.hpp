#pragma once

// Experiment driver: orchestrates orbit enumeration, determinant series,
// collocation spectra, homotopy checks and kneading traces, and emits
// machine-readable reports (JSON summary plus per-table CSVs).

#include <knd/config.hpp>
#include <knd/kneading.hpp>
#include <knd/series.hpp>
#include <knd/spectra.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>

namespace knd {

struct StageResult {
    std::string name;
    std::string status = "skipped";  // pass | fail | error | skipped
    json data;
    double wall_ms = 0;
    std::string error;
};

struct Report {
    uint64_t hash = 0;
    std::vector<StageResult> stages;
    std::vector<std::pair<std::string, std::string>> files;  // relative name -> body

    bool all_pass() const {
        for (const auto& s : stages)
            if (s.status == "fail" || s.status == "error") return false;
        return true;
    }
    json summary() const {
        json j;
        j["config_hash"] = hash;
        j["stages"] = json::array();
        for (const auto& s : stages) {
            json e;
            e["name"] = s.name;
            e["status"] = s.status;
            e["wall_ms"] = s.wall_ms;
            if (!s.error.empty()) e["error"] = s.error;
            e["data"] = s.data;
            j["stages"].push_back(e);
        }
        return j;
    }
};

namespace rdetail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string word_string(const std::vector<int>& w) {
    std::string s;
    for (size_t i = 0; i < w.size(); ++i) {
        if (i) s += '-';
        s += std::to_string(w[i]);
    }
    return s;
}

inline std::string series_json(const TruncatedSeries& s) {
    json j;
    j["M"] = s.order();
    j["coeffs"] = json::array();
    for (int i = 0; i <= s.order(); ++i)
        j["coeffs"].push_back(json::array({s[i].real(), s[i].imag()}));
    return j.dump(2) + "\n";
}

inline std::string zeros_csv(const ZeroSet& z) {
    std::string s = "re,im,mult,stable\n";
    for (const auto& zr : z.zeros)
        s += fmt(zr.z.real()) + "," + fmt(zr.z.imag()) + "," + std::to_string(zr.mult) + "," +
             (zr.stable ? "1" : "0") + "\n";
    return s;
}

struct Pipeline {
    const ExperimentConfig& cfg;
    std::optional<BranchSystem> sys;
    std::optional<PeriodicOrbitTable> table;
    std::map<int, TruncatedSeries> dks;
    std::map<int, ZeroSet> zero_sets;
    double theta = 0;
    double pressure = 0;

    explicit Pipeline(const ExperimentConfig& c) : cfg(c) {}

    const BranchSystem& system() {
        if (!sys) sys.emplace(BranchSystem::torus(cfg.model));
        return *sys;
    }
    const PeriodicOrbitTable& orbit_table() {
        if (!table) table = build_orbit_table(system(), cfg.M_max, cfg.threads);
        return *table;
    }
    const TruncatedSeries& dk(int k) {
        auto it = dks.find(k);
        if (it == dks.end())
            it = dks.emplace(k, ruelle_flat_determinant_series(orbit_table(), k, cfg.M_max)).first;
        return it->second;
    }
    void ensure_zero_sets() {
        if (!zero_sets.empty()) return;
        theta = system().theta_estimate(32);
        for (int k = 0; k <= cfg.model.n; ++k) {
            double radius = 0.8 * std::pow(theta, -(cfg.m_smooth + k));
            radius = std::min(radius, 50.0);
            zero_sets[k] = find_zeros(dk(k), radius);
        }
    }
};

}  // namespace rdetail

inline StageResult run_orbits_stage(rdetail::Pipeline& p, Report& rep) {
    StageResult st;
    st.name = "orbits";
    const auto& tab = p.orbit_table();
    auto tv = validate_transversality(tab);

    std::string csv = "period,word,x1,x2,re_weight,im_weight,lefschetz,det_I_minus_J\n";
    for (const auto& recs : tab.periods) {
        for (size_t i = 0; i < recs.weight.size(); ++i) {
            Vec x = wrap01(recs.point(i));
            csv += std::to_string(recs.m) + "," +
                   rdetail::word_string(decode_word(recs.rank[i], recs.m, tab.alphabet)) + "," +
                   rdetail::fmt(x[0]) + "," + rdetail::fmt(x[1]) + "," +
                   rdetail::fmt(recs.weight[i].real()) + "," + rdetail::fmt(recs.weight[i].imag()) +
                   "," + std::to_string((int)recs.lefschetz[i]) + "," +
                   rdetail::fmt(recs.det_ImJ[i]) + "\n";
        }
    }
    rep.files.emplace_back("orbits.csv", csv);

    std::string traces = "period,words,distinct,re_sharp,im_sharp,re_zeta,im_zeta\n";
    json counts = json::array();
    for (int m = 1; m <= tab.M_max; ++m) {
        cplx sh = sharp_trace(tab, m), zt = zeta_trace(tab, m);
        traces += std::to_string(m) + "," + std::to_string(tab.period(m).words_found) + "," +
                  std::to_string(tab.period(m).distinct) + "," + rdetail::fmt(sh.real()) + "," +
                  rdetail::fmt(sh.imag()) + "," + rdetail::fmt(zt.real()) + "," +
                  rdetail::fmt(zt.imag()) + "\n";
        counts.push_back({{"m", m},
                          {"words", tab.period(m).words_found},
                          {"distinct", tab.period(m).distinct}});
    }
    rep.files.emplace_back("traces.csv", traces);

    st.data["transversality_pass"] = tv.pass;
    st.data["min_abs_det_I_minus_J"] = tv.min_abs_det;
    st.data["violations"] = (int)tv.violations.size();
    st.data["periods"] = counts;
    st.status = tv.pass ? "pass" : "fail";
    return st;
}

inline StageResult run_det_stage(rdetail::Pipeline& p, Report& rep) {
    StageResult st;
    st.name = "det";
    const auto& tab = p.orbit_table();
    const int M = p.cfg.M_max;
    const int n = p.cfg.model.n;

    auto zeta = zeta_series(tab, M);
    auto sharp = sharp_determinant_series(tab, M);
    rep.files.emplace_back("zeta.json", rdetail::series_json(zeta));
    rep.files.emplace_back("det_sharp.json", rdetail::series_json(sharp));

    TruncatedSeries alt = TruncatedSeries::one(M);
    for (int k = 0; k <= n; ++k) {
        const auto& dk = p.dk(k);
        rep.files.emplace_back("d" + std::to_string(k) + ".json", rdetail::series_json(dk));
        alt = (k % 2) ? alt * dk : alt * dk.reciprocal();
    }
    double alt_resid = alt.max_abs_diff(zeta);
    double sz_resid = (sharp * zeta).max_abs_diff(TruncatedSeries::one(M));

    double reg_resid = 0;
    for (int k = 0; k <= n; ++k)
        for (int ell = 1; ell <= std::min(4, M); ++ell)
            reg_resid = std::max(reg_resid, regularized_identity_check(tab, k, ell, M));

    // zero sets inside the trusted disc
    p.ensure_zero_sets();
    json zsum = json::array();
    for (int k = 0; k <= n; ++k) {
        const auto& zs = p.zero_sets[k];
        rep.files.emplace_back("zeros_d" + std::to_string(k) + ".csv", rdetail::zeros_csv(zs));
        json je;
        je["k"] = k;
        je["radius"] = zs.radius;
        je["count"] = (int)zs.zeros.size();
        zsum.push_back(je);
    }

    st.data["alternating_product_residual"] = alt_resid;
    st.data["sharp_times_zeta_residual"] = sz_resid;
    st.data["regularized_identity_residual"] = reg_resid;
    st.data["zero_sets"] = zsum;
    bool ok = alt_resid <= 1e-10 && sz_resid <= 1e-10 && reg_resid <= 1e-12;
    st.status = ok ? "pass" : "fail";
    return st;
}

inline StageResult run_spectra_stage(rdetail::Pipeline& p, Report& rep) {
    StageResult st;
    st.name = "spectra";
    const int n = p.cfg.model.n;
    p.ensure_zero_sets();  // dependency on the det-stage data, files untouched
    double theta = p.theta;
    double eP = pressure_estimate(p.system(), p.cfg.N, p.cfg.threads);
    p.pressure = eP;

    AssemblyOpts ao;
    ao.threads = p.cfg.threads;
    std::string ecsv = "k,re,im,modulus,trusted\n";
    json match_all = json::array();
    bool all_matched = true;
    double worst = 0;
    for (int k = 0; k <= n; ++k) {
        auto op = assemble_transfer_matrix(p.system(), k, p.cfg.N, ao);
        auto ev = eigenvalues(op);
        // every eigenvalue whose inverse could be an in-disc zero participates
        double bound = std::min(1.5 * essential_radius_bound(theta, eP, k, p.cfg.m_smooth),
                                0.999 / p.zero_sets[k].radius);
        int kept = 0;
        for (const auto& l : ev) {
            bool trusted = std::abs(l) > bound;
            if (kept < 40 || trusted) {
                ecsv += std::to_string(k) + "," + rdetail::fmt(l.real()) + "," +
                        rdetail::fmt(l.imag()) + "," + rdetail::fmt(std::abs(l)) + "," +
                        (trusted ? "1" : "0") + "\n";
                ++kept;
            }
        }
        auto mrep = match_zeros_eigenvalues(p.zero_sets[k], ev, bound);
        json jm;
        jm["k"] = k;
        jm["pairs"] = json::array();
        for (const auto& pr : mrep.pairs)
            jm["pairs"].push_back({{"zero", {pr.zero.real(), pr.zero.imag()}},
                                   {"inv_eig", {pr.inv_eig.real(), pr.inv_eig.imag()}},
                                   {"dist", pr.dist}});
        jm["unmatched_zeros"] = (int)mrep.unmatched_zeros.size();
        jm["unmatched_inv_eigs"] = (int)mrep.unmatched_inv_eigs.size();
        jm["max_dist"] = mrep.max_dist;
        match_all.push_back(jm);
        if (!mrep.unmatched_zeros.empty() || mrep.max_dist > 1e-4) all_matched = false;
        worst = std::max(worst, mrep.max_dist);
    }
    rep.files.emplace_back("eigenvalues.csv", ecsv);
    rep.files.emplace_back("matching.json", json({{"per_k", match_all}}).dump(2) + "\n");

    bool acip = std::holds_alternative<AcipWeight>(p.cfg.model.weight);
    st.data["theta"] = theta;
    st.data["pressure_eP"] = eP;
    st.data["acip_pressure_ok"] = !acip || std::abs(eP - 1.0) <= 1e-8;
    st.data["zero_eig_max_dist"] = worst;
    st.data["all_stable_zeros_matched"] = all_matched;
    bool ok = all_matched && (!acip || std::abs(eP - 1.0) <= 1e-8);
    st.status = ok ? "pass" : "fail";
    return st;
}

inline StageResult run_homotopy_stage(rdetail::Pipeline& p, Report& rep) {
    StageResult st;
    st.name = "homotopy";
    auto sc = calibrate_orientation(256);

    Box2 box{Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
    Box2 probe{Vec::Constant(2, -0.5), Vec::Constant(2, 0.5)};
    std::vector<HomotopyBatteryItem> battery;
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << 0.1, -0.05).finished(), 0.45, 1.0}};
        battery.push_back({0, bump_form(0, b, box), bump_form_d(0, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << -0.15, 0.1).finished(), 0.55, -0.7}};
        battery.push_back({0, bump_form(0, b, box), bump_form_d(0, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << 0.05, 0.0).finished(), 0.4, 1.0},
                                Bump2{(Vec(2) << -0.05, 0.1).finished(), 0.45, 0.7}};
        battery.push_back({1, bump_form(1, b, box), bump_form_d(1, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << 0.2, 0.15).finished(), 0.5, -0.6},
                                Bump2{(Vec(2) << -0.1, -0.15).finished(), 0.35, 0.9}};
        battery.push_back({1, bump_form(1, b, box), bump_form_d(1, b, box), probe});
    }
    {
        std::vector<Bump2> b = {Bump2{(Vec(2) << -0.1, 0.1).finished(), 0.5, 1.0}};
        battery.push_back({2, bump_form(2, b, box), bump_form_d(2, b, box), probe});
    }

    QuadSpec q;
    q.res = p.cfg.homotopy_res;
    bool ok = true;
    json items = json::array();
    for (size_t i = 0; i < battery.size(); ++i) {
        auto curve = check_homotopy(battery[i], q, 3, 7, p.cfg.threads);
        std::string csv = "level,h,residual\n";
        for (size_t l = 0; l < curve.levels.size(); ++l)
            csv += std::to_string(curve.levels[l]) + "," + rdetail::fmt(curve.h[l]) + "," +
                   rdetail::fmt(curve.residual[l]) + "\n";
        rep.files.emplace_back("homotopy_item" + std::to_string(i) + ".csv", csv);
        bool mono = curve.residual[1] <= curve.residual[0] * 1.1 &&
                    curve.residual[2] <= curve.residual[1] * 1.1;
        bool final_ok = curve.residual.back() <= 1e-3;
        ok = ok && mono && final_ok;
        items.push_back({{"k", battery[i].k},
                         {"final_residual", curve.residual.back()},
                         {"monotone", mono}});
    }

    // projector algebra residuals at the default budget
    AlgebraReport alg = check_algebra(p.cfg.threads);
    ok = ok && alg.worst() <= 1e-2 && sc.residual_pairing <= 1e-3 && sc.residual_codiff <= 1e-12;

    st.data["orientation"] = sc.orientation;
    st.data["delta_pairing_residual"] = sc.residual_pairing;
    st.data["codifferential_residual"] = sc.residual_codiff;
    st.data["items"] = items;
    st.data["SS_residual"] = alg.ss_residual;
    st.data["dS_projector_residual"] = alg.ds_projector;
    st.data["Sd_projector_residual"] = alg.sd_projector;
    st.data["dS_Sd_residual"] = alg.ds_sd_residual;
    st.status = ok ? "pass" : "fail";
    return st;
}

inline StageResult run_kneading_stage(rdetail::Pipeline& p, Report& rep) {
    StageResult st;
    st.name = "kneading";
    auto sc = calibrate_orientation(128);
    // a small dedicated orbit table keeps this stage independent of M_max
    auto tab = build_orbit_table(p.system(), 2, p.cfg.threads);

    KneadingBudget budget;
    budget.base_res = p.cfg.kneading_res;

    std::string csv = "k,ell,re,im,refinement_residual\n";
    for (int k = 0; k <= 1; ++k)
        for (int ell = 0; ell <= 1; ++ell) {
            auto c = kneading_trace_coeff(p.cfg.model, k, ell, budget, sc.orientation,
                                          p.cfg.threads, true);
            csv += std::to_string(k) + "," + std::to_string(ell) + "," +
                   rdetail::fmt(c.value.real()) + "," + rdetail::fmt(c.value.imag()) + "," +
                   rdetail::fmt(c.refine_residual) + "\n";
        }
    rep.files.emplace_back("kneading.csv", csv);

    json orders = json::array();
    bool ok = true;
    auto coarse = budget.coarsened();
    for (int order = 1; order <= p.cfg.mt_orders; ++order) {
        auto rf = mt_identity_check(p.system(), tab, order, budget, sc.orientation, p.cfg.threads);
        json jo;
        jo["order"] = order;
        jo["lhs"] = {rf.lhs.real(), rf.lhs.imag()};
        jo["rhs"] = {rf.rhs.real(), rf.rhs.imag()};
        jo["residual"] = rf.residual;
        if (order == 1) {
            auto rc = mt_identity_check(p.system(), tab, 1, coarse, sc.orientation, p.cfg.threads);
            jo["residual_coarse"] = rc.residual;
            jo["decreasing"] = rf.residual <= rc.residual * 1.1;
            ok = ok && rf.residual <= 5e-2 && rf.residual <= rc.residual * 1.1;
        }
        orders.push_back(jo);
    }
    st.data["mt_orders"] = orders;
    st.status = ok ? "pass" : "fail";
    return st;
}

inline Report run(const ExperimentConfig& cfg) {
    Report rep;
    rep.hash = config_hash(cfg);
    rdetail::Pipeline p(cfg);
    p.system();  // validate the model up front: invalid models abort the run

    auto timed = [&](const char* name, auto&& fn) {
        if (!cfg.checks.count(name)) return;
        StageResult st;
        auto t0 = std::chrono::steady_clock::now();
        try {
            st = fn();
        } catch (const std::exception& e) {
            st.name = name;
            st.status = "error";
            st.error = e.what();
        }
        st.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rep.stages.push_back(std::move(st));
    };

    timed("orbits", [&] { return run_orbits_stage(p, rep); });
    timed("det", [&] { return run_det_stage(p, rep); });
    timed("spectra", [&] { return run_spectra_stage(p, rep); });
    timed("homotopy", [&] { return run_homotopy_stage(p, rep); });
    timed("kneading", [&] { return run_kneading_stage(p, rep); });
    return rep;
}

inline void emit(const Report& rep, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir);
    for (const auto& [name, body] : rep.files) {
        std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
        if (!f) throw IoError("cannot write " + name);
        f << body;
    }
    std::ofstream f(fs::path(out_dir) / "summary.json", std::ios::binary);
    if (!f) throw IoError("cannot write summary.json");
    f << rep.summary().dump(2) << "\n";
}

}  // namespace knd
