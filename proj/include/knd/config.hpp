#pragma once

// Experiment configuration: model description plus stage budgets, parsed from
// JSON and serialized back canonically (round-trip stable).

#include <knd/model.hpp>

#include <json.hpp>

#include <set>
#include <string>

namespace knd {

using nlohmann::json;

struct InvalidInputError : Error {
    using Error::Error;
};

struct ExperimentConfig {
    TorusMapModel model;
    int M_max = 8;        // series / orbit-table order
    int N = 12;           // collocation mode cutoff per axis
    int threads = 2;
    int homotopy_res = 64;       // base tensor resolution, 3 refinement levels
    int kneading_res = 96;       // kneading base resolution
    int mt_orders = 1;           // check Milnor-Thurston orders 1..mt_orders
    int m_smooth = 6;            // smoothness exponent used in radius bounds
    std::set<std::string> checks = {"orbits", "det", "spectra", "homotopy", "kneading"};
    std::string out_dir;  // empty: resolved by the caller (flag, then $KNEADET_OUT)
};

inline json model_to_json(const TorusMapModel& m) {
    json j;
    j["n"] = m.n;
    j["A"] = json::array();
    for (int r = 0; r < m.n; ++r) {
        json row = json::array();
        for (int c = 0; c < m.n; ++c) row.push_back(m.A(r, c));
        j["A"].push_back(row);
    }
    j["epsilon"] = m.eps;
    j["perturbation"] = json::array();
    for (const auto& t : m.perturbation) {
        json p;
        p["component"] = t.comp + 1;
        p["freq"] = t.freq;
        if (t.c_sin != 0.0) p["coeff_sin"] = t.c_sin;
        if (t.c_cos != 0.0) p["coeff_cos"] = t.c_cos;
        j["perturbation"].push_back(p);
    }
    if (std::holds_alternative<AcipWeight>(m.weight)) {
        j["weight"] = "acip";
    } else {
        json w;
        w["modes"] = json::array();
        for (const auto& md : std::get<TrigScalar>(m.weight).modes) {
            json e;
            e["freq"] = md.freq;
            e["re"] = md.c.real();
            e["im"] = md.c.imag();
            w["modes"].push_back(e);
        }
        j["weight"] = w;
    }
    j["r"] = (m.r < 0) ? json("inf") : json(m.r);
    return j;
}

inline TorusMapModel model_from_json(const json& j) {
    TorusMapModel m;
    try {
        m.n = j.at("n").get<int>();
        if (m.n != 2) throw InvalidInputError("reference implementation requires n = 2");
        m.A = Eigen::MatrixXi(m.n, m.n);
        for (int r = 0; r < m.n; ++r)
            for (int c = 0; c < m.n; ++c) m.A(r, c) = j.at("A").at(r).at(c).get<int>();
        m.eps = j.value("epsilon", 0.0);
        if (j.contains("perturbation")) {
            for (const auto& p : j.at("perturbation")) {
                TrigTerm t;
                t.comp = p.at("component").get<int>() - 1;
                if (t.comp < 0 || t.comp >= m.n)
                    throw InvalidInputError("perturbation component out of range");
                t.freq = p.at("freq").get<std::vector<int>>();
                if ((int)t.freq.size() != m.n) throw InvalidInputError("perturbation freq length");
                t.c_sin = p.value("coeff_sin", 0.0);
                t.c_cos = p.value("coeff_cos", 0.0);
                m.perturbation.push_back(t);
            }
        }
        const auto& w = j.at("weight");
        if (w.is_string() && w.get<std::string>() == "acip") {
            m.weight = AcipWeight{};
        } else if (w.is_object()) {
            TrigScalar g;
            for (const auto& md : w.at("modes")) {
                TrigScalar::Mode e;
                e.freq = md.at("freq").get<std::vector<int>>();
                if ((int)e.freq.size() != m.n) throw InvalidInputError("weight mode freq length");
                e.c = cplx(md.value("re", 0.0), md.value("im", 0.0));
                g.modes.push_back(e);
            }
            m.weight = g;
        } else {
            throw InvalidInputError("weight must be \"acip\" or a mode table");
        }
        if (j.contains("r")) {
            if (j.at("r").is_string())
                m.r = -1;
            else
                m.r = j.at("r").get<int>();
        }
    } catch (const json::exception& e) {
        throw InvalidInputError(std::string("model JSON: ") + e.what());
    }
    return m;
}

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["model"] = model_to_json(c.model);
    j["M_max"] = c.M_max;
    j["N"] = c.N;
    j["threads"] = c.threads;
    j["homotopy_res"] = c.homotopy_res;
    j["kneading_res"] = c.kneading_res;
    j["mt_orders"] = c.mt_orders;
    j["m_smooth"] = c.m_smooth;
    j["checks"] = c.checks;
    j["out_dir"] = c.out_dir;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    try {
        c.model = model_from_json(j.at("model"));
        c.M_max = j.value("M_max", 8);
        c.N = j.value("N", 12);
        c.threads = j.value("threads", 2);
        c.homotopy_res = j.value("homotopy_res", 64);
        c.kneading_res = j.value("kneading_res", 96);
        c.mt_orders = j.value("mt_orders", 1);
        c.m_smooth = j.value("m_smooth", 6);
        if (j.contains("checks")) c.checks = j.at("checks").get<std::set<std::string>>();
        c.out_dir = j.value("out_dir", std::string());
    } catch (const json::exception& e) {
        throw InvalidInputError(std::string("config JSON: ") + e.what());
    }
    if (c.M_max < 1) throw InvalidInputError("M_max must be positive");
    if (c.N < 4) throw InvalidInputError("collocation cutoff N must be at least 4");
    if (c.threads < 1) throw InvalidInputError("threads must be positive");
    if (c.homotopy_res < 16 || c.kneading_res < 16)
        throw InvalidInputError("quadrature budgets must be at least 16");
    if (c.mt_orders < 1 || c.mt_orders > 2) throw InvalidInputError("mt_orders must be 1 or 2");
    for (const auto& s : c.checks)
        if (s != "orbits" && s != "det" && s != "spectra" && s != "homotopy" && s != "kneading")
            throw InvalidInputError("unknown check: " + s);
    return c;
}

inline uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(config_to_json(c).dump()); }

}  // namespace knd
