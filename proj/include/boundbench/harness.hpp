#ifndef BOUNDBENCH_HARNESS_HPP
#define BOUNDBENCH_HARNESS_HPP

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "boundbench/activations.hpp"
#include "boundbench/bounds.hpp"
#include "boundbench/linalg.hpp"
#include "boundbench/network.hpp"
#include "boundbench/ntk.hpp"
#include "boundbench/properties.hpp"

namespace boundbench {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Schema violation; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class RunMode { Theorem31, Theorem32, Diagnostics, PropertySuite };

inline std::string_view to_string(RunMode m) {
    switch (m) {
        case RunMode::Theorem31:
            return "theorem31";
        case RunMode::Theorem32:
            return "theorem32";
        case RunMode::Diagnostics:
            return "diagnostics";
        default:
            return "property_suite";
    }
}

struct NetworkConfig {
    std::size_t p = 0;
    std::size_t L = 0;
    ActivationKind activation = ActivationKind::HuberizedReLU;
    std::optional<double> h;  // empty = auto
    double h_cap = 1.0;
    bool operator==(const NetworkConfig&) const = default;
};

struct ClusteredConfig {
    std::size_t n = 0;
    double r = 0.05;
    Vector mu;  // empty = drawn from seeds.data
    bool allow_large_r = false;
    bool operator==(const ClusteredConfig&) const = default;
};

enum class DataSource { Inline, File, Clustered };

struct DataConfig {
    DataSource source = DataSource::Clustered;
    std::vector<Vector> inputs;
    std::vector<int> labels;
    std::string file;
    ClusteredConfig clustered;
    bool operator==(const DataConfig&) const = default;
};

struct OptimizerConfig {
    std::optional<double> alpha;  // empty = auto
    double alpha_scale = 1.0;
    std::optional<double> Q;  // empty = auto
    std::size_t max_steps = 1000;
    double loss_floor = 0.0;
    std::optional<double> target_loss;  // empty = auto
    std::size_t warmup_steps = 500;
    double warmup_alpha = 0.5;
    bool operator==(const OptimizerConfig&) const = default;
};

struct AverageLossConfig {
    double tau = 0.0;
    double rho = 0.0;
    std::size_t T = 100;
    std::size_t k_pairs = 32;
    bool operator==(const AverageLossConfig&) const = default;
};

struct PhaseConfig {
    std::optional<double> alpha_nt;  // empty = theta_const / (p L^5)
    double theta_const = 1.0;
    double c1 = 1.0;
    double delta = 0.1;
    std::optional<double> gamma;   // empty = estimated
    std::optional<std::size_t> T;  // empty = closed form
    std::optional<double> phase1_loss_threshold;
    std::size_t phase1_max_steps = 10'000;
    std::size_t nt_steps = 200;
    std::optional<AverageLossConfig> average_loss_check;
    bool operator==(const PhaseConfig&) const = default;
};

struct SeedConfig {
    std::uint64_t init = 0;
    std::uint64_t data = 0;
    std::uint64_t probes = 0;
    bool operator==(const SeedConfig&) const = default;
};

struct OutputConfig {
    std::string dir = "boundbench_out";
    bool csv = true;
    bool json = true;
    bool operator==(const OutputConfig&) const = default;
};

struct DiagnosticsConfig {
    std::optional<double> tau;
    DiagnosticRanges ranges;
    bool operator==(const DiagnosticsConfig& o) const {
        return tau == o.tau && ranges.x_norm_lo == o.ranges.x_norm_lo && ranges.x_norm_hi == o.ranges.x_norm_hi &&
               ranges.hidden_op_max == o.ranges.hidden_op_max && ranges.outer_ratio_lo == o.ranges.outer_ratio_lo &&
               ranges.outer_ratio_hi == o.ranges.outer_ratio_hi;
    }
};

struct PropertyConfig {
    std::size_t instances = 100;
    std::size_t max_p = 6;
    std::size_t max_L = 3;
    bool operator==(const PropertyConfig&) const = default;
};

struct RunConfig {
    RunMode mode = RunMode::Theorem31;
    NetworkConfig network;
    DataConfig data;
    OptimizerConfig optimizer;
    PhaseConfig phases;
    SeedConfig seeds;
    OutputConfig output;
    DiagnosticsConfig diagnostics;
    PropertyConfig properties;
    bool operator==(const RunConfig&) const = default;

    std::size_t sample_count() const {
        return data.source == DataSource::Clustered ? data.clustered.n : data.labels.size();
    }
};

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

inline void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) {
        throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
    }
}

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(join(path, key) + ": unknown key");
        }
    }
}

inline double read_real(const json& j, const std::string& path) {
    if (!j.is_number()) {
        throw ConfigError(path + ": expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        throw ConfigError(path + ": must be finite");
    }
    return v;
}

inline double read_positive(const json& j, const std::string& path) {
    const double v = read_real(j, path);
    if (!(v > 0.0)) {
        throw ConfigError(path + ": must be positive");
    }
    return v;
}

inline std::size_t read_count(const json& j, const std::string& path, std::size_t min_value) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)) {
        throw ConfigError(path + ": expected a nonnegative integer");
    }
    const auto v = j.get<std::uint64_t>();
    if (v < min_value) {
        throw ConfigError(path + ": must be at least " + std::to_string(min_value));
    }
    return static_cast<std::size_t>(v);
}

inline std::uint64_t read_seed(const json& j, const std::string& path) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
        throw ConfigError(path + ": expected a nonnegative integer seed");
    }
    return j.get<std::uint64_t>();
}

inline bool read_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) {
        throw ConfigError(path + ": expected true or false");
    }
    return j.get<bool>();
}

inline std::string read_string(const json& j, const std::string& path) {
    if (!j.is_string()) {
        throw ConfigError(path + ": expected a string");
    }
    return j.get<std::string>();
}

/// "auto" or a positive number.
inline std::optional<double> read_auto_positive(const json& j, const std::string& path) {
    if (j.is_string()) {
        if (j.get<std::string>() == "auto") {
            return std::nullopt;
        }
        throw ConfigError(path + ": expected \"auto\" or a number");
    }
    return read_positive(j, path);
}

inline json auto_or(const std::optional<double>& v) { return v ? json(*v) : json("auto"); }

}  // namespace detail

inline RunMode parse_mode(const std::string& s, const std::string& path = "mode") {
    if (s == "theorem31") return RunMode::Theorem31;
    if (s == "theorem32") return RunMode::Theorem32;
    if (s == "diagnostics") return RunMode::Diagnostics;
    if (s == "property_suite") return RunMode::PropertySuite;
    throw ConfigError(path + ": unknown mode '" + s + "'");
}

inline RunConfig parse_config(const json& j) {
    using namespace detail;
    require_object(j, "");
    reject_unknown(j, "",
                   {"mode", "network", "data", "optimizer", "phases", "seeds", "output", "diagnostics", "properties"});
    RunConfig c;
    if (!j.contains("mode")) {
        throw ConfigError("mode: required");
    }
    c.mode = parse_mode(read_string(j["mode"], "mode"));

    if (!j.contains("network")) {
        throw ConfigError("network: required");
    }
    {
        const json& n = j["network"];
        require_object(n, "network");
        reject_unknown(n, "network", {"p", "L", "activation", "h", "h_cap"});
        if (!n.contains("p")) throw ConfigError("network.p: required");
        if (!n.contains("L")) throw ConfigError("network.L: required");
        if (!n["p"].is_number_integer() || n["p"].get<long long>() < 1) {
            throw ConfigError("network.p: must be a positive integer");
        }
        if (!n["L"].is_number_integer() || n["L"].get<long long>() < 1) {
            throw ConfigError("network.L: must be a positive integer");
        }
        c.network.p = n["p"].get<std::size_t>();
        c.network.L = n["L"].get<std::size_t>();
        if (n.contains("activation")) {
            try {
                c.network.activation = parse_activation_kind(read_string(n["activation"], "network.activation"));
            } catch (const ConfigError&) {
                throw;
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("network.activation: ") + e.what());
            }
        }
        if (n.contains("h")) c.network.h = read_auto_positive(n["h"], "network.h");
        if (n.contains("h_cap")) c.network.h_cap = read_positive(n["h_cap"], "network.h_cap");
    }

    if (j.contains("data")) {
        const json& d = j["data"];
        require_object(d, "data");
        reject_unknown(d, "data", {"inline", "file", "clustered"});
        const int sources = static_cast<int>(d.contains("inline")) + static_cast<int>(d.contains("file")) +
                            static_cast<int>(d.contains("clustered"));
        if (sources != 1) {
            throw ConfigError("data: exactly one of inline, file, clustered must be given");
        }
        if (d.contains("inline")) {
            c.data.source = DataSource::Inline;
            const json& in = d["inline"];
            require_object(in, "data.inline");
            reject_unknown(in, "data.inline", {"p", "samples"});
            if (!in.contains("samples") || !in["samples"].is_array() || in["samples"].empty()) {
                throw ConfigError("data.inline.samples: expected a nonempty array");
            }
            if (in.contains("p") && (!in["p"].is_number_integer() || in["p"].get<long long>() != static_cast<long long>(c.network.p))) {
                throw ConfigError("data.inline.p: must equal network.p");
            }
            std::size_t s = 0;
            for (const auto& item : in["samples"]) {
                const std::string sp = "data.inline.samples[" + std::to_string(s) + "]";
                require_object(item, sp);
                reject_unknown(item, sp, {"x", "y"});
                if (!item.contains("x") || !item["x"].is_array() || item["x"].size() != c.network.p) {
                    throw ConfigError(sp + ".x: expected an array of network.p numbers");
                }
                Vector x;
                for (std::size_t i = 0; i < item["x"].size(); ++i) {
                    x.push_back(read_real(item["x"][i], sp + ".x[" + std::to_string(i) + "]"));
                }
                if (!item.contains("y") || !item["y"].is_number_integer() ||
                    (item["y"].get<int>() != 1 && item["y"].get<int>() != -1)) {
                    throw ConfigError(sp + ".y: expected +1 or -1");
                }
                c.data.inputs.push_back(std::move(x));
                c.data.labels.push_back(item["y"].get<int>());
                ++s;
            }
        } else if (d.contains("file")) {
            c.data.source = DataSource::File;
            c.data.file = read_string(d["file"], "data.file");
        } else {
            c.data.source = DataSource::Clustered;
            const json& cl = d["clustered"];
            require_object(cl, "data.clustered");
            reject_unknown(cl, "data.clustered", {"n", "r", "mu", "allow_large_r"});
            if (!cl.contains("n")) throw ConfigError("data.clustered.n: required");
            c.data.clustered.n = read_count(cl["n"], "data.clustered.n", 2);
            if (cl.contains("r")) {
                c.data.clustered.r = read_real(cl["r"], "data.clustered.r");
                if (c.data.clustered.r < 0.0 || c.data.clustered.r >= 1.0) {
                    throw ConfigError("data.clustered.r: must lie in [0, 1)");
                }
            }
            if (cl.contains("allow_large_r")) {
                c.data.clustered.allow_large_r = read_bool(cl["allow_large_r"], "data.clustered.allow_large_r");
            }
            if (c.data.clustered.r > 1.0 / 16.0 && !c.data.clustered.allow_large_r) {
                throw ConfigError("data.clustered.r: exceeds 1/16 (set allow_large_r to override)");
            }
            if (cl.contains("mu")) {
                if (!cl["mu"].is_array() || cl["mu"].size() != c.network.p) {
                    throw ConfigError("data.clustered.mu: expected an array of network.p numbers");
                }
                for (std::size_t i = 0; i < cl["mu"].size(); ++i) {
                    c.data.clustered.mu.push_back(read_real(cl["mu"][i], "data.clustered.mu[" + std::to_string(i) + "]"));
                }
                if (norm2(c.data.clustered.mu) == 0.0) {
                    throw ConfigError("data.clustered.mu: must be nonzero");
                }
            }
        }
    } else if (c.mode != RunMode::PropertySuite) {
        throw ConfigError("data: required");
    }

    if (j.contains("optimizer")) {
        const json& o = j["optimizer"];
        require_object(o, "optimizer");
        reject_unknown(o, "optimizer",
                       {"alpha", "alpha_scale", "Q", "max_steps", "loss_floor", "target_loss", "warmup_steps",
                        "warmup_alpha"});
        auto& oc = c.optimizer;
        if (o.contains("alpha")) oc.alpha = read_auto_positive(o["alpha"], "optimizer.alpha");
        if (o.contains("alpha_scale")) oc.alpha_scale = read_positive(o["alpha_scale"], "optimizer.alpha_scale");
        if (o.contains("Q")) oc.Q = read_auto_positive(o["Q"], "optimizer.Q");
        if (o.contains("max_steps")) oc.max_steps = read_count(o["max_steps"], "optimizer.max_steps", 1);
        if (o.contains("loss_floor")) {
            oc.loss_floor = read_real(o["loss_floor"], "optimizer.loss_floor");
            if (oc.loss_floor < 0.0) throw ConfigError("optimizer.loss_floor: must be nonnegative");
        }
        if (o.contains("target_loss")) {
            oc.target_loss = read_auto_positive(o["target_loss"], "optimizer.target_loss");
            if (oc.target_loss && *oc.target_loss >= 1.0) {
                throw ConfigError("optimizer.target_loss: must lie in (0, 1)");
            }
        }
        if (o.contains("warmup_steps")) oc.warmup_steps = read_count(o["warmup_steps"], "optimizer.warmup_steps", 0);
        if (o.contains("warmup_alpha")) oc.warmup_alpha = read_positive(o["warmup_alpha"], "optimizer.warmup_alpha");
    }

    if (j.contains("phases")) {
        const json& ph = j["phases"];
        require_object(ph, "phases");
        reject_unknown(ph, "phases",
                       {"alpha_nt", "theta_const", "c1", "delta", "gamma", "T", "phase1_loss_threshold",
                        "phase1_max_steps", "nt_steps", "average_loss_check"});
        auto& pc = c.phases;
        if (ph.contains("alpha_nt")) pc.alpha_nt = read_auto_positive(ph["alpha_nt"], "phases.alpha_nt");
        if (ph.contains("theta_const")) pc.theta_const = read_positive(ph["theta_const"], "phases.theta_const");
        if (ph.contains("c1")) pc.c1 = read_positive(ph["c1"], "phases.c1");
        if (ph.contains("delta")) {
            pc.delta = read_positive(ph["delta"], "phases.delta");
            if (pc.delta >= 1.0) throw ConfigError("phases.delta: must lie in (0, 1)");
        }
        if (ph.contains("gamma")) pc.gamma = read_auto_positive(ph["gamma"], "phases.gamma");
        if (ph.contains("T")) {
            if (ph["T"].is_string() && ph["T"].get<std::string>() == "auto") {
                pc.T.reset();
            } else {
                pc.T = read_count(ph["T"], "phases.T", 1);
            }
        }
        if (ph.contains("phase1_loss_threshold")) {
            pc.phase1_loss_threshold = read_positive(ph["phase1_loss_threshold"], "phases.phase1_loss_threshold");
        }
        if (ph.contains("phase1_max_steps")) {
            pc.phase1_max_steps = read_count(ph["phase1_max_steps"], "phases.phase1_max_steps", 1);
        }
        if (ph.contains("nt_steps")) pc.nt_steps = read_count(ph["nt_steps"], "phases.nt_steps", 0);
        if (ph.contains("average_loss_check")) {
            const json& a = ph["average_loss_check"];
            const std::string ap = "phases.average_loss_check";
            require_object(a, ap);
            reject_unknown(a, ap, {"tau", "rho", "T", "k_pairs"});
            AverageLossConfig ac;
            if (!a.contains("tau")) throw ConfigError(ap + ".tau: required");
            ac.tau = read_positive(a["tau"], ap + ".tau");
            if (a.contains("rho")) {
                ac.rho = read_real(a["rho"], ap + ".rho");
                if (ac.rho < 0.0) throw ConfigError(ap + ".rho: must be nonnegative");
            }
            if (a.contains("T")) ac.T = read_count(a["T"], ap + ".T", 1);
            if (a.contains("k_pairs")) ac.k_pairs = read_count(a["k_pairs"], ap + ".k_pairs", 1);
            pc.average_loss_check = ac;
        }
    }

    if (j.contains("seeds")) {
        const json& s = j["seeds"];
        require_object(s, "seeds");
        reject_unknown(s, "seeds", {"init", "data", "probes"});
        if (s.contains("init")) c.seeds.init = read_seed(s["init"], "seeds.init");
        if (s.contains("data")) c.seeds.data = read_seed(s["data"], "seeds.data");
        if (s.contains("probes")) c.seeds.probes = read_seed(s["probes"], "seeds.probes");
    }

    if (j.contains("output")) {
        const json& o = j["output"];
        require_object(o, "output");
        reject_unknown(o, "output", {"dir", "csv", "json"});
        if (o.contains("dir")) c.output.dir = read_string(o["dir"], "output.dir");
        if (o.contains("csv")) c.output.csv = read_bool(o["csv"], "output.csv");
        if (o.contains("json")) c.output.json = read_bool(o["json"], "output.json");
    }

    if (j.contains("diagnostics")) {
        const json& d = j["diagnostics"];
        require_object(d, "diagnostics");
        reject_unknown(d, "diagnostics", {"tau", "ranges"});
        if (d.contains("tau")) c.diagnostics.tau = read_positive(d["tau"], "diagnostics.tau");
        if (d.contains("ranges")) {
            const json& r = d["ranges"];
            const std::string rp = "diagnostics.ranges";
            require_object(r, rp);
            reject_unknown(r, rp, {"x_norm_lo", "x_norm_hi", "hidden_op_max", "outer_ratio_lo", "outer_ratio_hi"});
            auto& rr = c.diagnostics.ranges;
            if (r.contains("x_norm_lo")) rr.x_norm_lo = read_real(r["x_norm_lo"], rp + ".x_norm_lo");
            if (r.contains("x_norm_hi")) rr.x_norm_hi = read_real(r["x_norm_hi"], rp + ".x_norm_hi");
            if (r.contains("hidden_op_max")) rr.hidden_op_max = read_real(r["hidden_op_max"], rp + ".hidden_op_max");
            if (r.contains("outer_ratio_lo")) rr.outer_ratio_lo = read_real(r["outer_ratio_lo"], rp + ".outer_ratio_lo");
            if (r.contains("outer_ratio_hi")) rr.outer_ratio_hi = read_real(r["outer_ratio_hi"], rp + ".outer_ratio_hi");
        }
    }

    if (j.contains("properties")) {
        const json& pr = j["properties"];
        require_object(pr, "properties");
        reject_unknown(pr, "properties", {"instances", "max_p", "max_L"});
        if (pr.contains("instances")) c.properties.instances = read_count(pr["instances"], "properties.instances", 1);
        if (pr.contains("max_p")) c.properties.max_p = read_count(pr["max_p"], "properties.max_p", 2);
        if (pr.contains("max_L")) c.properties.max_L = read_count(pr["max_L"], "properties.max_L", 1);
    }
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical form: every field present, "auto" where unresolved.
inline json to_json(const RunConfig& c) {
    using detail::auto_or;
    json j;
    j["mode"] = std::string(to_string(c.mode));
    j["network"] = {{"p", c.network.p},
                    {"L", c.network.L},
                    {"activation", std::string(to_string(c.network.activation))},
                    {"h", auto_or(c.network.h)},
                    {"h_cap", c.network.h_cap}};
    json d = json::object();
    switch (c.data.source) {
        case DataSource::Inline: {
            json samples = json::array();
            for (std::size_t s = 0; s < c.data.inputs.size(); ++s) {
                samples.push_back({{"x", c.data.inputs[s]}, {"y", c.data.labels[s]}});
            }
            d["inline"] = {{"p", c.network.p}, {"samples", samples}};
            break;
        }
        case DataSource::File:
            d["file"] = c.data.file;
            break;
        case DataSource::Clustered: {
            json cl = {{"n", c.data.clustered.n}, {"r", c.data.clustered.r},
                       {"allow_large_r", c.data.clustered.allow_large_r}};
            if (!c.data.clustered.mu.empty()) {
                cl["mu"] = c.data.clustered.mu;
            }
            d["clustered"] = cl;
            break;
        }
    }
    if (!(c.mode == RunMode::PropertySuite && c.data == DataConfig{})) {
        j["data"] = d;
    }
    const auto& o = c.optimizer;
    j["optimizer"] = {{"alpha", auto_or(o.alpha)},       {"alpha_scale", o.alpha_scale},
                      {"Q", auto_or(o.Q)},               {"max_steps", o.max_steps},
                      {"loss_floor", o.loss_floor},      {"target_loss", auto_or(o.target_loss)},
                      {"warmup_steps", o.warmup_steps},  {"warmup_alpha", o.warmup_alpha}};
    const auto& ph = c.phases;
    json pj = {{"alpha_nt", auto_or(ph.alpha_nt)},
               {"theta_const", ph.theta_const},
               {"c1", ph.c1},
               {"delta", ph.delta},
               {"gamma", auto_or(ph.gamma)},
               {"T", ph.T ? json(*ph.T) : json("auto")},
               {"phase1_max_steps", ph.phase1_max_steps},
               {"nt_steps", ph.nt_steps}};
    if (ph.phase1_loss_threshold) {
        pj["phase1_loss_threshold"] = *ph.phase1_loss_threshold;
    }
    if (ph.average_loss_check) {
        const auto& a = *ph.average_loss_check;
        pj["average_loss_check"] = {{"tau", a.tau}, {"rho", a.rho}, {"T", a.T}, {"k_pairs", a.k_pairs}};
    }
    j["phases"] = pj;
    j["seeds"] = {{"init", c.seeds.init}, {"data", c.seeds.data}, {"probes", c.seeds.probes}};
    j["output"] = {{"dir", c.output.dir}, {"csv", c.output.csv}, {"json", c.output.json}};
    const auto& r = c.diagnostics.ranges;
    json dj = {{"ranges",
                {{"x_norm_lo", r.x_norm_lo},
                 {"x_norm_hi", r.x_norm_hi},
                 {"hidden_op_max", r.hidden_op_max},
                 {"outer_ratio_lo", r.outer_ratio_lo},
                 {"outer_ratio_hi", r.outer_ratio_hi}}}};
    if (c.diagnostics.tau) {
        dj["tau"] = *c.diagnostics.tau;
    }
    j["diagnostics"] = dj;
    j["properties"] = {
        {"instances", c.properties.instances}, {"max_p", c.properties.max_p}, {"max_L", c.properties.max_L}};
    return j;
}

/// Sets every seed to k.
inline void apply_seed_override(RunConfig& c, std::uint64_t k) {
    c.seeds.init = k;
    c.seeds.data = k;
    c.seeds.probes = k;
}

// ---------------------------------------------------------------------------
// Data and initialization
// ---------------------------------------------------------------------------

struct BuiltData {
    Dataset data;
    Vector mu;  // cluster centre, empty unless clustered
    std::vector<std::string> warnings;
};

inline BuiltData build_dataset(const RunConfig& c) {
    BuiltData out;
    switch (c.data.source) {
        case DataSource::Inline:
            out.data = Dataset(c.data.inputs, c.data.labels);
            break;
        case DataSource::File:
            out.data = load_dataset_file(c.data.file);
            break;
        case DataSource::Clustered: {
            ClusteredDataSpec spec;
            spec.p = c.network.p;
            spec.mu = c.data.clustered.mu;
            spec.r = c.data.clustered.r;
            spec.n = c.data.clustered.n;
            spec.seed = c.seeds.data;
            spec.allow_large_r = c.data.clustered.allow_large_r;
            ClusteredData cd = make_clustered_dataset(spec);
            out.data = std::move(cd.data);
            out.mu = std::move(cd.mu);
            out.warnings = std::move(cd.warnings);
            break;
        }
    }
    if (out.data.width() != c.network.p) {
        throw ConfigError("data: input dimension " + std::to_string(out.data.width()) + " differs from network.p");
    }
    for (std::size_t s : out.data.renormalized()) {
        out.warnings.push_back("sample " + std::to_string(s) + " renormalized to unit norm");
    }
    return out;
}

inline bool classifies_all(const WeightStack& V, const Activation& act, const Dataset& data) {
    for (std::size_t s = 0; s < data.size(); ++s) {
        if (!(data.label(s) * network_output(V, act, data.input(s)) > 0.0)) {
            return false;
        }
    }
    return true;
}

struct WarmupResult {
    WeightStack V;
    std::size_t steps = 0;
    bool all_correct = false;
    LossValue J;
};

/// Plain unmonitored GD.
inline WarmupResult warmup(const WeightStack& V0, const Activation& act, const Dataset& data, std::size_t steps,
                           double alpha) {
    WarmupResult r;
    r.V = V0;
    for (std::size_t t = 0; t < steps; ++t) {
        const Evaluation ev = evaluate(r.V, act, data);
        if (!std::isfinite(ev.loss.value) || !ev.gradient.all_finite()) {
            throw std::runtime_error("warmup: non-finite loss or gradient at step " + std::to_string(t + 1));
        }
        r.V = gd_step(r.V, alpha, ev.gradient);
        ++r.steps;
    }
    r.J = total_loss(r.V, act, data);
    if (!std::isfinite(r.J.value)) {
        throw std::runtime_error("warmup: non-finite loss at step " + std::to_string(steps + 1));
    }
    r.all_correct = classifies_all(r.V, act, data);
    return r;
}

struct SmallLossInit {
    WeightStack V;
    double scale = 1.0;
    LossValue J;
};

/// Scales the outer layer by the smallest c >= 1 (to about 1e-13 relative) with
/// loss at most target. The network output is linear in the outer layer, so
/// every margin scales by c.
inline SmallLossInit build_small_loss_init(const WeightStack& V_warm, const Dataset& data, const Activation& act,
                                           double target) {
    if (!(target > 0.0 && target < 1.0)) {
        throw std::invalid_argument("build_small_loss_init: target must lie in (0, 1)");
    }
    const std::size_t n = data.size();
    std::vector<double> margins(n);
    for (std::size_t s = 0; s < n; ++s) {
        margins[s] = data.label(s) * network_output(V_warm, act, data.input(s));
        if (!(margins[s] > 0.0)) {
            throw std::runtime_error("build_small_loss_init: sample " + std::to_string(s) +
                                     " is not correctly classified; warm up first");
        }
    }
    const double log_target = std::log(target);
    auto scaled = [&](double c) {
        WeightStack V = V_warm;
        for (double& v : V.outer().data()) {
            v *= c;
        }
        return V;
    };
    auto model_loss = [&](double c) {
        std::vector<LossValue> per(n);
        for (std::size_t s = 0; s < n; ++s) {
            per[s] = logistic_loss(c * margins[s]);
        }
        return mean_loss(per).log_value;
    };
    SmallLossInit out;
    out.J = total_loss(V_warm, act, data);
    if (out.J.log_value <= log_target) {
        out.V = V_warm;
        return out;
    }
    double lo = 1.0;
    double hi = 2.0;
    while (model_loss(hi) > log_target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) {
            throw std::runtime_error("build_small_loss_init: target loss unreachable by scaling");
        }
    }
    for (int it = 0; it < 200 && hi / lo - 1.0 > 1e-13; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (model_loss(mid) > log_target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The stack's own loss differs from the model by rounding; nudge until it meets the target.
    for (int it = 0; it < 1000; ++it) {
        out.V = scaled(hi);
        out.J = total_loss(out.V, act, data);
        if (out.J.log_value <= log_target) {
            out.scale = hi;
            return out;
        }
        hi *= 1.0 + 1e-12;
    }
    throw std::runtime_error("build_small_loss_init: could not meet the target after rounding corrections");
}

// ---------------------------------------------------------------------------
// Run log and writers
// ---------------------------------------------------------------------------

struct RunLog {
    RunConfig config;
    json resolved = json::object();
    std::vector<StepRecord> records;
    std::vector<std::size_t> phase_boundaries;
    std::vector<InvariantVerdict> verdicts;
    std::optional<TheoryConstants> constants;
    json extra = json::object();
    std::vector<std::string> warnings;
    bool passed = true;
    double wall_seconds = 0.0;
};

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline constexpr std::string_view kCsvHeader =
    "t,J,logJ,grad_norm,weight_norm,lower_bound,upper_bound,rate_bound,i1,i2,i3,descent_ok,alignment_ok,phase";

inline void write_csv(std::ostream& os, const std::vector<StepRecord>& records) {
    os << kCsvHeader << '\n';
    for (const auto& r : records) {
        os << r.t << ',' << format_double(r.J.value) << ',' << format_double(r.J.log_value) << ','
           << format_double(r.grad_norm) << ',' << format_double(r.weight_norm) << ',' << format_double(r.lower_bound)
           << ',' << format_double(r.upper_bound) << ',' << format_double(r.rate_bound) << ','
           << to_string(r.i1.verdict) << ',' << to_string(r.i2.verdict) << ',' << to_string(r.i3.verdict) << ','
           << to_string(r.descent.verdict) << ',' << to_string(r.alignment.verdict) << ',' << r.phase << '\n';
    }
}

inline std::string csv_string(const std::vector<StepRecord>& records) {
    std::ostringstream os;
    write_csv(os, records);
    return os.str();
}

inline json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json constants_to_json(const TheoryConstants& c) {
    return {{"J1", c.inputs.J1.value},
            {"logJ1", c.inputs.J1.log_value},
            {"normV1", c.inputs.normV1},
            {"p", c.inputs.p},
            {"L", c.inputs.L},
            {"n", c.inputs.n},
            {"h_max", c.h_max},
            {"alpha_max",
             {{"smoothness_term", c.alpha_max.smoothness_term},
              {"rate_term", c.alpha_max.rate_term},
              {"value", c.alpha_max.value}}},
            {"h", c.h},
            {"alpha", c.alpha},
            {"q_tilde", c.q_tilde},
            {"Q", c.Q},
            {"theorem_hypotheses", theorem_hypotheses_hold(c)}};
}

inline json summary_json(const RunLog& log) {
    json j;
    json cfg = to_json(log.config);
    cfg["resolved"] = log.resolved;
    j["config"] = cfg;
    if (log.constants) {
        j["constants"] = constants_to_json(*log.constants);
    }
    json inv = json::object();
    for (const auto& v : log.verdicts) {
        inv[v.name] = {{"worst_slack", v.evaluated > 0 ? nullable(v.worst_slack) : json(nullptr)},
                       {"first_violation", v.first_violation ? json(*v.first_violation) : json(nullptr)},
                       {"evaluated", v.evaluated},
                       {"not_applicable", v.not_applicable},
                       {"failures", v.failures},
                       {"gates_exit_status", gates_exit_status(v.name)}};
    }
    j["invariants"] = inv;
    j["steps"] = log.records.size();
    j["phase_boundaries"] = log.phase_boundaries;
    if (!log.records.empty()) {
        const auto& last = log.records.back();
        j["final"] = {{"t", last.t},
                      {"J", last.J.value},
                      {"logJ", last.J.log_value},
                      {"weight_norm", last.weight_norm},
                      {"grad_norm", last.grad_norm}};
    }
    j["extra"] = log.extra;
    j["warnings"] = log.warnings;
    j["passed"] = log.passed;
    j["wall_time_seconds"] = log.wall_seconds;
    return j;
}

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

struct ResolvedH {
    double h = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    SmallLossInit init;
};

/// h = min(h_max/2, cap) where h_max depends on the scaled stack, which in
/// turn depends on h; iterated to a fixed point.
inline ResolvedH resolve_auto_h(const WeightStack& V_warm, const Dataset& data, ActivationKind kind, double h0,
                                double cap, double target, std::size_t max_iterations = 100) {
    ResolvedH r;
    double h = h0;
    for (std::size_t it = 1; it <= max_iterations; ++it) {
        r.iterations = it;
        SmallLossInit init = build_small_loss_init(V_warm, data, Activation(kind, h), target);
        const double h_max = compute_h_max(init.J, V_warm.width(), V_warm.depth(), frobenius_norm(init.V));
        const double next = std::min(h_max / 2.0, cap);
        r.h = h;
        r.init = std::move(init);
        if (std::abs(next - h) <= 1e-12 * h) {
            r.converged = true;
            return r;
        }
        h = next;
    }
    return r;
}

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline void finish(RunLog& log) {
    log.verdicts = summarize(log.records);
    log.passed = !any_gating_failure(log.verdicts);
}

}  // namespace detail

inline double auto_target_loss(std::size_t n, std::size_t L) { return 0.5 * std::exp(log_small_loss_threshold(n, L)); }

/// Warmup, outer-layer scaling to a small loss, then monitored GD at the
/// resolved constants.
inline RunLog run_theorem31(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RunLog log;
    log.config = cfg;
    BuiltData bd = build_dataset(cfg);
    log.warnings = bd.warnings;
    const Dataset& data = bd.data;
    const std::size_t p = cfg.network.p;
    const std::size_t L = cfg.network.L;
    const std::size_t n = data.size();
    const ActivationKind kind = cfg.network.activation;

    const WeightStack V0 = gaussian_init({p, L, cfg.seeds.init});
    const double h_warm = cfg.network.h.value_or(std::min(1.0, cfg.network.h_cap));
    const WarmupResult w =
        warmup(V0, Activation(kind, h_warm), data, cfg.optimizer.warmup_steps, cfg.optimizer.warmup_alpha);
    if (!w.all_correct) {
        throw std::runtime_error("warmup did not classify every sample after " + std::to_string(w.steps) +
                                 " steps; raise optimizer.warmup_steps or change seeds");
    }
    const double target = cfg.optimizer.target_loss.value_or(auto_target_loss(n, L));

    double h = 0.0;
    SmallLossInit init;
    if (cfg.network.h) {
        h = *cfg.network.h;
        init = build_small_loss_init(w.V, data, Activation(kind, h), target);
    } else {
        ResolvedH rh = resolve_auto_h(w.V, data, kind, h_warm, cfg.network.h_cap, target);
        h = rh.h;
        init = std::move(rh.init);
        log.resolved["h_iterations"] = rh.iterations;
        log.resolved["h_converged"] = rh.converged;
        if (!rh.converged) {
            log.warnings.push_back("automatic h did not reach a fixed point");
        }
    }
    const Activation act(kind, h);
    const TheoryInputs in{init.J, p, L, frobenius_norm(init.V), n};
    const double h_max = compute_h_max(in.J1, p, L, in.normV1);
    const AlphaMax am = alpha_max_terms_unchecked(h, in.J1, p, L, in.normV1);
    const double alpha = cfg.optimizer.alpha.value_or(cfg.optimizer.alpha_scale * am.value);
    const TheoryConstants c = make_constants(in, h, alpha, cfg.optimizer.Q.value_or(0.0));
    if (!(h < h_max)) {
        log.warnings.push_back("h is not below h_max; rate, ratio and step-size checks are not applicable");
    }
    if (!(in.J1.log_value < log_small_loss_threshold(n, L))) {
        log.warnings.push_back("initial loss is not below 1/n^(1+24L); rate, ratio and step-size checks are not applicable");
    }
    log.constants = c;
    log.resolved["h"] = h;
    log.resolved["alpha"] = alpha;
    log.resolved["Q"] = c.Q;
    log.resolved["target_loss"] = target;
    log.resolved["outer_scale"] = init.scale;
    log.resolved["warmup_loss"] = w.J.value;

    DescentOptions opt;
    opt.max_steps = cfg.optimizer.max_steps;
    opt.loss_floor = cfg.optimizer.loss_floor;
    DescentResult d = monitored_descent(init.V, act, data, c, opt);
    log.records = std::move(d.records);
    detail::finish(log);
    log.wall_seconds = detail::elapsed_seconds(start);
    return log;
}

/// Margin estimate used for the phase-one radius: the explicit clustered
/// witness when it applies, otherwise subgradient ascent on the features.
inline MarginWitness estimate_margin(const WeightStack& V1, const Activation& act, const BuiltData& bd,
                                     std::vector<std::string>& warnings) {
    const std::size_t p = V1.width();
    if (V1.depth() == 1 && act.kind() == ActivationKind::HuberizedReLU && !bd.mu.empty() &&
        act.h() <= std::sqrt(std::numbers::pi) / (2.0 * static_cast<double>(p))) {
        try {
            return margin_witness_clustered(V1, act, bd.data, bd.mu);
        } catch (const std::runtime_error& e) {
            warnings.push_back(std::string("clustered witness unavailable: ") + e.what());
        }
    }
    return margin_estimate_subgradient(ntk_features(V1, act, bd.data), bd.data.labels(), 200, 0.5);
}

inline RunLog run_theorem32(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RunLog log;
    log.config = cfg;
    BuiltData bd = build_dataset(cfg);
    log.warnings = bd.warnings;
    const Dataset& data = bd.data;
    const std::size_t p = cfg.network.p;
    const std::size_t L = cfg.network.L;
    const std::size_t n = data.size();
    const auto& ph = cfg.phases;

    const WeightStack V1 = gaussian_init({p, L, cfg.seeds.init});
    double h = cfg.network.h.value_or(std::min(compute_h_nt(p, L, n), cfg.network.h_cap));
    if (!(h > 0.0)) {
        h = cfg.network.h_cap;
        log.warnings.push_back("closed-form h is not positive for this n; using network.h_cap");
    }
    const Activation act(cfg.network.activation, h);

    double gamma = 0.0;
    if (ph.gamma) {
        gamma = *ph.gamma;
    } else {
        const MarginWitness mw = estimate_margin(V1, act, bd, log.warnings);
        gamma = mw.gamma;
        log.resolved["gamma_construction"] =
            mw.construction == WitnessConstruction::ClusteredExplicit ? "clustered_explicit" : "subgradient_estimate";
    }
    PhasePlan plan;
    if (gamma > 0.0) {
        plan = make_phase_plan(p, L, n, gamma, ph.delta, ph.c1, ph.theta_const);
    } else {
        plan = make_phase_plan(p, L, n, 1.0, ph.delta, ph.c1, ph.theta_const);
        plan.gamma = gamma;
        plan.rho = std::numeric_limits<double>::infinity();
        plan.T_formula = std::numeric_limits<double>::infinity();
        log.warnings.push_back("estimated margin is not positive; closed-form radius and horizon are undefined");
    }
    if (ph.alpha_nt) {
        plan.alpha_nt = *ph.alpha_nt;
    }
    plan.h_nt = h;
    std::size_t T = ph.T ? *ph.T : (std::isfinite(plan.T_formula) && plan.T_formula < 1e18
                                        ? static_cast<std::size_t>(plan.T_formula)
                                        : std::numeric_limits<std::size_t>::max());
    T = std::max<std::size_t>(1, std::min({T, ph.phase1_max_steps, cfg.optimizer.max_steps}));
    plan.T = T;
    plan.phase1_loss_threshold = ph.phase1_loss_threshold;

    log.resolved["h"] = h;
    log.resolved["gamma"] = gamma;
    log.resolved["alpha_nt"] = plan.alpha_nt;
    log.resolved["rho"] = nullable(plan.rho);
    log.resolved["T_formula"] = nullable(plan.T_formula);
    log.resolved["T"] = plan.T;

    const TwoPhaseResult tp = two_phase_train(V1, act, data, plan, cfg.optimizer.max_steps, cfg.optimizer.loss_floor);

    log.records = tp.records;
    log.phase_boundaries = {tp.phase1_steps};
    if (tp.phase2_constants) {
        log.constants = tp.phase2_constants;
        log.resolved["alpha_phase2"] = tp.phase2_constants->alpha;
        if (!theorem_hypotheses_hold(*tp.phase2_constants)) {
            log.warnings.push_back(
                "phase-two start does not satisfy the small-loss hypotheses; rate, ratio and step-size checks are not applicable");
        }
    }
    json e = {{"phase1_steps", tp.phase1_steps},
              {"argmin_step", tp.argmin_step},
              {"argmin_loss", tp.argmin_loss.value},
              {"argmin_log_loss", tp.argmin_loss.log_value},
              {"threshold_reached", tp.threshold_reached},
              {"small_loss_log_threshold", log_small_loss_threshold(n, L)}};
    if (std::isfinite(plan.rho) && ph.nt_steps > 0) {
        NtBallConfig nt;
        nt.rho = plan.rho;
        nt.steps = ph.nt_steps;
        const NtClassResult r = nt_class_minimize(V1, act, data, nt);
        e["eps_nt"] = r.eps_nt;
        e["phase1_min_vs_six_eps_nt"] = {{"min_loss", tp.argmin_loss.value},
                                         {"six_eps_nt", 6.0 * r.eps_nt},
                                         {"holds", tp.argmin_loss.value <= 6.0 * r.eps_nt}};
    }
    if (ph.average_loss_check) {
        const auto& a = *ph.average_loss_check;
        AverageLossOptions ao;
        ao.alpha = plan.alpha_nt;
        ao.T = a.T;
        ao.rho = a.rho;
        ao.tau = a.tau;
        ao.k_pairs = a.k_pairs;
        ao.seed = cfg.seeds.probes;
        ao.nt.steps = ph.nt_steps;
        const AverageLossCheck chk = check_average_loss_bound(V1, act, data, ao);
        e["average_loss_check"] = {{"T", chk.T},
                                   {"average_loss", chk.average_loss},
                                   {"bound", chk.bound},
                                   {"bound_with_end_distance", chk.bound_with_end},
                                   {"eps_nt", chk.eps_nt},
                                   {"eps_app_sampled_lower", chk.eps_app_lower},
                                   {"max_iterate_distance", chk.max_iterate_distance},
                                   {"star_distance", chk.star_distance},
                                   {"applicable", chk.applicable},
                                   {"pass", chk.pass}};
    }
    log.extra = e;
    detail::finish(log);
    log.wall_seconds = detail::elapsed_seconds(start);
    return log;
}

inline json diagnostics_to_json(const InitDiagnostics& d) {
    json xs = json::array();
    for (const auto& s : d.x_norms) {
        xs.push_back({{"min", s.min}, {"max", s.max}, {"mean", s.mean}});
    }
    json ops = json::array();
    for (const auto& o : d.hidden_operator_norms) {
        ops.push_back({{"value", o.value}, {"iterations", o.iterations}, {"converged", o.converged}});
    }
    return {{"x_norms", xs},
            {"hidden_operator_norms", ops},
            {"outer_ratio", d.outer_ratio},
            {"x_norms_in_range", d.x_norms_in_range},
            {"hidden_operator_in_range", d.hidden_operator_in_range},
            {"outer_ratio_in_range", d.outer_ratio_in_range},
            {"all_in_range", d.all_in_range()},
            {"wide_regime", d.wide_regime},
            {"sigma_difference_counts", d.sigma_difference_counts},
            {"warnings", d.warnings}};
}

/// Initialization concentration report. Out-of-range values are reported, not failures.
inline RunLog run_diagnostics(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RunLog log;
    log.config = cfg;
    BuiltData bd = build_dataset(cfg);
    log.warnings = bd.warnings;
    const std::size_t p = cfg.network.p;
    const std::size_t L = cfg.network.L;
    const std::size_t n = bd.data.size();
    double h = cfg.network.h.value_or(std::min(compute_h_nt(p, L, n), cfg.network.h_cap));
    if (!(h > 0.0)) {
        h = cfg.network.h_cap;
    }
    const Activation act(cfg.network.activation, h);
    const WeightStack V1 = gaussian_init({p, L, cfg.seeds.init});
    DiagnosticOptions opt;
    opt.ranges = cfg.diagnostics.ranges;
    opt.tau = cfg.diagnostics.tau;
    opt.seed = cfg.seeds.probes;
    const InitDiagnostics d = init_diagnostics(V1, act, bd.data, opt);
    log.resolved["h"] = h;
    json e = diagnostics_to_json(d);
    e["weight_norm"] = frobenius_norm(V1);
    e["weight_norm_cap"] = std::sqrt(5.0 * static_cast<double>(p * L));
    e["gradient_norm_max_at_init"] = gamma_bound(V1, act, bd.data, 0.0);
    log.extra = e;
    for (const auto& w : d.warnings) {
        log.warnings.push_back(w);
    }
    log.passed = true;
    log.wall_seconds = detail::elapsed_seconds(start);
    return log;
}

inline json tally_to_json(const PropertyTally& t) {
    return {{"instances", t.instances},
            {"failures", t.failures},
            {"worst_slack", nullable(t.worst_slack)},
            {"tolerance", t.tolerance},
            {"pass", t.pass()}};
}

inline RunLog run_property_suite(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RunLog log;
    log.config = cfg;
    const auto& pc = cfg.properties;
    const std::uint64_t seed = cfg.seeds.probes;
    std::vector<PropertyTally> tallies;
    tallies.push_back(check_gradient_upper_bound(pc.instances, stream_seed(seed, 11), pc.max_p, pc.max_L));
    tallies.push_back(check_product_bound(pc.instances, stream_seed(seed, 12), pc.max_p, pc.max_L));
    tallies.push_back(check_weight_below_loss(pc.instances, stream_seed(seed, 13)));
    tallies.push_back(check_output_lipschitz_chain(pc.instances, stream_seed(seed, 14), pc.max_p, pc.max_L));
    for (double h : {0.01, 0.1, 1.0}) {
        for (ActivationKind kind : {ActivationKind::HuberizedReLU, ActivationKind::ScaledSwish}) {
            PropertyTally t = check_contractivity(Activation(kind, h), pc.instances, stream_seed(seed, 15));
            t.name += "_h" + format_double(h);
            tallies.push_back(t);
        }
    }
    for (auto& t : check_certifications({0.01, 0.1, 1.0})) {
        tallies.push_back(t);
    }
    json e = json::object();
    log.passed = true;
    for (const auto& t : tallies) {
        e[t.name] = tally_to_json(t);
        log.passed = log.passed && t.pass();
    }
    log.extra = e;
    log.wall_seconds = detail::elapsed_seconds(start);
    return log;
}

inline RunLog execute(const RunConfig& cfg) {
    switch (cfg.mode) {
        case RunMode::Theorem31:
            return run_theorem31(cfg);
        case RunMode::Theorem32:
            return run_theorem32(cfg);
        case RunMode::Diagnostics:
            return run_diagnostics(cfg);
        default:
            return run_property_suite(cfg);
    }
}

/// Writes trajectory.csv and summary.json into the configured directory.
inline void write_outputs(const RunLog& log) {
    const std::filesystem::path dir(log.config.output.dir);
    std::filesystem::create_directories(dir);
    if (log.config.output.csv && (log.config.mode == RunMode::Theorem31 || log.config.mode == RunMode::Theorem32)) {
        std::ofstream os(dir / "trajectory.csv", std::ios::binary);
        if (!os) {
            throw std::runtime_error("cannot write " + (dir / "trajectory.csv").string());
        }
        write_csv(os, log.records);
    }
    if (log.config.output.json) {
        std::ofstream os(dir / "summary.json", std::ios::binary);
        if (!os) {
            throw std::runtime_error("cannot write " + (dir / "summary.json").string());
        }
        os << summary_json(log).dump(2) << '\n';
    }
}

inline RunLog run(const RunConfig& cfg) {
    RunLog log = execute(cfg);
    write_outputs(log);
    return log;
}

}  // namespace boundbench

#endif  // BOUNDBENCH_HARNESS_HPP
