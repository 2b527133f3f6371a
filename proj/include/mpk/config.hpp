#ifndef MPK_CONFIG_HPP
#define MPK_CONFIG_HPP

// Flat "key = value" run configuration with [section] headers.
// Unknown sections or keys are errors.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "synth.hpp"
#include "trainer.hpp"

namespace mpk {

struct PathsConfig {
    std::string data_dir = "data";
    std::string output_dir = "out";
    std::string checkpoint;   // empty: <output_dir>/checkpoint.mpk
    std::string patches;      // empty: <output_dir>/patches.mpk
    std::string whitening;    // empty: <output_dir>/whitening.mpk

    friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct ModelConfig {
    /// 0: take D from the patch file.
    std::size_t D = 0;
    std::size_t F = 256;
    std::size_t L = 2;
    std::size_t N = 256;
    std::size_t M = 100;
    std::size_t G = 256;
    std::size_t T = 256;
    double alpha = 2.0;
    std::uint64_t init_seed = 1;

    ModelShape shape(std::size_t d) const { return {d, F, L, N, M, G, T}; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct PreprocessConfig {
    std::size_t patch_size = 16;
    std::size_t patches_per_image = 1000;
    double variance_fraction = 0.99;
    std::uint64_t seed = 1;

    friend bool operator==(const PreprocessConfig&, const PreprocessConfig&) = default;
};

struct ExportConfig {
    std::string what = "C";
    std::size_t max_columns = 32;
    std::size_t group_size = 6;

    friend bool operator==(const ExportConfig&, const ExportConfig&) = default;
};

struct SampleConfig {
    std::size_t chains = 16;
    std::size_t simulations = 100;
    std::uint64_t seed = 1;

    friend bool operator==(const SampleConfig&, const SampleConfig&) = default;
};

struct SynthConfig {
    std::size_t patch_size = 8;
    std::size_t n_pairs = 8;
    std::size_t count = 20000;
    /// Comma-separated "i-j:kappa:mu" entries.
    std::string pairs = "0-1:3:0,2-3:3:1.5707963267948966";
    double amplitude_min = 0.5;
    double amplitude_max = 1.5;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;

    friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct RunConfig {
    PathsConfig paths;
    ModelConfig model;
    TrainerConfig trainer;
    PreprocessConfig preprocess;
    ExportConfig export_;
    SampleConfig sample;
    SynthConfig synth;

    std::filesystem::path checkpoint_path() const {
        return paths.checkpoint.empty() ? std::filesystem::path(paths.output_dir) / "checkpoint.mpk"
                                        : std::filesystem::path(paths.checkpoint);
    }
    std::filesystem::path patches_path() const {
        return paths.patches.empty() ? std::filesystem::path(paths.output_dir) / "patches.mpk"
                                     : std::filesystem::path(paths.patches);
    }
    std::filesystem::path whitening_path() const {
        return paths.whitening.empty() ? std::filesystem::path(paths.output_dir) / "whitening.mpk"
                                       : std::filesystem::path(paths.whitening);
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
    T value{};
    const char* first = s.data();
    const char* last = s.data() + s.size();
    const auto r = std::from_chars(first, last, value);
    if (r.ec != std::errc() || r.ptr != last) {
        throw config_error("bad value for " + key + ": '" + s + "'");
    }
    return value;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw config_error("bad boolean for " + key + ": '" + s + "'");
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Access>
Field number_field(std::string section, std::string key, Access access) {
    Field f;
    f.section = section;
    f.key = key;
    f.get = [access](const RunConfig& c) {
        const T v = access(const_cast<RunConfig&>(c));
        if constexpr (std::is_floating_point_v<T>) {
            return format_double(v);
        } else {
            return std::to_string(v);
        }
    };
    f.set = [access, full = section + "." + key](RunConfig& c, const std::string& s) {
        access(c) = parse_number<T>(full, s);
    };
    return f;
}

template <typename Access>
Field string_field(std::string section, std::string key, Access access) {
    Field f;
    f.section = section;
    f.key = key;
    f.get = [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); };
    f.set = [access](RunConfig& c, const std::string& s) { access(c) = s; };
    return f;
}

template <typename Access>
Field bool_field(std::string section, std::string key, Access access) {
    Field f;
    f.section = section;
    f.key = key;
    f.get = [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); };
    f.set = [access, full = section + "." + key](RunConfig& c, const std::string& s) { access(c) = parse_bool(full, s); };
    return f;
}

inline const std::vector<Field>& fields() {
    using sz = std::size_t;
    using u64 = std::uint64_t;
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        t.push_back(string_field("paths", "data_dir", [](RunConfig& c) -> std::string& { return c.paths.data_dir; }));
        t.push_back(string_field("paths", "output_dir", [](RunConfig& c) -> std::string& { return c.paths.output_dir; }));
        t.push_back(string_field("paths", "checkpoint", [](RunConfig& c) -> std::string& { return c.paths.checkpoint; }));
        t.push_back(string_field("paths", "patches", [](RunConfig& c) -> std::string& { return c.paths.patches; }));
        t.push_back(string_field("paths", "whitening", [](RunConfig& c) -> std::string& { return c.paths.whitening; }));

        t.push_back(number_field<sz>("model", "D", [](RunConfig& c) -> sz& { return c.model.D; }));
        t.push_back(number_field<sz>("model", "F", [](RunConfig& c) -> sz& { return c.model.F; }));
        t.push_back(number_field<sz>("model", "L", [](RunConfig& c) -> sz& { return c.model.L; }));
        t.push_back(number_field<sz>("model", "N", [](RunConfig& c) -> sz& { return c.model.N; }));
        t.push_back(number_field<sz>("model", "M", [](RunConfig& c) -> sz& { return c.model.M; }));
        t.push_back(number_field<sz>("model", "G", [](RunConfig& c) -> sz& { return c.model.G; }));
        t.push_back(number_field<sz>("model", "T", [](RunConfig& c) -> sz& { return c.model.T; }));
        t.push_back(number_field<double>("model", "alpha", [](RunConfig& c) -> double& { return c.model.alpha; }));
        t.push_back(number_field<u64>("model", "init_seed", [](RunConfig& c) -> u64& { return c.model.init_seed; }));

        for (Group g : all_groups) {
            const std::string key = "lr_" + std::string(group_name(g));
            t.push_back(number_field<double>("trainer", key, [g](RunConfig& c) -> double& { return c.trainer.rates.of(g); }));
        }
        t.push_back(number_field<sz>("trainer", "batch_size", [](RunConfig& c) -> sz& { return c.trainer.batch_size; }));
        for (std::size_t s = 0; s < 5; ++s) {
            t.push_back(number_field<sz>("trainer", "stage" + std::to_string(s + 1),
                                         [s](RunConfig& c) -> sz& { return c.trainer.stage_iterations[s]; }));
        }
        t.push_back(number_field<sz>("trainer", "checkpoint_every",
                                     [](RunConfig& c) -> sz& { return c.trainer.checkpoint_every; }));
        t.push_back(number_field<u64>("trainer", "seed", [](RunConfig& c) -> u64& { return c.trainer.seed; }));

        t.push_back(number_field<sz>("hmc", "n_leapfrog", [](RunConfig& c) -> sz& { return c.trainer.hmc.n_leapfrog; }));
        t.push_back(number_field<double>("hmc", "target_rejection",
                                         [](RunConfig& c) -> double& { return c.trainer.hmc.target_rejection; }));
        t.push_back(number_field<double>("hmc", "step_size", [](RunConfig& c) -> double& { return c.trainer.hmc.step_size; }));
        t.push_back(number_field<double>("hmc", "adapt_rate", [](RunConfig& c) -> double& { return c.trainer.hmc.adapt_rate; }));
        t.push_back(bool_field("hmc", "adapt", [](RunConfig& c) -> bool& { return c.trainer.hmc.adapt; }));

        t.push_back(number_field<sz>("preprocess", "patch_size", [](RunConfig& c) -> sz& { return c.preprocess.patch_size; }));
        t.push_back(number_field<sz>("preprocess", "patches_per_image",
                                     [](RunConfig& c) -> sz& { return c.preprocess.patches_per_image; }));
        t.push_back(number_field<double>("preprocess", "variance_fraction",
                                         [](RunConfig& c) -> double& { return c.preprocess.variance_fraction; }));
        t.push_back(number_field<u64>("preprocess", "seed", [](RunConfig& c) -> u64& { return c.preprocess.seed; }));

        t.push_back(string_field("export", "what", [](RunConfig& c) -> std::string& { return c.export_.what; }));
        t.push_back(number_field<sz>("export", "max_columns", [](RunConfig& c) -> sz& { return c.export_.max_columns; }));
        t.push_back(number_field<sz>("export", "group_size", [](RunConfig& c) -> sz& { return c.export_.group_size; }));

        t.push_back(number_field<sz>("sample", "chains", [](RunConfig& c) -> sz& { return c.sample.chains; }));
        t.push_back(number_field<sz>("sample", "simulations", [](RunConfig& c) -> sz& { return c.sample.simulations; }));
        t.push_back(number_field<u64>("sample", "seed", [](RunConfig& c) -> u64& { return c.sample.seed; }));

        t.push_back(number_field<sz>("synth", "patch_size", [](RunConfig& c) -> sz& { return c.synth.patch_size; }));
        t.push_back(number_field<sz>("synth", "n_pairs", [](RunConfig& c) -> sz& { return c.synth.n_pairs; }));
        t.push_back(number_field<sz>("synth", "count", [](RunConfig& c) -> sz& { return c.synth.count; }));
        t.push_back(string_field("synth", "pairs", [](RunConfig& c) -> std::string& { return c.synth.pairs; }));
        t.push_back(number_field<double>("synth", "amplitude_min", [](RunConfig& c) -> double& { return c.synth.amplitude_min; }));
        t.push_back(number_field<double>("synth", "amplitude_max", [](RunConfig& c) -> double& { return c.synth.amplitude_max; }));
        t.push_back(number_field<double>("synth", "noise_sigma", [](RunConfig& c) -> double& { return c.synth.noise_sigma; }));
        t.push_back(number_field<u64>("synth", "seed", [](RunConfig& c) -> u64& { return c.synth.seed; }));
        return t;
    }();
    return table;
}

} // namespace detail

/// Parses config text on top of the defaults. Throws config_error with the
/// offending line number.
inline RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) { throw config_error("line " + std::to_string(line_no) + ": " + msg); };
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                fail("unterminated section header");
            }
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : detail::fields()) {
                known = known || f.section == section;
            }
            if (!known) {
                fail("unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail("expected key = value");
        }
        const std::string key = detail::trim(std::string_view(line).substr(0, eq));
        const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
        if (section.empty()) {
            fail("key '" + key + "' outside any section");
        }
        const detail::Field* match = nullptr;
        for (const auto& f : detail::fields()) {
            if (f.section == section && f.key == key) {
                match = &f;
            }
        }
        if (!match) {
            fail("unknown key '" + key + "' in [" + section + "]");
        }
        try {
            match->set(cfg, value);
        } catch (const config_error& e) {
            fail(e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw config_error("cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Writes every key, so the output re-parses to the same effective config.
inline std::string format_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : detail::fields()) {
        if (f.section != section) {
            if (!section.empty()) {
                out += "\n";
            }
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

inline bool same_config(const RunConfig& a, const RunConfig& b) {
    for (const auto& f : detail::fields()) {
        if (f.get(a) != f.get(b)) {
            return false;
        }
    }
    return true;
}

/// Parses the synth pair list ("i-j:kappa:mu,...").
inline std::vector<CoupledPair> parse_pairs(std::string_view text) {
    std::vector<CoupledPair> out;
    std::string s(text);
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) {
            continue;
        }
        unsigned long i = 0;
        unsigned long j = 0;
        double kappa = 0;
        double mu = 0;
        char tail = 0;
        if (std::sscanf(item.c_str(), "%lu-%lu:%lf:%lf%c", &i, &j, &kappa, &mu, &tail) != 4) {
            throw config_error("bad pair entry '" + item + "' (expected i-j:kappa:mu)");
        }
        out.push_back({i, j, {kappa, mu}});
    }
    return out;
}

inline SynthOptions synth_options(const SynthConfig& c) {
    SynthOptions o;
    o.patch_size = c.patch_size;
    o.n_pairs = c.n_pairs;
    o.count = c.count;
    o.pairs = parse_pairs(c.pairs);
    o.amplitude_min = c.amplitude_min;
    o.amplitude_max = c.amplitude_max;
    o.noise_sigma = c.noise_sigma;
    o.seed = c.seed;
    return o;
}

} // namespace mpk

#endif
