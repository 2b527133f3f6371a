// mpk: command-line front end for preprocessing, training, sampling,
// synthetic data, filter export and self checks.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpk/mpk.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Exit : int { ok = 0, check_failed = 1, data_failure = 2, shape_failure = 3, missing_file = 4 };

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string resume;
    std::optional<std::uint64_t> iterations;
    std::string out;
    bool json = false;
};

mpk::RunConfig load_run_config(const Globals& g) {
    mpk::RunConfig cfg = g.config_path.empty() ? mpk::RunConfig{} : mpk::load_config(g.config_path);
    if (!g.out.empty()) {
        cfg.paths.output_dir = g.out;
    }
    if (g.seed) {
        cfg.preprocess.seed = *g.seed;
        cfg.trainer.seed = *g.seed;
        cfg.model.init_seed = *g.seed;
        cfg.sample.seed = *g.seed;
        cfg.synth.seed = *g.seed;
    }
    return cfg;
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) {
        throw MissingFile(what + " not found: " + p.string());
    }
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
}

void emit(const Globals& g, const json& j, const std::string& text) {
    if (g.json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << text;
    }
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) {
        return out;
    }
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) {
            continue;
        }
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_preprocess(const Globals& g) {
    const mpk::RunConfig cfg = load_run_config(g);
    const auto images = list_images(cfg.paths.data_dir);
    if (images.empty()) {
        std::cerr << "error: no PPM/PGM images found in " << cfg.paths.data_dir << "\n";
        return data_failure;
    }
    const auto& pc = cfg.preprocess;
    std::vector<mpk::Matrix> blocks;
    std::size_t channels = 0;
    for (std::size_t k = 0; k < images.size(); ++k) {
        const mpk::Raster img = mpk::read_pnm(images[k]);
        if (channels == 0) {
            channels = img.channels;
        } else if (img.channels != channels) {
            throw mpk::data_error("images mix grayscale and color: " + images[k].string());
        }
        std::seed_seq seq{pc.seed, static_cast<std::uint64_t>(k)};
        std::uint64_t image_seed = 0;
        std::array<std::uint32_t, 2> words{};
        seq.generate(words.begin(), words.end());
        image_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
        blocks.push_back(mpk::extract_patches(img, pc.patch_size, pc.patches_per_image, image_seed));
    }
    mpk::Matrix raw(static_cast<Eigen::Index>(blocks.size() * pc.patches_per_image), blocks.front().cols());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        raw.middleRows(static_cast<Eigen::Index>(k * pc.patches_per_image), blocks[k].rows()) = blocks[k];
    }
    mpk::WhiteningTransform w = mpk::fit_whitening(raw, pc.variance_fraction);
    w.patch_size = pc.patch_size;
    w.channels = channels;
    const mpk::Matrix white = w.apply(raw);

    const fs::path patches_path = cfg.patches_path();
    const fs::path whitening_path = cfg.whitening_path();
    ensure_parent(patches_path);
    ensure_parent(whitening_path);
    mpk::save_patches(white, patches_path);
    mpk::TensorFile wf;
    w.write(wf);
    wf.save(whitening_path);

    json j{{"images", images.size()},
           {"patches", white.rows()},
           {"raw_dim", w.raw_dim()},
           {"D", w.dim()},
           {"retained_variance", w.retained_fraction},
           {"patches_file", patches_path.string()},
           {"whitening_file", whitening_path.string()}};
    char buf[256];
    std::snprintf(buf, sizeof buf, "images: %zu\npatches: %td\nD = %zu (raw %zu)\nretained variance: %.6f\n",
                  images.size(), static_cast<std::ptrdiff_t>(white.rows()), w.dim(), w.raw_dim(),
                  w.retained_fraction);
    emit(g, j, buf);
    return ok;
}

int cmd_train(const Globals& g) {
    const mpk::RunConfig cfg = load_run_config(g);
    const fs::path patches_path = cfg.patches_path();
    require_file(patches_path, "patch file");
    const mpk::Matrix data = mpk::load_patches(patches_path);
    const std::size_t D = cfg.model.D == 0 ? static_cast<std::size_t>(data.cols()) : cfg.model.D;
    if (static_cast<Eigen::Index>(D) != data.cols()) {
        throw mpk::shape_error("patches have " + std::to_string(data.cols()) + " columns but model.D = " +
                               std::to_string(D));
    }

    mpk::ModelParams params;
    mpk::TrainingState state;
    if (!g.resume.empty()) {
        require_file(g.resume, "checkpoint");
        std::tie(params, state) = mpk::load_checkpoint(g.resume);
        if (params.shape() != cfg.model.shape(D)) {
            throw mpk::shape_error("checkpoint shape does not match the configuration");
        }
    } else {
        mpk::InitOptions init;
        init.alpha = cfg.model.alpha;
        params = mpk::init_params(cfg.model.shape(D), cfg.model.init_seed, init);
    }

    const auto stages = mpk::default_stages(cfg.trainer);
    const auto bounds = mpk::stage_boundaries(stages);
    const fs::path checkpoint = cfg.checkpoint_path();
    const fs::path metrics_path = fs::path(cfg.paths.output_dir) / "metrics.csv";
    ensure_parent(checkpoint);
    fs::create_directories(cfg.paths.output_dir);
    const bool append = !g.resume.empty() && fs::exists(metrics_path);
    std::ofstream csv(metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!append) {
        csv << mpk::StepMetrics::csv_header() << "\n";
    }

    if (!g.json) {
        std::cout << "D = " << D << ", " << data.rows() << " patches\nstage boundaries:";
        for (auto b : bounds) {
            std::cout << " " << b;
        }
        std::cout << "\n";
    }
    mpk::TrainOptions options;
    options.checkpoint_path = checkpoint;
    options.max_iterations = g.iterations;
    std::size_t last_stage = stages.size();
    options.on_step = [&](const mpk::StepMetrics& m) {
        csv << m.csv_line() << "\n";
        if (m.stage != last_stage) {
            if (!g.json) {
                std::cout << "stage " << (m.stage + 1) << " (" << stages[m.stage].name << ") from iteration "
                          << (m.iteration - 1) << "\n";
            }
            last_stage = m.stage;
        }
    };
    const mpk::TrainResult result = mpk::train(data, params, cfg.trainer, stages, state, options);

    json j{{"iterations", result.state.iteration},
           {"stage_boundaries", bounds},
           {"checkpoint", checkpoint.string()},
           {"metrics", metrics_path.string()},
           {"hmc_step_size", result.state.hmc_step_size}};
    std::string text = "finished at iteration " + std::to_string(result.state.iteration) + "\ncheckpoint: " +
                       checkpoint.string() + "\n";
    emit(g, j, text);
    return ok;
}

int cmd_sample(const Globals& g) {
    const mpk::RunConfig cfg = load_run_config(g);
    const fs::path checkpoint = g.resume.empty() ? cfg.checkpoint_path() : fs::path(g.resume);
    require_file(checkpoint, "checkpoint");
    const auto [params, state] = mpk::load_checkpoint(checkpoint);
    const auto D = static_cast<Eigen::Index>(params.shape().D);
    const auto rows = static_cast<Eigen::Index>(cfg.sample.chains);
    std::mt19937_64 rng(cfg.sample.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    mpk::Matrix v0(rows, D);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index i = 0; i < D; ++i) {
            v0(r, i) = normal(rng);
        }
    }
    mpk::HmcConfig hc = cfg.trainer.hmc;
    hc.seed = cfg.sample.seed;
    hc.step_size = state.hmc_step_size > 0 ? state.hmc_step_size : hc.step_size;
    mpk::HmcState hs = mpk::HmcState::from_config(hc);
    const mpk::Matrix samples =
        mpk::hmc_chain(v0, mpk::FreeEnergyPotential(params), hc, hs, cfg.sample.simulations, 0);

    const fs::path out = fs::path(cfg.paths.output_dir) / "samples.mpk";
    ensure_parent(out);
    mpk::TensorFile f;
    f.add_matrix("samples", samples);
    f.save(out);
    json j{{"samples", out.string()},
           {"rejection_rate", hs.stats.rejection_rate()},
           {"step_size", hs.step_size}};
    char buf[256];
    std::snprintf(buf, sizeof buf, "wrote %td samples to %s\nrejection rate %.4f, step size %.5g\n",
                  static_cast<std::ptrdiff_t>(rows), out.string().c_str(), hs.stats.rejection_rate(), hs.step_size);
    emit(g, j, buf);
    return ok;
}

int cmd_synth(const Globals& g) {
    const mpk::RunConfig cfg = load_run_config(g);
    const mpk::SynthDataset ds = mpk::make_synth_dataset(mpk::synth_options(cfg.synth));
    const fs::path out = fs::path(cfg.paths.output_dir) / "synth.mpk";
    ensure_parent(out);
    mpk::TensorFile f;
    ds.write(f);
    f.save(out);
    json j{{"file", out.string()}, {"patches", ds.patches.rows()}, {"D", ds.patches.cols()}, {"pairs", ds.pairs.size()}};
    emit(g, j,
         "wrote " + std::to_string(ds.patches.rows()) + " patches (D = " + std::to_string(ds.patches.cols()) +
             ") to " + out.string() + "\n");
    return ok;
}

int cmd_export(const Globals& g, const std::string& what_flag, bool whitened) {
    const mpk::RunConfig cfg = load_run_config(g);
    const std::string what = what_flag.empty() ? cfg.export_.what : what_flag;
    const auto kind = mpk::export_kind_from_name(what);
    if (!kind) {
        throw mpk::argument_error("unknown export target '" + what + "'");
    }
    const fs::path checkpoint = g.resume.empty() ? cfg.checkpoint_path() : fs::path(g.resume);
    require_file(checkpoint, "checkpoint");
    const auto [params, state] = mpk::load_checkpoint(checkpoint);
    std::optional<mpk::WhiteningTransform> w;
    if (!whitened) {
        require_file(cfg.whitening_path(), "whitening file");
        w = mpk::WhiteningTransform::read(mpk::TensorFile::load(cfg.whitening_path()));
    }
    mpk::ExportOptions opt;
    opt.max_columns = cfg.export_.max_columns;
    opt.group_size = cfg.export_.group_size;
    const mpk::Raster img = mpk::as_rgb(mpk::export_filters(params, w ? &*w : nullptr, *kind, opt));
    const fs::path out = fs::path(cfg.paths.output_dir) / (what + ".ppm");
    ensure_parent(out);
    mpk::write_pnm(out, img);
    json j{{"file", out.string()}, {"width", img.width}, {"height", img.height}};
    emit(g, j, "wrote " + out.string() + "\n");
    return ok;
}

int cmd_check(const Globals& g, bool inject_bug) {
    const std::uint64_t seed = g.seed.value_or(1);
    const auto results = mpk::run_self_checks(seed, inject_bug);
    bool all = true;
    json j = json::array();
    std::string text;
    for (const auto& r : results) {
        all = all && r.passed;
        j.push_back({{"name", r.name}, {"passed", r.passed}, {"value", r.value}, {"tolerance", r.tolerance}});
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s %s: %.3g (tolerance %.3g)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                      r.value, r.tolerance);
        text += buf;
        if (!r.passed && !r.detail.empty()) {
            text += r.detail;
            if (text.back() != '\n') text += "\n";
        }
    }
    emit(g, json{{"passed", all}, {"checks", j}}, text);
    return all ? ok : check_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mpk: amplitude and phase energy models for image patches"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "run configuration file");
    app.add_option("--seed", g.seed, "override the command's seeds");
    app.add_option("--resume", g.resume, "checkpoint to resume from (train) or read (sample, export)");
    app.add_option("--iterations", g.iterations, "stop training after this many total iterations");
    app.add_option("--out", g.out, "output directory");
    app.add_flag("--json", g.json, "machine-readable output");

    auto* pre = app.add_subcommand("preprocess", "extract and whiten image patches");
    auto* tr = app.add_subcommand("train", "run the staged training schedule");
    auto* chk = app.add_subcommand("check", "gradient, enumeration and sampler self checks");
    bool inject_bug = false;
    chk->add_flag("--inject-gradient-bug", inject_bug, "test hook: corrupt analytic gradients");
    auto* smp = app.add_subcommand("sample", "draw HMC samples from a checkpoint");
    auto* syn = app.add_subcommand("synth", "generate phase-coupled synthetic patches");
    auto* exp = app.add_subcommand("export", "write filter mosaics");
    std::string what;
    bool whitened = false;
    exp->add_option("--what", what, "C, W, P-groups, Q-groups, R-groups, amplitude or phase");
    exp->add_flag("--whitened", whitened, "tile filters in the whitened domain (no whitening file needed)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) return cmd_preprocess(g);
        if (tr->parsed()) return cmd_train(g);
        if (chk->parsed()) return cmd_check(g, inject_bug);
        if (smp->parsed()) return cmd_sample(g);
        if (syn->parsed()) return cmd_synth(g);
        if (exp->parsed()) return cmd_export(g, what, whitened);
    } catch (const MissingFile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return missing_file;
    } catch (const mpk::shape_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return shape_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_failure;
    }
    return ok;
}
