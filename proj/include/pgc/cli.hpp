#pragma once

#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "analysis.hpp"
#include "distill_sim.hpp"
#include "io.hpp"
#include "linear_codec.hpp"
#include "version.hpp"

namespace pgc::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntimeAbort = 2, kCheckFailed = 3 };

/// Thresholds of the clipping ablation.
inline const std::vector<double> kDefaultAblationThresholds = {0.01, 0.05, 0.1, 0.5, 1.0};

inline constexpr double kGradcheckTolerance = 1e-6;
inline constexpr double kGradcheckStep = 1e-5;
inline constexpr std::size_t kGradcheckSide = 16;
inline constexpr std::size_t kGradcheckCoords = 128;

struct Console {
    std::ostream& out;
    std::ostream& err;
    bool color = false;

    std::string tag(bool ok) const {
        if (!color) return ok ? "PASS" : "FAIL";
        return ok ? "\x1b[32mPASS\x1b[0m" : "\x1b[31mFAIL\x1b[0m";
    }
};

inline bool color_wanted(const std::ostream& out) {
    if (std::getenv("PGC_NO_COLOR") != nullptr) return false;
    return &out == &std::cout && ::isatty(STDOUT_FILENO) != 0;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void ensure_output_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory '" + dir.string() + "'");
    const fs::path probe = dir / ".pgc_write_probe";
    {
        std::ofstream test(probe);
        if (!test) throw ValidationError("output directory '" + dir.string() + "' is not writable");
    }
    fs::remove(probe, ec);
}

/// Resolved configuration as strings; values given in the file are echoed verbatim.
inline nlohmann::ordered_json config_echo(const io::RunConfig& rc) {
    nlohmann::ordered_json j;
    auto given = [&](std::string_view key) -> const std::string* {
        for (const auto& [k, v] : rc.raw)
            if (k == key) return &v;
        return nullptr;
    };
    auto put = [&](std::string_view key, const std::string& resolved) {
        const std::string* g = given(key);
        j[std::string(key)] = g ? *g : resolved;
    };
    put("teacher", rc.teacher);
    put("mode", std::string(to_string(rc.mode)));
    put("threshold", io::format_double(rc.threshold));
    put("sigma", io::format_double(rc.sigma));
    put("impulse_prob", io::format_double(rc.impulse_prob));
    put("impulse_mag", io::format_double(rc.impulse_mag));
    put("iterations", std::to_string(rc.iterations));
    put("lr", io::format_double(rc.lr));
    put("optimizer", std::string(io::to_string(rc.optimizer)));
    put("use_codec", rc.use_codec ? "true" : "false");
    j["seed"] = std::to_string(rc.seed); // --seed may override the file
    return j;
}

inline void write_manifest(const fs::path& dir, const std::string& command, const io::RunConfig& rc,
                           const std::vector<fs::path>& outputs, const std::string& started,
                           nlohmann::ordered_json extra = {}) {
    nlohmann::ordered_json m;
    m["artifact"] = "pgc";
    m["version"] = kVersion;
    m["command"] = command;
    m["seed"] = rc.seed;
    m["config"] = config_echo(rc);
    auto files = nlohmann::ordered_json::array();
    for (const auto& p : outputs) files.push_back(p.filename().string());
    files.push_back("manifest.json");
    m["outputs"] = files;
    if (!extra.is_null()) m["results"] = std::move(extra);
    m["started_at"] = started;
    m["finished_at"] = utc_timestamp();
    io::write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline io::RunConfig load_config_with_seed(const fs::path& path, const std::optional<std::uint64_t>& seed) {
    io::RunConfig rc = io::load_run_config(path);
    if (seed) rc.seed = *seed;
    return rc;
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed,
                        Console& con) {
    const std::string started = utc_timestamp();
    const io::RunConfig rc = load_config_with_seed(config_path, seed);
    const SimConfig cfg = io::to_sim_config(rc, config_path.parent_path());
    ensure_output_dir(out_dir);

    auto [texture, stats] = run_simulation(cfg);

    const fs::path image = out_dir / "final.ppm";
    const fs::path csv = out_dir / "stats.csv";
    io::write_file_atomic(image, io::encode_ppm(render(texture)));
    io::write_file_atomic(csv, io::format_stats_csv(stats));
    nlohmann::ordered_json results;
    results["final_loss"] = stats.final_loss;
    results["final_psnr"] = io::format_double(stats.final_psnr);
    write_manifest(out_dir, "simulate", rc, {image, csv}, started, results);

    con.out << "mode=" << to_string(cfg.reg.mode) << " threshold=" << io::format_double(cfg.reg.threshold)
            << " iterations=" << cfg.iterations << " final_psnr=" << io::format_double(stats.final_psnr) << "\n";
    return kOk;
}

inline std::vector<double> check_thresholds(std::vector<double> thresholds) {
    if (thresholds.empty()) throw ValidationError("ablation needs at least one threshold");
    std::set<double> seen;
    for (double t : thresholds) {
        if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("thresholds must be positive");
        if (!seen.insert(t).second) throw ValidationError("duplicate threshold " + io::format_double(t));
    }
    return thresholds;
}

struct AblationRow {
    double threshold = 0.0;
    double final_psnr = 0.0;
    double mean_clipped_fraction = 0.0;
};

/// One run per threshold under the shared seed of `cfg`.
inline std::vector<AblationRow> run_ablation(SimConfig cfg, const std::vector<double>& thresholds,
                                             std::vector<PixelField>* finals = nullptr) {
    std::vector<AblationRow> rows;
    for (double c : thresholds) {
        cfg.reg.threshold = c;
        auto [texture, stats] = run_simulation(cfg);
        double clipped = 0.0;
        for (const auto& r : stats.records) clipped += r.clipped_fraction;
        rows.push_back({c, stats.final_psnr, clipped / static_cast<double>(stats.records.size())});
        if (finals) finals->push_back(render(texture));
    }
    return rows;
}

inline std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "threshold,final_psnr,mean_clipped_fraction\n";
    for (const auto& r : rows)
        out += io::format_double(r.threshold) + "," + io::format_double(r.final_psnr) + "," +
               io::format_double(r.mean_clipped_fraction) + "\n";
    return out;
}

inline int cmd_ablate(const fs::path& config_path, std::vector<double> thresholds, const fs::path& out_dir,
                      std::optional<std::uint64_t> seed, Console& con) {
    const std::string started = utc_timestamp();
    thresholds = check_thresholds(std::move(thresholds));
    const io::RunConfig rc = load_config_with_seed(config_path, seed);
    const SimConfig cfg = io::to_sim_config(rc, config_path.parent_path());
    if (cfg.reg.mode == RegMode::None) throw ValidationError("ablation needs a regulating mode, config has 'none'");
    ensure_output_dir(out_dir);

    std::vector<PixelField> finals;
    const auto rows = run_ablation(cfg, thresholds, &finals);

    const fs::path summary = out_dir / "summary.csv";
    const fs::path grid = out_dir / "grid.ppm";
    io::write_file_atomic(summary, format_ablation_csv(rows));
    io::write_file_atomic(grid, io::encode_ppm(io::tile_horizontally(finals)));
    nlohmann::ordered_json results = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        results.push_back({{"threshold", r.threshold}, {"final_psnr", io::format_double(r.final_psnr)}});
    write_manifest(out_dir, "ablate", rc, {summary, grid}, started, results);

    for (const auto& r : rows)
        con.out << "threshold=" << io::format_double(r.threshold) << " final_psnr=" << io::format_double(r.final_psnr)
                << " mean_clipped_fraction=" << io::format_double(r.mean_clipped_fraction) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// codec

inline LinearCodec codec_or_builtin(const std::string& path) {
    if (path.empty()) return builtin_codec();
    LinearCodec c = io::load_codec(path);
    c.validate();
    return c;
}

inline int cmd_codec_show(const std::string& codec_path, Console& con) {
    con.out << io::format_codec(codec_or_builtin(codec_path));
    return kOk;
}

inline int cmd_codec_encode(const fs::path& in, const fs::path& out, const std::string& codec_path, Console& con) {
    const LinearCodec codec = codec_or_builtin(codec_path);
    const PixelField image = io::load_image(in);
    const PixelField latent = encode(codec, image);
    io::save_tensor(out, latent);
    const double mse = mean_squared_error(decode(codec, latent), image);
    con.out << "encoded " << image.height() << "x" << image.width() << " pixels\n";
    con.out << "roundtrip_mse=" << io::format_double(mse) << "\n";
    return kOk;
}

inline int cmd_codec_decode(const fs::path& in, const fs::path& out, const std::string& codec_path,
                            const std::string& reference, Console& con) {
    const LinearCodec codec = codec_or_builtin(codec_path);
    const PixelField latent = io::load_tensor(in);
    const PixelField image = decode(codec, latent);
    if (out.extension() == ".ppm")
        io::write_file_atomic(out, io::encode_ppm(image));
    else
        io::save_tensor(out, image);
    con.out << "decoded " << image.height() << "x" << image.width() << " pixels\n";
    if (!reference.empty()) {
        const PixelField ref = io::load_image(reference);
        con.out << "roundtrip_mse=" << io::format_double(mean_squared_error(image, ref)) << "\n";
    }
    return kOk;
}

inline int cmd_codec_fit(const fs::path& pixels, const fs::path& latents, double lambda, const fs::path& out,
                         Console& con) {
    const auto samples = make_codec_samples(io::load_tensor(pixels), io::load_tensor(latents));
    const LinearCodec codec = fit_codec(samples, RidgeFitConfig{lambda});
    io::save_codec(out, codec);
    con.out << "samples=" << samples.size() << " lambda=" << io::format_double(lambda) << "\n";
    con.out << "residual=" << io::format_double(encode_residual(codec, samples)) << "\n";
    return kOk;
}

/// Random pixels in [0,1]^3 and their encodings, for exercising `codec fit`.
/// Pixels lie on a 1/256 grid, so a codec whose entries are multiples of 1/256
/// yields latents that float32 storage holds exactly.
inline int cmd_codec_sample(std::size_t count, std::uint64_t seed, const std::string& codec_path,
                            const fs::path& pixels_out, const fs::path& latents_out, Console& con) {
    if (count == 0) throw ValidationError("sample count must be positive");
    const LinearCodec codec = codec_or_builtin(codec_path);
    Rng rng(seed);
    PixelField px(1, count, 3);
    for (double& v : px.data()) v = static_cast<double>(rng.below(257)) / 256.0;
    io::save_tensor(pixels_out, px);
    io::save_tensor(latents_out, encode(codec, px));
    con.out << "wrote " << count << " samples\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckRun {
    std::uint64_t seed = 0;
    bool use_codec = false;
    FiniteDiffReport report;
};

/// Finite-difference check of render -> objective at a random texture and teacher.
/// `perturb` scales the analytic gradient (1.0 = unperturbed); used as a negative control.
inline GradcheckRun gradcheck_pipeline(std::uint64_t seed, bool use_codec, double perturb = 1.0) {
    Rng rng(seed);
    TextureField point(kGradcheckSide, kGradcheckSide);
    for (double& t : point.params) t = rng.uniform(-2.0, 2.0);
    PixelField teacher(kGradcheckSide, kGradcheckSide, 3);
    for (double& v : teacher.data()) v = rng.uniform();
    const LinearCodec codec = builtin_codec();
    const LinearCodec* cp = use_codec ? &codec : nullptr;

    auto to_texture = [&](std::span<const double> x) {
        TextureField t(kGradcheckSide, kGradcheckSide);
        t.params.assign(x.begin(), x.end());
        return t;
    };
    ScalarFn f = [&](std::span<const double> x) { return pixel_objective_ext(render(to_texture(x)), teacher, cp); };
    GradientFn grad = [&](std::span<const double> x) {
        const TextureField t = to_texture(x);
        const PixelField g = objective_pixel_grad(render(t), teacher, cp);
        const std::vector<double> jac = render_jacobian(t);
        std::vector<double> out(jac.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.data()[i] * jac[i] * perturb;
        return out;
    };
    return {seed, use_codec,
            finite_diff_check(f, grad, std::span<const double>(point.params), kGradcheckStep, splitmix64(seed),
                              kGradcheckCoords)};
}

inline int cmd_gradcheck(const fs::path& out_dir, std::uint64_t seed, bool perturb, Console& con) {
    const std::string started = utc_timestamp();
    ensure_output_dir(out_dir);
    std::ostringstream report;
    report << "# finite-difference check, h=" << io::format_double(kGradcheckStep)
           << " tolerance=" << io::format_double(kGradcheckTolerance) << "\n";
    bool ok = true;
    for (std::uint64_t s = seed; s < seed + 3; ++s) {
        for (bool use_codec : {false, true}) {
            const GradcheckRun run = gradcheck_pipeline(s, use_codec, perturb ? 1.0 + 1e-3 : 1.0);
            const bool pass = run.report.max_rel_error < kGradcheckTolerance;
            ok = ok && pass;
            report << "seed=" << s << " codec=" << (use_codec ? "on" : "off")
                   << " coordinates=" << run.report.coords.size()
                   << " max_rel_error=" << io::format_double(run.report.max_rel_error) << " "
                   << (pass ? "PASS" : "FAIL") << "\n";
            for (const auto& c : run.report.coords)
                report << "  " << c.index << " " << io::format_double(c.analytic) << " "
                       << io::format_double(c.numeric) << " " << io::format_double(c.rel_error) << "\n";
            con.out << con.tag(pass) << " seed=" << s << " codec=" << (use_codec ? "on " : "off")
                    << " max_rel_error=" << io::format_double(run.report.max_rel_error) << "\n";
        }
    }
    const fs::path path = out_dir / "gradcheck.txt";
    io::write_file_atomic(path, report.str());
    return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

inline int cmd_teacher(const fs::path& out, std::size_t size) {
    if (size == 0) throw ValidationError("teacher size must be positive");
    const PixelField img = standard_teacher(size, size);
    if (out.extension() == ".ppm")
        io::write_file_atomic(out, io::encode_ppm(img));
    else
        io::save_tensor(out, img);
    return kOk;
}

/// Entry point of the `pgc` tool. Never calls exit(); returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Console con{out, err, color_wanted(out)};

    CLI::App app{"Pixel-wise gradient regulation for latent score distillation, desk-scale simulator", "pgc"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    std::string config, out_dir;
    std::optional<std::uint64_t> seed;

    auto* sim = app.add_subcommand("simulate", "Run one simulation: writes final.ppm, stats.csv, manifest.json");
    sim->add_option("-c,--config", config, "Config file (key = value lines)")->required();
    sim->add_option("-o,--out", out_dir, "Output directory")->required();
    sim->add_option("--seed", seed, "Seed overriding the config's seed");

    std::vector<double> thresholds = kDefaultAblationThresholds;
    auto* abl = app.add_subcommand("ablate", "Sweep clipping thresholds: writes summary.csv, grid.ppm, manifest.json");
    abl->add_option("-c,--config", config, "Config file")->required();
    abl->add_option("-o,--out", out_dir, "Output directory")->required();
    abl->add_option("-t,--thresholds", thresholds, "Thresholds (comma separated)")
        ->delimiter(',')
        ->capture_default_str();
    abl->add_option("--seed", seed, "Seed overriding the config's seed");

    auto* codec = app.add_subcommand("codec", "Linear pixel<->latent codec tools");
    codec->require_subcommand(1);
    std::string codec_path, in_path, out_path, reference, pixels_path, latents_path;
    double lambda = 0.0;
    std::size_t count = 100;

    auto* show = codec->add_subcommand("show", "Print a codec (default: builtin) at full precision");
    show->add_option("--codec", codec_path, "Codec file instead of the builtin");

    auto* enc = codec->add_subcommand("encode", "Image (PPM or PGT1) -> latent PGT1 tensor");
    enc->add_option("-i,--in", in_path)->required();
    enc->add_option("-o,--out", out_path)->required();
    enc->add_option("--codec", codec_path);

    auto* dec = codec->add_subcommand("decode", "Latent PGT1 tensor -> image (PGT1, or PPM by extension)");
    dec->add_option("-i,--in", in_path)->required();
    dec->add_option("-o,--out", out_path)->required();
    dec->add_option("--codec", codec_path);
    dec->add_option("--reference", reference, "Image to report the roundtrip MSE against");

    auto* fit = codec->add_subcommand("fit", "Ridge-fit a codec to paired pixel/latent tensors");
    fit->add_option("--pixels", pixels_path)->required();
    fit->add_option("--latents", latents_path)->required();
    fit->add_option("--lambda", lambda)->capture_default_str();
    fit->add_option("-o,--out", out_path)->required();

    std::uint64_t sample_seed = 0;
    auto* sample = codec->add_subcommand("sample", "Random pixels and their encodings as PGT1 tensors");
    sample->add_option("-n,--count", count)->capture_default_str();
    sample->add_option("--seed", sample_seed)->capture_default_str();
    sample->add_option("--codec", codec_path);
    sample->add_option("--pixels", pixels_path)->required();
    sample->add_option("--latents", latents_path)->required();

    std::uint64_t check_seed = 0;
    bool perturb = false;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the render/loss gradients");
    gc->add_option("-o,--out", out_dir)->required();
    gc->add_option("--seed", check_seed, "First of three consecutive seeds")->capture_default_str();
    gc->add_flag("--perturb-gradient", perturb)->group("");

    std::size_t size = 64;
    auto* teach = app.add_subcommand("teacher", "Write the standard smooth teacher image");
    teach->add_option("-o,--out", out_path, "Output (.ppm or PGT1 tensor)")->required();
    teach->add_option("--size", size)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*sim) return cmd_simulate(config, out_dir, seed, con);
        if (*abl) return cmd_ablate(config, thresholds, out_dir, seed, con);
        if (*show) return cmd_codec_show(codec_path, con);
        if (*enc) return cmd_codec_encode(in_path, out_path, codec_path, con);
        if (*dec) return cmd_codec_decode(in_path, out_path, codec_path, reference, con);
        if (*fit) return cmd_codec_fit(pixels_path, latents_path, lambda, out_path, con);
        if (*sample) return cmd_codec_sample(count, sample_seed, codec_path, pixels_path, latents_path, con);
        if (*gc) return cmd_gradcheck(out_dir, check_seed, perturb, con);
        if (*teach) return cmd_teacher(out_path, size);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const RuntimeAbort& e) {
        err << "aborted: " << e.what() << "\n";
        return kRuntimeAbort;
    } catch (const std::exception& e) {
        err << "aborted: " << e.what() << "\n";
        return kRuntimeAbort;
    }
    return kValidation;
}

} // namespace pgc::cli
