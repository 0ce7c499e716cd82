#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "pgc/cli.hpp"
#include "test_util.hpp"

using namespace pgc;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "pgc");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

/// Runs the built binary through the shell; returns its exit status.
int run_binary(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("PGC_NO_COLOR=1 '") + PGC_CLI_PATH + "' " + args + " > '" + log.string() +
                            "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t file_count(const fs::path& dir) {
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

/// Small teacher and a config naming it, inside `dir`.
fs::path write_config(const fs::path& dir, const std::string& extra) {
    io::save_tensor(dir / "teacher.pgt", standard_teacher(8, 8));
    const fs::path cfg = dir / "run.cfg";
    io::write_file_atomic(cfg, "teacher = teacher.pgt\n" + extra);
    return cfg;
}

} // namespace

TEST(CliSimulate, MinimalConfigWritesThreeFiles) {
    const fs::path dir = test::scratch_dir("cli_min");
    const fs::path cfg = write_config(dir, "iterations = 5\n");
    const Result r = run_cli({"simulate", "-c", cfg.string(), "-o", (dir / "out").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(file_count(dir / "out"), 3u);
    for (const char* f : {"final.ppm", "stats.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;

    const auto m = nlohmann::json::parse(io::read_file(dir / "out" / "manifest.json"));
    for (const auto& f : m["outputs"]) EXPECT_TRUE(fs::exists(dir / "out" / f.get<std::string>()));
    EXPECT_EQ(m["config"]["mode"], "pgc-n");
    EXPECT_EQ(m["config"]["iterations"], "5");
    EXPECT_EQ(m["version"], kVersion);
    EXPECT_TRUE(m.contains("started_at"));
    EXPECT_TRUE(m.contains("finished_at"));

    const std::string csv = io::read_file(dir / "out" / "stats.csv");
    EXPECT_EQ(csv.rfind(std::string(io::kStatsHeader) + "\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(CliSimulate, EchoesConfigVerbatim) {
    const fs::path dir = test::scratch_dir("cli_echo");
    const fs::path cfg = write_config(dir, "mode = pgc-n\nthreshold = 0.10\niterations = 2\n");
    ASSERT_EQ(run_cli({"simulate", "-c", cfg.string(), "-o", (dir / "out").string()}).code, 0);
    const auto m = nlohmann::json::parse(io::read_file(dir / "out" / "manifest.json"));
    EXPECT_EQ(m["config"]["mode"], "pgc-n");
    EXPECT_EQ(m["config"]["threshold"], "0.10");
    EXPECT_EQ(m["config"]["teacher"], "teacher.pgt");
}

TEST(CliSimulate, SameConfigSameCsvBytes) {
    const fs::path dir = test::scratch_dir("cli_det");
    const fs::path cfg = write_config(dir, "iterations = 30\nimpulse_prob = 0.2\nseed = 9\n");
    ASSERT_EQ(run_cli({"simulate", "-c", cfg.string(), "-o", (dir / "a").string()}).code, 0);
    ASSERT_EQ(run_cli({"simulate", "-c", cfg.string(), "-o", (dir / "b").string()}).code, 0);
    ASSERT_EQ(run_cli({"simulate", "-c", cfg.string(), "-o", (dir / "c").string(), "--seed", "10"}).code, 0);
    const std::string a = io::read_file(dir / "a" / "stats.csv");
    EXPECT_EQ(a, io::read_file(dir / "b" / "stats.csv"));
    EXPECT_EQ(io::read_file(dir / "a" / "final.ppm"), io::read_file(dir / "b" / "final.ppm"));
    EXPECT_NE(a, io::read_file(dir / "c" / "stats.csv"));
}

TEST(CliSimulate, ValidationErrorsExitOne) {
    const fs::path dir = test::scratch_dir("cli_err");
    io::write_file_atomic(dir / "missing.cfg", "teacher = nowhere.pgt\n");
    Result r = run_cli({"simulate", "-c", (dir / "missing.cfg").string(), "-o", (dir / "o1").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("teacher"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "o1"));

    const fs::path bad_mode = write_config(dir, "mode = clip-everything\n");
    r = run_cli({"simulate", "-c", bad_mode.string(), "-o", (dir / "o2").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;

    const fs::path ok = write_config(dir, "iterations = 1\n");
    io::write_file_atomic(dir / "plainfile", "x");
    EXPECT_EQ(run_cli({"simulate", "-c", ok.string(), "-o", (dir / "plainfile" / "sub").string()}).code, 1);
    EXPECT_EQ(run_cli({"simulate", "-c", ok.string()}).code, 1);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
}

TEST(CliSimulate, DivergenceExitsTwo) {
    const fs::path dir = test::scratch_dir("cli_abort");
    const fs::path cfg =
        write_config(dir, "mode = none\nsigma = 0\nimpulse_prob = 1\nimpulse_mag = 1000\noptimizer = sgd\nlr = 1e308\n"
                          "iterations = 5\n");
    const Result r = run_cli({"simulate", "-c", cfg.string(), "-o", (dir / "out").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(fs::exists(dir / "out" / "stats.csv"));
}

TEST(CliAblate, DefaultThresholds) {
    const fs::path dir = test::scratch_dir("cli_ablate");
    const fs::path cfg = write_config(dir, "iterations = 3\n");
    const Result r = run_cli({"ablate", "-c", cfg.string(), "-o", (dir / "out").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = io::read_file(dir / "out" / "summary.csv");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "threshold,final_psnr,mean_clipped_fraction");
    std::vector<std::string> thresholds;
    while (std::getline(lines, line)) thresholds.push_back(line.substr(0, line.find(',')));
    EXPECT_EQ(thresholds, (std::vector<std::string>{"0.01", "0.05", "0.1", "0.5", "1"}));
    const PixelField grid = io::load_image(dir / "out" / "grid.ppm");
    EXPECT_EQ(grid.width(), 5u * 8u + 4u * 2u);
    EXPECT_EQ(file_count(dir / "out"), 3u);
}

TEST(CliAblate, SingleThresholdAndRejections) {
    const fs::path dir = test::scratch_dir("cli_ablate1");
    const fs::path cfg = write_config(dir, "iterations = 3\n");
    ASSERT_EQ(run_cli({"ablate", "-c", cfg.string(), "-o", (dir / "out").string(), "-t", "0.2"}).code, 0);
    const std::string csv = io::read_file(dir / "out" / "summary.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
    EXPECT_EQ(csv.substr(csv.find('\n') + 1, 4), "0.2,");
    EXPECT_EQ(run_cli({"ablate", "-c", cfg.string(), "-o", (dir / "o2").string(), "-t", "0.1,0.1"}).code, 1);
    EXPECT_EQ(run_cli({"ablate", "-c", cfg.string(), "-o", (dir / "o3").string(), "-t", "-1"}).code, 1);
    const fs::path none = write_config(dir, "mode = none\n");
    EXPECT_EQ(run_cli({"ablate", "-c", none.string(), "-o", (dir / "o4").string()}).code, 1);
}

TEST(CliCodec, ShowPrintsBuiltin) {
    const Result r = run_cli({"codec", "show"});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("ENC_MATRIX\n-0.5537 ", 0), 0u) << r.out;
    EXPECT_EQ(io::parse_codec(r.out), builtin_codec());
}

TEST(CliCodec, EncodeDecodeReportsRoundtrip) {
    const fs::path dir = test::scratch_dir("cli_codec");
    io::save_tensor(dir / "img.pgt", standard_teacher(6, 6));
    Result r = run_cli({"codec", "encode", "-i", (dir / "img.pgt").string(), "-o", (dir / "lat.pgt").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("roundtrip_mse="), std::string::npos);
    EXPECT_EQ(io::load_tensor(dir / "lat.pgt").channels(), 4u);
    r = run_cli({"codec", "decode", "-i", (dir / "lat.pgt").string(), "-o", (dir / "back.ppm").string(), "--reference",
                 (dir / "img.pgt").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto pos = r.out.find("roundtrip_mse=");
    ASSERT_NE(pos, std::string::npos);
    const double mse = *io::parse_double(r.out.substr(pos + 14, r.out.find('\n', pos) - pos - 14));
    // Every per-channel error is at most the exact roundtrip bound of the builtin codec.
    EXPECT_LE(mse, 0.627528 * 0.627528);
    EXPECT_TRUE(fs::exists(dir / "back.ppm"));
}

TEST(CliCodec, SampleThenFitRecoversGenerator) {
    const fs::path dir = test::scratch_dir("cli_fit");
    const std::string px = (dir / "px.pgt").string(), lat = (dir / "lat.pgt").string(), out = (dir / "fit.txt").string();
    // Builtin entries snapped to multiples of 1/256: latents stay exact in float32.
    LinearCodec gen = builtin_codec();
    for (double* d : {gen.enc_matrix.data(), gen.enc_bias.data()})
        for (int i = 0; i < (d == gen.enc_bias.data() ? 4 : 12); ++i) d[i] = std::round(d[i] * 256.0) / 256.0;
    const std::string gen_path = (dir / "gen.txt").string();
    io::save_codec(gen_path, gen);
    ASSERT_EQ(run_cli({"codec", "sample", "-n", "100", "--seed", "3", "--codec", gen_path, "--pixels", px, "--latents",
                       lat})
                  .code,
              0);
    const Result r = run_cli({"codec", "fit", "--pixels", px, "--latents", lat, "-o", out});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto pos = r.out.find("residual=");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_LT(*io::parse_double(r.out.substr(pos + 9, r.out.find('\n', pos) - pos - 9)), 1e-8);
    const LinearCodec fitted = io::load_codec(out);
    EXPECT_LT((fitted.enc_matrix - gen.enc_matrix).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((fitted.enc_bias - gen.enc_bias).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(CliCodec, MalformedCodecFile) {
    const fs::path dir = test::scratch_dir("cli_badcodec");
    io::write_file_atomic(dir / "bad.txt", "ENC_MATRIX\n1 2 3\n1 2\n");
    const Result r = run_cli({"codec", "show", "--codec", (dir / "bad.txt").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST(CliGradcheck, PassesAndReportsCoordinates) {
    const fs::path dir = test::scratch_dir("cli_gc");
    const Result r = run_cli({"gradcheck", "-o", dir.string(), "--seed", "7"});
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string report = io::read_file(dir / "gradcheck.txt");
    std::istringstream lines(report);
    std::string line;
    int runs = 0;
    while (std::getline(lines, line)) {
        if (line.rfind("seed=", 0) != 0) continue;
        ++runs;
        const auto pos = line.find("coordinates=");
        EXPECT_GE(std::stoul(line.substr(pos + 12)), 100u);
        EXPECT_NE(line.find("PASS"), std::string::npos);
    }
    EXPECT_EQ(runs, 6);
}

TEST(CliGradcheck, PerturbedGradientFails) {
    const fs::path dir = test::scratch_dir("cli_gc_bad");
    const Result r = run_cli({"gradcheck", "-o", dir.string(), "--perturb-gradient"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(CliBinary, HelpHasNoSideEffects) {
    const fs::path dir = test::scratch_dir("cli_help");
    const fs::path log = dir.parent_path() / "pgc_help.log";
    EXPECT_EQ(run_binary("--help", log), 0);
    EXPECT_NE(io::read_file(log).find("simulate"), std::string::npos);
    EXPECT_EQ(run_binary("simulate --help -c x -o '" + (dir / "out").string() + "'", log), 0);
    EXPECT_EQ(run_binary("gradcheck --help -o '" + (dir / "gc").string() + "'", log), 0);
    EXPECT_EQ(run_binary("codec fit --help", log), 0);
    EXPECT_EQ(file_count(dir), 0u);
}

TEST(CliBinary, ExitCodes) {
    const fs::path dir = test::scratch_dir("cli_exit");
    const fs::path log = dir.parent_path() / "pgc_exit.log";
    EXPECT_EQ(run_binary("codec show", log), 0);
    EXPECT_EQ(io::read_file(log).find("\x1b["), std::string::npos);
    EXPECT_EQ(run_binary("simulate -c '" + (dir / "none.cfg").string() + "' -o '" + dir.string() + "'", log), 1);
    EXPECT_EQ(run_binary("gradcheck --perturb-gradient -o '" + dir.string() + "'", log), 3);
    EXPECT_EQ(run_binary("", log), 1);
}
