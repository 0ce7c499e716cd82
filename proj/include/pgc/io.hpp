#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "distill_sim.hpp"
#include "errors.hpp"
#include "grad_reg.hpp"
#include "linear_codec.hpp"
#include "pixel_field.hpp"

namespace pgc::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a sibling temp file and renames, so a failed write never
/// leaves a truncated target behind.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + path.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw RuntimeAbort("write failed for '" + path.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw RuntimeAbort("cannot move output into place: '" + path.string() + "'");
    }
}

/// Shortest decimal text that parses back to exactly `v` ("inf"/"-inf"/"nan" for non-finite).
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

// ---------------------------------------------------------------------------
// PGT1 tensors: "PGT1", u32 LE height, width, channels, then f32 LE row-major data.

inline constexpr std::string_view kTensorMagic = "PGT1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

} // namespace detail

inline std::string encode_tensor(const PixelField& field) {
    std::string out(kTensorMagic);
    out.reserve(16 + field.size() * 4);
    for (std::size_t d : {field.height(), field.width(), field.channels()}) {
        if (d > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("tensor dimension too large");
        detail::put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : field.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

inline PixelField decode_tensor(std::string_view bytes) {
    if (bytes.size() < 16 || bytes.substr(0, 4) != kTensorMagic)
        throw ParseError("not a PGT1 tensor (bad magic or truncated header)", 0);
    const std::size_t h = detail::get_u32(bytes, 4), w = detail::get_u32(bytes, 8), c = detail::get_u32(bytes, 12);
    if (h == 0 || w == 0 || c == 0) throw ParseError("PGT1 tensor has a zero dimension", 0);
    const std::size_t n = h * w * c;
    if (bytes.size() != 16 + 4 * n)
        throw ParseError("PGT1 payload is " + std::to_string(bytes.size() - 16) + " bytes, expected " +
                             std::to_string(4 * n),
                         0);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i)
        data[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32(bytes, 16 + 4 * i)));
    return PixelField(h, w, c, std::move(data));
}

inline void save_tensor(const fs::path& path, const PixelField& field) {
    write_file_atomic(path, encode_tensor(field));
}

inline PixelField load_tensor(const fs::path& path) { return decode_tensor(read_file(path)); }

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255). Values are clamped to [0,1] then rounded.

inline std::string encode_ppm(const PixelField& image) {
    require_channels(image, 3, "ppm");
    std::string out = "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    out.reserve(out.size() + image.size());
    for (double v : image.data()) {
        const double q = std::round(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    return out;
}

inline PixelField decode_ppm(std::string_view bytes) {
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return std::string(bytes.substr(start, pos - start));
    };
    if (token() != "P6") throw ParseError("not a binary PPM (P6)", 0);
    std::size_t dims[3] = {};
    for (auto& d : dims) {
        const std::string t = token();
        auto res = std::from_chars(t.data(), t.data() + t.size(), d);
        if (res.ec != std::errc() || res.ptr != t.data() + t.size() || d == 0) throw ParseError("bad PPM header", 0);
    }
    const std::size_t w = dims[0], h = dims[1], maxval = dims[2];
    if (maxval > 255) throw ParseError("only 8-bit PPM is supported", 0);
    ++pos; // single whitespace after maxval
    if (bytes.size() < pos + w * h * 3) throw ParseError("PPM pixel data truncated", 0);
    PixelField img(h, w, 3);
    auto data = img.data();
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
    return img.as_image();
}

/// Loads a 3-channel image from either a PPM or a PGT1 tensor, chosen by magic.
inline PixelField load_image(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.rfind("P6", 0) == 0) return decode_ppm(bytes);
    if (bytes.rfind(std::string(kTensorMagic), 0) == 0) {
        PixelField f = decode_tensor(bytes);
        require_channels(f, 3, "image");
        return f.as_image();
    }
    throw ParseError("'" + path.string() + "' is neither a P6 PPM nor a PGT1 tensor", 0);
}

/// Places images side by side with a 2-pixel white gutter.
inline PixelField tile_horizontally(const std::vector<PixelField>& images) {
    if (images.empty()) throw ValidationError("nothing to tile");
    const std::size_t gutter = 2;
    std::size_t h = 0, w = 0;
    for (const auto& im : images) {
        require_channels(im, 3, "tile");
        h = std::max(h, im.height());
        w += im.width();
    }
    w += gutter * (images.size() - 1);
    PixelField grid(h, w, 3, 1.0);
    std::size_t x0 = 0;
    for (const auto& im : images) {
        for (std::size_t r = 0; r < im.height(); ++r)
            for (std::size_t c = 0; c < im.width(); ++c)
                for (std::size_t k = 0; k < 3; ++k) grid.at(r, x0 + c, k) = im.at(r, c, k);
        x0 += im.width() + gutter;
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Codec text format
//
//   ENC_MATRIX
//   a00 a01 a02
//   ... (4 rows)
//   ENC_BIAS
//   b0 b1 b2 b3
//   DEC_MATRIX
//   ... (3 rows of 4)
//   DEC_BIAS
//   d0 d1 d2
//
// Blank lines and lines starting with '#' are ignored.

inline std::string format_codec(const LinearCodec& codec) {
    std::ostringstream out;
    auto row = [&](auto&& m, Eigen::Index r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << format_double(m(r, c));
        out << '\n';
    };
    out << "ENC_MATRIX\n";
    for (Eigen::Index r = 0; r < 4; ++r) row(codec.enc_matrix, r);
    out << "ENC_BIAS\n";
    row(codec.enc_bias.transpose(), 0);
    out << "DEC_MATRIX\n";
    for (Eigen::Index r = 0; r < 3; ++r) row(codec.dec_matrix, r);
    out << "DEC_BIAS\n";
    row(codec.dec_bias.transpose(), 0);
    return out.str();
}

inline LinearCodec parse_codec(std::string_view text) {
    struct Block {
        int rows, cols;
        double* dst;
        bool seen = false;
    };
    LinearCodec codec;
    std::map<std::string, Block, std::less<>> blocks{
        {"ENC_MATRIX", {4, 3, codec.enc_matrix.data()}},
        {"ENC_BIAS", {1, 4, codec.enc_bias.data()}},
        {"DEC_MATRIX", {3, 4, codec.dec_matrix.data()}},
        {"DEC_BIAS", {1, 3, codec.dec_bias.data()}},
    };

    Block* current = nullptr;
    int row = 0;
    std::size_t line_no = 0;
    std::size_t header_line = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream fields(line);
        std::vector<std::string> tok{std::istream_iterator<std::string>(fields), {}};
        if (tok.empty() || tok.front().front() == '#') continue;
        if (auto it = blocks.find(tok.front()); it != blocks.end()) {
            if (tok.size() != 1) throw ParseError("unexpected text after block header " + tok.front(), line_no);
            if (current && row != current->rows) throw ParseError("previous block is incomplete", line_no);
            if (it->second.seen) throw ParseError("duplicate block " + tok.front(), line_no);
            current = &it->second;
            current->seen = true;
            row = 0;
            header_line = line_no;
            continue;
        }
        if (!current) throw ParseError("expected a block header, got '" + tok.front() + "'", line_no);
        if (row == current->rows) throw ParseError("too many rows in block", line_no);
        if (static_cast<int>(tok.size()) != current->cols)
            throw ParseError("expected " + std::to_string(current->cols) + " values, got " +
                                 std::to_string(tok.size()),
                             line_no);
        for (int c = 0; c < current->cols; ++c) {
            auto v = parse_double(tok[static_cast<std::size_t>(c)]);
            if (!v || !std::isfinite(*v)) throw ParseError("bad number '" + tok[static_cast<std::size_t>(c)] + "'", line_no);
            current->dst[row * current->cols + c] = *v; // row-major storage in every block
        }
        ++row;
    }
    if (current && row != current->rows) throw ParseError("block starting here is incomplete", header_line);
    for (const auto& [name, b] : blocks)
        if (!b.seen) throw ParseError("missing block " + name, line_no);
    return codec;
}

inline void save_codec(const fs::path& path, const LinearCodec& codec) {
    write_file_atomic(path, format_codec(codec));
}

inline LinearCodec load_codec(const fs::path& path) { return parse_codec(read_file(path)); }

// ---------------------------------------------------------------------------
// Run configuration: "key = value" lines, '#' comments, unknown keys rejected.

struct RunConfig {
    std::string teacher;
    RegMode mode = RegMode::PGC_N;
    double threshold = kDefaultThreshold;
    double sigma = 0.1;
    double impulse_prob = 0.01;
    double impulse_mag = 10.0;
    std::size_t iterations = kDefaultIterations;
    double lr = kDefaultLearningRate;
    OptimizerKind optimizer = OptimizerKind::Adam;
    bool use_codec = false;
    std::uint64_t seed = 0;

    /// Lines in file order, as written, for echoing into manifests.
    std::vector<std::pair<std::string, std::string>> raw;
};

inline constexpr std::array<std::string_view, 11> kConfigKeys = {
    "teacher", "mode", "threshold", "sigma", "impulse_prob", "impulse_mag",
    "iterations", "lr", "optimizer", "use_codec", "seed"};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline RunConfig parse_run_config(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, std::size_t, std::less<>> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const auto eq = sv.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
        const std::string key(trim(sv.substr(0, eq)));
        const std::string value(trim(sv.substr(eq + 1)));
        if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end())
            throw ParseError("unknown key '" + key + "'", line_no);
        if (seen.count(key)) throw ParseError("duplicate key '" + key + "'", line_no);
        seen[key] = line_no;
        if (value.empty()) throw ParseError("empty value for '" + key + "'", line_no);

        auto number = [&]() {
            auto v = parse_double(value);
            if (!v || !std::isfinite(*v)) throw ParseError("'" + key + "' expects a number, got '" + value + "'", line_no);
            return *v;
        };
        auto integer = [&]() {
            std::uint64_t v = 0;
            auto res = std::from_chars(value.data(), value.data() + value.size(), v);
            if (res.ec != std::errc() || res.ptr != value.data() + value.size())
                throw ParseError("'" + key + "' expects a non-negative integer, got '" + value + "'", line_no);
            return v;
        };
        try {
            if (key == "teacher") cfg.teacher = value;
            else if (key == "mode") cfg.mode = parse_reg_mode(value);
            else if (key == "threshold") cfg.threshold = number();
            else if (key == "sigma") cfg.sigma = number();
            else if (key == "impulse_prob") cfg.impulse_prob = number();
            else if (key == "impulse_mag") cfg.impulse_mag = number();
            else if (key == "iterations") cfg.iterations = static_cast<std::size_t>(integer());
            else if (key == "lr") cfg.lr = number();
            else if (key == "seed") cfg.seed = integer();
            else if (key == "optimizer") {
                if (value == "adam") cfg.optimizer = OptimizerKind::Adam;
                else if (value == "sgd") cfg.optimizer = OptimizerKind::SGD;
                else throw ParseError("optimizer must be 'adam' or 'sgd'", line_no);
            } else if (key == "use_codec") {
                if (value == "true" || value == "1") cfg.use_codec = true;
                else if (value == "false" || value == "0") cfg.use_codec = false;
                else throw ParseError("use_codec must be true or false", line_no);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
        cfg.raw.emplace_back(key, value);
    }
    if (cfg.teacher.empty()) throw ParseError("missing required key 'teacher'", 0);
    return cfg;
}

inline RunConfig load_run_config(const fs::path& path) { return parse_run_config(read_file(path)); }

inline std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

/// Builds a validated simulation config; relative teacher paths resolve against `base_dir`.
inline SimConfig to_sim_config(const RunConfig& rc, const fs::path& base_dir) {
    SimConfig cfg;
    fs::path teacher = rc.teacher;
    if (teacher.is_relative()) teacher = base_dir / teacher;
    if (!fs::exists(teacher)) throw ValidationError("teacher file not found: '" + teacher.string() + "'");
    cfg.teacher = load_image(teacher);
    cfg.reg = RegConfig{rc.mode, rc.threshold};
    cfg.noise = NoiseModel{rc.sigma, rc.impulse_prob, rc.impulse_mag, rc.seed};
    cfg.iterations = rc.iterations;
    cfg.learning_rate = rc.lr;
    cfg.optimizer.kind = rc.optimizer;
    cfg.use_codec = rc.use_codec;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Per-iteration CSV

inline constexpr std::string_view kStatsHeader = "iteration,loss,psnr,mean_grad_norm,max_grad_norm,clipped_fraction";

inline std::string format_stats_csv(const RunStats& stats) {
    std::string out(kStatsHeader);
    out += '\n';
    for (const auto& r : stats.records) {
        out += std::to_string(r.iteration);
        for (double v : {r.loss, r.psnr, r.mean_grad_norm, r.max_grad_norm, r.clipped_fraction}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

} // namespace pgc::io
