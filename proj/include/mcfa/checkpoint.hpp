#pragma once

// Versioned text checkpoint: the embedded ModelConfig followed by every
// named parameter as shape + hexfloat values. Hexfloat round-trips doubles
// bit-exactly while keeping the file diffable.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "mcfa/model.hpp"

namespace mcfa {

inline constexpr const char* kCheckpointMagic = "mcfa-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hex_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double parse_hex_double(const std::string& tok, const std::string& where) {
    const char* s = tok.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end != s + tok.size())
        throw std::runtime_error(where + ": bad numeric token '" + tok + "'");
    return v;
}

}  // namespace detail

inline void save_model(const McfaModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const ModelConfig& c = model.config();
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    out << "channel_scale " << detail::hex_double(c.channel_scale) << '\n';
    out << "num_attributes " << c.num_attributes << '\n';
    out << "num_landmarks " << c.num_landmarks << '\n';
    out << "input_side " << c.input_sides[0] << '\n';
    out << "in_channels " << c.in_channels << '\n';

    auto params = const_cast<McfaModel&>(model).named_params();
    out << "tensors " << params.size() << '\n';
    for (const auto& p : params) {
        out << "tensor " << p.name << ' ' << p.tensor.rank();
        for (int i = 0; i < p.tensor.rank(); ++i) out << ' ' << p.tensor.dim(i);
        out << '\n';
        const auto& v = p.tensor.values();
        for (std::size_t i = 0; i < v.size(); ++i)
            out << detail::hex_double(v[i]) << ((i + 1) % 8 == 0 || i + 1 == v.size() ? '\n' : ' ');
    }
    out << "end\n";
    if (!out) throw std::runtime_error("failed while writing checkpoint " + path.string());
}

inline McfaModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const std::string where = path.string();

    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kCheckpointMagic)
        throw std::runtime_error(where + ": not a checkpoint file (magic '" + magic + "')");
    if (version != kCheckpointVersion)
        throw std::runtime_error(where + ": unsupported checkpoint version " +
                                 std::to_string(version));

    ModelConfig cfg;
    auto expect_key = [&](const char* key) {
        std::string k;
        if (!(in >> k) || k != key)
            throw std::runtime_error(where + ": expected '" + key + "', got '" + k + "'");
    };
    std::string tok;
    expect_key("channel_scale");
    in >> tok;
    cfg.channel_scale = detail::parse_hex_double(tok, where);
    expect_key("num_attributes");
    in >> cfg.num_attributes;
    expect_key("num_landmarks");
    in >> cfg.num_landmarks;
    expect_key("input_side");
    int side = 0;
    in >> side;
    cfg.input_sides = {side, side / 2, side / 4};
    expect_key("in_channels");
    in >> cfg.in_channels;
    if (!in) throw std::runtime_error(where + ": truncated config header");
    cfg.validate();

    McfaModel model(cfg, 0);
    auto params = model.named_params();

    expect_key("tensors");
    std::size_t count = 0;
    in >> count;
    if (count != params.size())
        throw std::runtime_error(where + ": checkpoint has " + std::to_string(count) +
                                 " tensors, model expects " + std::to_string(params.size()));

    for (std::size_t t = 0; t < count; ++t) {
        expect_key("tensor");
        std::string name;
        int rank = 0;
        in >> name >> rank;
        if (!in || rank < 0 || rank > 4)
            throw std::runtime_error(where + ": bad tensor header for '" + name + "'");
        std::vector<int> shape(rank);
        for (int i = 0; i < rank; ++i) in >> shape[i];

        auto& p = params[t];
        if (p.name != name)
            throw std::runtime_error(where + ": expected tensor '" + p.name + "', found '" + name +
                                     "'");
        if (p.tensor.shape() != shape)
            throw std::runtime_error(where + ": shape mismatch for '" + name + "'");
        auto& v = p.tensor.values();
        for (auto& x : v) {
            if (!(in >> tok)) throw std::runtime_error(where + ": truncated values for '" + name + "'");
            x = detail::parse_hex_double(tok, where);
        }
    }
    expect_key("end");
    return model;
}

}  // namespace mcfa
