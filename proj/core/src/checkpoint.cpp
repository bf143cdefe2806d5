#include "ethos/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ethos {
namespace {

using nlohmann::json;

void write_f32_array(std::ofstream& out, const std::vector<float>& v) {
    // Little-endian IEEE-754 words.
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
}

void read_f32_array(std::ifstream& in, std::vector<float>& v, size_t n) {
    v.resize(n);
    for (size_t i = 0; i < n; ++i) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) throw std::runtime_error("truncated checkpoint file");
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        std::memcpy(&v[i], &bits, 4);
    }
}

json config_to_json(const ModelConfig& cfg) {
    return json{{"n_layers", cfg.n_layers},       {"n_heads", cfg.n_heads},
                {"d_model", cfg.d_model},         {"context_len", cfg.context_len},
                {"dropout", cfg.dropout},         {"vocab_size", cfg.vocab_size},
                {"seed", cfg.seed},               {"tie_embedding", cfg.tie_embedding}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.context_len = j.at("context_len").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.tie_embedding = j.at("tie_embedding").get<bool>();
    return cfg;
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    json header;
    header["config"] = config_to_json(ckpt.model.config());
    header["fingerprint"] = ckpt.vocab_fingerprint;
    header["step"] = ckpt.train_steps;
    header["adam"] = {{"lr", ckpt.opt.hp.lr},     {"weight_decay", ckpt.opt.hp.weight_decay},
                      {"beta1", ckpt.opt.hp.beta1}, {"beta2", ckpt.opt.hp.beta2},
                      {"eps", ckpt.opt.hp.eps},   {"t", ckpt.opt.t}};
    json history = json::array();
    for (const auto& rec : ckpt.loss_history) {
        json r = {{"step", rec.step}, {"train", rec.train_loss}};
        if (std::isfinite(rec.val_loss)) r["val"] = rec.val_loss;
        history.push_back(r);
    }
    header["loss_history"] = history;
    header["sizes"] = {{"params", ckpt.model.params().size()}, {"m", ckpt.opt.m.size()}, {"v", ckpt.opt.v.size()}};
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out.write("ETHS", 4);
    const std::uint16_t version = 1;
    unsigned char vb[2] = {static_cast<unsigned char>(version), static_cast<unsigned char>(version >> 8)};
    out.write(reinterpret_cast<const char*>(vb), 2);
    const auto hlen = static_cast<std::uint32_t>(header_str.size());
    unsigned char hb[4] = {static_cast<unsigned char>(hlen), static_cast<unsigned char>(hlen >> 8),
                           static_cast<unsigned char>(hlen >> 16), static_cast<unsigned char>(hlen >> 24)};
    out.write(reinterpret_cast<const char*>(hb), 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    write_f32_array(out, ckpt.model.params());
    write_f32_array(out, ckpt.opt.m);
    write_f32_array(out, ckpt.opt.v);
    if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

ModelCheckpoint load_checkpoint(const std::string& path, std::optional<std::uint64_t> expected_fingerprint) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ETHS", 4) != 0) throw std::runtime_error("bad checkpoint magic");
    unsigned char vb[2];
    in.read(reinterpret_cast<char*>(vb), 2);
    if (!in) throw std::runtime_error("truncated checkpoint file");
    const std::uint16_t version = static_cast<std::uint16_t>(vb[0] | (vb[1] << 8));
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    unsigned char hb[4];
    in.read(reinterpret_cast<char*>(hb), 4);
    if (!in) throw std::runtime_error("truncated checkpoint file");
    const std::uint32_t hlen = static_cast<std::uint32_t>(hb[0]) | (static_cast<std::uint32_t>(hb[1]) << 8) |
                               (static_cast<std::uint32_t>(hb[2]) << 16) | (static_cast<std::uint32_t>(hb[3]) << 24);
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), hlen);
    if (!in) throw std::runtime_error("truncated checkpoint file");
    const json header = json::parse(header_str);

    const ModelConfig cfg = config_from_json(header.at("config"));
    ModelCheckpoint ckpt{cfg};
    ckpt.vocab_fingerprint = header.at("fingerprint").get<std::uint64_t>();
    if (expected_fingerprint && *expected_fingerprint != ckpt.vocab_fingerprint)
        throw std::runtime_error("vocabulary drift: checkpoint fingerprint mismatch");
    ckpt.train_steps = header.at("step").get<std::uint64_t>();
    const auto& adam = header.at("adam");
    ckpt.opt.hp.lr = adam.at("lr").get<double>();
    ckpt.opt.hp.weight_decay = adam.at("weight_decay").get<double>();
    ckpt.opt.hp.beta1 = adam.at("beta1").get<double>();
    ckpt.opt.hp.beta2 = adam.at("beta2").get<double>();
    ckpt.opt.hp.eps = adam.at("eps").get<double>();
    ckpt.opt.t = adam.at("t").get<std::uint64_t>();
    for (const auto& r : header.at("loss_history")) {
        LossRecord rec;
        rec.step = r.at("step").get<std::uint64_t>();
        rec.train_loss = r.at("train").get<double>();
        rec.val_loss = r.contains("val") ? r.at("val").get<double>() : std::nan("");
        ckpt.loss_history.push_back(rec);
    }

    const auto& sizes = header.at("sizes");
    const auto n_params = sizes.at("params").get<size_t>();
    if (n_params != ckpt.model.params().size())
        throw std::runtime_error("checkpoint parameter count does not match its config");
    read_f32_array(in, ckpt.model.params(), n_params);
    read_f32_array(in, ckpt.opt.m, sizes.at("m").get<size_t>());
    read_f32_array(in, ckpt.opt.v, sizes.at("v").get<size_t>());
    return ckpt;
}

}  // namespace ethos
