#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/encoders.hpp"
#include "mmsg/nn.hpp"
#include "mmsg/scene_graph.hpp"
#include "mmsg/tokenizer.hpp"

namespace mmsg {

struct ModelConfig {
    size_t d_model = 128;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t d_ff = 512;
    size_t max_seq_len = 384;
    size_t n_image_tokens = 16;
    size_t vocab_size = 0;  // filled from the tokenizer at init
    uint64_t seed = 1;
    EncoderConfig enc;

    void validate() const {
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0)
            throw std::invalid_argument("model config: all dimensions must be positive");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("model config: d_model not divisible by n_heads");
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},       {"n_layers", n_layers},
                {"n_heads", n_heads},       {"d_ff", d_ff},
                {"max_seq_len", max_seq_len}, {"n_image_tokens", n_image_tokens},
                {"vocab_size", vocab_size}, {"seed", seed},
                {"encoder", enc.to_json()}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_model = j.at("d_model").get<size_t>();
        c.n_layers = j.at("n_layers").get<size_t>();
        c.n_heads = j.at("n_heads").get<size_t>();
        c.d_ff = j.at("d_ff").get<size_t>();
        c.max_seq_len = j.at("max_seq_len").get<size_t>();
        c.n_image_tokens = j.at("n_image_tokens").get<size_t>();
        c.vocab_size = j.at("vocab_size").get<size_t>();
        c.seed = j.at("seed").get<uint64_t>();
        c.enc = EncoderConfig::from_json(j.at("encoder"));
        return c;
    }
};

// Autoregressive decoder over [modality tokens ‖ prompt ‖ target] with causal
// attention; cross entropy only on target positions.
class TripletDecoder {
public:
    void init(const ModelConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        tok_emb_.init("dec.tok_emb", cfg.vocab_size, cfg.d_model, rng);
        pos_emb_.name = "dec.pos_emb";
        pos_emb_.resize({cfg.max_seq_len, cfg.d_model});
        pos_emb_.init_gaussian(rng, 0.02);
        blocks_.resize(cfg.n_layers);
        for (size_t l = 0; l < cfg.n_layers; ++l)
            blocks_[l].init("dec.block" + std::to_string(l), cfg.d_model, cfg.n_heads,
                            cfg.d_ff, /*causal=*/true, rng);
        ln_f_.init("dec.ln_f", cfg.d_model);
        head_.init("dec.head", cfg.d_model, cfg.vocab_size, rng);
    }

    void collect(nn::ParamList& out) {
        tok_emb_.collect(out);
        out.push_back(&pos_emb_);
        for (auto& b : blocks_) b.collect(out);
        ln_f_.collect(out);
        head_.collect(out);
    }

    nn::Linear& head() { return head_; }

    // soft: [S, d] modality tokens (S may be 0); text_ids = prompt ++ target
    // ++ <eos>; positions with index >= first_target (into text_ids) carry
    // loss. Returns mean cross entropy over those positions; loss_scale
    // multiplies the stored gradient (batch averaging).
    double forward_loss(const nn::Tensor& soft, std::span<const int> text_ids,
                        size_t first_target, double loss_scale = 1.0) {
        size_t S = soft.rows();
        size_t M = text_ids.size();
        size_t T = S + M;
        if (T > cfg_.max_seq_len)
            throw std::invalid_argument("decoder: sequence length " + std::to_string(T) +
                                        " exceeds max_seq_len " +
                                        std::to_string(cfg_.max_seq_len));
        if (first_target == 0)
            throw std::invalid_argument("decoder: target must not start the sequence");

        nn::Tensor emb = tok_emb_.forward(text_ids);  // [M, d]
        nn::Tensor x({T, cfg_.d_model});
        if (S) std::copy(soft.data.begin(), soft.data.end(), x.data.begin());
        std::copy(emb.data.begin(), emb.data.end(), x.row(S));
        for (size_t r = 0; r < T; ++r)
            for (size_t j = 0; j < cfg_.d_model; ++j) x.at(r, j) += pos_emb_.value.at(r, j);

        for (auto& b : blocks_) x = b.forward(x);
        x = ln_f_.forward(x);
        logits_ = head_.forward(x);
        const nn::Tensor& logits = logits_;

        // row r predicts text token r - S + 1
        std::vector<int> targets(T, 0);
        std::vector<uint8_t> mask(T, 0);
        for (size_t r = S > 0 ? S - 1 : 0; r + 1 <= T - 1; ++r) {
            size_t k = r - S + 1;
            if (k >= M) break;
            targets[r] = text_ids[k];
            mask[r] = k >= first_target ? 1 : 0;
        }
        double loss = nn::softmax_cross_entropy(logits, targets, mask, dlogits_);
        if (loss_scale != 1.0)
            for (double& g : dlogits_.data) g *= loss_scale;
        fwd_S_ = S;
        fwd_M_ = M;
        return loss;
    }

    // Cache-free evaluation twin of forward_loss (for probes and finite
    // differences); writes logits to out_logits when given.
    double loss_eval(const nn::Tensor& soft, std::span<const int> text_ids,
                     size_t first_target, nn::Tensor* out_logits = nullptr) const {
        size_t S = soft.rows();
        size_t M = text_ids.size();
        size_t T = S + M;
        if (T > cfg_.max_seq_len)
            throw std::invalid_argument("decoder: sequence too long");
        nn::Tensor emb = tok_emb_.apply(text_ids);
        nn::Tensor x({T, cfg_.d_model});
        if (S) std::copy(soft.data.begin(), soft.data.end(), x.data.begin());
        std::copy(emb.data.begin(), emb.data.end(), x.row(S));
        for (size_t r = 0; r < T; ++r)
            for (size_t j = 0; j < cfg_.d_model; ++j) x.at(r, j) += pos_emb_.value.at(r, j);
        for (const auto& b : blocks_) x = b.infer(x, nullptr);
        x = ln_f_.apply(x);
        nn::Tensor logits = head_.apply(x);
        std::vector<int> targets(T, 0);
        std::vector<uint8_t> mask(T, 0);
        for (size_t r = S > 0 ? S - 1 : 0; r + 1 <= T - 1; ++r) {
            size_t k = r - S + 1;
            if (k >= M) break;
            targets[r] = text_ids[k];
            mask[r] = k >= first_target ? 1 : 0;
        }
        nn::Tensor dummy;
        double loss = nn::softmax_cross_entropy(logits, targets, mask, dummy);
        if (out_logits) *out_logits = std::move(logits);
        return loss;
    }

    // Backward for the latest forward_loss; returns gradient w.r.t. soft.
    nn::Tensor backward() {
        nn::Tensor dx = head_.backward(dlogits_);
        dx = ln_f_.backward(dx);
        for (size_t l = blocks_.size(); l-- > 0;) dx = blocks_[l].backward(dx);
        size_t T = fwd_S_ + fwd_M_;
        for (size_t r = 0; r < T; ++r)
            for (size_t j = 0; j < cfg_.d_model; ++j)
                pos_emb_.grad.at(r, j) += dx.at(r, j);
        nn::Tensor demb({fwd_M_, cfg_.d_model});
        std::copy(dx.row(fwd_S_), dx.row(fwd_S_) + fwd_M_ * cfg_.d_model, demb.data.begin());
        tok_emb_.backward(demb);
        nn::Tensor dsoft({fwd_S_, cfg_.d_model});
        std::copy(dx.data.begin(), dx.data.begin() + fwd_S_ * cfg_.d_model,
                  dsoft.data.begin());
        return dsoft;
    }

    // Greedy decoding with KV caches until <eos> or max_len new tokens.
    std::vector<int> generate(const nn::Tensor& soft, std::span<const int> prompt_ids,
                              int eos_id, size_t max_len) const {
        size_t S = soft.rows();
        size_t T0 = S + prompt_ids.size();
        if (T0 >= cfg_.max_seq_len || max_len == 0) return {};
        nn::Tensor x({T0, cfg_.d_model});
        if (S) std::copy(soft.data.begin(), soft.data.end(), x.data.begin());
        nn::Tensor emb = tok_emb_.apply(prompt_ids);
        std::copy(emb.data.begin(), emb.data.end(), x.row(S));
        for (size_t r = 0; r < T0; ++r)
            for (size_t j = 0; j < cfg_.d_model; ++j) x.at(r, j) += pos_emb_.value.at(r, j);

        std::vector<nn::TransformerBlock::KV> kv(blocks_.size());
        nn::Tensor h = x;
        for (size_t l = 0; l < blocks_.size(); ++l) h = blocks_[l].infer(h, &kv[l]);
        nn::Tensor last({1, cfg_.d_model});
        std::copy(h.row(T0 - 1), h.row(T0 - 1) + cfg_.d_model, last.data.begin());

        std::vector<int> out;
        size_t pos = T0;
        for (;;) {
            nn::Tensor logits = head_.apply(ln_f_.apply(last));
            int best = 0;
            for (size_t j = 1; j < cfg_.vocab_size; ++j)
                if (logits.data[j] > logits.data[best]) best = static_cast<int>(j);
            if (best == eos_id) break;
            out.push_back(best);
            if (out.size() >= max_len || pos >= cfg_.max_seq_len) break;
            nn::Tensor step({1, cfg_.d_model});
            std::vector<int> one = {best};
            nn::Tensor e = tok_emb_.apply(one);
            for (size_t j = 0; j < cfg_.d_model; ++j)
                step.data[j] = e.data[j] + pos_emb_.value.at(pos, j);
            nn::Tensor hh = step;
            for (size_t l = 0; l < blocks_.size(); ++l) hh = blocks_[l].infer(hh, &kv[l]);
            last = hh;
            ++pos;
        }
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    const nn::Tensor& last_logits() const { return logits_; }

private:
    ModelConfig cfg_;
    nn::Embedding tok_emb_;
    nn::Param pos_emb_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm ln_f_;
    nn::Linear head_;
    nn::Tensor logits_, dlogits_;
    size_t fwd_S_ = 0, fwd_M_ = 0;
};

// Full model: tokenizer, modality encoders, decoder.
struct Model {
    ModelConfig cfg;
    Tokenizer tokenizer;
    EncoderSet encoders;
    TripletDecoder decoder;

    static Model init(ModelConfig cfg, const VocabSpec& vocab) {
        Model m;
        m.tokenizer = Tokenizer::build(vocab);
        cfg.vocab_size = m.tokenizer.size();
        cfg.enc.d_model = cfg.d_model;
        cfg.enc.n_image_tokens = cfg.n_image_tokens;
        cfg.validate();
        cfg.enc.validate();
        m.cfg = cfg;
        Rng rng(cfg.seed);
        Rng enc_rng = rng.derive("encoders");
        Rng dec_rng = rng.derive("decoder");
        m.encoders.init(cfg.enc, enc_rng);
        m.decoder.init(cfg, dec_rng);
        return m;
    }

    nn::ParamList params() {
        nn::ParamList out;
        encoders.collect(out);
        decoder.collect(out);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Checkpoint container: "MMCK" magic, version, JSON header, then named MAF2
// arrays (parameters and, optionally, optimizer moments).
// ---------------------------------------------------------------------------

namespace checkpoint {

inline void write_named_array(std::ostream& os, const std::string& name,
                              const nn::Tensor& t) {
    uint16_t len = static_cast<uint16_t>(name.size());
    os.write(reinterpret_cast<const char*>(&len), 2);
    os.write(name.data(), len);
    std::array<uint32_t, 3> dims = {static_cast<uint32_t>(t.rows()),
                                    static_cast<uint32_t>(t.cols()), 1};
    if (t.shape.size() == 1) dims = {static_cast<uint32_t>(t.shape[0]), 1, 1};
    rawio::write_f64_array(os, dims, t.data);
}

inline std::pair<std::string, std::vector<double>> read_named_array(std::istream& is) {
    uint16_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 2);
    if (!is) throw std::runtime_error("checkpoint: truncated array name");
    std::string name(len, '\0');
    is.read(name.data(), len);
    std::array<uint32_t, 3> dims;
    auto data = rawio::read_f64_array(is, dims, "checkpoint array " + name);
    return {name, std::move(data)};
}

struct Meta {
    uint64_t step = 0;
    std::vector<uint64_t> rng_state;
    double best_val = 0.0;
    uint64_t adam_t = 0;
    std::string dataset_ref;   // dataset path or manifest hash
    std::string config_hash;   // run config hash
    int stage = 1;             // training curriculum stage reached
};

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const Meta& meta, nn::Adam* adam = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
    os.write("MMCK", 4);
    uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 4);

    nlohmann::json header = {{"model_config", model.cfg.to_json()},
                             {"step", meta.step},
                             {"rng_state", meta.rng_state},
                             {"best_val", meta.best_val},
                             {"adam_t", adam ? adam->t : meta.adam_t},
                             {"dataset_ref", meta.dataset_ref},
                             {"config_hash", meta.config_hash},
                             {"stage", meta.stage},
                             {"has_adam", adam != nullptr}};
    std::string hs = header.dump();
    uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    auto params = model.params();
    uint32_t n = static_cast<uint32_t>(params.size() * (adam ? 3 : 1));
    os.write(reinterpret_cast<const char*>(&n), 4);
    for (nn::Param* p : params) write_named_array(os, p->name, p->value);
    if (adam)
        for (nn::Param* p : params) {
            write_named_array(os, "adam.m." + p->name, p->m);
            write_named_array(os, "adam.v." + p->name, p->v);
        }
}

struct Loaded {
    Model model;
    Meta meta;
    bool has_adam = false;
};

inline Loaded load_checkpoint(const std::filesystem::path& path, const VocabSpec& vocab) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MMCK", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path.string());
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    auto header = nlohmann::json::parse(hs);

    Loaded out;
    out.model = Model::init(ModelConfig::from_json(header.at("model_config")), vocab);
    out.meta.step = header.at("step").get<uint64_t>();
    out.meta.rng_state = header.at("rng_state").get<std::vector<uint64_t>>();
    out.meta.best_val = header.at("best_val").get<double>();
    out.meta.adam_t = header.at("adam_t").get<uint64_t>();
    out.meta.dataset_ref = header.at("dataset_ref").get<std::string>();
    out.meta.config_hash = header.at("config_hash").get<std::string>();
    out.meta.stage = header.value("stage", 1);
    out.has_adam = header.value("has_adam", false);

    uint32_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 4);
    auto params = out.model.params();
    std::map<std::string, nn::Param*> by_name;
    for (nn::Param* p : params) by_name[p->name] = p;
    for (uint32_t i = 0; i < n; ++i) {
        auto [name, data] = read_named_array(is);
        nn::Tensor* dst = nullptr;
        if (name.rfind("adam.m.", 0) == 0) {
            auto it = by_name.find(name.substr(7));
            if (it != by_name.end()) dst = &it->second->m;
        } else if (name.rfind("adam.v.", 0) == 0) {
            auto it = by_name.find(name.substr(7));
            if (it != by_name.end()) dst = &it->second->v;
        } else {
            auto it = by_name.find(name);
            if (it != by_name.end()) dst = &it->second->value;
        }
        if (!dst) throw std::runtime_error("checkpoint: unknown parameter " + name);
        if (dst->data.size() != data.size())
            throw std::runtime_error("checkpoint: size mismatch for " + name);
        dst->data = std::move(data);
    }
    return out;
}

}  // namespace checkpoint

}  // namespace mmsg
