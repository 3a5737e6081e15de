#pragma once

#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/array.hpp"
#include "mmsg/nn.hpp"
#include "mmsg/synth.hpp"

namespace mmsg {

struct EncoderConfig {
    size_t d_model = 64;
    // images
    uint32_t image_h = 64, image_w = 64;
    size_t patch = 16;
    size_t img_enc_layers = 1, img_enc_heads = 2;
    size_t pooler_layers = 1, pooler_heads = 2;
    size_t n_image_tokens = 16;
    size_t max_views = 6;
    bool image_positional = true;
    bool pooler_positional = true;
    // point cloud
    size_t pc_hidden = 32;
    // audio
    uint32_t sample_rate = 4000;
    size_t audio_frame = 128, audio_hop = 64, audio_bins = 16;
    size_t audio_channels = 16;
    bool audio_normalize = true;
    // masks
    size_t mask_channels1 = 6, mask_channels2 = 12;
    size_t max_masks = 8;

    size_t patches_per_image() const { return (image_h / patch) * (image_w / patch); }

    void validate() const {
        if (image_h % patch != 0 || image_w % patch != 0)
            throw std::invalid_argument("encoder config: image size not divisible by patch");
        if (n_image_tokens > patches_per_image())
            throw std::invalid_argument(
                "encoder config: n_image_tokens exceeds patches of a single view");
        if (max_views < 1) throw std::invalid_argument("encoder config: max_views < 1");
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},
                {"image_h", image_h},
                {"image_w", image_w},
                {"patch", patch},
                {"img_enc_layers", img_enc_layers},
                {"img_enc_heads", img_enc_heads},
                {"pooler_layers", pooler_layers},
                {"pooler_heads", pooler_heads},
                {"n_image_tokens", n_image_tokens},
                {"max_views", max_views},
                {"image_positional", image_positional},
                {"pooler_positional", pooler_positional},
                {"pc_hidden", pc_hidden},
                {"sample_rate", sample_rate},
                {"audio_frame", audio_frame},
                {"audio_hop", audio_hop},
                {"audio_bins", audio_bins},
                {"audio_channels", audio_channels},
                {"audio_normalize", audio_normalize},
                {"mask_channels1", mask_channels1},
                {"mask_channels2", mask_channels2},
                {"max_masks", max_masks}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.d_model = j.at("d_model").get<size_t>();
        c.image_h = j.at("image_h").get<uint32_t>();
        c.image_w = j.at("image_w").get<uint32_t>();
        c.patch = j.at("patch").get<size_t>();
        c.img_enc_layers = j.at("img_enc_layers").get<size_t>();
        c.img_enc_heads = j.at("img_enc_heads").get<size_t>();
        c.pooler_layers = j.at("pooler_layers").get<size_t>();
        c.pooler_heads = j.at("pooler_heads").get<size_t>();
        c.n_image_tokens = j.at("n_image_tokens").get<size_t>();
        c.max_views = j.at("max_views").get<size_t>();
        c.image_positional = j.at("image_positional").get<bool>();
        c.pooler_positional = j.at("pooler_positional").get<bool>();
        c.pc_hidden = j.at("pc_hidden").get<size_t>();
        c.sample_rate = j.at("sample_rate").get<uint32_t>();
        c.audio_frame = j.at("audio_frame").get<size_t>();
        c.audio_hop = j.at("audio_hop").get<size_t>();
        c.audio_bins = j.at("audio_bins").get<size_t>();
        c.audio_channels = j.at("audio_channels").get<size_t>();
        c.audio_normalize = j.at("audio_normalize").get<bool>();
        c.mask_channels1 = j.at("mask_channels1").get<size_t>();
        c.mask_channels2 = j.at("mask_channels2").get<size_t>();
        c.max_masks = j.at("max_masks").get<size_t>();
        return c;
    }
};

struct ModalityTokens {
    std::string modality;  // images | pointcloud | audio | masks
    nn::Tensor tokens;     // [n, d]
};

// ---------------------------------------------------------------------------
// Image encoder: patchify each view, embed, run a small per-image attention
// encoder, concatenate patch embeddings across views, pool with an attention
// stack and keep the first N outputs.
// ---------------------------------------------------------------------------

class ImageEncoder {
public:
    void init(const EncoderConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        size_t d_patch = cfg.patch * cfg.patch * 3;
        patch_embed_.init("img.patch_embed", d_patch, cfg.d_model, rng);
        pos_img_.name = "img.pos";
        pos_img_.resize({cfg.patches_per_image(), cfg.d_model});
        pos_img_.init_gaussian(rng, 0.02);
        enc_.resize(cfg.img_enc_layers);
        for (size_t l = 0; l < enc_.size(); ++l)
            enc_[l].init("img.enc" + std::to_string(l), cfg.d_model, cfg.img_enc_heads,
                         cfg.d_model * 4, /*causal=*/false, rng);
        pooler_pos_.name = "img.pooler_pos";
        pooler_pos_.resize({cfg.max_views * cfg.patches_per_image(), cfg.d_model});
        pooler_pos_.init_gaussian(rng, 0.02);
        pooler_.resize(cfg.pooler_layers);
        for (size_t l = 0; l < pooler_.size(); ++l)
            pooler_[l].init("img.pooler" + std::to_string(l), cfg.d_model, cfg.pooler_heads,
                            cfg.d_model * 4, /*causal=*/false, rng);
    }

    void collect(nn::ParamList& out) {
        patch_embed_.collect(out);
        out.push_back(&pos_img_);
        for (auto& b : enc_) b.collect(out);
        out.push_back(&pooler_pos_);
        for (auto& b : pooler_) b.collect(out);
    }

    nn::Tensor patchify(const ArrayF32& img) const {
        size_t ph = cfg_.image_h / cfg_.patch, pw = cfg_.image_w / cfg_.patch;
        size_t d_patch = cfg_.patch * cfg_.patch * 3;
        nn::Tensor out({ph * pw, d_patch});
        for (size_t py = 0; py < ph; ++py)
            for (size_t px = 0; px < pw; ++px) {
                double* o = out.row(py * pw + px);
                size_t idx = 0;
                for (size_t y = 0; y < cfg_.patch; ++y)
                    for (size_t x = 0; x < cfg_.patch; ++x)
                        for (size_t c = 0; c < 3; ++c)
                            o[idx++] = img.at(static_cast<uint32_t>(py * cfg_.patch + y),
                                              static_cast<uint32_t>(px * cfg_.patch + x),
                                              static_cast<uint32_t>(c));
            }
        return out;
    }

    // 1..max_views images of uniform shape -> exactly n_image_tokens tokens.
    ModalityTokens encode(std::span<const ArrayF32> views, bool train = true) {
        if (views.empty()) throw std::invalid_argument("encode_images: zero images");
        if (views.size() > cfg_.max_views)
            throw std::invalid_argument("encode_images: too many views");
        for (const auto& v : views)
            if (v.dims[0] != cfg_.image_h || v.dims[1] != cfg_.image_w || v.dims[2] != 3)
                throw std::invalid_argument("encode_images: non-uniform image shape");

        size_t ppi = cfg_.patches_per_image();
        nn::Tensor all({views.size() * ppi, cfg_.d_model});
        for (size_t v = 0; v < views.size(); ++v) {
            nn::Tensor p = patchify(views[v]);
            nn::Tensor e = train ? patch_embed_.forward(p) : patch_embed_.apply(p);
            if (cfg_.image_positional)
                for (size_t i = 0; i < ppi; ++i)
                    for (size_t j = 0; j < cfg_.d_model; ++j)
                        e.at(i, j) += pos_img_.value.at(i, j);
            for (auto& b : enc_) e = train ? b.forward(e) : b.infer(e, nullptr);
            std::copy(e.data.begin(), e.data.end(), all.row(v * ppi));
        }
        if (cfg_.pooler_positional) {
            for (size_t i = 0; i < all.rows(); ++i)
                for (size_t j = 0; j < cfg_.d_model; ++j)
                    all.at(i, j) += pooler_pos_.value.at(i, j);
        }
        for (auto& b : pooler_) all = train ? b.forward(all) : b.infer(all, nullptr);
        nn::Tensor tokens({cfg_.n_image_tokens, cfg_.d_model});
        std::copy(all.data.begin(), all.data.begin() + tokens.size(), tokens.data.begin());
        if (train) n_views_cache_.push_back(views.size());
        return {"images", std::move(tokens)};
    }

    void backward(const nn::Tensor& dtokens) {
        size_t n_views = n_views_cache_.back();
        n_views_cache_.pop_back();
        size_t ppi = cfg_.patches_per_image();
        nn::Tensor dall({n_views * ppi, cfg_.d_model});
        std::copy(dtokens.data.begin(), dtokens.data.end(), dall.data.begin());
        for (size_t l = pooler_.size(); l-- > 0;) dall = pooler_[l].backward(dall);
        if (cfg_.pooler_positional) {
            for (size_t i = 0; i < dall.rows(); ++i)
                for (size_t j = 0; j < cfg_.d_model; ++j)
                    pooler_pos_.grad.at(i, j) += dall.at(i, j);
        }
        for (size_t v = n_views; v-- > 0;) {
            nn::Tensor de({ppi, cfg_.d_model});
            std::copy(dall.row(v * ppi), dall.row(v * ppi) + ppi * cfg_.d_model,
                      de.data.begin());
            for (size_t l = enc_.size(); l-- > 0;) de = enc_[l].backward(de);
            if (cfg_.image_positional)
                for (size_t i = 0; i < ppi; ++i)
                    for (size_t j = 0; j < cfg_.d_model; ++j)
                        pos_img_.grad.at(i, j) += de.at(i, j);
            (void)patch_embed_.backward(de);
        }
    }

private:
    EncoderConfig cfg_;
    nn::Linear patch_embed_;
    nn::Param pos_img_, pooler_pos_;
    std::vector<nn::TransformerBlock> enc_, pooler_;
    std::vector<size_t> n_views_cache_;
};

// ---------------------------------------------------------------------------
// Point cloud encoder: per-point MLP, order-invariant max pooling, head.
// ---------------------------------------------------------------------------

class PointCloudEncoder {
public:
    void init(const EncoderConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        mlp1_.init("pc.mlp1", 6, cfg.pc_hidden, rng);
        mlp2_.init("pc.mlp2", cfg.pc_hidden, cfg.pc_hidden, rng);
        head1_.init("pc.head1", cfg.pc_hidden, cfg.pc_hidden, rng);
        head2_.init("pc.head2", cfg.pc_hidden, cfg.d_model, rng);
    }

    void collect(nn::ParamList& out) {
        mlp1_.collect(out);
        mlp2_.collect(out);
        head1_.collect(out);
        head2_.collect(out);
    }

    ModalityTokens encode(const ArrayF32& pc, bool train = true) {
        if (pc.dims[0] < 1 || pc.dims[1] != 6)
            throw std::invalid_argument("encode_pointcloud: need P x 6 with P >= 1");
        size_t P = pc.dims[0];
        nn::Tensor x({P, 6});
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = pc.data[i];

        nn::Tensor m1, m2, m3;
        nn::Tensor h1 = nn::relu(train ? mlp1_.forward(x) : mlp1_.apply(x), &m1);
        nn::Tensor h2 = nn::relu(train ? mlp2_.forward(h1) : mlp2_.apply(h1), &m2);
        nn::Tensor pooled({1, cfg_.pc_hidden});
        std::vector<size_t> argmax(cfg_.pc_hidden, 0);
        for (size_t j = 0; j < cfg_.pc_hidden; ++j) {
            double best = h2.at(0, j);
            for (size_t i = 1; i < P; ++i)
                if (h2.at(i, j) > best) {
                    best = h2.at(i, j);
                    argmax[j] = i;
                }
            pooled.at(0, j) = best;
        }
        nn::Tensor g1 = nn::relu(train ? head1_.forward(pooled) : head1_.apply(pooled), &m3);
        nn::Tensor token = train ? head2_.forward(g1) : head2_.apply(g1);
        if (train) {
            Cache c;
            c.m1 = std::move(m1);
            c.m2 = std::move(m2);
            c.m3 = std::move(m3);
            c.argmax = std::move(argmax);
            c.n_points = P;
            caches_.push_back(std::move(c));
        }
        return {"pointcloud", std::move(token)};
    }

    void backward(const nn::Tensor& dtoken) {
        Cache c = std::move(caches_.back());
        caches_.pop_back();
        nn::Tensor dg1 = head2_.backward(dtoken);
        for (size_t i = 0; i < dg1.data.size(); ++i) dg1.data[i] *= c.m3.data[i];
        nn::Tensor dpooled = head1_.backward(dg1);
        nn::Tensor dh2({c.n_points, cfg_.pc_hidden});
        for (size_t j = 0; j < cfg_.pc_hidden; ++j)
            dh2.at(c.argmax[j], j) = dpooled.at(0, j);
        for (size_t i = 0; i < dh2.data.size(); ++i) dh2.data[i] *= c.m2.data[i];
        nn::Tensor dh1 = mlp2_.backward(dh2);
        for (size_t i = 0; i < dh1.data.size(); ++i) dh1.data[i] *= c.m1.data[i];
        (void)mlp1_.backward(dh1);
    }

private:
    struct Cache {
        nn::Tensor m1, m2, m3;
        std::vector<size_t> argmax;
        size_t n_points = 0;
    };
    EncoderConfig cfg_;
    nn::Linear mlp1_, mlp2_, head1_, head2_;
    std::vector<Cache> caches_;
};

// ---------------------------------------------------------------------------
// Audio encoder: fixed magnitude-spectrum frames, 1-D conv stack, mean pool.
// ---------------------------------------------------------------------------

class AudioEncoder {
public:
    void init(const EncoderConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        conv1_.init("audio.conv1", cfg.audio_bins, cfg.audio_channels, 5, 2, rng);
        conv2_.init("audio.conv2", cfg.audio_channels, cfg.audio_channels, 5, 2, rng);
        head_.init("audio.head", cfg.audio_channels, cfg.d_model, rng);
    }

    void collect(nn::ParamList& out) {
        conv1_.collect(out);
        conv2_.collect(out);
        head_.collect(out);
    }

    // fixed (parameter-free) front end: per-frame DFT magnitudes at
    // audio_bins frequencies, log compressed
    nn::Tensor features(std::span<const float> wave) const {
        std::vector<double> w(wave.begin(), wave.end());
        if (cfg_.audio_normalize) {
            double ss = 0;
            for (double x : w) ss += x * x;
            double rms = std::sqrt(ss / double(w.size()));
            double scale = 1.0 / std::max(rms, 1e-6);
            for (double& x : w) x *= scale;
        }
        size_t T = (w.size() - cfg_.audio_frame) / cfg_.audio_hop + 1;
        nn::Tensor feats({cfg_.audio_bins, T});
        double sr = static_cast<double>(cfg_.sample_rate);
        for (size_t b = 0; b < cfg_.audio_bins; ++b) {
            double freq = (b + 1) * (sr / 2.0) / double(cfg_.audio_bins + 1);
            double omega = 2.0 * 3.141592653589793 * freq / sr;
            for (size_t t = 0; t < T; ++t) {
                const double* frame = w.data() + t * cfg_.audio_hop;
                double re = 0, im = 0;
                for (size_t i = 0; i < cfg_.audio_frame; ++i) {
                    re += frame[i] * std::cos(omega * double(i));
                    im += frame[i] * std::sin(omega * double(i));
                }
                double mag = std::sqrt(re * re + im * im) / double(cfg_.audio_frame);
                feats.at(b, t) = std::log1p(10.0 * mag);
            }
        }
        return feats;
    }

    ModalityTokens encode(std::span<const float> wave, bool train = true) {
        if (wave.size() != cfg_.sample_rate)
            throw std::invalid_argument("encode_audio: expected exactly one second of samples");
        nn::Tensor f = features(wave);
        nn::Tensor m1, m2;
        nn::Tensor c1 = nn::relu(conv1_.forward(f, train), &m1);
        nn::Tensor c2 = nn::relu(conv2_.forward(c1, train), &m2);
        size_t L = c2.cols();
        nn::Tensor pooled({1, cfg_.audio_channels});
        for (size_t ch = 0; ch < cfg_.audio_channels; ++ch) {
            double acc = 0;
            for (size_t t = 0; t < L; ++t) acc += c2.at(ch, t);
            pooled.at(0, ch) = acc / double(L);
        }
        nn::Tensor token = train ? head_.forward(pooled) : head_.apply(pooled);
        if (train) {
            Cache c;
            c.m1 = std::move(m1);
            c.m2 = std::move(m2);
            c.pooled_len = L;
            caches_.push_back(std::move(c));
        }
        return {"audio", std::move(token)};
    }

    void backward(const nn::Tensor& dtoken) {
        Cache c = std::move(caches_.back());
        caches_.pop_back();
        nn::Tensor dpooled = head_.backward(dtoken);
        nn::Tensor dc2({cfg_.audio_channels, c.pooled_len});
        for (size_t ch = 0; ch < cfg_.audio_channels; ++ch)
            for (size_t t = 0; t < c.pooled_len; ++t)
                dc2.at(ch, t) = dpooled.at(0, ch) / double(c.pooled_len);
        for (size_t i = 0; i < dc2.data.size(); ++i) dc2.data[i] *= c.m2.data[i];
        nn::Tensor dc1 = conv2_.backward(dc2);
        for (size_t i = 0; i < dc1.data.size(); ++i) dc1.data[i] *= c.m1.data[i];
        (void)conv1_.backward(dc1);
    }

private:
    struct Cache {
        nn::Tensor m1, m2;
        size_t pooled_len = 0;
    };
    EncoderConfig cfg_;
    nn::Conv1d conv1_, conv2_;
    nn::Linear head_;
    std::vector<Cache> caches_;
};

// ---------------------------------------------------------------------------
// Mask encoder: one token per binary mask through a small conv net.
// ---------------------------------------------------------------------------

class MaskEncoder {
public:
    void init(const EncoderConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        conv1_.init("mask.conv1", 1, cfg.mask_channels1, 3, 2, rng);
        conv2_.init("mask.conv2", cfg.mask_channels1, cfg.mask_channels2, 3, 2, rng);
        head_.init("mask.head", cfg.mask_channels2, cfg.d_model, rng);
    }

    void collect(nn::ParamList& out) {
        conv1_.collect(out);
        conv2_.collect(out);
        head_.collect(out);
    }

    // k masks in, k tokens out, order preserved; empty list is valid.
    ModalityTokens encode(std::span<const BitMask> masks, bool train = true) {
        if (masks.size() > cfg_.max_masks)
            throw std::invalid_argument("encode_masks: too many masks");
        nn::Tensor tokens({masks.size(), cfg_.d_model});
        size_t count = 0;
        for (const BitMask& m : masks) {
            if (m.height != cfg_.image_h || m.width != cfg_.image_w)
                throw std::invalid_argument("encode_masks: mask shape mismatch");
            nn::Tensor x({1, size_t(m.height) * m.width});
            for (uint32_t y = 0; y < m.height; ++y)
                for (uint32_t x0 = 0; x0 < m.width; ++x0)
                    x.data[size_t(y) * m.width + x0] = m.get(y, x0) ? 1.0 : 0.0;
            nn::Tensor m1, m2;
            nn::Tensor c1 = nn::relu(conv1_.forward(x, m.height, m.width, train), &m1);
            size_t h1 = conv1_.out_dim(m.height), w1 = conv1_.out_dim(m.width);
            nn::Tensor c2 = nn::relu(conv2_.forward(c1, h1, w1, train), &m2);
            size_t sp = c2.cols();
            nn::Tensor pooled({1, cfg_.mask_channels2});
            for (size_t ch = 0; ch < cfg_.mask_channels2; ++ch) {
                double acc = 0;
                for (size_t i = 0; i < sp; ++i) acc += c2.at(ch, i);
                pooled.at(0, ch) = acc / double(sp);
            }
            nn::Tensor tok = train ? head_.forward(pooled) : head_.apply(pooled);
            std::copy(tok.data.begin(), tok.data.end(), tokens.row(count));
            if (train) {
                Cache c;
                c.m1 = std::move(m1);
                c.m2 = std::move(m2);
                c.spatial = sp;
                caches_.push_back(std::move(c));
            }
            ++count;
        }
        return {"masks", std::move(tokens)};
    }

    void backward(const nn::Tensor& dtokens) {
        for (size_t k = dtokens.rows(); k-- > 0;) {
            Cache c = std::move(caches_.back());
            caches_.pop_back();
            nn::Tensor dtok({1, cfg_.d_model});
            std::copy(dtokens.row(k), dtokens.row(k) + cfg_.d_model, dtok.data.begin());
            nn::Tensor dpooled = head_.backward(dtok);
            nn::Tensor dc2({cfg_.mask_channels2, c.spatial});
            for (size_t ch = 0; ch < cfg_.mask_channels2; ++ch)
                for (size_t i = 0; i < c.spatial; ++i)
                    dc2.at(ch, i) = dpooled.at(0, ch) / double(c.spatial);
            for (size_t i = 0; i < dc2.data.size(); ++i) dc2.data[i] *= c.m2.data[i];
            nn::Tensor dc1 = conv2_.backward(dc2);
            for (size_t i = 0; i < dc1.data.size(); ++i) dc1.data[i] *= c.m1.data[i];
            (void)conv1_.backward(dc1);
        }
    }

private:
    struct Cache {
        nn::Tensor m1, m2;
        size_t spatial = 0;
    };
    EncoderConfig cfg_;
    nn::Conv2d conv1_, conv2_;
    nn::Linear head_;
    std::vector<Cache> caches_;
};

// ---------------------------------------------------------------------------
// Text-native modality serializers
// ---------------------------------------------------------------------------

// Last five sentences, oldest first.
inline std::string serialize_transcript(std::span<const synth::TranscriptLine> lines) {
    if (lines.empty()) return "speech: none";
    std::vector<const synth::TranscriptLine*> ptrs;
    for (const auto& l : lines) ptrs.push_back(&l);
    std::stable_sort(ptrs.begin(), ptrs.end(),
                     [](const synth::TranscriptLine* a, const synth::TranscriptLine* b) {
                         return a->timestamp < b->timestamp;
                     });
    size_t start = ptrs.size() > 5 ? ptrs.size() - 5 : 0;
    std::string out = "speech:";
    for (size_t i = start; i < ptrs.size(); ++i) {
        out += ' ';
        out += ptrs[i]->text;
        if (i + 1 < ptrs.size()) out += " .";
    }
    return out;
}

inline std::string serialize_robot_log(const synth::RobotLogRecord& rec) {
    std::string action = rec.action.empty() ? "none" : rec.action;
    std::string phase = rec.phase.empty() ? "none" : rec.phase;
    return "robot: phase=" + phase + " action=" + action;
}

// One clause per visible tool, name-sorted: millimetre translation at one
// decimal, unit quaternion at four decimals.
inline std::string serialize_tracker(std::span<const synth::TrackerRecord> records) {
    if (records.empty()) return "tracker: none";
    std::vector<const synth::TrackerRecord*> ptrs;
    for (const auto& r : records) {
        double n2 = 0;
        for (double q : r.rotation) n2 += q * q;
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
            throw std::invalid_argument("serialize_tracker: non-unit quaternion for " + r.tool);
        ptrs.push_back(&r);
    }
    std::sort(ptrs.begin(), ptrs.end(),
              [](const synth::TrackerRecord* a, const synth::TrackerRecord* b) {
                  return a->tool < b->tool;
              });
    std::string out = "tracker:";
    char buf[160];
    for (size_t i = 0; i < ptrs.size(); ++i) {
        const auto& r = *ptrs[i];
        std::snprintf(buf, sizeof(buf), " %s t=(%.1f,%.1f,%.1f) q=(%.4f,%.4f,%.4f,%.4f)",
                      r.tool.c_str(), r.translation[0], r.translation[1], r.translation[2],
                      r.rotation[0], r.rotation[1], r.rotation[2], r.rotation[3]);
        out += buf;
        if (i + 1 < ptrs.size()) out += " |";
    }
    return out;
}

// ---------------------------------------------------------------------------
// EncoderSet: all modality encoders plus their projections into d_model.
// ---------------------------------------------------------------------------

class EncoderSet {
public:
    void init(const EncoderConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        cfg_.validate();
        images.init(cfg, rng);
        pointcloud.init(cfg, rng);
        audio.init(cfg, rng);
        masks.init(cfg, rng);
        Rng prng = rng.derive("projections");
        proj_images_.init("proj.images", cfg.d_model, cfg.d_model, prng);
        proj_pointcloud_.init("proj.pointcloud", cfg.d_model, cfg.d_model, prng);
        proj_audio_.init("proj.audio", cfg.d_model, cfg.d_model, prng);
        proj_masks_.init("proj.masks", cfg.d_model, cfg.d_model, prng);
    }

    void collect(nn::ParamList& out) {
        images.collect(out);
        pointcloud.collect(out);
        audio.collect(out);
        masks.collect(out);
        proj_images_.collect(out);
        proj_pointcloud_.collect(out);
        proj_audio_.collect(out);
        proj_masks_.collect(out);
    }

    nn::Linear& projection(const std::string& tag) {
        if (tag == "images") return proj_images_;
        if (tag == "pointcloud") return proj_pointcloud_;
        if (tag == "audio") return proj_audio_;
        if (tag == "masks") return proj_masks_;
        throw std::invalid_argument("project_tokens: unknown modality tag " + tag);
    }

    // Affine map per token; token count preserved.
    ModalityTokens project_tokens(const ModalityTokens& t, bool train = true) {
        nn::Linear& p = projection(t.modality);
        return {t.modality, train ? p.forward(t.tokens) : p.apply(t.tokens)};
    }

    nn::Tensor project_backward(const std::string& tag, const nn::Tensor& dy) {
        return projection(tag).backward(dy);
    }

    const EncoderConfig& config() const { return cfg_; }

    ImageEncoder images;
    PointCloudEncoder pointcloud;
    AudioEncoder audio;
    MaskEncoder masks;

private:
    EncoderConfig cfg_;
    nn::Linear proj_images_, proj_pointcloud_, proj_audio_, proj_masks_;
};

}  // namespace mmsg
