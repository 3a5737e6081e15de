#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmsg/common.hpp"

namespace mmsg::nn {

// ---------------------------------------------------------------------------
// Tensor: dense row-major double storage. Training math runs at 64-bit
// precision throughout so finite-difference checks are meaningful.
// ---------------------------------------------------------------------------

struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        data.assign(n, 0.0);
    }
    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

    size_t size() const { return data.size(); }
    size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double* row(size_t i) { return data.data() + i * cols(); }
    const double* row(size_t i) const { return data.data() + i * cols(); }

    double& at(size_t i, size_t j) { return data[i * cols() + j]; }
    double at(size_t i, size_t j) const { return data[i * cols() + j]; }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// C += A * B, shapes [m,k] x [k,n]
inline void matmul_acc(const double* A, const double* B, double* C, size_t m, size_t k,
                       size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            double av = a[p];
            const double* b = B + p * n;
            for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

inline Tensor matmul(const Tensor& A, const Tensor& B) {
    Tensor C({A.rows(), B.cols()});
    matmul_acc(A.data.data(), B.data.data(), C.data.data(), A.rows(), A.cols(), B.cols());
    return C;
}

// C += Aᵀ * B, A is [m,k], B is [m,n], C is [k,n]
inline void matmul_at_acc(const double* A, const double* B, double* C, size_t m, size_t k,
                          size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* b = B + i * n;
        for (size_t p = 0; p < k; ++p) {
            double av = a[p];
            double* c = C + p * n;
            for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A * Bᵀ, A is [m,k], B is [n,k], C is [m,n]
inline void matmul_bt_acc(const double* A, const double* B, double* C, size_t m, size_t k,
                          size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    Tensor value, grad, m, v;

    void resize(std::vector<size_t> shape) {
        value = Tensor(shape);
        grad = Tensor(shape);
        m = Tensor(shape);
        v = Tensor(std::move(shape));
    }

    void init_gaussian(Rng& rng, double stddev) {
        for (double& w : value.data) w = rng.normal(0.0, stddev);
    }

    size_t size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;

inline void zero_grads(std::span<Param* const> params) {
    for (Param* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Adam with global-norm clipping
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 1.0;  // 0 disables clipping
};

struct Adam {
    AdamConfig cfg;
    uint64_t t = 0;

    double grad_norm(std::span<Param* const> params) const {
        double ss = 0.0;
        for (const Param* p : params)
            for (double g : p->grad.data) ss += g * g;
        return std::sqrt(ss);
    }

    void step(std::span<Param* const> params, double lr_now) {
        ++t;
        double scale = 1.0;
        if (cfg.clip > 0.0) {
            double norm = grad_norm(params);
            if (norm > cfg.clip) scale = cfg.clip / norm;
        }
        double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
        for (Param* p : params) {
            for (size_t i = 0; i < p->value.size(); ++i) {
                double g = p->grad.data[i] * scale;
                double& m = p->m.data[i];
                double& v = p->v.data[i];
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
                double mhat = m / bc1;
                double vhat = v / bc2;
                p->value.data[i] -= lr_now * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }
};

// Cosine decay with linear warmup.
inline double lr_schedule(double base_lr, uint64_t step, uint64_t total_steps,
                          uint64_t warmup) {
    if (total_steps == 0) return base_lr;
    if (warmup > 0 && step < warmup) return base_lr * double(step + 1) / double(warmup);
    double p = total_steps > warmup
                   ? double(step - warmup) / double(total_steps - warmup)
                   : 1.0;
    p = std::min(1.0, std::max(0.0, p));
    return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793 * p));
}

// ---------------------------------------------------------------------------
// Layers. Forward pushes a cache entry, backward pops it; calls must unwind
// in exact reverse order (LIFO), which the encoder/decoder code follows.
// ---------------------------------------------------------------------------

struct Linear {
    Param W, b;
    std::vector<Tensor> x_cache;

    void init(const std::string& name, size_t din, size_t dout, Rng& rng) {
        W.name = name + ".w";
        b.name = name + ".b";
        W.resize({din, dout});
        b.resize({dout});
        W.init_gaussian(rng, 1.0 / std::sqrt(double(din)));
    }

    void collect(ParamList& out) {
        out.push_back(&W);
        out.push_back(&b);
    }

    Tensor apply(const Tensor& x) const {
        Tensor y({x.rows(), W.value.cols()});
        for (size_t i = 0; i < y.rows(); ++i)
            for (size_t j = 0; j < y.cols(); ++j) y.at(i, j) = b.value.data[j];
        matmul_acc(x.data.data(), W.value.data.data(), y.data.data(), x.rows(), x.cols(),
                   W.value.cols());
        return y;
    }

    Tensor forward(const Tensor& x) {
        x_cache.push_back(x);
        return apply(x);
    }

    Tensor backward(const Tensor& dy) {
        Tensor x = std::move(x_cache.back());
        x_cache.pop_back();
        matmul_at_acc(x.data.data(), dy.data.data(), W.grad.data.data(), x.rows(), x.cols(),
                      dy.cols());
        for (size_t i = 0; i < dy.rows(); ++i)
            for (size_t j = 0; j < dy.cols(); ++j) b.grad.data[j] += dy.at(i, j);
        Tensor dx({x.rows(), x.cols()});
        matmul_bt_acc(dy.data.data(), W.value.data.data(), dx.data.data(), dy.rows(),
                      dy.cols(), x.cols());
        return dx;
    }
};

struct LayerNorm {
    Param gamma, beta;
    static constexpr double kEps = 1e-5;
    struct Cache {
        Tensor xhat;
        std::vector<double> inv_std;
    };
    std::vector<Cache> caches;

    void init(const std::string& name, size_t d) {
        gamma.name = name + ".gamma";
        beta.name = name + ".beta";
        gamma.resize({d});
        beta.resize({d});
        std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.0);
    }

    void collect(ParamList& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    Tensor apply(const Tensor& x, Cache* cache = nullptr) const {
        size_t T = x.rows(), d = x.cols();
        Tensor y({T, d});
        Tensor xhat({T, d});
        std::vector<double> inv_std(T);
        for (size_t i = 0; i < T; ++i) {
            const double* xi = x.row(i);
            double mu = 0;
            for (size_t j = 0; j < d; ++j) mu += xi[j];
            mu /= double(d);
            double var = 0;
            for (size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= double(d);
            double is = 1.0 / std::sqrt(var + kEps);
            inv_std[i] = is;
            for (size_t j = 0; j < d; ++j) {
                double xh = (xi[j] - mu) * is;
                xhat.at(i, j) = xh;
                y.at(i, j) = gamma.value.data[j] * xh + beta.value.data[j];
            }
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv_std);
        }
        return y;
    }

    Tensor forward(const Tensor& x) {
        caches.emplace_back();
        return apply(x, &caches.back());
    }

    Tensor backward(const Tensor& dy) {
        Cache c = std::move(caches.back());
        caches.pop_back();
        size_t T = dy.rows(), d = dy.cols();
        Tensor dx({T, d});
        for (size_t i = 0; i < T; ++i) {
            const double* dyi = dy.row(i);
            const double* xh = c.xhat.row(i);
            double sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (size_t j = 0; j < d; ++j) {
                double dxh = dyi[j] * gamma.value.data[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[j];
                gamma.grad.data[j] += dyi[j] * xh[j];
                beta.grad.data[j] += dyi[j];
            }
            for (size_t j = 0; j < d; ++j) {
                double dxh = dyi[j] * gamma.value.data[j];
                dx.at(i, j) = c.inv_std[i] / double(d) *
                              (double(d) * dxh - sum_dxhat - xh[j] * sum_dxhat_xhat);
            }
        }
        return dx;
    }
};

inline Tensor relu(const Tensor& x, Tensor* mask = nullptr) {
    Tensor y = x;
    if (mask) *mask = Tensor(x.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        if (y.data[i] > 0) {
            if (mask) mask->data[i] = 1.0;
        } else {
            y.data[i] = 0.0;
        }
    }
    return y;
}

struct Embedding {
    Param table;  // [vocab, d]
    std::vector<std::vector<int>> id_cache;

    void init(const std::string& name, size_t vocab, size_t d, Rng& rng) {
        table.name = name;
        table.resize({vocab, d});
        table.init_gaussian(rng, 0.02);
    }

    void collect(ParamList& out) { out.push_back(&table); }

    Tensor apply(std::span<const int> ids) const {
        size_t d = table.value.cols();
        Tensor y({ids.size(), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            const double* row = table.value.row(static_cast<size_t>(ids[i]));
            std::copy(row, row + d, y.row(i));
        }
        return y;
    }

    Tensor forward(std::span<const int> ids) {
        id_cache.emplace_back(ids.begin(), ids.end());
        return apply(ids);
    }

    void backward(const Tensor& dy) {
        std::vector<int> ids = std::move(id_cache.back());
        id_cache.pop_back();
        size_t d = table.value.cols();
        for (size_t i = 0; i < ids.size(); ++i) {
            double* g = table.grad.row(static_cast<size_t>(ids[i]));
            const double* dyi = dy.row(i);
            for (size_t j = 0; j < d; ++j) g[j] += dyi[j];
        }
    }
};

// Multi-head self-attention over a [T, d] sequence. Optional causal mask.
struct MultiheadSelfAttention {
    size_t d_model = 0, n_heads = 0, dh = 0;
    bool causal = true;
    Linear qkv;   // d -> 3d
    Linear proj;  // d -> d

    struct Cache {
        Tensor q, k, v;               // [T, d] each (heads packed)
        std::vector<Tensor> probs;    // per head [T, T]
    };
    std::vector<Cache> caches;

    void init(const std::string& name, size_t d, size_t heads, bool causal_mask, Rng& rng) {
        if (d % heads != 0)
            throw std::invalid_argument("attention: d_model not divisible by n_heads");
        d_model = d;
        n_heads = heads;
        dh = d / heads;
        causal = causal_mask;
        qkv.init(name + ".qkv", d, 3 * d, rng);
        proj.init(name + ".proj", d, d, rng);
    }

    void collect(ParamList& out) {
        qkv.collect(out);
        proj.collect(out);
    }

    Tensor forward(const Tensor& x) {
        size_t T = x.rows();
        Tensor fused = qkv.forward(x);  // [T, 3d]
        Cache c;
        c.q = Tensor({T, d_model});
        c.k = Tensor({T, d_model});
        c.v = Tensor({T, d_model});
        for (size_t i = 0; i < T; ++i) {
            const double* f = fused.row(i);
            std::copy(f, f + d_model, c.q.row(i));
            std::copy(f + d_model, f + 2 * d_model, c.k.row(i));
            std::copy(f + 2 * d_model, f + 3 * d_model, c.v.row(i));
        }
        double inv_sqrt = 1.0 / std::sqrt(double(dh));
        Tensor out({T, d_model});
        c.probs.resize(n_heads);
        for (size_t h = 0; h < n_heads; ++h) {
            Tensor& P = c.probs[h];
            P = Tensor({T, T});
            size_t off = h * dh;
            for (size_t i = 0; i < T; ++i) {
                size_t jmax = causal ? i + 1 : T;
                const double* qi = c.q.row(i) + off;
                double mx = -1e300;
                for (size_t j = 0; j < jmax; ++j) {
                    const double* kj = c.k.row(j) + off;
                    double s = 0;
                    for (size_t p = 0; p < dh; ++p) s += qi[p] * kj[p];
                    s *= inv_sqrt;
                    P.at(i, j) = s;
                    mx = std::max(mx, s);
                }
                double z = 0;
                for (size_t j = 0; j < jmax; ++j) {
                    double e = std::exp(P.at(i, j) - mx);
                    P.at(i, j) = e;
                    z += e;
                }
                double* oi = out.row(i) + off;
                for (size_t j = 0; j < jmax; ++j) {
                    double pj = P.at(i, j) / z;
                    P.at(i, j) = pj;
                    const double* vj = c.v.row(j) + off;
                    for (size_t p = 0; p < dh; ++p) oi[p] += pj * vj[p];
                }
            }
        }
        caches.push_back(std::move(c));
        return proj.forward(out);
    }

    Tensor backward(const Tensor& dy) {
        Tensor dout = proj.backward(dy);
        Cache c = std::move(caches.back());
        caches.pop_back();
        size_t T = dout.rows();
        double inv_sqrt = 1.0 / std::sqrt(double(dh));
        Tensor dq({T, d_model}), dk({T, d_model}), dv({T, d_model});
        for (size_t h = 0; h < n_heads; ++h) {
            const Tensor& P = c.probs[h];
            size_t off = h * dh;
            for (size_t i = 0; i < T; ++i) {
                size_t jmax = causal ? i + 1 : T;
                const double* doi = dout.row(i) + off;
                // dP and dV
                std::vector<double> dp(jmax);
                double dot_sum = 0.0;
                for (size_t j = 0; j < jmax; ++j) {
                    const double* vj = c.v.row(j) + off;
                    double acc = 0;
                    for (size_t p = 0; p < dh; ++p) acc += doi[p] * vj[p];
                    dp[j] = acc;
                    double pj = P.at(i, j);
                    double* dvj = dv.row(j) + off;
                    for (size_t p = 0; p < dh; ++p) dvj[p] += pj * doi[p];
                    dot_sum += acc * pj;
                }
                // softmax backward -> dscores; chain into q, k
                const double* qi = c.q.row(i) + off;
                double* dqi = dq.row(i) + off;
                for (size_t j = 0; j < jmax; ++j) {
                    double ds = P.at(i, j) * (dp[j] - dot_sum) * inv_sqrt;
                    const double* kj = c.k.row(j) + off;
                    double* dkj = dk.row(j) + off;
                    for (size_t p = 0; p < dh; ++p) {
                        dqi[p] += ds * kj[p];
                        dkj[p] += ds * qi[p];
                    }
                }
            }
        }
        Tensor dfused({T, 3 * d_model});
        for (size_t i = 0; i < T; ++i) {
            double* f = dfused.row(i);
            std::copy(dq.row(i), dq.row(i) + d_model, f);
            std::copy(dk.row(i), dk.row(i) + d_model, f + d_model);
            std::copy(dv.row(i), dv.row(i) + d_model, f + 2 * d_model);
        }
        return qkv.backward(dfused);
    }

    // --- inference with a grown key/value cache (no gradients) ---
    struct KV {
        Tensor k, v;  // [T_so_far, d]
    };

    // x: [Tnew, d] appended after kv->k.rows() existing positions (causal only)
    Tensor infer(const Tensor& x, KV* kv) const {
        size_t T0 = kv ? kv->k.rows() : 0;
        size_t Tn = x.rows();
        Tensor fused = qkv.apply(x);
        Tensor k_all({T0 + Tn, d_model}), v_all({T0 + Tn, d_model});
        if (kv && T0 > 0) {
            std::copy(kv->k.data.begin(), kv->k.data.end(), k_all.data.begin());
            std::copy(kv->v.data.begin(), kv->v.data.end(), v_all.data.begin());
        }
        for (size_t i = 0; i < Tn; ++i) {
            const double* f = fused.row(i);
            std::copy(f + d_model, f + 2 * d_model, k_all.row(T0 + i));
            std::copy(f + 2 * d_model, f + 3 * d_model, v_all.row(T0 + i));
        }
        double inv_sqrt = 1.0 / std::sqrt(double(dh));
        Tensor out({Tn, d_model});
        for (size_t h = 0; h < n_heads; ++h) {
            size_t off = h * dh;
            for (size_t i = 0; i < Tn; ++i) {
                size_t jmax = causal ? T0 + i + 1 : T0 + Tn;
                const double* qi = fused.row(i) + off;
                std::vector<double> scores(jmax);
                double mx = -1e300;
                for (size_t j = 0; j < jmax; ++j) {
                    const double* kj = k_all.row(j) + off;
                    double s = 0;
                    for (size_t p = 0; p < dh; ++p) s += qi[p] * kj[p];
                    s *= inv_sqrt;
                    scores[j] = s;
                    mx = std::max(mx, s);
                }
                double z = 0;
                for (size_t j = 0; j < jmax; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    z += scores[j];
                }
                double* oi = out.row(i) + off;
                for (size_t j = 0; j < jmax; ++j) {
                    double pj = scores[j] / z;
                    const double* vj = v_all.row(j) + off;
                    for (size_t p = 0; p < dh; ++p) oi[p] += pj * vj[p];
                }
            }
        }
        if (kv) {
            kv->k = std::move(k_all);
            kv->v = std::move(v_all);
        }
        return proj.apply(out);
    }
};

// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiheadSelfAttention attn;
    Linear fc1, fc2;
    std::vector<Tensor> relu_masks;

    void init(const std::string& name, size_t d, size_t heads, size_t d_ff, bool causal,
              Rng& rng) {
        ln1.init(name + ".ln1", d);
        ln2.init(name + ".ln2", d);
        attn.init(name + ".attn", d, heads, causal, rng);
        fc1.init(name + ".fc1", d, d_ff, rng);
        fc2.init(name + ".fc2", d_ff, d, rng);
    }

    void collect(ParamList& out) {
        ln1.collect(out);
        attn.collect(out);
        ln2.collect(out);
        fc1.collect(out);
        fc2.collect(out);
    }

    Tensor forward(const Tensor& x) {
        Tensor a = attn.forward(ln1.forward(x));
        Tensor x1 = x;
        for (size_t i = 0; i < x1.data.size(); ++i) x1.data[i] += a.data[i];
        Tensor mask;
        Tensor h = relu(fc1.forward(ln2.forward(x1)), &mask);
        relu_masks.push_back(std::move(mask));
        Tensor m = fc2.forward(h);
        Tensor y = x1;
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += m.data[i];
        return y;
    }

    Tensor backward(const Tensor& dy) {
        Tensor dh = fc2.backward(dy);
        Tensor mask = std::move(relu_masks.back());
        relu_masks.pop_back();
        for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] *= mask.data[i];
        Tensor dx1 = ln2.backward(fc1.backward(dh));
        for (size_t i = 0; i < dx1.data.size(); ++i) dx1.data[i] += dy.data[i];
        Tensor da = attn.backward(dx1);
        Tensor dx = ln1.backward(da);
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx1.data[i];
        return dx;
    }

    struct KV {
        MultiheadSelfAttention::KV attn_kv;
    };

    Tensor infer(const Tensor& x, KV* kv) const {
        Tensor a = attn.infer(ln1.apply(x), kv ? &kv->attn_kv : nullptr);
        Tensor x1 = x;
        for (size_t i = 0; i < x1.data.size(); ++i) x1.data[i] += a.data[i];
        Tensor h = relu(fc1.apply(ln2.apply(x1)));
        Tensor m = fc2.apply(h);
        for (size_t i = 0; i < x1.data.size(); ++i) x1.data[i] += m.data[i];
        return x1;
    }
};

// 1-D convolution over [Cin, L] with stride; valid padding.
struct Conv1d {
    size_t cin = 0, cout = 0, ksize = 0, stride = 1;
    Param W, b;  // W: [cin*ksize, cout]
    std::vector<Tensor> col_cache;
    std::vector<size_t> len_cache;

    void init(const std::string& name, size_t in, size_t out, size_t k, size_t s, Rng& rng) {
        cin = in;
        cout = out;
        ksize = k;
        stride = s;
        W.name = name + ".w";
        b.name = name + ".b";
        W.resize({cin * ksize, cout});
        b.resize({cout});
        W.init_gaussian(rng, 1.0 / std::sqrt(double(cin * ksize)));
    }

    void collect(ParamList& out) {
        out.push_back(&W);
        out.push_back(&b);
    }

    size_t out_len(size_t L) const { return L < ksize ? 0 : (L - ksize) / stride + 1; }

    // x: [cin, L] -> y: [cout, Lout]
    Tensor forward(const Tensor& x, bool keep_cache = true) {
        size_t L = x.cols();
        size_t Lout = out_len(L);
        if (Lout == 0)
            throw std::invalid_argument("conv1d: input length " + std::to_string(L) +
                                        " shorter than kernel");
        Tensor col({Lout, cin * ksize});
        for (size_t t = 0; t < Lout; ++t) {
            double* c = col.row(t);
            for (size_t ci = 0; ci < cin; ++ci)
                for (size_t k = 0; k < ksize; ++k)
                    c[ci * ksize + k] = x.at(ci, t * stride + k);
        }
        Tensor ym = matmul(col, W.value);  // [Lout, cout]
        Tensor y({cout, Lout});
        for (size_t t = 0; t < Lout; ++t)
            for (size_t co = 0; co < cout; ++co)
                y.at(co, t) = ym.at(t, co) + b.value.data[co];
        if (keep_cache) {
            col_cache.push_back(std::move(col));
            len_cache.push_back(L);
        }
        return y;
    }

    Tensor backward(const Tensor& dy) {  // dy: [cout, Lout]
        Tensor col = std::move(col_cache.back());
        col_cache.pop_back();
        size_t L = len_cache.back();
        len_cache.pop_back();
        size_t Lout = dy.cols();
        Tensor dym({Lout, cout});
        for (size_t t = 0; t < Lout; ++t)
            for (size_t co = 0; co < cout; ++co) {
                double g = dy.at(co, t);
                dym.at(t, co) = g;
                b.grad.data[co] += g;
            }
        matmul_at_acc(col.data.data(), dym.data.data(), W.grad.data.data(), Lout,
                      cin * ksize, cout);
        Tensor dcol({Lout, cin * ksize});
        matmul_bt_acc(dym.data.data(), W.value.data.data(), dcol.data.data(), Lout, cout,
                      cin * ksize);
        Tensor dx({cin, L});
        for (size_t t = 0; t < Lout; ++t) {
            const double* c = dcol.row(t);
            for (size_t ci = 0; ci < cin; ++ci)
                for (size_t k = 0; k < ksize; ++k)
                    dx.at(ci, t * stride + k) += c[ci * ksize + k];
        }
        return dx;
    }
};

// 2-D convolution over [Cin, H, W]; valid padding, square kernel.
struct Conv2d {
    size_t cin = 0, cout = 0, ksize = 0, stride = 1;
    Param W, b;  // W: [cin*k*k, cout]
    struct Cache {
        Tensor col;
        size_t h = 0, w = 0;
    };
    std::vector<Cache> caches;

    void init(const std::string& name, size_t in, size_t out, size_t k, size_t s, Rng& rng) {
        cin = in;
        cout = out;
        ksize = k;
        stride = s;
        W.name = name + ".w";
        b.name = name + ".b";
        W.resize({cin * ksize * ksize, cout});
        b.resize({cout});
        W.init_gaussian(rng, 1.0 / std::sqrt(double(cin * ksize * ksize)));
    }

    void collect(ParamList& out) {
        out.push_back(&W);
        out.push_back(&b);
    }

    size_t out_dim(size_t d) const { return d < ksize ? 0 : (d - ksize) / stride + 1; }

    // x: [cin, H, W] flattened rows = cin, cols = H*W with shape info in args
    Tensor forward(const Tensor& x, size_t H, size_t Wd, bool keep_cache = true) {
        size_t Ho = out_dim(H), Wo = out_dim(Wd);
        if (Ho == 0 || Wo == 0)
            throw std::invalid_argument("conv2d: input smaller than kernel");
        Tensor col({Ho * Wo, cin * ksize * ksize});
        for (size_t oy = 0; oy < Ho; ++oy)
            for (size_t ox = 0; ox < Wo; ++ox) {
                double* c = col.row(oy * Wo + ox);
                size_t idx = 0;
                for (size_t ci = 0; ci < cin; ++ci)
                    for (size_t ky = 0; ky < ksize; ++ky)
                        for (size_t kx = 0; kx < ksize; ++kx)
                            c[idx++] = x.data[(ci * H + oy * stride + ky) * Wd +
                                              ox * stride + kx];
            }
        Tensor ym = matmul(col, W.value);  // [Ho*Wo, cout]
        Tensor y({cout, Ho * Wo});
        for (size_t t = 0; t < Ho * Wo; ++t)
            for (size_t co = 0; co < cout; ++co)
                y.at(co, t) = ym.at(t, co) + b.value.data[co];
        if (keep_cache) caches.push_back({std::move(col), H, Wd});
        return y;  // logical shape [cout, Ho, Wo]
    }

    Tensor backward(const Tensor& dy) {
        Cache cache = std::move(caches.back());
        caches.pop_back();
        size_t H = cache.h, Wd = cache.w;
        size_t Ho = out_dim(H), Wo = out_dim(Wd);
        Tensor dym({Ho * Wo, cout});
        for (size_t t = 0; t < Ho * Wo; ++t)
            for (size_t co = 0; co < cout; ++co) {
                double g = dy.at(co, t);
                dym.at(t, co) = g;
                b.grad.data[co] += g;
            }
        matmul_at_acc(cache.col.data.data(), dym.data.data(), W.grad.data.data(), Ho * Wo,
                      cin * ksize * ksize, cout);
        Tensor dcol({Ho * Wo, cin * ksize * ksize});
        matmul_bt_acc(dym.data.data(), W.value.data.data(), dcol.data.data(), Ho * Wo, cout,
                      cin * ksize * ksize);
        Tensor dx({cin, H * Wd});
        for (size_t oy = 0; oy < Ho; ++oy)
            for (size_t ox = 0; ox < Wo; ++ox) {
                const double* c = dcol.row(oy * Wo + ox);
                size_t idx = 0;
                for (size_t ci = 0; ci < cin; ++ci)
                    for (size_t ky = 0; ky < ksize; ++ky)
                        for (size_t kx = 0; kx < ksize; ++kx)
                            dx.data[(ci * H + oy * stride + ky) * Wd + ox * stride + kx] +=
                                c[idx++];
            }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Cross entropy on masked positions
// ---------------------------------------------------------------------------

// logits: [T, V]; targets/mask length T. Returns mean loss over masked
// positions and writes dlogits (already divided by the mask count).
inline double softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                                    std::span<const uint8_t> mask, Tensor& dlogits) {
    size_t T = logits.rows(), V = logits.cols();
    dlogits = Tensor({T, V});
    size_t n = 0;
    for (size_t i = 0; i < T; ++i)
        if (mask[i]) ++n;
    if (n == 0) return 0.0;
    double loss = 0.0;
    double inv = 1.0 / double(n);
    for (size_t i = 0; i < T; ++i) {
        if (!mask[i]) continue;
        const double* li = logits.row(i);
        double mx = li[0];
        for (size_t j = 1; j < V; ++j) mx = std::max(mx, li[j]);
        double z = 0;
        for (size_t j = 0; j < V; ++j) z += std::exp(li[j] - mx);
        double logz = std::log(z) + mx;
        int y = targets[i];
        loss += (logz - li[y]) * inv;
        double* dl = dlogits.row(i);
        for (size_t j = 0; j < V; ++j)
            dl[j] = (std::exp(li[j] - logz) - (static_cast<int>(j) == y ? 1.0 : 0.0)) * inv;
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    size_t checked = 0;
};

// compute_loss_and_grads(): zeroes grads, runs forward+backward, returns loss.
// loss_only(): pure forward pass. Entries per group are checked exhaustively
// up to max_per_group, beyond that a deterministic stride sample. Pairs that
// agree within atol count as exact (central differences on a structurally
// zero gradient produce pure roundoff noise; softmax shift directions are the
// canonical case). A disagreeing entry is re-estimated at eps/4: a relu kink
// inside the original bracket disappears once the bracket shrinks past it,
// while a genuine gradient bug is step-size independent and stays wrong.
inline GradCheckReport grad_check(std::span<Param* const> params,
                                  const std::function<double()>& compute_loss_and_grads,
                                  const std::function<double()>& loss_only, double eps,
                                  size_t max_per_group = 24, double atol = 1e-8) {
    GradCheckReport rep;
    compute_loss_and_grads();
    std::vector<std::vector<double>> saved;
    for (const Param* p : params) saved.push_back(p->grad.data);

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        size_t n = p->value.size();
        size_t step = n <= max_per_group ? 1 : n / max_per_group;
        for (size_t i = 0; i < n; i += step) {
            double an = saved[pi][i];
            auto central = [&](double h) {
                double orig = p->value.data[i];
                p->value.data[i] = orig + h;
                double lp = loss_only();
                p->value.data[i] = orig - h;
                double lm = loss_only();
                p->value.data[i] = orig;
                return (lp - lm) / (2.0 * h);
            };
            auto rel_of = [&](double fd) {
                double diff = std::abs(fd - an);
                return diff <= atol ? 0.0 : diff / std::max(std::abs(fd), std::abs(an));
            };
            double rel = rel_of(central(eps));
            for (double h = eps / 4.0; rel > 1e-5 && h >= eps / 64.0; h /= 4.0)
                rel = std::min(rel, rel_of(central(h)));
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace mmsg::nn
