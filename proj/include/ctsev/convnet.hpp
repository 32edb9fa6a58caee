#pragma once
// Minimal 3D CNN micro-framework: conv / batch-norm / leaky-relu / max-pool
// blocks with manual backpropagation, class-balanced sampling, SGD training
// and a float32 weights file. Values are double in memory; the weights file
// stores float32.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctsev/eval.hpp"
#include "ctsev/volume.hpp"

namespace ctsev {

struct Shape4 {
    int c = 0, d = 0, h = 0, w = 0;
    std::int64_t count() const {
        return static_cast<std::int64_t>(c) * d * h * w;
    }
    bool operator==(const Shape4&) const = default;
};

struct Tensor4 {
    int c = 0, d = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(int c_, int d_, int h_, int w_)
        : c(c_), d(d_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * d_ * h_ * w_, 0.0) {}
    explicit Tensor4(Shape4 s) : Tensor4(s.c, s.d, s.h, s.w) {}

    Shape4 shape() const { return {c, d, h, w}; }
    std::size_t index(int ci, int zi, int yi, int xi) const {
        return ((static_cast<std::size_t>(ci) * d + zi) * h + yi) * w + xi;
    }
    double& at(int ci, int zi, int yi, int xi) { return v[index(ci, zi, yi, xi)]; }
    double at(int ci, int zi, int yi, int xi) const { return v[index(ci, zi, yi, xi)]; }
};

// Two anisotropic blocks (conv 1x3x3, pool 1x2x2) followed by five isotropic
// blocks (conv 3x3x3, pool 2x2x2); same-padding convolutions so pooling alone
// downsamples. Pool output extents use floor division clamped to >= 1.
struct NetworkSpec {
    Shape4 input{2, 128, 384, 384};
    std::vector<int> channels{8, 16, 32, 32, 16, 8, 4};

    static constexpr int kAnisoBlocks = 2;
    static constexpr int kBlocks = 7;
    static constexpr int kFullScaleLinearInput = 144;

    bool anisotropic(int block) const { return block < kAnisoBlocks; }

    Shape4 block_output(int block, Shape4 in) const {
        const int pd = anisotropic(block) ? 1 : 2;
        Shape4 out;
        out.c = channels[block];
        out.d = std::max(1, in.d / pd);
        out.h = std::max(1, in.h / 2);
        out.w = std::max(1, in.w / 2);
        return out;
    }

    // shape propagation without tensor allocation
    std::vector<Shape4> block_shapes() const {
        std::vector<Shape4> shapes;
        Shape4 cur = input;
        for (int b = 0; b < kBlocks; ++b) {
            cur = block_output(b, cur);
            shapes.push_back(cur);
        }
        return shapes;
    }

    int linear_input() const { return static_cast<int>(block_shapes().back().count()); }

    void validate() const {
        if (static_cast<int>(channels.size()) != kBlocks)
            throw std::invalid_argument("channel plan must list all 7 blocks");
        for (int c : channels)
            if (c < 1) throw std::invalid_argument("channel counts must be positive");
        if (input.c != 2) throw std::invalid_argument("input must have 2 channels");
        if (input.d < 1 || input.h < 1 || input.w < 1)
            throw std::invalid_argument("input extents must be positive");
        const Shape4 full{2, 128, 384, 384};
        if (input == full && linear_input() != kFullScaleLinearInput)
            throw std::invalid_argument("full-scale plan must feed a 144-dimensional linear layer");
    }
};

inline NetworkSpec desk_scale_spec() {
    NetworkSpec s;
    s.input = {2, 16, 48, 48};
    return s;
}

struct ParamRef {
    std::string name;
    std::vector<double>* value;
    std::vector<double>* grad;
};

namespace detail {

struct Conv3d {
    int ic = 0, oc = 0, kd = 1, kh = 3, kw = 3;
    std::vector<double> w, b, gw, gb;  // w: [oc][ic][kd][kh][kw]

    void init(int ic_, int oc_, int kd_, std::mt19937_64& rng) {
        ic = ic_;
        oc = oc_;
        kd = kd_;
        w.assign(static_cast<std::size_t>(oc) * ic * kd * kh * kw, 0.0);
        b.assign(oc, 0.0);
        gw.assign(w.size(), 0.0);
        gb.assign(b.size(), 0.0);
        const double fan_in = static_cast<double>(ic) * kd * kh * kw;
        std::normal_distribution<double> g(0.0, std::sqrt(2.0 / fan_in));
        for (auto& x : w) x = g(rng);
    }

    std::size_t widx(int o, int i, int a, int bq, int cq) const {
        return (((static_cast<std::size_t>(o) * ic + i) * kd + a) * kh + bq) * kw + cq;
    }

    // one row-contiguous accumulation pass per kernel tap keeps the inner
    // loop vectorizable
    Tensor4 forward(const Tensor4& x) const {
        Tensor4 y(oc, x.d, x.h, x.w);
        const int rd = kd / 2, rh = kh / 2, rw = kw / 2;
        for (int o = 0; o < oc; ++o) {
            double* ybase = &y.v[y.index(o, 0, 0, 0)];
            std::fill(ybase, ybase + static_cast<std::size_t>(x.d) * x.h * x.w, b[o]);
            for (int i = 0; i < ic; ++i)
                for (int a = 0; a < kd; ++a)
                    for (int bb = 0; bb < kh; ++bb)
                        for (int cc = 0; cc < kw; ++cc) {
                            const int dz = a - rd, dyo = bb - rh, dxo = cc - rw;
                            const double wv = w[widx(o, i, a, bb, cc)];
                            const int z0 = std::max(0, -dz), z1 = std::min(x.d, x.d - dz);
                            const int y0 = std::max(0, -dyo), y1 = std::min(x.h, x.h - dyo);
                            const int x0 = std::max(0, -dxo), x1 = std::min(x.w, x.w - dxo);
                            for (int z = z0; z < z1; ++z)
                                for (int yy = y0; yy < y1; ++yy) {
                                    const double* src = &x.v[x.index(i, z + dz, yy + dyo, dxo)];
                                    double* dst = &y.v[y.index(o, z, yy, 0)];
                                    for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                                }
                        }
        }
        return y;
    }

    // accumulates gw/gb, returns dL/dx
    Tensor4 backward(const Tensor4& x, const Tensor4& dy) {
        Tensor4 dx(x.c, x.d, x.h, x.w);
        const int rd = kd / 2, rh = kh / 2, rw = kw / 2;
        for (int o = 0; o < oc; ++o) {
            const double* gbase = &dy.v[dy.index(o, 0, 0, 0)];
            for (std::size_t s = 0; s < static_cast<std::size_t>(x.d) * x.h * x.w; ++s)
                gb[o] += gbase[s];
            for (int i = 0; i < ic; ++i)
                for (int a = 0; a < kd; ++a)
                    for (int bb = 0; bb < kh; ++bb)
                        for (int cc = 0; cc < kw; ++cc) {
                            const int dz = a - rd, dyo = bb - rh, dxo = cc - rw;
                            const double wv = w[widx(o, i, a, bb, cc)];
                            double gwv = 0;
                            const int z0 = std::max(0, -dz), z1 = std::min(x.d, x.d - dz);
                            const int y0 = std::max(0, -dyo), y1 = std::min(x.h, x.h - dyo);
                            const int x0 = std::max(0, -dxo), x1 = std::min(x.w, x.w - dxo);
                            for (int z = z0; z < z1; ++z)
                                for (int yy = y0; yy < y1; ++yy) {
                                    const double* src = &x.v[x.index(i, z + dz, yy + dyo, dxo)];
                                    double* ddst = &dx.v[dx.index(i, z + dz, yy + dyo, dxo)];
                                    const double* g = &dy.v[dy.index(o, z, yy, 0)];
                                    for (int xx = x0; xx < x1; ++xx) {
                                        gwv += g[xx] * src[xx];
                                        ddst[xx] += g[xx] * wv;
                                    }
                                }
                            gw[widx(o, i, a, bb, cc)] += gwv;
                        }
        }
        return dx;
    }
};

struct BatchNorm3d {
    int c = 0;
    double eps = 1e-5, momentum = 0.1;
    std::vector<double> gamma, beta, g_gamma, g_beta;
    std::vector<double> run_mean, run_var;

    void init(int c_) {
        c = c_;
        gamma.assign(c, 1.0);
        beta.assign(c, 0.0);
        g_gamma.assign(c, 0.0);
        g_beta.assign(c, 0.0);
        run_mean.assign(c, 0.0);
        run_var.assign(c, 1.0);
    }

    struct Cache {
        std::vector<Tensor4> xhat;
        std::vector<double> inv_std;  // per channel
        std::size_t n_per_channel = 0;
    };

    std::vector<Tensor4> forward_train(const std::vector<Tensor4>& xs, Cache& cache) {
        const std::size_t spatial = xs[0].v.size() / c;
        const std::size_t n = xs.size() * spatial;
        std::vector<double> mean(c, 0.0), var(c, 0.0);
        for (const auto& x : xs)
            for (int ci = 0; ci < c; ++ci)
                for (std::size_t s = 0; s < spatial; ++s) mean[ci] += x.v[ci * spatial + s];
        for (int ci = 0; ci < c; ++ci) mean[ci] /= n;
        for (const auto& x : xs)
            for (int ci = 0; ci < c; ++ci)
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double d = x.v[ci * spatial + s] - mean[ci];
                    var[ci] += d * d;
                }
        for (int ci = 0; ci < c; ++ci) var[ci] /= n;  // biased, matches inference

        cache.inv_std.assign(c, 0.0);
        for (int ci = 0; ci < c; ++ci) cache.inv_std[ci] = 1.0 / std::sqrt(var[ci] + eps);
        cache.n_per_channel = n;
        cache.xhat.clear();
        std::vector<Tensor4> ys;
        for (const auto& x : xs) {
            Tensor4 xh(x.c, x.d, x.h, x.w), y(x.c, x.d, x.h, x.w);
            for (int ci = 0; ci < c; ++ci)
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double z = (x.v[ci * spatial + s] - mean[ci]) * cache.inv_std[ci];
                    xh.v[ci * spatial + s] = z;
                    y.v[ci * spatial + s] = gamma[ci] * z + beta[ci];
                }
            cache.xhat.push_back(std::move(xh));
            ys.push_back(std::move(y));
        }
        for (int ci = 0; ci < c; ++ci) {
            run_mean[ci] = (1 - momentum) * run_mean[ci] + momentum * mean[ci];
            run_var[ci] = (1 - momentum) * run_var[ci] + momentum * var[ci];
        }
        return ys;
    }

    Tensor4 forward_infer(const Tensor4& x) const {
        const std::size_t spatial = x.v.size() / c;
        Tensor4 y(x.c, x.d, x.h, x.w);
        for (int ci = 0; ci < c; ++ci) {
            const double inv = 1.0 / std::sqrt(run_var[ci] + eps);
            for (std::size_t s = 0; s < spatial; ++s)
                y.v[ci * spatial + s] = gamma[ci] * (x.v[ci * spatial + s] - run_mean[ci]) * inv + beta[ci];
        }
        return y;
    }

    std::vector<Tensor4> backward(const std::vector<Tensor4>& dys, const Cache& cache) {
        const std::size_t spatial = dys[0].v.size() / c;
        const double n = static_cast<double>(cache.n_per_channel);
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t bi = 0; bi < dys.size(); ++bi)
            for (int ci = 0; ci < c; ++ci)
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double dy = dys[bi].v[ci * spatial + s];
                    sum_dy[ci] += dy;
                    sum_dy_xhat[ci] += dy * cache.xhat[bi].v[ci * spatial + s];
                }
        for (int ci = 0; ci < c; ++ci) {
            g_gamma[ci] += sum_dy_xhat[ci];
            g_beta[ci] += sum_dy[ci];
        }
        std::vector<Tensor4> dxs;
        for (std::size_t bi = 0; bi < dys.size(); ++bi) {
            Tensor4 dx(dys[bi].c, dys[bi].d, dys[bi].h, dys[bi].w);
            for (int ci = 0; ci < c; ++ci) {
                const double k = gamma[ci] * cache.inv_std[ci];
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double dy = dys[bi].v[ci * spatial + s];
                    const double xh = cache.xhat[bi].v[ci * spatial + s];
                    dx.v[ci * spatial + s] =
                        k * (dy - sum_dy[ci] / n - xh * sum_dy_xhat[ci] / n);
                }
            }
            dxs.push_back(std::move(dx));
        }
        return dxs;
    }
};

struct MaxPool3d {
    int pd = 1;  // pool extent along depth; height/width always pool by 2

    Tensor4 forward(const Tensor4& x, std::vector<std::size_t>* argmax) const {
        const int od = std::max(1, x.d / pd), oh = std::max(1, x.h / 2), ow = std::max(1, x.w / 2);
        Tensor4 y(x.c, od, oh, ow);
        if (argmax) argmax->assign(y.v.size(), 0);
        for (int ci = 0; ci < x.c; ++ci)
            for (int z = 0; z < od; ++z)
                for (int yy = 0; yy < oh; ++yy)
                    for (int xx = 0; xx < ow; ++xx) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_idx = 0;
                        for (int a = z * pd; a < std::min(x.d, z * pd + pd); ++a)
                            for (int bq = yy * 2; bq < std::min(x.h, yy * 2 + 2); ++bq)
                                for (int cq = xx * 2; cq < std::min(x.w, xx * 2 + 2); ++cq) {
                                    const std::size_t idx = x.index(ci, a, bq, cq);
                                    if (x.v[idx] > best) {
                                        best = x.v[idx];
                                        best_idx = idx;
                                    }
                                }
                        y.at(ci, z, yy, xx) = best;
                        if (argmax) (*argmax)[y.index(ci, z, yy, xx)] = best_idx;
                    }
        return y;
    }

    Tensor4 backward(const Tensor4& dy, const std::vector<std::size_t>& argmax,
                     Shape4 in_shape) const {
        Tensor4 dx(in_shape);
        for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[argmax[i]] += dy.v[i];
        return dx;
    }
};

inline void leaky_relu_forward(Tensor4& x, double slope) {
    for (auto& v : x.v)
        if (v < 0) v *= slope;
}

}  // namespace detail

class Network {
  public:
    NetworkSpec spec;
    double leaky_slope = 0.01;

    explicit Network(const NetworkSpec& s, std::uint64_t seed = 0) : spec(s) {
        spec.validate();
        std::mt19937_64 rng(seed ^ 0x3dc0de5eedULL);
        int ic = spec.input.c;
        for (int b = 0; b < NetworkSpec::kBlocks; ++b) {
            detail::Conv3d conv;
            conv.init(ic, spec.channels[b], spec.anisotropic(b) ? 1 : 3, rng);
            convs_.push_back(std::move(conv));
            detail::BatchNorm3d bn;
            bn.init(spec.channels[b]);
            bns_.push_back(std::move(bn));
            pools_.push_back({spec.anisotropic(b) ? 1 : 2});
            ic = spec.channels[b];
        }
        // linear layer starts at zero: symmetric initialization, initial
        // logit 0 and BCE loss exactly log 2
        fc_w_.assign(spec.linear_input(), 0.0);
        fc_b_.assign(1, 0.0);
        fc_gw_.assign(fc_w_.size(), 0.0);
        fc_gb_.assign(1, 0.0);
    }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> ps;
        for (int b = 0; b < NetworkSpec::kBlocks; ++b) {
            const std::string tag = "block" + std::to_string(b);
            ps.push_back({tag + ".conv.w", &convs_[b].w, &convs_[b].gw});
            ps.push_back({tag + ".conv.b", &convs_[b].b, &convs_[b].gb});
            ps.push_back({tag + ".bn.gamma", &bns_[b].gamma, &bns_[b].g_gamma});
            ps.push_back({tag + ".bn.beta", &bns_[b].beta, &bns_[b].g_beta});
        }
        ps.push_back({"fc.w", &fc_w_, &fc_gw_});
        ps.push_back({"fc.b", &fc_b_, &fc_gb_});
        return ps;
    }

    // running statistics, not trainable; serialized with the model
    std::vector<std::vector<double>*> running_stats() {
        std::vector<std::vector<double>*> rs;
        for (auto& bn : bns_) {
            rs.push_back(&bn.run_mean);
            rs.push_back(&bn.run_var);
        }
        return rs;
    }

    void zero_grad() {
        for (auto& c : convs_) {
            std::fill(c.gw.begin(), c.gw.end(), 0.0);
            std::fill(c.gb.begin(), c.gb.end(), 0.0);
        }
        for (auto& bn : bns_) {
            std::fill(bn.g_gamma.begin(), bn.g_gamma.end(), 0.0);
            std::fill(bn.g_beta.begin(), bn.g_beta.end(), 0.0);
        }
        std::fill(fc_gw_.begin(), fc_gw_.end(), 0.0);
        fc_gb_[0] = 0.0;
    }

    // training-mode forward over a mini-batch; caches everything backward needs
    std::vector<double> forward_train(const std::vector<Tensor4>& batch) {
        check_input(batch);
        conv_in_.assign(NetworkSpec::kBlocks, {});
        bn_cache_.assign(NetworkSpec::kBlocks, {});
        act_in_.assign(NetworkSpec::kBlocks, {});
        pool_argmax_.assign(NetworkSpec::kBlocks, {});
        pool_in_shape_.assign(NetworkSpec::kBlocks, {});

        std::vector<Tensor4> cur = batch;
        for (int b = 0; b < NetworkSpec::kBlocks; ++b) {
            conv_in_[b] = cur;
            std::vector<Tensor4> post;
            for (const auto& x : cur) post.push_back(convs_[b].forward(x));
            cur = bns_[b].forward_train(post, bn_cache_[b]);
            act_in_[b] = cur;
            for (auto& x : cur) detail::leaky_relu_forward(x, leaky_slope);
            pool_in_shape_[b] = cur[0].shape();
            pool_argmax_[b].resize(cur.size());
            std::vector<Tensor4> pooled;
            for (std::size_t i = 0; i < cur.size(); ++i)
                pooled.push_back(pools_[b].forward(cur[i], &pool_argmax_[b][i]));
            cur = std::move(pooled);
        }
        flat_in_ = cur;
        std::vector<double> logits;
        for (const auto& x : cur) {
            double s = fc_b_[0];
            for (std::size_t i = 0; i < x.v.size(); ++i) s += fc_w_[i] * x.v[i];
            logits.push_back(s);
        }
        return logits;
    }

    // accumulates parameter gradients from dL/dlogit per sample
    void backward(const std::vector<double>& dlogits) {
        std::vector<Tensor4> grad;
        for (std::size_t i = 0; i < dlogits.size(); ++i) {
            const Tensor4& x = flat_in_[i];
            Tensor4 dx(x.shape());
            for (std::size_t j = 0; j < x.v.size(); ++j) {
                fc_gw_[j] += dlogits[i] * x.v[j];
                dx.v[j] = dlogits[i] * fc_w_[j];
            }
            fc_gb_[0] += dlogits[i];
            grad.push_back(std::move(dx));
        }
        for (int b = NetworkSpec::kBlocks - 1; b >= 0; --b) {
            for (std::size_t i = 0; i < grad.size(); ++i)
                grad[i] = pools_[b].backward(grad[i], pool_argmax_[b][i], pool_in_shape_[b]);
            for (std::size_t i = 0; i < grad.size(); ++i)
                for (std::size_t j = 0; j < grad[i].v.size(); ++j)
                    if (act_in_[b][i].v[j] < 0) grad[i].v[j] *= leaky_slope;
            grad = bns_[b].backward(grad, bn_cache_[b]);
            for (std::size_t i = 0; i < grad.size(); ++i)
                grad[i] = convs_[b].backward(conv_in_[b][i], grad[i]);
        }
    }

    // inference with running statistics; no caches touched
    double predict_logit(const Tensor4& x) const {
        if (!(x.shape() == spec.input)) throw std::invalid_argument("input shape mismatch");
        Tensor4 cur = x;
        for (int b = 0; b < NetworkSpec::kBlocks; ++b) {
            cur = convs_[b].forward(cur);
            cur = bns_[b].forward_infer(cur);
            detail::leaky_relu_forward(cur, leaky_slope);
            cur = pools_[b].forward(cur, nullptr);
        }
        double s = fc_b_[0];
        for (std::size_t i = 0; i < cur.v.size(); ++i) s += fc_w_[i] * cur.v[i];
        return s;
    }

    double predict_score(const Tensor4& x) const {
        const double z = predict_logit(x);
        return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }

  private:
    void check_input(const std::vector<Tensor4>& batch) const {
        if (batch.empty()) throw std::invalid_argument("empty batch");
        for (const auto& x : batch)
            if (!(x.shape() == spec.input)) throw std::invalid_argument("input shape mismatch");
    }

    std::vector<detail::Conv3d> convs_;
    std::vector<detail::BatchNorm3d> bns_;
    std::vector<detail::MaxPool3d> pools_;
    std::vector<double> fc_w_, fc_gw_, fc_b_, fc_gb_;

    // forward caches
    std::vector<std::vector<Tensor4>> conv_in_, act_in_;
    std::vector<detail::BatchNorm3d::Cache> bn_cache_;
    std::vector<std::vector<std::vector<std::size_t>>> pool_argmax_;
    std::vector<Shape4> pool_in_shape_;
    std::vector<Tensor4> flat_in_;

    friend void save_weights(Network& net, const std::string& path);
    friend Network load_weights(const std::string& path);
};

// ---------------------------------------------------------------------------
// Preprocessing.
// ---------------------------------------------------------------------------

constexpr double kPreprocessHuLo = -1024.0, kPreprocessHuHi = 600.0;

// Resample to 3x1x1 mm, mask CT outside the lung to air, center-crop/pad to
// the target extents; channel 0 = normalized HU, channel 1 = probability.
inline Tensor4 preprocess_case(const VoxelVolume& ct, const RegionLabels& lobes,
                               const VoxelVolume& prob, Shape4 target) {
    if (!(ct.dims == lobes.dims) || !(ct.dims == prob.dims))
        throw std::invalid_argument("ct/lobes/prob dims mismatch");
    const Spacing res{3.0, 1.0, 1.0};
    VoxelVolume rct = resample_trilinear(ct, res);
    RegionLabels rlobes = resample_nearest(lobes, res);
    VoxelVolume rprob = resample_trilinear(prob, res);

    bool any_lung = false;
    for (std::size_t i = 0; i < rlobes.labels.size(); ++i) {
        if (rlobes.labels[i] >= 1 && rlobes.labels[i] <= 5) {
            any_lung = true;
        } else {
            rct.data[i] = static_cast<float>(kPreprocessHuLo);
            rprob.data[i] = 0.f;
        }
    }
    if (!any_lung) throw std::invalid_argument("empty lung after resampling");

    const BoundingBox bbox = lung_bounding_box(rlobes);
    const Dims out_dims{target.d, target.h, target.w};
    const VoxelVolume cct = crop_pad_to(rct, bbox, out_dims, static_cast<float>(kPreprocessHuLo));
    const VoxelVolume cprob = crop_pad_to(rprob, bbox, out_dims, 0.f);

    Tensor4 t(2, target.d, target.h, target.w);
    const std::size_t n = cct.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double hu = cct.data[i];
        t.v[i] = std::clamp((hu - kPreprocessHuLo) / (kPreprocessHuHi - kPreprocessHuLo), 0.0, 1.0);
        t.v[n + i] = std::clamp(static_cast<double>(cprob.data[i]), 0.0, 1.0);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Sampling and training.
// ---------------------------------------------------------------------------

// Coin-flips the class, then draws a uniform member of it.
class BalancedSampler {
  public:
    BalancedSampler(const std::vector<int>& labels, std::uint64_t seed) : rng_(seed ^ 0x5a317eULL) {
        for (std::size_t i = 0; i < labels.size(); ++i)
            (labels[i] ? pos_ : neg_).push_back(static_cast<int>(i));
        if (pos_.empty() || neg_.empty())
            throw std::invalid_argument("both classes must be present");
    }

    int next() {
        const bool take_pos = (rng_() >> 40) & 1;
        const auto& pool = take_pos ? pos_ : neg_;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        return pool[pick(rng_)];
    }

  private:
    std::vector<int> pos_, neg_;
    std::mt19937_64 rng_;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 4;
    double lr = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double early_stop_val_auc = 0;  // 0 disables; stops once validation AUC reaches it
};

struct TrainResult {
    std::vector<double> loss_history;  // mean batch loss per epoch
    std::vector<double> val_auc;       // per epoch, empty without validation data
    int best_epoch = -1;
};

namespace detail {

inline std::vector<std::vector<double>> snapshot_params(Network& net) {
    std::vector<std::vector<double>> snap;
    for (const auto& p : net.parameters()) snap.push_back(*p.value);
    for (const auto* rs : net.running_stats()) snap.push_back(*rs);
    return snap;
}

inline void restore_params(Network& net, const std::vector<std::vector<double>>& snap) {
    std::size_t i = 0;
    for (const auto& p : net.parameters()) *p.value = snap[i++];
    for (auto* rs : net.running_stats()) *rs = snap[i++];
}

}  // namespace detail

inline TrainResult train(Network& net, const std::vector<Tensor4>& X, const std::vector<int>& y,
                         const std::vector<Tensor4>& val_X, const std::vector<int>& val_y,
                         const TrainConfig& cfg) {
    if (X.empty() || X.size() != y.size()) throw std::invalid_argument("bad training set");
    if (cfg.lr < 0) throw std::invalid_argument("learning rate must be nonnegative");
    BalancedSampler sampler(y, cfg.seed);
    const int steps = std::max<int>(1, (static_cast<int>(X.size()) + cfg.batch_size - 1) / cfg.batch_size);

    std::vector<ParamRef> params = net.parameters();
    std::vector<std::vector<double>> velocity;
    for (const auto& p : params) velocity.emplace_back(p.value->size(), 0.0);

    TrainResult res;
    std::vector<std::vector<double>> best_snapshot;
    double best_auc = -1;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0;
        for (int step = 0; step < steps; ++step) {
            std::vector<Tensor4> batch;
            std::vector<int> labels;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const int i = sampler.next();
                batch.push_back(X[i]);
                labels.push_back(y[i]);
            }
            net.zero_grad();
            const std::vector<double> logits = net.forward_train(batch);
            double loss = 0;
            std::vector<double> dlogits(logits.size());
            for (std::size_t i = 0; i < logits.size(); ++i) {
                const double z = logits[i];
                loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) -
                        labels[i] * z;
                const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                dlogits[i] = (p - labels[i]) / logits.size();
            }
            loss /= logits.size();
            if (!std::isfinite(loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            net.backward(dlogits);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                auto& v = velocity[pi];
                auto& val = *params[pi].value;
                const auto& g = *params[pi].grad;
                for (std::size_t j = 0; j < val.size(); ++j) {
                    v[j] = cfg.momentum * v[j] - cfg.lr * g[j];
                    val[j] += v[j];
                }
            }
            epoch_loss += loss;
        }
        res.loss_history.push_back(epoch_loss / steps);

        if (!val_X.empty()) {
            std::vector<double> scores;
            for (const auto& x : val_X) scores.push_back(net.predict_score(x));
            const double auc = roc_curve(scores, val_y).auc;
            res.val_auc.push_back(auc);
            if (auc > best_auc) {
                best_auc = auc;
                res.best_epoch = epoch;
                best_snapshot = detail::snapshot_params(net);
            }
            if (cfg.early_stop_val_auc > 0 && auc >= cfg.early_stop_val_auc) break;
        }
    }
    if (!best_snapshot.empty()) detail::restore_params(net, best_snapshot);
    return res;
}

// ---------------------------------------------------------------------------
// Weights file: uint32 little-endian header length, JSON header, float32
// little-endian parameter payload.
// ---------------------------------------------------------------------------

constexpr int kWeightsFormatVersion = 1;

inline void save_weights(Network& net, const std::string& path) {
    nlohmann::ordered_json header;
    header["version"] = kWeightsFormatVersion;
    header["input"] = {net.spec.input.c, net.spec.input.d, net.spec.input.h, net.spec.input.w};
    header["channels"] = net.spec.channels;
    std::vector<const std::vector<double>*> blobs;
    nlohmann::ordered_json plist = nlohmann::ordered_json::array();
    for (const auto& p : net.parameters()) {
        plist.push_back({{"name", p.name}, {"size", p.value->size()}});
        blobs.push_back(p.value);
    }
    for (const auto* rs : net.running_stats()) {
        plist.push_back({{"name", "bn.running"}, {"size", rs->size()}});
        blobs.push_back(rs);
    }
    header["params"] = plist;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write: " + path);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), hs.size());
    for (const auto* blob : blobs) {
        std::vector<float> fl(blob->begin(), blob->end());
        f.write(reinterpret_cast<const char*>(fl.data()), fl.size() * sizeof(float));
    }
}

inline Network load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::uint32_t hlen = 0;
    if (!f.read(reinterpret_cast<char*>(&hlen), 4)) throw std::runtime_error("truncated weights file");
    std::string hs(hlen, '\0');
    if (!f.read(hs.data(), hlen)) throw std::runtime_error("truncated weights header");
    const nlohmann::json header = nlohmann::json::parse(hs);
    if (header.at("version").get<int>() != kWeightsFormatVersion)
        throw std::runtime_error("unsupported weights format version");

    NetworkSpec spec;
    const auto in = header.at("input");
    spec.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>(), in.at(3).get<int>()};
    spec.channels = header.at("channels").get<std::vector<int>>();
    Network net(spec, 0);

    std::vector<std::vector<double>*> blobs;
    for (const auto& p : net.parameters()) blobs.push_back(p.value);
    for (auto* rs : net.running_stats()) blobs.push_back(rs);
    const auto plist = header.at("params");
    if (plist.size() != blobs.size()) throw std::runtime_error("weights parameter list mismatch");
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        const std::size_t sz = plist.at(i).at("size").get<std::size_t>();
        if (sz != blobs[i]->size()) throw std::runtime_error("weights blob size mismatch");
        std::vector<float> fl(sz);
        if (!f.read(reinterpret_cast<char*>(fl.data()), sz * sizeof(float)))
            throw std::runtime_error("truncated weights payload");
        for (std::size_t j = 0; j < sz; ++j) (*blobs[i])[j] = fl[j];
    }
    return net;
}

}  // namespace ctsev
