#include "segxal/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <Eigen/Core>

#include "segxal/rng.hpp"
#include "segxal/serialize.hpp"

namespace segxal {

using nlohmann::json;

ModelConfig ModelConfig::full_scale_preset(int num_classes) {
    ModelConfig c;
    c.num_classes = num_classes;
    c.height = 256;
    c.width = 512;
    c.levels = 3;
    c.base_channels = 16;
    c.learning_rate = 1e-4;
    c.momentum = 0.9;
    c.batch_size = 16;
    c.epochs_per_cycle = 100;
    return c;
}

ModelConfig ModelConfig::desk_preset(int num_classes) {
    ModelConfig c;
    c.num_classes = num_classes;
    c.height = 64;
    c.width = 128;
    c.levels = 3;
    c.base_channels = 8;
    c.learning_rate = 0.01;
    c.momentum = 0.9;
    c.batch_size = 4;
    c.epochs_per_cycle = 5;
    return c;
}

std::vector<std::string> ModelConfig::violations() const {
    std::vector<std::string> out;
    if (levels < 1) out.push_back("levels must be >= 1");
    if (base_channels < 4) out.push_back("base_channels must be >= 4");
    if (num_classes < 2 || num_classes > 254) out.push_back("num_classes must be in [2,254]");
    if (height < kMinImageSide || width < kMinImageSide) out.push_back("resolution must be at least 16x16");
    const int div = 1 << std::max(0, levels - 1);
    if (height % div || width % div) out.push_back("resolution must be divisible by 2^(levels-1)");
    if (!(learning_rate > 0)) out.push_back("learning_rate must be > 0");
    if (!(momentum >= 0 && momentum < 1)) out.push_back("momentum must be in [0,1)");
    if (batch_size < 1) out.push_back("batch_size must be >= 1");
    if (epochs_per_cycle < 0) out.push_back("epochs_per_cycle must be >= 0");
    return out;
}

json to_json(const ModelConfig& c) {
    return json{{"levels", c.levels},
                {"base_channels", c.base_channels},
                {"num_classes", c.num_classes},
                {"height", c.height},
                {"width", c.width},
                {"use_bias", c.use_bias},
                {"learning_rate", c.learning_rate},
                {"momentum", c.momentum},
                {"batch_size", c.batch_size},
                {"epochs_per_cycle", c.epochs_per_cycle},
                {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
    c.levels = j.value("levels", c.levels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.use_bias = j.value("use_bias", c.use_bias);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs_per_cycle = j.value("epochs_per_cycle", c.epochs_per_cycle);
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr double kImageMean[3] = {0.485, 0.456, 0.406};
constexpr double kImageStd[3] = {0.229, 0.224, 0.225};

struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> d;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), d(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
    double* plane(int k) { return d.data() + k * hw(); }
    const double* plane(int k) const { return d.data() + k * hw(); }
};

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value, grad, velocity;
};

struct Conv {
    int cin = 0, cout = 0, ksize = 3;
    int w = -1, b = -1;  // parameter indices
};

struct UpConv {
    int cin = 0, cout = 0;
    int w = -1, b = -1;
};

// Per-conv-block cache: im2col buffers and post-ReLU outputs.
struct BlockTrace {
    std::vector<double> col1, col2;
    Tensor a1, out;
};

struct Trace {
    Tensor input;
    std::vector<BlockTrace> enc;
    std::vector<Tensor> pooled;
    std::vector<std::vector<int>> pool_idx;
    std::vector<Tensor> up, cat;
    std::vector<BlockTrace> dec;
    Tensor logits;
};

struct Override {
    bool decoder = false;
    int level = 0;
    std::span<const double> values;
};

void im2col3x3(const Tensor& x, std::vector<double>& col) {
    const int H = x.h, W = x.w;
    const std::size_t hw = x.hw();
    col.resize(static_cast<std::size_t>(x.c) * 9 * hw);
    for (int ch = 0; ch < x.c; ++ch) {
        const double* src = x.plane(ch);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = col.data() + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * hw;
                const int c0 = std::max(0, 1 - kx);
                const int c1 = std::min(W, W + 1 - kx);
                for (int r = 0; r < H; ++r) {
                    double* drow = dst + static_cast<std::size_t>(r) * W;
                    const int sr = r + ky - 1;
                    if (sr < 0 || sr >= H) {
                        std::fill(drow, drow + W, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(sr) * W;
                    if (c0 > 0) drow[0] = 0.0;
                    if (c1 < W) drow[W - 1] = 0.0;
                    std::copy(srow + c0 + kx - 1, srow + c1 + kx - 1, drow + c0);
                }
            }
        }
    }
}

void col2im3x3(const std::vector<double>& col, Tensor& dx) {
    const int H = dx.h, W = dx.w;
    const std::size_t hw = dx.hw();
    for (int ch = 0; ch < dx.c; ++ch) {
        double* dst = dx.plane(ch);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = col.data() + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * hw;
                const int c0 = std::max(0, 1 - kx);
                const int c1 = std::min(W, W + 1 - kx);
                for (int r = 0; r < H; ++r) {
                    const int sr = r + ky - 1;
                    if (sr < 0 || sr >= H) continue;
                    double* __restrict drow = dst + static_cast<std::size_t>(sr) * W + kx - 1;
                    const double* __restrict srow = src + static_cast<std::size_t>(r) * W;
                    for (int c = c0; c < c1; ++c) drow[c] += srow[c];
                }
            }
        }
    }
}

void relu_inplace(Tensor& t, std::vector<std::uint8_t>* pattern) {
    for (double& v : t.d) {
        const bool on = v > 0.0;
        if (pattern) pattern->push_back(on ? 1 : 0);
        if (!on) v = 0.0;
    }
}

}  // namespace

struct SegModel::Impl {
    ModelConfig cfg;
    std::vector<Param> params;
    std::vector<Conv> enc1, enc2, dec1, dec2;
    std::vector<UpConv> ups;
    Conv head;
    std::uint64_t epochs_trained = 0;

    explicit Impl(const ModelConfig& c) : cfg(c) {
        if (auto v = cfg.violations(); !v.empty()) throw Error(Errc::precondition, "model config: " + v.front());
        build();
        init_weights();
    }

    int channels(int level) const { return cfg.base_channels << level; }

    int add_param(const std::string& name, std::vector<int> shape) {
        Param p;
        p.name = name;
        p.shape = std::move(shape);
        const std::size_t n = std::accumulate(p.shape.begin(), p.shape.end(), std::size_t{1},
                                              [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
        p.value.assign(n, 0.0);
        p.grad.assign(n, 0.0);
        p.velocity.assign(n, 0.0);
        params.push_back(std::move(p));
        return static_cast<int>(params.size()) - 1;
    }

    Conv make_conv(const std::string& name, int cin, int cout, int ksize) {
        Conv cv;
        cv.cin = cin;
        cv.cout = cout;
        cv.ksize = ksize;
        cv.w = add_param(name + ".w", {cout, cin, ksize, ksize});
        if (cfg.use_bias) cv.b = add_param(name + ".b", {cout});
        return cv;
    }

    std::string enc_name(int l) const {
        if (l == cfg.levels - 1 && cfg.levels > 1) return "bottleneck";
        return "enc" + std::to_string(l);
    }
    std::string dec_name(int l) const { return "dec" + std::to_string(l); }

    void build() {
        const int L = cfg.levels;
        for (int l = 0; l < L; ++l) {
            const int cin = l == 0 ? 3 : channels(l - 1);
            enc1.push_back(make_conv(enc_name(l) + ".conv1", cin, channels(l), 3));
            enc2.push_back(make_conv(enc_name(l) + ".conv2", channels(l), channels(l), 3));
        }
        ups.resize(std::max(0, L - 1));
        dec1.resize(std::max(0, L - 1));
        dec2.resize(std::max(0, L - 1));
        for (int l = L - 2; l >= 0; --l) {
            UpConv u;
            u.cin = channels(l + 1);
            u.cout = channels(l);
            u.w = add_param(dec_name(l) + ".up.w", {u.cin, u.cout, 2, 2});
            if (cfg.use_bias) u.b = add_param(dec_name(l) + ".up.b", {u.cout});
            ups[l] = u;
            dec1[l] = make_conv(dec_name(l) + ".conv1", 2 * channels(l), channels(l), 3);
            dec2[l] = make_conv(dec_name(l) + ".conv2", channels(l), channels(l), 3);
        }
        head = make_conv("head", channels(0), cfg.num_classes, 1);
    }

    void init_weights() {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param& p = params[i];
            if (p.shape.size() == 1) continue;  // biases start at zero
            // Fan-in: transposed convs see cin inputs per output, regular convs cin*k*k.
            const bool transposed = p.name.find(".up.") != std::string::npos;
            const int fan_in = transposed ? p.shape[0] : p.shape[1] * p.shape[2] * p.shape[3];
            const double bound = std::sqrt(6.0 / fan_in);
            Rng rng = Rng::derive(cfg.seed, 0x1417, i);
            for (double& v : p.value) v = rng.uniform(-bound, bound);
        }
    }

    // ---- forward ------------------------------------------------------------

    Tensor conv_forward(const Conv& cv, const Tensor& x, std::vector<double>* col_out) const {
        Tensor y(cv.cout, x.h, x.w);
        const auto hw = static_cast<Eigen::Index>(x.hw());
        CMatMap W(params[cv.w].value.data(), cv.cout, cv.cin * cv.ksize * cv.ksize);
        MatMap Y(y.d.data(), cv.cout, hw);
        if (cv.ksize == 1) {
            Y.noalias() = W * CMatMap(x.d.data(), cv.cin, hw);
        } else {
            std::vector<double> local;
            std::vector<double>& col = col_out ? *col_out : local;
            im2col3x3(x, col);
            Y.noalias() = W * CMatMap(col.data(), cv.cin * 9, hw);
        }
        if (cv.b >= 0) {
            const auto& b = params[cv.b].value;
            for (int k = 0; k < cv.cout; ++k) Y.row(k).array() += b[k];
        }
        return y;
    }

    Tensor upconv_forward(const UpConv& u, const Tensor& x) const {
        Tensor y(u.cout, x.h * 2, x.w * 2);
        const auto hw = static_cast<Eigen::Index>(x.hw());
        // Weights stored (cin, cout, 2, 2); view as cin x (cout*4) and multiply transposed.
        CMatMap Wt(params[u.w].value.data(), u.cin, u.cout * 4);
        RowMat G = Wt.transpose() * CMatMap(x.d.data(), u.cin, hw);
        for (int co = 0; co < u.cout; ++co) {
            const double bias = u.b >= 0 ? params[u.b].value[co] : 0.0;
            double* dst = y.plane(co);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const double* g = G.data() + static_cast<std::size_t>(co * 4 + a * 2 + b) * hw;
                    for (int r = 0; r < x.h; ++r)
                        for (int c = 0; c < x.w; ++c)
                            dst[static_cast<std::size_t>(2 * r + a) * y.w + 2 * c + b] = g[r * x.w + c] + bias;
                }
        }
        return y;
    }

    static Tensor maxpool_forward(const Tensor& x, std::vector<int>& idx) {
        Tensor y(x.c, x.h / 2, x.w / 2);
        idx.assign(y.d.size(), 0);
        std::size_t o = 0;
        for (int k = 0; k < x.c; ++k) {
            const double* src = x.plane(k);
            for (int r = 0; r < y.h; ++r)
                for (int c = 0; c < y.w; ++c, ++o) {
                    int best = (2 * r) * x.w + 2 * c;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b) {
                            const int p = (2 * r + a) * x.w + 2 * c + b;
                            if (src[p] > src[best]) best = p;
                        }
                    y.d[o] = src[best];
                    idx[o] = static_cast<int>(k * x.hw()) + best;
                }
        }
        return y;
    }

    void block_forward(const Conv& c1, const Conv& c2, const Tensor& in, BlockTrace& bt,
                       std::vector<std::uint8_t>* pattern) const {
        bt.a1 = conv_forward(c1, in, &bt.col1);
        relu_inplace(bt.a1, pattern);
        bt.out = conv_forward(c2, bt.a1, &bt.col2);
        relu_inplace(bt.out, pattern);
    }

    static void apply_override(Tensor& t, const Override* ov, bool decoder, int level) {
        if (!ov || ov->decoder != decoder || ov->level != level) return;
        if (ov->values.size() != t.d.size()) throw Error(Errc::shape_mismatch, "override does not match layer shape");
        std::copy(ov->values.begin(), ov->values.end(), t.d.begin());
    }

    Tensor normalize_input(const Image& img) const {
        if (img.height != cfg.height || img.width != cfg.width)
            throw Error(Errc::shape_mismatch, "image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                                  " does not match model resolution " + std::to_string(cfg.height) +
                                                  "x" + std::to_string(cfg.width));
        Tensor x(3, img.height, img.width);
        const std::size_t hw = x.hw();
        for (std::size_t px = 0; px < hw; ++px)
            for (int ch = 0; ch < 3; ++ch) x.d[ch * hw + px] = (img.pixels[px * 3 + ch] - kImageMean[ch]) / kImageStd[ch];
        return x;
    }

    void forward(const Image& img, Trace& t, const Override* ov = nullptr,
                 std::vector<std::uint8_t>* pattern = nullptr) const {
        const int L = cfg.levels;
        t.input = normalize_input(img);
        t.enc.assign(L, {});
        t.pooled.assign(std::max(0, L - 1), {});
        t.pool_idx.assign(std::max(0, L - 1), {});
        t.up.assign(std::max(0, L - 1), {});
        t.cat.assign(std::max(0, L - 1), {});
        t.dec.assign(std::max(0, L - 1), {});
        const Tensor* in = &t.input;
        for (int l = 0; l < L; ++l) {
            block_forward(enc1[l], enc2[l], *in, t.enc[l], pattern);
            apply_override(t.enc[l].out, ov, false, l);
            if (l < L - 1) {
                t.pooled[l] = maxpool_forward(t.enc[l].out, t.pool_idx[l]);
                // The winning input of each window is a kink as much as a ReLU is.
                if (pattern)
                    for (int i : t.pool_idx[l]) pattern->push_back(static_cast<std::uint8_t>(i & 0xff));
                in = &t.pooled[l];
            }
        }
        const Tensor* d = &t.enc[L - 1].out;
        for (int l = L - 2; l >= 0; --l) {
            t.up[l] = upconv_forward(ups[l], *d);
            const Tensor& skip = t.enc[l].out;
            Tensor cat(2 * channels(l), skip.h, skip.w);
            std::copy(t.up[l].d.begin(), t.up[l].d.end(), cat.d.begin());
            std::copy(skip.d.begin(), skip.d.end(), cat.d.begin() + static_cast<std::ptrdiff_t>(t.up[l].d.size()));
            t.cat[l] = std::move(cat);
            block_forward(dec1[l], dec2[l], t.cat[l], t.dec[l], pattern);
            apply_override(t.dec[l].out, ov, true, l);
            d = &t.dec[l].out;
        }
        t.logits = conv_forward(head, *d, nullptr);
    }

    const Tensor& final_features(const Trace& t) const { return cfg.levels > 1 ? t.dec[0].out : t.enc[0].out; }

    // ---- backward -----------------------------------------------------------

    Tensor conv_backward(const Conv& cv, const Tensor& x, const std::vector<double>& col, const Tensor& dy,
                         bool param_grads, bool need_dx) {
        const auto hw = static_cast<Eigen::Index>(dy.hw());
        const Eigen::Index K = cv.cin * cv.ksize * cv.ksize;
        CMatMap dY(dy.d.data(), cv.cout, hw);
        const double* colp = cv.ksize == 1 ? x.d.data() : col.data();
        CMatMap Col(colp, K, hw);
        if (param_grads) {
            MatMap dW(params[cv.w].grad.data(), cv.cout, K);
            dW.noalias() += dY * Col.transpose();
            if (cv.b >= 0) {
                VecMap db(params[cv.b].grad.data(), cv.cout);
                db.noalias() += dY.rowwise().sum();
            }
        }
        Tensor dx;
        if (!need_dx) return dx;
        dx = Tensor(cv.cin, dy.h, dy.w);
        CMatMap W(params[cv.w].value.data(), cv.cout, K);
        if (cv.ksize == 1) {
            MatMap(dx.d.data(), cv.cin, hw).noalias() = W.transpose() * dY;
        } else {
            std::vector<double> dcol(static_cast<std::size_t>(K) * hw);
            MatMap(dcol.data(), K, hw).noalias() = W.transpose() * dY;
            col2im3x3(dcol, dx);
        }
        return dx;
    }

    Tensor upconv_backward(const UpConv& u, const Tensor& x, const Tensor& dy, bool param_grads) {
        const auto hw = static_cast<Eigen::Index>(x.hw());
        RowMat G(u.cout * 4, hw);
        for (int co = 0; co < u.cout; ++co) {
            const double* src = dy.plane(co);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    double* g = G.data() + static_cast<std::size_t>(co * 4 + a * 2 + b) * hw;
                    for (int r = 0; r < x.h; ++r)
                        for (int c = 0; c < x.w; ++c) g[r * x.w + c] = src[static_cast<std::size_t>(2 * r + a) * dy.w + 2 * c + b];
                }
        }
        CMatMap X(x.d.data(), u.cin, hw);
        if (param_grads) {
            MatMap dW(params[u.w].grad.data(), u.cin, u.cout * 4);
            dW.noalias() += X * G.transpose();
            if (u.b >= 0) {
                auto& db = params[u.b].grad;
                for (int co = 0; co < u.cout; ++co) db[co] += G.middleRows(co * 4, 4).sum();
            }
        }
        Tensor dx(u.cin, x.h, x.w);
        CMatMap Wt(params[u.w].value.data(), u.cin, u.cout * 4);
        MatMap(dx.d.data(), u.cin, hw).noalias() = Wt * G;
        return dx;
    }

    static void relu_backward(Tensor& grad, const Tensor& out) {
        for (std::size_t i = 0; i < grad.d.size(); ++i)
            if (!(out.d[i] > 0.0)) grad.d[i] = 0.0;
    }

    // Gradient w.r.t. the block input, given gradient w.r.t. its post-ReLU output.
    Tensor block_backward(const Conv& c1, const Conv& c2, const Tensor& in, const BlockTrace& bt, Tensor dout,
                          bool param_grads, bool need_dx) {
        relu_backward(dout, bt.out);
        Tensor da1 = conv_backward(c2, bt.a1, bt.col2, dout, param_grads, true);
        relu_backward(da1, bt.a1);
        return conv_backward(c1, in, bt.col1, da1, param_grads, need_dx);
    }

    /// Backpropagates dlogits. When `capture` is set, stores the gradient w.r.t. that layer's output;
    /// without parameter gradients the pass stops right after the capture.
    void backward(const Trace& t, const Tensor& dlogits, bool param_grads, const Override* capture, Tensor* captured) {
        const int L = cfg.levels;
        const Tensor& feat = final_features(t);
        Tensor dd = conv_backward(head, feat, {}, dlogits, param_grads, true);
        auto hit = [&](bool decoder, int level) {
            return capture && capture->decoder == decoder && capture->level == level;
        };
        std::vector<Tensor> enc_grad(L);
        for (int l = 0; l <= L - 2; ++l) {
            if (hit(true, l)) {
                *captured = dd;
                if (!param_grads) return;
            }
            Tensor dcat = block_backward(dec1[l], dec2[l], t.cat[l], t.dec[l], std::move(dd), param_grads, true);
            const std::size_t half = t.up[l].d.size();
            Tensor dup(t.up[l].c, t.up[l].h, t.up[l].w);
            std::copy(dcat.d.begin(), dcat.d.begin() + static_cast<std::ptrdiff_t>(half), dup.d.begin());
            Tensor dskip(t.enc[l].out.c, t.enc[l].out.h, t.enc[l].out.w);
            std::copy(dcat.d.begin() + static_cast<std::ptrdiff_t>(half), dcat.d.end(), dskip.d.begin());
            enc_grad[l] = std::move(dskip);
            const Tensor& upin = l == L - 2 ? t.enc[L - 1].out : t.dec[l + 1].out;
            dd = upconv_backward(ups[l], upin, dup, param_grads);
        }
        enc_grad[L - 1] = std::move(dd);
        for (int l = L - 1; l >= 0; --l) {
            if (hit(false, l)) {
                *captured = enc_grad[l];
                if (!param_grads) return;
            }
            const Tensor& in = l == 0 ? t.input : t.pooled[l - 1];
            Tensor din = block_backward(enc1[l], enc2[l], in, t.enc[l], std::move(enc_grad[l]), param_grads, l > 0);
            if (l > 0) {
                Tensor& g = enc_grad[l - 1];
                for (std::size_t i = 0; i < din.d.size(); ++i) g.d[t.pool_idx[l - 1][i]] += din.d[i];
            }
        }
    }

    // ---- helpers ------------------------------------------------------------

    Override locate(const std::string& layer) const {
        Override o;
        for (int l = 0; l < cfg.levels; ++l)
            if (layer == enc_name(l) || (l == cfg.levels - 1 && layer == "enc" + std::to_string(l))) {
                o.decoder = false;
                o.level = l;
                return o;
            }
        for (int l = 0; l < cfg.levels - 1; ++l)
            if (layer == dec_name(l)) {
                o.decoder = true;
                o.level = l;
                return o;
            }
        throw Error(Errc::unknown_layer, "no feature layer named '" + layer + "'");
    }

    const Tensor& layer_output(const Trace& t, const Override& o) const {
        return o.decoder ? t.dec[o.level].out : t.enc[o.level].out;
    }

    // Softmax cross-entropy; writes dlogits scaled by `scale` and returns the summed loss.
    static double softmax_xent(const Tensor& logits, const LabelMask& y, double scale, Tensor& dlogits,
                               std::size_t& valid) {
        const int C = logits.c;
        const std::size_t hw = logits.hw();
        dlogits = Tensor(C, logits.h, logits.w);
        double total = 0.0;
        std::vector<double> p(C);
        for (std::size_t px = 0; px < hw; ++px) {
            const std::uint8_t label = y.labels[px];
            if (label == kIgnoreLabel) continue;
            double mx = logits.d[px];
            for (int c = 1; c < C; ++c) mx = std::max(mx, logits.d[c * hw + px]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                p[c] = std::exp(logits.d[c * hw + px] - mx);
                z += p[c];
            }
            total += std::log(z) + mx - logits.d[label * hw + px];
            for (int c = 0; c < C; ++c) dlogits.d[c * hw + px] = scale * (p[c] / z - (c == label ? 1.0 : 0.0));
            ++valid;
        }
        return total;
    }
};

namespace {

// Activations are large, short-lived buffers; by default glibc hands each one to mmap and back,
// which costs more than the arithmetic. Keep them on the heap instead.
void keep_buffers_on_heap() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
    });
#endif
}

}  // namespace

SegModel::SegModel(const ModelConfig& config) : impl_(std::make_unique<Impl>(config)) { keep_buffers_on_heap(); }
SegModel::SegModel(const SegModel& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
SegModel& SegModel::operator=(const SegModel& o) {
    if (this != &o) impl_ = std::make_unique<Impl>(*o.impl_);
    return *this;
}
SegModel::SegModel(SegModel&&) noexcept = default;
SegModel& SegModel::operator=(SegModel&&) noexcept = default;
SegModel::~SegModel() = default;

const ModelConfig& SegModel::config() const { return impl_->cfg; }
ModelConfig& SegModel::mutable_config() { return impl_->cfg; }
std::uint64_t SegModel::epochs_trained() const { return impl_->epochs_trained; }

std::vector<std::string> SegModel::layer_names() const {
    std::vector<std::string> out;
    for (int l = 0; l < impl_->cfg.levels; ++l) out.push_back(impl_->enc_name(l));
    for (int l = impl_->cfg.levels - 2; l >= 0; --l) out.push_back(impl_->dec_name(l));
    return out;
}

std::string SegModel::default_target_layer() const { return impl_->cfg.levels > 1 ? "dec0" : "enc0"; }

std::vector<std::string> SegModel::parameter_names() const {
    std::vector<std::string> out;
    for (const auto& p : impl_->params) out.push_back(p.name);
    return out;
}

std::span<double> SegModel::parameter(const std::string& name) {
    for (auto& p : impl_->params)
        if (p.name == name) return p.value;
    throw Error(Errc::not_found, "no parameter named '" + name + "'");
}

std::span<const double> SegModel::parameter(const std::string& name) const {
    return const_cast<SegModel*>(this)->parameter(name);
}

namespace {
void check_training_set(const std::vector<const Image*>& images, const std::vector<const LabelMask*>& labels) {
    require(!images.empty(), Errc::precondition, "training set is empty");
    require(images.size() == labels.size(), Errc::precondition, "every training image needs a label mask");
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i] && labels[i], Errc::precondition, "null training entry");
        require(labels[i]->height == images[i]->height && labels[i]->width == images[i]->width,
                Errc::shape_mismatch, "label mask does not match image " + images[i]->id);
    }
}
}  // namespace

TrainingReport SegModel::train(const std::vector<const Image*>& images, const std::vector<const LabelMask*>& labels,
                               int epochs) {
    check_training_set(images, labels);
    Impl& m = *impl_;
    TrainingReport report;
    for (auto& p : m.params) std::fill(p.velocity.begin(), p.velocity.end(), 0.0);
    std::vector<std::size_t> order(images.size());
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = Rng::derive(m.cfg.seed, 0xe90c, m.epochs_trained);
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t epoch_valid = 0;
        for (std::size_t start = 0; start < order.size(); start += m.cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(m.cfg.batch_size));
            std::size_t batch_valid = 0;
            for (std::size_t i = start; i < end; ++i)
                for (auto v : labels[order[i]]->labels) batch_valid += v != kIgnoreLabel;
            if (batch_valid == 0) continue;
            for (auto& p : m.params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
            const double scale = 1.0 / static_cast<double>(batch_valid);
            for (std::size_t i = start; i < end; ++i) {
                Trace t;
                m.forward(*images[order[i]], t);
                Tensor dlogits;
                std::size_t valid = 0;
                epoch_loss += Impl::softmax_xent(t.logits, *labels[order[i]], scale, dlogits, valid);
                epoch_valid += valid;
                m.backward(t, dlogits, true, nullptr, nullptr);
            }
            for (auto& p : m.params) {
                for (std::size_t k = 0; k < p.value.size(); ++k) {
                    p.velocity[k] = m.cfg.momentum * p.velocity[k] + p.grad[k];
                    p.value[k] -= m.cfg.learning_rate * p.velocity[k];
                }
            }
        }
        const double mean = epoch_valid ? epoch_loss / static_cast<double>(epoch_valid) : 0.0;
        if (!std::isfinite(mean))
            throw Error(Errc::divergence, "training loss became non-finite at epoch " + std::to_string(e));
        report.epoch_losses.push_back(mean);
        ++m.epochs_trained;
        ++report.epochs_run;
    }
    if (!report.epoch_losses.empty()) {
        report.initial_loss = report.epoch_losses.front();
        report.final_loss = report.epoch_losses.back();
    }
    return report;
}

double SegModel::loss(const std::vector<const Image*>& images, const std::vector<const LabelMask*>& labels) const {
    check_training_set(images, labels);
    double total = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Trace t;
        impl_->forward(*images[i], t);
        Tensor dl;
        total += Impl::softmax_xent(t.logits, *labels[i], 0.0, dl, valid);
    }
    return valid ? total / static_cast<double>(valid) : 0.0;
}

std::vector<double> SegModel::logits(const Image& image) const {
    Trace t;
    impl_->forward(image, t);
    return std::move(t.logits.d);
}

ProbMap SegModel::predict_probs(const Image& image) const {
    const int C = impl_->cfg.num_classes;
    std::vector<double> z = logits(image);
    ProbMap pm(C, image.height, image.width);
    const std::size_t hw = pm.plane();
    for (std::size_t px = 0; px < hw; ++px) {
        double mx = z[px];
        for (int c = 1; c < C; ++c) mx = std::max(mx, z[c * hw + px]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(z[c * hw + px] - mx);
            pm.probs[c * hw + px] = e;
            sum += e;
        }
        for (int c = 0; c < C; ++c) pm.probs[c * hw + px] /= sum;
    }
    return pm;
}

GradCamContext SegModel::class_score_with_grads(const Image& image, int target_class, const std::string& layer,
                                                const LabelMask* ignore) const {
    return std::move(class_scores_with_grads(image, {target_class}, layer, ignore).front());
}

std::vector<GradCamContext> SegModel::class_scores_with_grads(const Image& image, const std::vector<int>& classes,
                                                              const std::string& layer,
                                                              const LabelMask* ignore) const {
    Impl& m = *impl_;
    for (int c : classes)
        require(c >= 0 && c < m.cfg.num_classes, Errc::precondition,
                "target class " + std::to_string(c) + " outside [0, C)");
    const Override where = m.locate(layer);
    if (ignore && (ignore->height != image.height || ignore->width != image.width))
        throw Error(Errc::shape_mismatch, "ignore mask does not match image");
    Trace t;
    m.forward(image, t);
    const std::size_t hw = t.logits.hw();
    const Tensor& act = m.layer_output(t, where);
    std::vector<GradCamContext> out;
    for (int target_class : classes) {
        Tensor dlogits(t.logits.c, t.logits.h, t.logits.w);
        double score = 0.0;
        for (std::size_t px = 0; px < hw; ++px) {
            if (ignore && ignore->labels[px] == kIgnoreLabel) continue;
            score += t.logits.d[target_class * hw + px];
            dlogits.d[target_class * hw + px] = 1.0;
        }
        Tensor grad;
        m.backward(t, dlogits, false, &where, &grad);
        GradCamContext ctx;
        ctx.layer = layer;
        ctx.target_class = target_class;
        ctx.class_score = score;
        ctx.activations = FeatureMap{act.c, act.h, act.w, act.d};
        ctx.gradients = FeatureMap{grad.c, grad.h, grad.w, std::move(grad.d)};
        for (double g : ctx.gradients.data)
            if (g > 0) ctx.positive_grad_sum += g;
        out.push_back(std::move(ctx));
    }
    return out;
}

double SegModel::class_score_with_override(const Image& image, int target_class, const std::string& layer,
                                           std::span<const double> replacement,
                                           std::vector<std::uint8_t>* relu_pattern) const {
    const Impl& m = *impl_;
    require(target_class >= 0 && target_class < m.cfg.num_classes, Errc::precondition, "target class outside [0, C)");
    Override ov = m.locate(layer);
    ov.values = replacement;
    Trace t;
    if (relu_pattern) relu_pattern->clear();
    m.forward(image, t, &ov, relu_pattern);
    const std::size_t hw = t.logits.hw();
    double score = 0.0;
    for (std::size_t px = 0; px < hw; ++px) score += t.logits.d[target_class * hw + px];
    return score;
}

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'X', 'A', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void SegModel::save(const std::string& path) const {
    const Impl& m = *impl_;
    json header{{"schema", kSchemaVersion}, {"config", to_json(m.cfg)}, {"epochs_trained", m.epochs_trained}};
    json plist = json::array();
    for (const auto& p : m.params) plist.push_back({{"name", p.name}, {"shape", p.shape}});
    header["params"] = plist;
    const std::string hs = header.dump();

    std::string blob(kCheckpointMagic, 8);
    auto put = [&blob](const void* data, std::size_t n) { blob.append(static_cast<const char*>(data), n); };
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t hlen = hs.size();
    put(&version, sizeof version);
    put(&hlen, sizeof hlen);
    blob += hs;
    for (const auto& p : m.params) put(p.value.data(), p.value.size() * sizeof(double));
    write_file_atomic(path, blob);
}

SegModel SegModel::load(const std::string& path) {
    const std::string blob = read_file(path);
    std::size_t off = 0;
    auto take = [&](void* dst, std::size_t n) {
        if (off + n > blob.size()) throw CorruptInputError(off, "truncated checkpoint " + path);
        std::memcpy(dst, blob.data() + off, n);
        off += n;
    };
    char magic[8];
    take(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CorruptInputError(0, "bad checkpoint magic in " + path);
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    take(&version, sizeof version);
    if (version != kCheckpointVersion) throw Error(Errc::schema_mismatch, "checkpoint version " + std::to_string(version));
    take(&hlen, sizeof hlen);
    if (off + hlen > blob.size()) throw CorruptInputError(off, "truncated checkpoint header");
    json header;
    try {
        header = json::parse(blob.begin() + static_cast<std::ptrdiff_t>(off),
                             blob.begin() + static_cast<std::ptrdiff_t>(off + hlen));
    } catch (const json::parse_error& e) {
        throw CorruptInputError(off + e.byte, "checkpoint header");
    }
    off += hlen;
    SegModel model(model_config_from_json(header.at("config")));
    model.impl_->epochs_trained = header.value("epochs_trained", std::uint64_t{0});
    const auto& plist = header.at("params");
    if (plist.size() != model.impl_->params.size())
        throw Error(Errc::schema_mismatch, "checkpoint parameter count does not match its config");
    for (std::size_t i = 0; i < plist.size(); ++i) {
        Param& p = model.impl_->params[i];
        if (plist[i].at("name").get<std::string>() != p.name)
            throw Error(Errc::schema_mismatch, "checkpoint parameter order mismatch at " + p.name);
        take(p.value.data(), p.value.size() * sizeof(double));
    }
    return model;
}

}  // namespace segxal
