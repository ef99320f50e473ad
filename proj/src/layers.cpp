#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "seslr/network.hpp"

namespace seslr {

namespace {

void expect_rank(const Tensor& x, size_t rank, const char* who) {
    if (x.rank() != rank)
        throw std::invalid_argument(std::string(who) + ": expected rank-" + std::to_string(rank) +
                                    " sequence, got " + shape_str(x.shape()));
}

// steps of a replicated static input are bit-identical; stateless layers
// can then convolve one frame and copy
bool all_steps_identical(const Tensor& x) {
    size_t steps = x.extent(0);
    if (steps < 2) return false;
    size_t step_elems = x.size() / steps;
    const double* base = x.data();
    for (size_t t = 1; t < steps; ++t)
        if (std::memcmp(base, base + t * step_elems, step_elems * sizeof(double)) != 0) return false;
    return true;
}

}  // namespace

// ---------------------------------------------------------------- conv2d

Conv2dLayer::Conv2dLayer(size_t in_ch, size_t out_ch, size_t kernel, size_t stride, long pad)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride) {
    if (in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0)
        throw std::invalid_argument("conv2d: channels, kernel and stride must be positive");
    pad_ = pad < 0 ? kernel_ / 2 : static_cast<size_t>(pad);
    weight_ = Tensor({out_ch_, in_ch_, kernel_, kernel_});
    bias_ = Tensor({out_ch_});
    grad_weight_ = Tensor(weight_.shape());
    grad_bias_ = Tensor(bias_.shape());
}

void Conv2dLayer::init(Rng& rng) {
    double bound = init_gain / std::sqrt(static_cast<double>(in_ch_ * kernel_ * kernel_));
    for (double& w : weight_.vec()) w = rng.uniform(-bound, bound);
    bias_.fill(0.0);
}

Shape Conv2dLayer::output_sample_shape(const Shape& in) const {
    if (in.size() != 3 || in[0] != in_ch_)
        throw std::invalid_argument("conv2d: bad input sample shape " + shape_str(in));
    size_t h = in[1], w = in[2];
    if (h + 2 * pad_ < kernel_ || w + 2 * pad_ < kernel_)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    return {out_ch_, (h + 2 * pad_ - kernel_) / stride_ + 1, (w + 2 * pad_ - kernel_) / stride_ + 1};
}

Tensor Conv2dLayer::forward(const Tensor& x, const PassContext& ctx) {
    expect_rank(x, 5, "conv2d");
    const size_t steps = x.extent(0), batch = x.extent(1);
    Shape out_sample = output_sample_shape({x.extent(2), x.extent(3), x.extent(4)});
    const size_t H = x.extent(3), W = x.extent(4);
    const size_t OH = out_sample[1], OW = out_sample[2];

    Tensor out({steps, batch, out_ch_, OH, OW});
    const size_t in_step = batch * in_ch_ * H * W;
    const size_t out_step = batch * out_ch_ * OH * OW;

    bool replicated = all_steps_identical(x);
    size_t compute_steps = replicated ? 1 : steps;

    for (size_t t = 0; t < compute_steps; ++t) {
        const double* in_t = x.data() + t * in_step;
        double* out_t = out.data() + t * out_step;
        for (size_t n = 0; n < batch; ++n) {
            const double* in_n = in_t + n * in_ch_ * H * W;
            double* out_n = out_t + n * out_ch_ * OH * OW;
            for (size_t oc = 0; oc < out_ch_; ++oc) {
                double* out_plane = out_n + oc * OH * OW;
                double b = bias_[oc];
                for (size_t i = 0; i < OH * OW; ++i) out_plane[i] = b;
                for (size_t c = 0; c < in_ch_; ++c) {
                    const double* in_plane = in_n + c * H * W;
                    const double* w_k = weight_.data() + (oc * in_ch_ + c) * kernel_ * kernel_;
                    for (size_t kh = 0; kh < kernel_; ++kh) {
                        for (size_t oh = 0; oh < OH; ++oh) {
                            long ih = static_cast<long>(oh * stride_ + kh) - static_cast<long>(pad_);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            const double* in_row = in_plane + ih * W;
                            double* out_row = out_plane + oh * OW;
                            for (size_t kw = 0; kw < kernel_; ++kw) {
                                double wv = w_k[kh * kernel_ + kw];
                                if (wv == 0.0) continue;
                                long shift = static_cast<long>(kw) - static_cast<long>(pad_);
                                if (stride_ == 1) {
                                    // valid ow range for this kw: branch-free
                                    // run over contiguous rows
                                    long lo = std::max<long>(0, -shift);
                                    long hi = std::min<long>(static_cast<long>(OW),
                                                             static_cast<long>(W) - shift);
                                    const double* in_shift = in_row + shift;
                                    for (long ow = lo; ow < hi; ++ow) out_row[ow] += wv * in_shift[ow];
                                } else {
                                    for (size_t ow = 0; ow < OW; ++ow) {
                                        long iw = static_cast<long>(ow * stride_) + shift;
                                        if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                        out_row[ow] += wv * in_row[iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if (replicated)
        for (size_t t = 1; t < steps; ++t)
            std::memcpy(out.data() + t * out_step, out.data(), out_step * sizeof(double));

    if (ctx.record) {
        cached_input_ = x;
        cached_out_shape_ = out.shape();
    }
    return out;
}

Tensor Conv2dLayer::backward(const Tensor& grad_out) {
    if (cached_input_.empty()) throw std::logic_error("conv2d: backward without recorded forward");
    if (grad_out.shape() != cached_out_shape_)
        throw std::invalid_argument("conv2d: gradient shape mismatch");
    const Tensor& x = cached_input_;
    const size_t steps = x.extent(0), batch = x.extent(1), H = x.extent(3), W = x.extent(4);
    const size_t OH = cached_out_shape_[3], OW = cached_out_shape_[4];

    Tensor grad_in(x.shape());
    for (size_t t = 0; t < steps; ++t) {
        for (size_t n = 0; n < batch; ++n) {
            const double* go_n = grad_out.data() + ((t * batch + n) * out_ch_) * OH * OW;
            const double* in_n = x.data() + ((t * batch + n) * in_ch_) * H * W;
            double* gi_n = grad_in.data() + ((t * batch + n) * in_ch_) * H * W;
            for (size_t oc = 0; oc < out_ch_; ++oc) {
                const double* go_plane = go_n + oc * OH * OW;
                double gb = 0.0;
                for (size_t i = 0; i < OH * OW; ++i) gb += go_plane[i];
                grad_bias_[oc] += gb;
                for (size_t c = 0; c < in_ch_; ++c) {
                    const double* in_plane = in_n + c * H * W;
                    double* gi_plane = gi_n + c * H * W;
                    const double* w_k = weight_.data() + (oc * in_ch_ + c) * kernel_ * kernel_;
                    double* gw_k = grad_weight_.data() + (oc * in_ch_ + c) * kernel_ * kernel_;
                    for (size_t kh = 0; kh < kernel_; ++kh) {
                        for (size_t oh = 0; oh < OH; ++oh) {
                            long ih = static_cast<long>(oh * stride_ + kh) - static_cast<long>(pad_);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            const double* in_row = in_plane + ih * W;
                            double* gi_row = gi_plane + ih * W;
                            const double* go_row = go_plane + oh * OW;
                            for (size_t kw = 0; kw < kernel_; ++kw) {
                                double wv = w_k[kh * kernel_ + kw];
                                double gw = 0.0;
                                long shift = static_cast<long>(kw) - static_cast<long>(pad_);
                                if (stride_ == 1) {
                                    long lo = std::max<long>(0, -shift);
                                    long hi = std::min<long>(static_cast<long>(OW),
                                                             static_cast<long>(W) - shift);
                                    const double* in_shift = in_row + shift;
                                    double* gi_shift = gi_row + shift;
                                    for (long ow = lo; ow < hi; ++ow) {
                                        gw += go_row[ow] * in_shift[ow];
                                        gi_shift[ow] += go_row[ow] * wv;
                                    }
                                } else {
                                    for (size_t ow = 0; ow < OW; ++ow) {
                                        long iw = static_cast<long>(ow * stride_) + shift;
                                        if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                        gw += go_row[ow] * in_row[iw];
                                        gi_row[iw] += go_row[ow] * wv;
                                    }
                                }
                                gw_k[kh * kernel_ + kw] += gw;
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

void Conv2dLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({"conv.weight", &weight_, &grad_weight_, frozen});
    out.push_back({"conv.bias", &bias_, &grad_bias_, frozen});
}

void Conv2dLayer::zero_grad() {
    grad_weight_.fill(0.0);
    grad_bias_.fill(0.0);
}

// ------------------------------------------------------------- batchnorm

BatchNormLayer::BatchNormLayer(size_t channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
    gamma_ = Tensor({channels_}, 1.0);
    beta_ = Tensor({channels_}, 0.0);
    grad_gamma_ = Tensor({channels_});
    grad_beta_ = Tensor({channels_});
    running_mean_ = Tensor({channels_}, 0.0);
    running_var_ = Tensor({channels_}, 1.0);
}

void BatchNormLayer::init(Rng&) {
    gamma_.fill(1.0);
    beta_.fill(0.0);
    running_mean_.fill(0.0);
    running_var_.fill(1.0);
}

Tensor BatchNormLayer::forward(const Tensor& x, const PassContext& ctx) {
    expect_rank(x, 5, "batchnorm");
    if (x.extent(2) != channels_) throw std::invalid_argument("batchnorm: channel count mismatch");
    const size_t steps = x.extent(0), batch = x.extent(1), plane = x.extent(3) * x.extent(4);
    const size_t groups = steps * batch;
    const size_t m = groups * plane;  // statistics pooled over batch and time

    Tensor out(x.shape());
    bool train = ctx.mode == RunMode::train;
    cached_train_ = train;
    cached_shape_ = x.shape();
    cached_inv_std_.assign(channels_, 0.0);
    if (ctx.record) cached_xhat_ = Tensor(x.shape());

    for (size_t c = 0; c < channels_; ++c) {
        double mean, var;
        if (train) {
            double s = 0.0;
            for (size_t g = 0; g < groups; ++g) {
                const double* p = x.data() + (g * channels_ + c) * plane;
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            mean = s / static_cast<double>(m);
            double sq = 0.0;
            for (size_t g = 0; g < groups; ++g) {
                const double* p = x.data() + (g * channels_ + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(m);
            double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
            running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
            running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * unbiased;
        } else {
            mean = running_mean_[c];
            var = running_var_[c];
        }
        double inv_std = 1.0 / std::sqrt(var + eps_);
        cached_inv_std_[c] = inv_std;
        double g = gamma_[c], b = beta_[c];
        for (size_t gi = 0; gi < groups; ++gi) {
            const double* p = x.data() + (gi * channels_ + c) * plane;
            double* q = out.data() + (gi * channels_ + c) * plane;
            double* xh = ctx.record ? cached_xhat_.data() + (gi * channels_ + c) * plane : nullptr;
            for (size_t i = 0; i < plane; ++i) {
                double xhat = (p[i] - mean) * inv_std;
                if (xh) xh[i] = xhat;
                q[i] = g * xhat + b;
            }
        }
    }
    return out;
}

Tensor BatchNormLayer::backward(const Tensor& grad_out) {
    if (cached_xhat_.empty()) throw std::logic_error("batchnorm: backward without recorded forward");
    if (grad_out.shape() != cached_shape_) throw std::invalid_argument("batchnorm: gradient shape mismatch");
    const size_t steps = cached_shape_[0], batch = cached_shape_[1], plane = cached_shape_[3] * cached_shape_[4];
    const size_t groups = steps * batch;
    const double m = static_cast<double>(groups * plane);

    Tensor grad_in(cached_shape_);
    for (size_t c = 0; c < channels_; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (size_t g = 0; g < groups; ++g) {
            const double* go = grad_out.data() + (g * channels_ + c) * plane;
            const double* xh = cached_xhat_.data() + (g * channels_ + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
                s1 += go[i];
                s2 += go[i] * xh[i];
            }
        }
        grad_beta_[c] += s1;
        grad_gamma_[c] += s2;
        double scale = gamma_[c] * cached_inv_std_[c];
        for (size_t g = 0; g < groups; ++g) {
            const double* go = grad_out.data() + (g * channels_ + c) * plane;
            const double* xh = cached_xhat_.data() + (g * channels_ + c) * plane;
            double* gi = grad_in.data() + (g * channels_ + c) * plane;
            if (cached_train_) {
                for (size_t i = 0; i < plane; ++i) gi[i] = scale * (go[i] - s1 / m - xh[i] * s2 / m);
            } else {
                for (size_t i = 0; i < plane; ++i) gi[i] = scale * go[i];
            }
        }
    }
    return grad_in;
}

void BatchNormLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({"bn.gamma", &gamma_, &grad_gamma_, frozen});
    out.push_back({"bn.beta", &beta_, &grad_beta_, frozen});
}

void BatchNormLayer::zero_grad() {
    grad_gamma_.fill(0.0);
    grad_beta_.fill(0.0);
}

// ------------------------------------------------------------------- lif

Tensor LIFLayer::forward(const Tensor& x, const PassContext& ctx) {
    if (x.rank() < 2) throw std::invalid_argument("lif: expected (T, N, ...) input");
    const size_t steps = x.extent(0);
    const size_t width = x.size() / steps;
    const double k = cfg_.leak();
    const double decay = 1.0 - k;
    const bool soft = ctx.spike == SpikeMode::soft;

    Tensor out(x.shape());
    Tensor u_all(x.shape());
    std::vector<double> u(width, 0.0);
    const double* o_prev = nullptr;  // null on the first step: no prior spikes
    for (size_t t = 0; t < steps; ++t) {
        const double* in_t = x.data() + t * width;
        double* o_t = out.data() + t * width;
        double* u_t = u_all.data() + t * width;
        for (size_t i = 0; i < width; ++i) {
            double gate = o_prev ? (1.0 - o_prev[i]) : 1.0;
            double u_new = decay * gate * u[i] + k * in_t[i];
            u[i] = u_new;
            u_t[i] = u_new;
            if (soft)
                o_t[i] = soft_spike(u_new, cfg_);
            else
                o_t[i] = u_new >= cfg_.v_th ? 1.0 : 0.0;
        }
        o_prev = o_t;
    }
    if (ctx.record) {
        cached_u_ = std::move(u_all);
        cached_o_ = out;
        cached_soft_ = soft;
    }
    return out;
}

Tensor LIFLayer::backward(const Tensor& grad_out) {
    if (cached_u_.empty()) throw std::logic_error("lif: backward without recorded forward");
    if (!grad_out.same_shape(cached_u_)) throw std::invalid_argument("lif: gradient shape mismatch");
    const size_t steps = cached_u_.extent(0);
    const size_t width = cached_u_.size() / steps;
    const double k = cfg_.leak();
    const double decay = 1.0 - k;

    Tensor grad_in(grad_out.shape());
    std::vector<double> d_next(width, 0.0);  // dL/du at step t+1
    for (size_t t = steps; t-- > 0;) {
        const double* u_t = cached_u_.data() + t * width;
        const double* o_t = cached_o_.data() + t * width;
        const double* go = grad_out.data() + t * width;
        double* gi = grad_in.data() + t * width;
        for (size_t i = 0; i < width; ++i) {
            // o_t feeds both the next layer and, through the reset gate,
            // the next membrane value
            double g_spike = go[i] - d_next[i] * decay * u_t[i];
            double d_t = g_spike * surrogate_spike_grad(u_t[i], cfg_) + d_next[i] * decay * (1.0 - o_t[i]);
            gi[i] = d_t * k;
            d_next[i] = d_t;
        }
    }
    return grad_in;
}

// --------------------------------------------------------------- maxpool

Shape MaxPoolLayer::output_sample_shape(const Shape& in) const {
    if (in.size() != 3) throw std::invalid_argument("maxpool: bad input sample shape " + shape_str(in));
    if (in[1] < kernel_ || in[2] < kernel_) throw std::invalid_argument("maxpool: window larger than input");
    return {in[0], (in[1] - kernel_) / stride_ + 1, (in[2] - kernel_) / stride_ + 1};
}

Tensor MaxPoolLayer::forward(const Tensor& x, const PassContext& ctx) {
    expect_rank(x, 5, "maxpool");
    const size_t steps = x.extent(0), batch = x.extent(1), ch = x.extent(2), H = x.extent(3), W = x.extent(4);
    Shape os = output_sample_shape({ch, H, W});
    const size_t OH = os[1], OW = os[2];
    Tensor out({steps, batch, ch, OH, OW});
    bool record = ctx.record;
    if (record) cached_argmax_.assign(out.size(), 0);

    const size_t planes = steps * batch * ch;
    for (size_t p = 0; p < planes; ++p) {
        const double* in_plane = x.data() + p * H * W;
        double* out_plane = out.data() + p * OH * OW;
        for (size_t oh = 0; oh < OH; ++oh)
            for (size_t ow = 0; ow < OW; ++ow) {
                size_t base_h = oh * stride_, base_w = ow * stride_;
                double best = in_plane[base_h * W + base_w];
                size_t best_idx = base_h * W + base_w;
                for (size_t kh = 0; kh < kernel_; ++kh)
                    for (size_t kw = 0; kw < kernel_; ++kw) {
                        size_t idx = (base_h + kh) * W + (base_w + kw);
                        if (in_plane[idx] > best) {
                            best = in_plane[idx];
                            best_idx = idx;
                        }
                    }
                out_plane[oh * OW + ow] = best;
                if (record) cached_argmax_[p * OH * OW + oh * OW + ow] = p * H * W + best_idx;
            }
    }
    if (record) {
        cached_in_shape_ = x.shape();
        cached_out_shape_ = out.shape();
    }
    return out;
}

Tensor MaxPoolLayer::backward(const Tensor& grad_out) {
    if (cached_argmax_.empty()) throw std::logic_error("maxpool: backward without recorded forward");
    if (grad_out.shape() != cached_out_shape_) throw std::invalid_argument("maxpool: gradient shape mismatch");
    Tensor grad_in(cached_in_shape_);
    for (size_t i = 0; i < grad_out.size(); ++i) grad_in[cached_argmax_[i]] += grad_out[i];
    return grad_in;
}

// --------------------------------------------------------------- dropout

DropoutLayer::DropoutLayer(double rate) : rate_(rate) {
    if (rate_ < 0.0 || rate_ >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
}

Tensor DropoutLayer::forward(const Tensor& x, const PassContext& ctx) {
    if (x.rank() < 2) throw std::invalid_argument("dropout: expected (T, N, ...) input");
    cached_train_ = ctx.mode == RunMode::train;
    if (!cached_train_) return x;
    if (!ctx.dropout_rng) throw std::invalid_argument("dropout: train-mode pass needs a dropout rng");

    const size_t steps = x.extent(0), batch = x.extent(1);
    const size_t feat = x.size() / (steps * batch);
    // one mask per sample, shared across time steps
    Tensor mask({batch, feat});
    double keep = 1.0 - rate_;
    for (size_t i = 0; i < mask.size(); ++i)
        mask[i] = ctx.dropout_rng->uniform() >= rate_ ? 1.0 / keep : 0.0;

    Tensor out(x.shape());
    for (size_t t = 0; t < steps; ++t)
        for (size_t n = 0; n < batch; ++n) {
            const double* p = x.data() + (t * batch + n) * feat;
            double* q = out.data() + (t * batch + n) * feat;
            const double* m = mask.data() + n * feat;
            for (size_t i = 0; i < feat; ++i) q[i] = p[i] * m[i];
        }
    if (ctx.record) cached_mask_ = std::move(mask);
    return out;
}

Tensor DropoutLayer::backward(const Tensor& grad_out) {
    if (!cached_train_) return grad_out;
    if (cached_mask_.empty()) throw std::logic_error("dropout: backward without recorded forward");
    const size_t steps = grad_out.extent(0), batch = grad_out.extent(1);
    const size_t feat = grad_out.size() / (steps * batch);
    Tensor grad_in(grad_out.shape());
    for (size_t t = 0; t < steps; ++t)
        for (size_t n = 0; n < batch; ++n) {
            const double* p = grad_out.data() + (t * batch + n) * feat;
            double* q = grad_in.data() + (t * batch + n) * feat;
            const double* m = cached_mask_.data() + n * feat;
            for (size_t i = 0; i < feat; ++i) q[i] = p[i] * m[i];
        }
    return grad_in;
}

// --------------------------------------------------------------- flatten

Tensor FlattenLayer::forward(const Tensor& x, const PassContext&) {
    if (x.rank() < 2) throw std::invalid_argument("flatten: expected (T, N, ...) input");
    cached_in_shape_ = x.shape();
    size_t steps = x.extent(0), batch = x.extent(1);
    return x.reshaped({steps, batch, x.size() / (steps * batch)});
}

Tensor FlattenLayer::backward(const Tensor& grad_out) {
    return grad_out.reshaped(cached_in_shape_);
}

// ------------------------------------------------------- fully connected

FullyConnectedLayer::FullyConnectedLayer(size_t in_dim, size_t out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
    if (in_dim == 0 || out_dim == 0) throw std::invalid_argument("fc: dimensions must be positive");
    weight_ = Tensor({out_dim_, in_dim_});
    bias_ = Tensor({out_dim_});
    grad_weight_ = Tensor(weight_.shape());
    grad_bias_ = Tensor(bias_.shape());
}

void FullyConnectedLayer::init(Rng& rng) {
    double bound = init_gain / std::sqrt(static_cast<double>(in_dim_));
    for (double& w : weight_.vec()) w = rng.uniform(-bound, bound);
    bias_.fill(0.0);
}

Shape FullyConnectedLayer::output_sample_shape(const Shape& in) const {
    if (in.size() != 1 || in[0] != in_dim_)
        throw std::invalid_argument("fc: bad input sample shape " + shape_str(in));
    return {out_dim_};
}

Tensor FullyConnectedLayer::forward(const Tensor& x, const PassContext& ctx) {
    expect_rank(x, 3, "fc");
    if (x.extent(2) != in_dim_)
        throw std::invalid_argument("fc: input width " + std::to_string(x.extent(2)) + ", expected " +
                                    std::to_string(in_dim_));
    const size_t rows = x.extent(0) * x.extent(1);
    Tensor out({x.extent(0), x.extent(1), out_dim_});
    for (size_t r = 0; r < rows; ++r) {
        const double* xi = x.data() + r * in_dim_;
        double* yo = out.data() + r * out_dim_;
        for (size_t o = 0; o < out_dim_; ++o) {
            const double* w = weight_.data() + o * in_dim_;
            double acc = bias_[o];
            for (size_t d = 0; d < in_dim_; ++d) acc += w[d] * xi[d];
            yo[o] = acc;
        }
    }
    if (ctx.record) cached_input_ = x;
    return out;
}

Tensor FullyConnectedLayer::backward(const Tensor& grad_out) {
    if (cached_input_.empty()) throw std::logic_error("fc: backward without recorded forward");
    const size_t rows = cached_input_.extent(0) * cached_input_.extent(1);
    Tensor grad_in(cached_input_.shape());
    for (size_t r = 0; r < rows; ++r) {
        const double* xi = cached_input_.data() + r * in_dim_;
        const double* go = grad_out.data() + r * out_dim_;
        double* gi = grad_in.data() + r * in_dim_;
        for (size_t o = 0; o < out_dim_; ++o) {
            double g = go[o];
            if (g == 0.0) continue;
            grad_bias_[o] += g;
            double* gw = grad_weight_.data() + o * in_dim_;
            const double* w = weight_.data() + o * in_dim_;
            for (size_t d = 0; d < in_dim_; ++d) {
                gw[d] += g * xi[d];
                gi[d] += g * w[d];
            }
        }
    }
    return grad_in;
}

void FullyConnectedLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({"fc.weight", &weight_, &grad_weight_, frozen});
    out.push_back({"fc.bias", &bias_, &grad_bias_, frozen});
}

void FullyConnectedLayer::zero_grad() {
    grad_weight_.fill(0.0);
    grad_bias_.fill(0.0);
}

// ---------------------------------------------------------------- voting

VotingLayer::VotingLayer(size_t group) : group_(group) {
    if (group_ == 0) throw std::invalid_argument("voting: group size must be positive");
}

Shape VotingLayer::output_sample_shape(const Shape& in) const {
    if (in.size() != 1 || in[0] % group_ != 0)
        throw std::invalid_argument("voting: input width must be a multiple of the group size");
    return {in[0] / group_};
}

Tensor VotingLayer::forward(const Tensor& x, const PassContext&) {
    expect_rank(x, 3, "voting");
    if (x.extent(2) % group_ != 0)
        throw std::invalid_argument("voting: input width must be a multiple of the group size");
    const size_t rows = x.extent(0) * x.extent(1);
    const size_t classes = x.extent(2) / group_;
    cached_in_shape_ = x.shape();
    Tensor out({x.extent(0), x.extent(1), classes});
    for (size_t r = 0; r < rows; ++r) {
        const double* xi = x.data() + r * x.extent(2);
        double* yo = out.data() + r * classes;
        for (size_t c = 0; c < classes; ++c) {
            double s = 0.0;
            for (size_t g = 0; g < group_; ++g) s += xi[c * group_ + g];
            yo[c] = s / static_cast<double>(group_);
        }
    }
    return out;
}

Tensor VotingLayer::backward(const Tensor& grad_out) {
    const size_t rows = cached_in_shape_[0] * cached_in_shape_[1];
    const size_t width = cached_in_shape_[2];
    const size_t classes = width / group_;
    Tensor grad_in(cached_in_shape_);
    for (size_t r = 0; r < rows; ++r) {
        const double* go = grad_out.data() + r * classes;
        double* gi = grad_in.data() + r * width;
        for (size_t c = 0; c < classes; ++c) {
            double g = go[c] / static_cast<double>(group_);
            for (size_t k = 0; k < group_; ++k) gi[c * group_ + k] = g;
        }
    }
    return grad_in;
}

}  // namespace seslr
