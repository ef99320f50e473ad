#include "seslr/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seslr {

using Kind = NetworkSpec::LayerDesc::Kind;

void Layer::collect_state(std::vector<Tensor*>& out) {
    std::vector<ParamRef> refs;
    collect_params(refs);
    for (auto& r : refs) out.push_back(r.value);
}

void BatchNormLayer::collect_state(std::vector<Tensor*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

void NetworkSpec::validate() const {
    lif.validate();
    if (!(init_gain > 0.0)) throw std::invalid_argument("NetworkSpec: init_gain must be positive");
    if (layers.size() < 3) throw std::invalid_argument("NetworkSpec: too few layers");
    if (input_sample_shape.empty()) throw std::invalid_argument("NetworkSpec: missing input shape");
    if (num_classes < 2) throw std::invalid_argument("NetworkSpec: need at least two classes");
    if (split_index == 0 || split_index >= layers.size())
        throw std::invalid_argument("NetworkSpec: split index must fall strictly inside the layer list");
    if (layers.back().kind != Kind::temporal_avg)
        throw std::invalid_argument("NetworkSpec: last layer must be the temporal-average readout");
    if (layers[layers.size() - 2].kind != Kind::voting)
        throw std::invalid_argument("NetworkSpec: a voting layer must precede the readout");
    for (size_t i = 0; i + 1 < layers.size(); ++i)
        if (layers[i].kind == Kind::temporal_avg)
            throw std::invalid_argument("NetworkSpec: readout may only appear last");
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& d = layers[i];
        if (d.kind == Kind::conv && (d.channels == 0 || d.kernel == 0))
            throw std::invalid_argument("NetworkSpec: conv needs channels and kernel");
        if (d.kind == Kind::fc && d.width == 0) throw std::invalid_argument("NetworkSpec: fc needs a width");
        if (d.kind == Kind::dropout && (d.rate < 0.0 || d.rate >= 1.0))
            throw std::invalid_argument("NetworkSpec: dropout rate must lie in [0, 1)");
        if (d.kind == Kind::batchnorm && (i == 0 || layers[i - 1].kind != Kind::conv))
            throw std::invalid_argument("NetworkSpec: batch norm must follow a convolution");
        if (d.kind == Kind::voting && i != layers.size() - 2)
            throw std::invalid_argument("NetworkSpec: voting layer must sit just before the readout");
    }
    // the wiring fc must hand voting num_classes * group neurons
    size_t group = layers[layers.size() - 2].group;
    size_t last_fc = 0;
    for (const auto& d : layers)
        if (d.kind == Kind::fc) last_fc = d.width;
    if (last_fc == 0) throw std::invalid_argument("NetworkSpec: classifier needs a fully-connected layer");
    if (last_fc != num_classes * group)
        throw std::invalid_argument("NetworkSpec: last fc width " + std::to_string(last_fc) +
                                    " must equal num_classes * voting group = " +
                                    std::to_string(num_classes * group));
}

namespace {

struct BuiltLayers {
    std::vector<std::unique_ptr<Layer>> extractor;
    std::vector<std::unique_ptr<Layer>> classifier;
};

BuiltLayers build_from_spec(const NetworkSpec& spec) {
    spec.validate();
    BuiltLayers out;
    Shape shape = spec.input_sample_shape;
    auto* dst = &out.extractor;

    for (size_t i = 0; i < spec.layers.size(); ++i) {
        if (i == spec.split_index) dst = &out.classifier;
        const auto& d = spec.layers[i];
        switch (d.kind) {
            case Kind::conv: {
                if (shape.size() != 3)
                    throw std::invalid_argument("NetworkSpec: conv needs a (C,H,W) input, got " + shape_str(shape));
                auto conv = std::make_unique<Conv2dLayer>(shape[0], d.channels, d.kernel,
                                                          d.stride == 0 ? 1 : d.stride, -1);
                conv->init_gain = spec.init_gain;
                shape = conv->output_sample_shape(shape);
                dst->push_back(std::move(conv));
                if (i + 1 < spec.layers.size() && spec.layers[i + 1].kind == Kind::batchnorm) {
                    dst->push_back(std::make_unique<BatchNormLayer>(shape[0]));
                    ++i;
                }
                dst->push_back(std::make_unique<LIFLayer>(spec.lif));
                break;
            }
            case Kind::batchnorm:
                throw std::invalid_argument("NetworkSpec: batch norm must follow a convolution");
            case Kind::maxpool: {
                auto mp = std::make_unique<MaxPoolLayer>(d.kernel == 0 ? 2 : d.kernel,
                                                         d.stride == 0 ? 2 : d.stride);
                shape = mp->output_sample_shape(shape);
                dst->push_back(std::move(mp));
                break;
            }
            case Kind::dropout:
                dst->push_back(std::make_unique<DropoutLayer>(d.rate));
                break;
            case Kind::fc: {
                if (shape.size() > 1) {
                    dst->push_back(std::make_unique<FlattenLayer>());
                    shape = {numel(shape)};
                }
                auto fc = std::make_unique<FullyConnectedLayer>(shape[0], d.width);
                fc->init_gain = spec.init_gain;
                dst->push_back(std::move(fc));
                dst->push_back(std::make_unique<LIFLayer>(spec.lif));
                shape = {d.width};
                break;
            }
            case Kind::voting: {
                auto vote = std::make_unique<VotingLayer>(d.group);
                shape = vote->output_sample_shape(shape);
                dst->push_back(std::move(vote));
                break;
            }
            case Kind::temporal_avg:
                break;  // readout is built into classify_latent
        }
    }
    if (shape.size() != 1 || shape[0] != spec.num_classes)
        throw std::invalid_argument("NetworkSpec: network emits " + shape_str(shape) + ", expected " +
                                    std::to_string(spec.num_classes) + " classes");

    // the feature boundary must carry spikes
    bool binary = false;
    for (const auto& layer : out.extractor) binary = layer->binary_output(binary);
    if (!binary)
        throw std::invalid_argument("NetworkSpec: layer before the split must emit binary spikes");
    return out;
}

}  // namespace

Network::Network(const NetworkSpec& spec, uint64_t init_seed) {
    auto built = build_from_spec(spec);
    extractor_ = std::move(built.extractor);
    classifier_ = std::move(built.classifier);
    num_classes_ = spec.num_classes;
    Rng rng(init_seed);
    for (auto& l : extractor_) l->init(rng);
    for (auto& l : classifier_) l->init(rng);
}

Network::Network(std::vector<std::unique_ptr<Layer>> extractor, std::vector<std::unique_ptr<Layer>> classifier,
                 size_t num_classes)
    : extractor_(std::move(extractor)), classifier_(std::move(classifier)), num_classes_(num_classes) {
    if (classifier_.empty()) throw std::invalid_argument("Network: classifier half may not be empty");
}

Tensor Network::run_layers(std::vector<std::unique_ptr<Layer>>& layers, const Tensor& x, const PassContext& ctx) {
    Tensor cur = x;
    for (auto& l : layers) cur = l->forward(cur, ctx);
    return cur;
}

Tensor Network::backward_layers(std::vector<std::unique_ptr<Layer>>& layers, const Tensor& grad) {
    Tensor cur = grad;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

Tensor Network::extract_latent(const Tensor& input_seq, const PassContext& ctx) {
    if (input_seq.rank() < 3) throw std::invalid_argument("Network: input must be a (T, N, ...) sequence");
    return run_layers(extractor_, input_seq, ctx);
}

Tensor Network::classify_latent(const Tensor& latent_seq, const PassContext& ctx) {
    if (latent_seq.rank() < 3)
        throw std::invalid_argument("Network: latent must be a (T, N, ...) sequence, got " +
                                    shape_str(latent_seq.shape()));
    Tensor seq = run_layers(classifier_, latent_seq, ctx);
    if (seq.rank() != 3 || seq.extent(2) != num_classes_)
        throw std::logic_error("Network: classifier emitted " + shape_str(seq.shape()));
    return temporal_average(seq);
}

Network::ForwardResult Network::forward(const Tensor& input_seq, const PassContext& ctx) {
    ForwardResult r;
    r.latent = extract_latent(input_seq, ctx);
    if (ctx.spike == SpikeMode::hard && !is_binary(r.latent))
        throw std::logic_error("Network: non-binary latent at the split boundary");
    r.scores = classify_latent(r.latent, ctx);
    return r;
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> out;
    for (auto& l : extractor_) l->collect_params(out);
    for (auto& l : classifier_) l->collect_params(out);
    return out;
}

std::vector<ParamRef> Network::classifier_parameters() {
    std::vector<ParamRef> out;
    for (auto& l : classifier_) l->collect_params(out);
    return out;
}

std::vector<ParamRef> Network::extractor_parameters() {
    std::vector<ParamRef> out;
    for (auto& l : extractor_) l->collect_params(out);
    return out;
}

size_t Network::parameter_count() {
    size_t n = 0;
    for (const auto& p : parameters()) n += p.value->size();
    return n;
}

void Network::freeze_extractor() {
    for (auto& l : extractor_) l->frozen = true;
}

void Network::reinit_classifier(uint64_t seed) {
    Rng rng(seed);
    for (auto& l : classifier_) l->init(rng);
}

bool Network::extractor_frozen() const {
    for (const auto& l : extractor_)
        if (!l->frozen) return false;
    return true;
}

std::vector<uint8_t> Network::extractor_state_bytes() const {
    std::vector<uint8_t> bytes;
    std::vector<Tensor*> tensors;
    for (const auto& l : extractor_) const_cast<Layer&>(*l).collect_state(tensors);
    for (const Tensor* t : tensors) {
        size_t off = bytes.size();
        bytes.resize(off + t->size() * sizeof(double));
        std::memcpy(bytes.data() + off, t->data(), t->size() * sizeof(double));
    }
    return bytes;
}

void Network::zero_grad() {
    for (auto& l : extractor_) l->zero_grad();
    for (auto& l : classifier_) l->zero_grad();
}

namespace {

void write_state(std::ostream& os, const std::vector<Tensor*>& tensors) {
    os.write("SLRP", 4);
    uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 4);
    uint64_t count = tensors.size();
    os.write(reinterpret_cast<const char*>(&count), 8);
    for (const Tensor* t : tensors) {
        uint32_t rank = static_cast<uint32_t>(t->rank());
        os.write(reinterpret_cast<const char*>(&rank), 4);
        for (size_t e : t->shape()) {
            uint64_t ext = e;
            os.write(reinterpret_cast<const char*>(&ext), 8);
        }
        os.write(reinterpret_cast<const char*>(t->data()),
                 static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("Network: parameter write failed");
}

void read_state(std::istream& is, const std::vector<Tensor*>& tensors, const std::string& origin) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SLRP", 4) != 0)
        throw std::runtime_error("Network: bad parameter magic in " + origin);
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("Network: unsupported parameter file version in " + origin);
    uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&count), 8);
    if (count != tensors.size())
        throw std::runtime_error("Network: " + origin + " holds " + std::to_string(count) +
                                 " tensors, network has " + std::to_string(tensors.size()));
    for (Tensor* t : tensors) {
        uint32_t rank = 0;
        is.read(reinterpret_cast<char*>(&rank), 4);
        Shape shape(rank);
        for (uint32_t r = 0; r < rank; ++r) {
            uint64_t ext = 0;
            is.read(reinterpret_cast<char*>(&ext), 8);
            shape[r] = static_cast<size_t>(ext);
        }
        if (shape != t->shape())
            throw std::runtime_error("Network: tensor shape mismatch, " + origin + " has " + shape_str(shape) +
                                     ", network has " + shape_str(t->shape()));
        is.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
        if (!is) throw std::runtime_error("Network: truncated parameter data in " + origin);
    }
}

}  // namespace

std::vector<Tensor*> Network::all_state_tensors() const {
    std::vector<Tensor*> tensors;
    for (const auto& l : extractor_) const_cast<Layer&>(*l).collect_state(tensors);
    for (const auto& l : classifier_) const_cast<Layer&>(*l).collect_state(tensors);
    return tensors;
}

void Network::save_params(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("Network::save_params: cannot open " + path.string());
    write_state(os, all_state_tensors());
}

void Network::load_params(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("Network::load_params: cannot open " + path.string());
    read_state(is, all_state_tensors(), path.string());
}

std::vector<uint8_t> Network::save_state_bytes() const {
    std::ostringstream os(std::ios::binary);
    write_state(os, all_state_tensors());
    std::string s = os.str();
    return std::vector<uint8_t>(s.begin(), s.end());
}

void Network::load_state_bytes(const std::vector<uint8_t>& bytes) {
    std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    read_state(is, all_state_tensors(), "state blob");
}

Tensor temporal_average(const Tensor& seq) {
    if (seq.rank() != 3) throw std::invalid_argument("temporal_average: expected (T, N, C)");
    const size_t steps = seq.extent(0), batch = seq.extent(1), classes = seq.extent(2);
    Tensor out({batch, classes});
    for (size_t t = 0; t < steps; ++t) {
        const double* p = seq.data() + t * batch * classes;
        for (size_t i = 0; i < batch * classes; ++i) out[i] += p[i];
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(steps);
    return out;
}

double softmax_cross_entropy(const Tensor& scores, const std::vector<int>& labels, double weight, Tensor& grad) {
    if (scores.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: expected (N, C) scores");
    const size_t batch = scores.extent(0), classes = scores.extent(1);
    if (labels.size() != batch) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    grad = Tensor(scores.shape());
    double total = 0.0;
    std::vector<double> p(classes);
    for (size_t n = 0; n < batch; ++n) {
        const double* s = scores.data() + n * classes;
        int y = labels[n];
        if (y < 0 || static_cast<size_t>(y) >= classes)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        double mx = s[0];
        for (size_t c = 1; c < classes; ++c) mx = std::max(mx, s[c]);
        double z = 0.0;
        for (size_t c = 0; c < classes; ++c) {
            p[c] = std::exp(s[c] - mx);
            z += p[c];
        }
        for (size_t c = 0; c < classes; ++c) p[c] /= z;
        total += -std::log(std::max(p[static_cast<size_t>(y)], 1e-300));
        double* g = grad.data() + n * classes;
        for (size_t c = 0; c < classes; ++c)
            g[c] = weight * (p[c] - (c == static_cast<size_t>(y) ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
    return total / static_cast<double>(batch);
}

namespace {

Tensor flatten_seq(const Tensor& seq) {
    size_t steps = seq.extent(0), batch = seq.extent(1);
    return seq.reshaped({steps, batch, seq.size() / (steps * batch)});
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2))
        throw std::invalid_argument("train_step: current latents " + shape_str(a.shape()) +
                                    " and replay latents " + shape_str(b.shape()) + " do not align");
    size_t steps = a.extent(0), na = a.extent(1), nb = b.extent(1), width = a.extent(2);
    Tensor out({steps, na + nb, width});
    for (size_t t = 0; t < steps; ++t) {
        std::memcpy(out.data() + t * (na + nb) * width, a.data() + t * na * width, na * width * sizeof(double));
        std::memcpy(out.data() + (t * (na + nb) + na) * width, b.data() + t * nb * width,
                    nb * width * sizeof(double));
    }
    return out;
}

}  // namespace

TrainStepResult compute_gradients(Network& net, const MixedBatch& batch, const LossWeights& weights,
                                  const PassContext& ctx) {
    const bool has_cur_raw = !batch.current_inputs.empty();
    const bool has_cur_lat = !batch.current_latents.empty();
    if (has_cur_raw && has_cur_lat)
        throw std::invalid_argument("train_step: current part given both as inputs and latents");
    const bool has_cur = has_cur_raw || has_cur_lat;
    const bool has_rep = batch.has_replay();
    if (!has_cur && !has_rep) throw std::invalid_argument("train_step: empty batch");
    if (has_cur) {
        const Tensor& c = has_cur_raw ? batch.current_inputs : batch.current_latents;
        if (c.extent(1) != batch.current_labels.size())
            throw std::invalid_argument("train_step: current label count mismatch");
    }
    if (has_rep && batch.replay_latents.extent(1) != batch.replay_labels.size())
        throw std::invalid_argument("train_step: replay label count mismatch");
    if (weights.lambda < 0.0) throw std::invalid_argument("train_step: lambda must be non-negative");

    auto params = net.parameters();
    bool any_trainable = false;
    for (const auto& p : params) any_trainable |= !p.frozen;
    if (!any_trainable) throw std::invalid_argument("train_step: all parameters are frozen");

    const bool train_extractor = has_cur_raw && !net.extractor_frozen();

    Tensor z_cur;
    if (has_cur_raw) {
        PassContext ex_ctx;
        ex_ctx.mode = train_extractor ? RunMode::train : RunMode::eval;
        ex_ctx.spike = ctx.spike;
        ex_ctx.dropout_rng = ctx.dropout_rng;
        ex_ctx.record = train_extractor;
        z_cur = net.run_layers(net.extractor_, batch.current_inputs, ex_ctx);
    } else if (has_cur_lat) {
        if (!net.extractor_frozen())
            throw std::invalid_argument("train_step: precomputed current latents require a frozen extractor");
        z_cur = batch.current_latents;
    }

    Shape z_shape = has_cur ? z_cur.shape() : Shape{};
    Tensor cls_in = concat_batch(has_cur ? flatten_seq(z_cur) : Tensor{}, batch.replay_latents);
    const size_t n_cur = has_cur ? z_cur.extent(1) : 0;
    const size_t n_rep = has_rep ? batch.replay_latents.extent(1) : 0;
    const size_t n_all = n_cur + n_rep;

    PassContext cls_ctx;
    cls_ctx.mode = RunMode::train;
    cls_ctx.spike = ctx.spike;
    cls_ctx.dropout_rng = ctx.dropout_rng;
    cls_ctx.record = true;
    Tensor seq = net.run_layers(net.classifier_, cls_in, cls_ctx);
    Tensor scores = temporal_average(seq);
    const size_t steps = seq.extent(0), classes = scores.extent(1);

    TrainStepResult result;
    Tensor dscores({n_all, classes});
    if (has_cur) {
        Tensor part({n_cur, classes});
        std::memcpy(part.data(), scores.data(), n_cur * classes * sizeof(double));
        Tensor g;
        result.loss_current = softmax_cross_entropy(part, batch.current_labels, 1.0, g);
        std::memcpy(dscores.data(), g.data(), g.size() * sizeof(double));
    }
    if (has_rep) {
        Tensor part({n_rep, classes});
        std::memcpy(part.data(), scores.data() + n_cur * classes, n_rep * classes * sizeof(double));
        Tensor g;
        result.loss_replay = softmax_cross_entropy(part, batch.replay_labels, weights.lambda, g);
        std::memcpy(dscores.data() + n_cur * classes, g.data(), g.size() * sizeof(double));
        result.replay_present = true;
    }
    result.loss = result.loss_current + weights.lambda * result.loss_replay;
    if (!std::isfinite(result.loss)) throw std::runtime_error("train_step: loss is not finite");

    // readout backward: scores are the temporal mean of the voting rates
    Tensor dseq(seq.shape());
    for (size_t t = 0; t < steps; ++t) {
        double* p = dseq.data() + t * n_all * classes;
        for (size_t i = 0; i < n_all * classes; ++i) p[i] = dscores[i] / static_cast<double>(steps);
    }
    Tensor dcls_in = net.backward_layers(net.classifier_, dseq);

    if (train_extractor) {
        Tensor dz({z_shape[0], n_cur, dcls_in.extent(2)});
        for (size_t t = 0; t < z_shape[0]; ++t)
            std::memcpy(dz.data() + t * n_cur * dz.extent(2),
                        dcls_in.data() + t * n_all * dz.extent(2), n_cur * dz.extent(2) * sizeof(double));
        net.backward_layers(net.extractor_, dz.reshaped(z_shape));
    }
    return result;
}

TrainStepResult train_step(Network& net, Optimizer& opt, const MixedBatch& batch, const LossWeights& weights,
                           const PassContext& ctx) {
    TrainStepResult result = compute_gradients(net, batch, weights, ctx);
    opt.step(net.parameters());
    net.zero_grad();
    return result;
}

void SgdOptimizer::step(const std::vector<ParamRef>& params) {
    for (const auto& p : params) {
        if (p.frozen) continue;
        double* w = p.value->data();
        const double* g = p.grad->data();
        for (size_t i = 0; i < p.value->size(); ++i) w[i] -= lr_ * g[i];
    }
}

void AdamOptimizer::step(const std::vector<ParamRef>& params) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& p : params) {
        if (p.frozen) continue;
        auto& mom = state_[p.value];
        if (mom.m.size() != p.value->size()) {
            mom.m.assign(p.value->size(), 0.0);
            mom.v.assign(p.value->size(), 0.0);
        }
        double* w = p.value->data();
        const double* g = p.grad->data();
        for (size_t i = 0; i < p.value->size(); ++i) {
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = mom.m[i] / bc1;
            double vhat = mom.v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::reset() {
    state_.clear();
    t_ = 0;
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr) {
    if (kind == "sgd") return std::make_unique<SgdOptimizer>(lr);
    if (kind == "adam") return std::make_unique<AdamOptimizer>(lr);
    throw std::invalid_argument("unknown optimizer '" + kind + "' (expected sgd or adam)");
}

}  // namespace seslr
