#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "seslr/lif.hpp"
#include "seslr/rng.hpp"
#include "seslr/tensor.hpp"

namespace seslr {

enum class RunMode { train, eval };

/// hard = Heaviside spikes (production); soft = smooth surrogate spikes,
/// used only by gradient checking so that analytic gradients are the exact
/// derivative of the forward pass.
enum class SpikeMode { hard, soft };

struct PassContext {
    RunMode mode = RunMode::eval;
    SpikeMode spike = SpikeMode::hard;
    Rng* dropout_rng = nullptr;  ///< required for train-mode passes through dropout
    bool record = false;         ///< keep caches for a following backward
};

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
    bool frozen = false;
};

/// One stage of the network. Layers consume and produce whole sequences
/// shaped (T, N, ...); stateful layers (LIF) run their own time recursion
/// internally, which is exact because the architecture is feedforward with
/// only per-layer self-recurrence.
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string name() const = 0;
    virtual Tensor forward(const Tensor& x, const PassContext& ctx) = 0;
    /// Gradient wrt input from gradient wrt output; accumulates parameter
    /// gradients. Valid after a recorded forward.
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void collect_params(std::vector<ParamRef>& out) { (void)out; }
    /// Tensors defining the layer's behavior: parameters plus tracked
    /// statistics. Used for persistence and the freeze invariant.
    virtual void collect_state(std::vector<Tensor*>& out);
    virtual void init(Rng& rng) { (void)rng; }
    virtual void zero_grad() {}
    /// Whether outputs are exactly {0,1} given binary inputs (in eval mode).
    virtual bool binary_output(bool binary_input) const {
        (void)binary_input;
        return false;
    }
    virtual Shape output_sample_shape(const Shape& in) const = 0;

    bool frozen = false;
};

class Conv2dLayer : public Layer {
public:
    Conv2dLayer(size_t in_ch, size_t out_ch, size_t kernel, size_t stride = 1, long pad = -1);
    std::string name() const override { return "conv2d"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    void zero_grad() override;
    Shape output_sample_shape(const Shape& in) const override;

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    double init_gain = 1.0;

private:
    size_t in_ch_, out_ch_, kernel_, stride_, pad_;
    Tensor weight_, bias_, grad_weight_, grad_bias_;
    Tensor cached_input_;
    Shape cached_out_shape_;
};

class BatchNormLayer : public Layer {
public:
    explicit BatchNormLayer(size_t channels, double eps = 1e-5, double momentum = 0.1);
    std::string name() const override { return "batchnorm"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamRef>& out) override;
    void collect_state(std::vector<Tensor*>& out) override;
    void init(Rng& rng) override;
    void zero_grad() override;
    Shape output_sample_shape(const Shape& in) const override { return in; }

    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }

private:
    size_t channels_;
    double eps_, momentum_;
    Tensor gamma_, beta_, grad_gamma_, grad_beta_;
    Tensor running_mean_, running_var_;
    Tensor cached_xhat_;
    std::vector<double> cached_inv_std_;
    bool cached_train_ = false;
    Shape cached_shape_;
};

class LIFLayer : public Layer {
public:
    explicit LIFLayer(LIFConfig cfg) : cfg_(cfg) { cfg_.validate(); }
    std::string name() const override { return "lif"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    bool binary_output(bool) const override { return true; }
    Shape output_sample_shape(const Shape& in) const override { return in; }

    const LIFConfig& config() const { return cfg_; }

private:
    LIFConfig cfg_;
    Tensor cached_u_, cached_o_;
    bool cached_soft_ = false;
};

class MaxPoolLayer : public Layer {
public:
    explicit MaxPoolLayer(size_t kernel = 2, size_t stride = 2) : kernel_(kernel), stride_(stride) {}
    std::string name() const override { return "maxpool"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    bool binary_output(bool binary_input) const override { return binary_input; }
    Shape output_sample_shape(const Shape& in) const override;

private:
    size_t kernel_, stride_;
    std::vector<size_t> cached_argmax_;
    Shape cached_in_shape_, cached_out_shape_;
};

class DropoutLayer : public Layer {
public:
    explicit DropoutLayer(double rate);
    std::string name() const override { return "dropout"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    bool binary_output(bool binary_input) const override { return binary_input; }  // eval: identity
    Shape output_sample_shape(const Shape& in) const override { return in; }

private:
    double rate_;
    Tensor cached_mask_;  // per (n, features), shared across time steps
    bool cached_train_ = false;
};

class FlattenLayer : public Layer {
public:
    std::string name() const override { return "flatten"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    bool binary_output(bool binary_input) const override { return binary_input; }
    Shape output_sample_shape(const Shape& in) const override { return {numel(in)}; }

private:
    Shape cached_in_shape_;
};

class FullyConnectedLayer : public Layer {
public:
    FullyConnectedLayer(size_t in_dim, size_t out_dim);
    std::string name() const override { return "fc"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    void zero_grad() override;
    Shape output_sample_shape(const Shape& in) const override;

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    double init_gain = 1.0;

private:
    size_t in_dim_, out_dim_;
    Tensor weight_, bias_, grad_weight_, grad_bias_;
    Tensor cached_input_;
};

/// Averages each group of `group` neurons into one class rate.
class VotingLayer : public Layer {
public:
    explicit VotingLayer(size_t group);
    std::string name() const override { return "voting"; }
    Tensor forward(const Tensor& x, const PassContext& ctx) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_sample_shape(const Shape& in) const override;

private:
    size_t group_;
    Shape cached_in_shape_;
};

/// Architecture description in the vocabulary of the network tables:
/// conv blocks, batch norm, max pooling, dropout, fully connected widths,
/// a voting group and the temporal-average readout. A LIF stage implicitly
/// follows every conv (after its batch norm) and every fc.
struct NetworkSpec {
    struct LayerDesc {
        enum class Kind { conv, batchnorm, maxpool, dropout, fc, voting, temporal_avg };
        Kind kind{};
        size_t channels = 0;  // conv
        size_t kernel = 0;    // conv / maxpool
        size_t stride = 0;    // conv / maxpool; 0 = default
        double rate = 0.5;    // dropout
        size_t width = 0;     // fc
        size_t group = 10;    // voting
    };

    std::vector<LayerDesc> layers;
    size_t split_index = 0;  ///< descriptors [0, split) form the feature extractor
    Shape input_sample_shape;
    size_t num_classes = 10;
    LIFConfig lif;
    /// Uniform init bound scale g/sqrt(fan_in); spiking stages need enough
    /// drive to reach threshold from the start.
    double init_gain = 5.0;

    void validate() const;
};

class Optimizer;

struct MixedBatch {
    Tensor current_inputs;   ///< (T, Nc, C, H, W); empty when absent
    Tensor current_latents;  ///< alternative to current_inputs when the
                             ///< extractor output is already known and the
                             ///< extractor is frozen: (T, Nc, D)
    std::vector<int> current_labels;
    Tensor replay_latents;  ///< (T, Nr, D) real-valued; empty when absent
    std::vector<int> replay_labels;

    bool has_current() const { return !current_inputs.empty() || !current_latents.empty(); }
    bool has_replay() const { return !replay_latents.empty(); }
};

struct LossWeights {
    double lambda = 1.0;  ///< weight of the replay term
};

struct TrainStepResult {
    double loss = 0.0;
    double loss_current = 0.0;
    double loss_replay = 0.0;
    bool replay_present = false;
};

/// Feature extractor + classifier built from a NetworkSpec. Evaluation
/// passes (record=false, eval mode) write no shared state and may run
/// concurrently; training passes must not.
class Network {
public:
    Network(const NetworkSpec& spec, uint64_t init_seed);

    /// Assembles a network directly from expanded layers (test hook and
    /// gradient-check rigs; the descriptor path is the normal route).
    Network(std::vector<std::unique_ptr<Layer>> extractor, std::vector<std::unique_ptr<Layer>> classifier,
            size_t num_classes);

    struct ForwardResult {
        Tensor scores;  ///< (N, classes): voting rates averaged over time
        Tensor latent;  ///< (T, N, ...) spikes at the split boundary
    };

    /// Runs extractor then classifier; in hard spike mode the latent is
    /// checked to be binary.
    ForwardResult forward(const Tensor& input_seq, const PassContext& ctx);

    /// f(X): extractor half only.
    Tensor extract_latent(const Tensor& input_seq, const PassContext& ctx);

    /// g(Z): classifier half on (possibly real-valued) latents; returns
    /// (N, classes). Identical arithmetic to the tail of forward().
    Tensor classify_latent(const Tensor& latent_seq, const PassContext& ctx);

    size_t num_classes() const { return num_classes_; }

    std::vector<ParamRef> parameters();
    std::vector<ParamRef> classifier_parameters();
    std::vector<ParamRef> extractor_parameters();
    size_t parameter_count();

    void freeze_extractor();
    bool extractor_frozen() const;

    /// Fresh random classifier head; the continual phase must start with
    /// the stream's classes unknown.
    void reinit_classifier(uint64_t seed);

    /// Every tensor of the extractor half (parameters and batch-norm
    /// running statistics) as raw bytes; used by the freeze invariant.
    std::vector<uint8_t> extractor_state_bytes() const;

    void zero_grad();

    void save_params(const std::filesystem::path& path) const;
    void load_params(const std::filesystem::path& path);

    /// Whole-network state (parameters + batch-norm statistics) as a blob;
    /// lets strategy runs share one pretrained extractor.
    std::vector<uint8_t> save_state_bytes() const;
    void load_state_bytes(const std::vector<uint8_t>& bytes);

    const std::vector<std::unique_ptr<Layer>>& extractor_layers() const { return extractor_; }
    const std::vector<std::unique_ptr<Layer>>& classifier_layers() const { return classifier_; }

    friend TrainStepResult compute_gradients(Network&, const MixedBatch&, const LossWeights&,
                                             const PassContext&);

private:
    Tensor run_layers(std::vector<std::unique_ptr<Layer>>& layers, const Tensor& x, const PassContext& ctx);
    Tensor backward_layers(std::vector<std::unique_ptr<Layer>>& layers, const Tensor& grad);
    std::vector<Tensor*> all_state_tensors() const;

    std::vector<std::unique_ptr<Layer>> extractor_;
    std::vector<std::unique_ptr<Layer>> classifier_;
    size_t num_classes_ = 0;
};

/// Temporal-average readout: (T, N, C) voting rates -> (N, C) scores.
Tensor temporal_average(const Tensor& seq);

/// Softmax cross-entropy over class scores, mean over the batch. Returns
/// the loss and writes d(loss)/d(scores) scaled by `weight` into grad.
double softmax_cross_entropy(const Tensor& scores, const std::vector<int>& labels, double weight, Tensor& grad);

/// Loss and parameter gradients of the mixed objective L_current + lambda
/// * L_replay, accumulated into the layers and left for the caller (read
/// via parameters()). Current raw inputs go through the extractor
/// (training it only when unfrozen); replay latents enter at the
/// classifier.
TrainStepResult compute_gradients(Network& net, const MixedBatch& batch, const LossWeights& weights,
                                  const PassContext& ctx);

/// compute_gradients followed by one optimizer update of the unfrozen
/// parameters; gradients are cleared afterwards.
TrainStepResult train_step(Network& net, Optimizer& opt, const MixedBatch& batch, const LossWeights& weights,
                           const PassContext& ctx);

class Optimizer {
public:
    explicit Optimizer(double lr) : lr_(lr) {}
    virtual ~Optimizer() = default;
    virtual void step(const std::vector<ParamRef>& params) = 0;
    virtual void reset() {}
    double learning_rate() const { return lr_; }

protected:
    double lr_;
};

class SgdOptimizer : public Optimizer {
public:
    explicit SgdOptimizer(double lr) : Optimizer(lr) {}
    void step(const std::vector<ParamRef>& params) override;
};

class AdamOptimizer : public Optimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<ParamRef>& params) override;
    void reset() override;

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_;
    uint64_t t_ = 0;
    std::unordered_map<const Tensor*, Moments> state_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr);

}  // namespace seslr
