#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "seslr/datasets.hpp"
#include "seslr/metrics.hpp"
#include "seslr/network.hpp"
#include "seslr/replay_buffer.hpp"

namespace seslr {

enum class StrategyKind { finetune, joint, er_raw, latent_replay, seslr };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::seslr;
    size_t buffer_capacity = 50;
    double lambda = 1.0;        ///< replay loss weight
    double noise_sigma = 0.4;   ///< sleep-phase feature noise scale
    int pretrain_epochs = 4;
    double pretrain_fraction = 0.5;
    int sleep_epochs = 5;
    size_t batch_replay = 16;
    int joint_epochs = 4;
    std::string optimizer = "adam";
    double lr_pretrain = 1e-3;
    double lr_online = 5e-4;
    double lr_sleep = 5e-4;

    void validate() const;
};

struct ExperimentSetup {
    NetworkSpec net_spec;
    StrategyConfig strategy;
    size_t time_steps = 4;
    uint64_t seed = 1;
};

struct ExperimentData {
    LabeledDataset train;
    LabeledDataset test;
    LabeledDataset pretrain_set;
    TaskStream stream;
};

/// Trains the full network offline for `epochs` epochs; returns the mean
/// loss of each epoch.
std::vector<double> train_offline(Network& net, const LabeledDataset& ds, int epochs, size_t batch_size,
                                  size_t time_steps, const std::string& optimizer, double lr, uint64_t seed);

/// Pretrains the feature extractor (by training the whole network) on a
/// subset containing samples of every class. The caller freezes afterwards.
std::vector<double> pretrain(Network& net, const LabeledDataset& pretrain_set, const StrategyConfig& cfg,
                             size_t batch_size, size_t time_steps, uint64_t seed);

/// Full-precision reservoir of raw inputs: the naive experience-replay
/// buffer. Retention math matches ReplayBuffer.
class RawReservoir {
public:
    RawReservoir(size_t capacity, uint64_t seed);
    bool offer(const Tensor& sample, int label);
    struct Batch {
        Tensor inputs;  ///< (n, C, H, W)
        std::vector<int> labels;
    };
    Batch sample_batch(size_t n, Rng& rng) const;
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    uint64_t seen() const { return seen_; }
    /// Accounting at the reference full precision (32-bit elements).
    size_t payload_bytes() const;

private:
    size_t capacity_;
    uint64_t seen_ = 0;
    std::vector<std::pair<Tensor, int>> entries_;
    Rng rng_;
};

struct WakeResult {
    double loss = 0.0;
    double loss_current = 0.0;
    double loss_replay = 0.0;
    bool replay_present = false;
};

/// One online step: extracts latents, offers them to the reservoir, then
/// trains the classifier on current + replayed features (buffer updated
/// before sampling, so fresh latents may be drawn straight back).
WakeResult wake_step(Network& net, Optimizer& opt, const MiniBatch& batch, ReplayBuffer& buf,
                     const StrategyConfig& cfg, size_t time_steps, bool pre_encoded, Rng& dropout_rng,
                     Rng& replay_rng);

/// Post-stream consolidation: for sleep_epochs epochs, iterate shuffled
/// buffer batches, add N(0, sigma^2) noise per element to the unpacked
/// latents (not re-binarized), and train the classifier with a fresh
/// optimizer. Consumes no new task data. Empty buffer: warns and no-ops.
void sleep_phase(Network& net, const ReplayBuffer& buf, const StrategyConfig& cfg, Rng& dropout_rng,
                 Rng& sleep_rng, Rng& noise_rng, std::ostream* warnings = nullptr);

struct RunResult {
    MetricsReport report;
    std::optional<ReplayBuffer> buffer;  ///< filled for latent strategies
    size_t gradient_updates = 0;         ///< one per stream mini-batch
};

/// Runs one strategy over the stream (single pass, one update per
/// mini-batch; sleep after the stream for seslr) and evaluates.
/// `pretrained_state` optionally injects an already-pretrained network
/// blob so several strategies or sweep points share one pretraining.
RunResult run_experiment(const ExperimentSetup& setup, StrategyKind kind, const ExperimentData& data,
                         const std::vector<uint8_t>* pretrained_state = nullptr);

/// FAA per noise scale with shared pretraining and seed.
std::vector<std::pair<double, double>> noise_sweep(const ExperimentSetup& setup, const ExperimentData& data,
                                                   const std::vector<double>& sigmas);

/// Pretrains once and returns the network state blob for reuse.
std::vector<uint8_t> make_pretrained_state(const ExperimentSetup& setup, const ExperimentData& data);

}  // namespace seslr
