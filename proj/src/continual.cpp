#include "seslr/continual.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace seslr {

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::finetune: return "finetune";
        case StrategyKind::joint: return "joint";
        case StrategyKind::er_raw: return "er_raw";
        case StrategyKind::latent_replay: return "latent_replay";
        case StrategyKind::seslr: return "seslr";
    }
    throw std::logic_error("unknown strategy");
}

StrategyKind strategy_from_string(const std::string& name) {
    if (name == "finetune") return StrategyKind::finetune;
    if (name == "joint") return StrategyKind::joint;
    if (name == "er_raw") return StrategyKind::er_raw;
    if (name == "latent_replay") return StrategyKind::latent_replay;
    if (name == "seslr") return StrategyKind::seslr;
    throw std::invalid_argument("unknown strategy '" + name +
                                "' (expected finetune, joint, er_raw, latent_replay or seslr)");
}

void StrategyConfig::validate() const {
    if (noise_sigma < 0.0) throw std::invalid_argument("strategy: noise_sigma must be non-negative");
    if (sleep_epochs < 0) throw std::invalid_argument("strategy: sleep_epochs must be non-negative");
    if (lambda < 0.0) throw std::invalid_argument("strategy: lambda must be non-negative");
    if (!(pretrain_fraction > 0.0 && pretrain_fraction <= 1.0))
        throw std::invalid_argument("strategy: pretrain_fraction must lie in (0, 1]");
    if (pretrain_epochs < 0) throw std::invalid_argument("strategy: pretrain_epochs must be non-negative");
    if (joint_epochs < 1) throw std::invalid_argument("strategy: joint_epochs must be positive");
    if (buffer_capacity == 0) throw std::invalid_argument("strategy: buffer capacity must be positive");
    if (batch_replay == 0) throw std::invalid_argument("strategy: batch_replay must be positive");
    if (!(lr_pretrain > 0.0 && lr_online > 0.0 && lr_sleep > 0.0))
        throw std::invalid_argument("strategy: learning rates must be positive");
    if (optimizer != "sgd" && optimizer != "adam")
        throw std::invalid_argument("strategy: optimizer must be sgd or adam");
}

namespace {

MiniBatch batch_from_indices(const LabeledDataset& ds, const std::vector<size_t>& idx, size_t off, size_t n) {
    MiniBatch mb;
    const Shape& ss = ds.samples[idx[off]].shape();
    Shape bshape;
    bshape.push_back(n);
    bshape.insert(bshape.end(), ss.begin(), ss.end());
    mb.inputs = Tensor(bshape);
    size_t stride = numel(ss);
    for (size_t i = 0; i < n; ++i) {
        const Tensor& s = ds.samples[idx[off + i]];
        std::memcpy(mb.inputs.data() + i * stride, s.data(), stride * sizeof(double));
        mb.labels.push_back(ds.labels[idx[off + i]]);
    }
    return mb;
}

// latent of one sample out of a (T, N, ...) batch
Tensor slice_sample_latent(const Tensor& z, size_t i) {
    const size_t steps = z.extent(0), batch = z.extent(1);
    const size_t rest = z.size() / (steps * batch);
    Shape out_shape;
    out_shape.push_back(steps);
    for (size_t a = 2; a < z.rank(); ++a) out_shape.push_back(z.extent(a));
    Tensor out(out_shape);
    for (size_t t = 0; t < steps; ++t)
        std::memcpy(out.data() + t * rest, z.data() + (t * batch + i) * rest, rest * sizeof(double));
    return out;
}

Tensor flatten_latent_seq(const Tensor& z) {
    return z.reshaped({z.extent(0), z.extent(1), z.size() / (z.extent(0) * z.extent(1))});
}

}  // namespace

std::vector<double> train_offline(Network& net, const LabeledDataset& ds, int epochs, size_t batch_size,
                                  size_t time_steps, const std::string& optimizer, double lr, uint64_t seed) {
    if (ds.size() == 0) throw std::invalid_argument("train_offline: empty dataset");
    auto opt = make_optimizer(optimizer, lr);
    Rng shuffle_rng(Rng::derive(seed, "offline-shuffle"));
    Rng dropout_rng(Rng::derive(seed, "offline-dropout"));

    std::vector<size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), size_t{0});

    std::vector<double> epoch_losses;
    for (int e = 0; e < epochs; ++e) {
        shuffle_rng.shuffle(idx);
        double loss_sum = 0.0;
        size_t seen = 0;
        for (size_t off = 0; off < idx.size(); off += batch_size) {
            size_t n = std::min(batch_size, idx.size() - off);
            MiniBatch mb = batch_from_indices(ds, idx, off, n);
            MixedBatch mixed;
            mixed.current_inputs = encode_batch(mb, time_steps, ds.pre_encoded);
            mixed.current_labels = mb.labels;
            PassContext ctx;
            ctx.mode = RunMode::train;
            ctx.dropout_rng = &dropout_rng;
            auto r = train_step(net, *opt, mixed, LossWeights{0.0}, ctx);
            loss_sum += r.loss * static_cast<double>(n);
            seen += n;
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(seen));
    }
    return epoch_losses;
}

std::vector<double> pretrain(Network& net, const LabeledDataset& pretrain_set, const StrategyConfig& cfg,
                             size_t batch_size, size_t time_steps, uint64_t seed) {
    cfg.validate();
    if (pretrain_set.class_count <= 0 ||
        pretrain_set.per_class.size() != static_cast<size_t>(pretrain_set.class_count))
        throw std::invalid_argument("pretrain: dataset index is stale");
    for (int c = 0; c < pretrain_set.class_count; ++c)
        if (pretrain_set.per_class[static_cast<size_t>(c)].empty())
            throw std::invalid_argument("pretrain: class " + std::to_string(c) +
                                        " has no samples in the pretraining set");
    if (cfg.pretrain_epochs == 0) return {};
    return train_offline(net, pretrain_set, cfg.pretrain_epochs, batch_size, time_steps, cfg.optimizer,
                         cfg.lr_pretrain, Rng::derive(seed, "pretrain"));
}

RawReservoir::RawReservoir(size_t capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity_ == 0) throw std::invalid_argument("RawReservoir: capacity must be positive");
    entries_.reserve(capacity_);
}

bool RawReservoir::offer(const Tensor& sample, int label) {
    ++seen_;
    if (entries_.size() < capacity_) {
        entries_.emplace_back(sample, label);
        return true;
    }
    size_t j = rng_.index(static_cast<size_t>(seen_));
    if (j < capacity_) {
        entries_[j] = {sample, label};
        return true;
    }
    return false;
}

RawReservoir::Batch RawReservoir::sample_batch(size_t n, Rng& rng) const {
    if (entries_.empty()) throw std::invalid_argument("RawReservoir::sample_batch: buffer is empty");
    std::vector<size_t> picks;
    picks.reserve(n);
    if (n <= entries_.size()) {
        std::vector<size_t> idx(entries_.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        for (size_t i = 0; i < n; ++i) {
            size_t j = i + rng.index(idx.size() - i);
            std::swap(idx[i], idx[j]);
            picks.push_back(idx[i]);
        }
    } else {
        for (size_t i = 0; i < n; ++i) picks.push_back(rng.index(entries_.size()));
    }
    Batch out;
    const Shape& ss = entries_.front().first.shape();
    Shape bshape;
    bshape.push_back(n);
    bshape.insert(bshape.end(), ss.begin(), ss.end());
    out.inputs = Tensor(bshape);
    size_t stride = numel(ss);
    for (size_t i = 0; i < n; ++i) {
        std::memcpy(out.inputs.data() + i * stride, entries_[picks[i]].first.data(), stride * sizeof(double));
        out.labels.push_back(entries_[picks[i]].second);
    }
    return out;
}

size_t RawReservoir::payload_bytes() const {
    size_t total = 0;
    for (const auto& e : entries_) total += e.first.size() * 4;  // 32-bit reference precision
    return total;
}

WakeResult wake_step(Network& net, Optimizer& opt, const MiniBatch& batch, ReplayBuffer& buf,
                     const StrategyConfig& cfg, size_t time_steps, bool pre_encoded, Rng& dropout_rng,
                     Rng& replay_rng) {
    if (!net.extractor_frozen()) throw std::logic_error("wake_step: extractor must be frozen");
    Tensor x = encode_batch(batch, time_steps, pre_encoded);
    PassContext eval_ctx;
    Tensor z = net.extract_latent(x, eval_ctx);
    if (!is_binary(z)) throw std::logic_error("wake_step: non-binary latent at the split boundary");

    const size_t n = z.extent(1);
    for (size_t i = 0; i < n; ++i)
        buf.offer(SpikeTensor::from_binary_unchecked(slice_sample_latent(z, i)), batch.labels[i]);

    MixedBatch mixed;
    mixed.current_latents = flatten_latent_seq(z);
    mixed.current_labels = batch.labels;
    if (cfg.batch_replay > 0 && !buf.empty()) {
        auto rb = buf.sample_batch(cfg.batch_replay, replay_rng);
        mixed.replay_latents = std::move(rb.latents);
        mixed.replay_labels = std::move(rb.labels);
    }

    PassContext ctx;
    ctx.mode = RunMode::train;
    ctx.dropout_rng = &dropout_rng;
    auto r = train_step(net, opt, mixed, LossWeights{cfg.lambda}, ctx);
    return {r.loss, r.loss_current, r.loss_replay, r.replay_present};
}

void sleep_phase(Network& net, const ReplayBuffer& buf, const StrategyConfig& cfg, Rng& dropout_rng,
                 Rng& sleep_rng, Rng& noise_rng, std::ostream* warnings) {
    cfg.validate();
    if (cfg.sleep_epochs == 0) return;
    if (buf.empty()) {
        if (warnings) *warnings << "sleep phase skipped: replay buffer is empty\n";
        return;
    }
    auto opt = make_optimizer(cfg.optimizer, cfg.lr_sleep);  // fresh optimizer state

    const auto& entries = buf.entries();
    const Shape& ss = entries.front().shape;
    const size_t steps = ss.size() >= 2 ? ss[0] : 1;
    const size_t features = numel(ss) / steps;

    std::vector<size_t> idx(entries.size());
    std::iota(idx.begin(), idx.end(), size_t{0});

    for (int e = 0; e < cfg.sleep_epochs; ++e) {
        sleep_rng.shuffle(idx);
        for (size_t off = 0; off < idx.size(); off += cfg.batch_replay) {
            size_t n = std::min(cfg.batch_replay, idx.size() - off);
            MixedBatch mixed;
            mixed.replay_latents = Tensor({steps, n, features});
            for (size_t i = 0; i < n; ++i) {
                const BitPackedSample& s = entries[idx[off + i]];
                mixed.replay_labels.push_back(s.label);
                for (size_t t = 0; t < steps; ++t)
                    for (size_t d = 0; d < features; ++d) {
                        size_t bit = t * features + d;
                        double v = (s.bits[bit / 8] >> (bit % 8)) & 1u ? 1.0 : 0.0;
                        mixed.replay_latents[(t * n + i) * features + d] =
                            v + noise_rng.normal(0.0, cfg.noise_sigma);
                    }
            }
            PassContext ctx;
            ctx.mode = RunMode::train;
            ctx.dropout_rng = &dropout_rng;
            train_step(net, *opt, mixed, LossWeights{1.0}, ctx);
        }
    }
}

RunResult run_experiment(const ExperimentSetup& setup, StrategyKind kind, const ExperimentData& data,
                         const std::vector<uint8_t>* pretrained_state) {
    setup.strategy.validate();
    auto t0 = std::chrono::steady_clock::now();
    const StrategyConfig& cfg = setup.strategy;
    const TaskStream& stream = data.stream;
    if (stream.batches.empty()) throw std::invalid_argument("run_experiment: empty task stream");
    const size_t T = setup.time_steps;

    Network net(setup.net_spec, Rng::derive(setup.seed, "init"));

    RunResult rr;
    const bool latent_family =
        kind == StrategyKind::latent_replay || kind == StrategyKind::seslr || kind == StrategyKind::er_raw;

    if (latent_family) {
        if (pretrained_state)
            net.load_state_bytes(*pretrained_state);
        else
            pretrain(net, data.pretrain_set, cfg, stream.batch_size, T, setup.seed);
        net.freeze_extractor();
        // the stream's classes are unknown until their task arrives: the
        // online phase starts from a fresh classifier over frozen features
        net.reinit_classifier(Rng::derive(setup.seed, "classifier-init"));
    }

    Rng dropout_rng(Rng::derive(setup.seed, "dropout"));
    Rng replay_rng(Rng::derive(setup.seed, "replay"));

    switch (kind) {
        case StrategyKind::finetune: {
            auto opt = make_optimizer(cfg.optimizer, cfg.lr_online);
            for (const MiniBatch& mb : stream.batches) {
                MixedBatch mixed;
                mixed.current_inputs = encode_batch(mb, T, stream.pre_encoded);
                mixed.current_labels = mb.labels;
                PassContext ctx;
                ctx.mode = RunMode::train;
                ctx.dropout_rng = &dropout_rng;
                train_step(net, *opt, mixed, LossWeights{cfg.lambda}, ctx);
                ++rr.gradient_updates;
            }
            break;
        }
        case StrategyKind::joint: {
            train_offline(net, data.train, cfg.joint_epochs, stream.batch_size, T, cfg.optimizer,
                          cfg.lr_pretrain, Rng::derive(setup.seed, "joint"));
            break;
        }
        case StrategyKind::er_raw: {
            RawReservoir raw(cfg.buffer_capacity, Rng::derive(setup.seed, "reservoir"));
            auto opt = make_optimizer(cfg.optimizer, cfg.lr_online);
            PassContext eval_ctx;
            for (const MiniBatch& mb : stream.batches) {
                Tensor x = encode_batch(mb, T, stream.pre_encoded);
                Tensor z = net.extract_latent(x, eval_ctx);
                size_t stride = mb.inputs.size() / mb.labels.size();
                Shape ss(mb.inputs.shape().begin() + 1, mb.inputs.shape().end());
                for (size_t i = 0; i < mb.labels.size(); ++i) {
                    Tensor sample(ss);
                    std::memcpy(sample.data(), mb.inputs.data() + i * stride, stride * sizeof(double));
                    raw.offer(sample, mb.labels[i]);
                }
                MixedBatch mixed;
                mixed.current_latents = flatten_latent_seq(z);
                mixed.current_labels = mb.labels;
                if (cfg.batch_replay > 0 && !raw.empty()) {
                    auto rb = raw.sample_batch(cfg.batch_replay, replay_rng);
                    MiniBatch replay_mb;
                    replay_mb.inputs = std::move(rb.inputs);
                    replay_mb.labels = rb.labels;
                    Tensor xr = encode_batch(replay_mb, T, stream.pre_encoded);
                    mixed.replay_latents = flatten_latent_seq(net.extract_latent(xr, eval_ctx));
                    mixed.replay_labels = std::move(rb.labels);
                }
                PassContext ctx;
                ctx.mode = RunMode::train;
                ctx.dropout_rng = &dropout_rng;
                train_step(net, *opt, mixed, LossWeights{cfg.lambda}, ctx);
                ++rr.gradient_updates;
            }
            rr.report.buffer_payload_bytes = raw.payload_bytes();
            break;
        }
        case StrategyKind::latent_replay:
        case StrategyKind::seslr: {
            ReplayBuffer buf(cfg.buffer_capacity, Rng::derive(setup.seed, "reservoir"));
            auto opt = make_optimizer(cfg.optimizer, cfg.lr_online);
            for (const MiniBatch& mb : stream.batches) {
                wake_step(net, *opt, mb, buf, cfg, T, stream.pre_encoded, dropout_rng, replay_rng);
                ++rr.gradient_updates;
            }
            if (kind == StrategyKind::seslr) {
                Rng sleep_rng(Rng::derive(setup.seed, "sleep-shuffle"));
                Rng noise_rng(Rng::derive(setup.seed, "noise"));
                sleep_phase(net, buf, cfg, dropout_rng, sleep_rng, noise_rng);
            }
            rr.report.buffer_payload_bytes = buf.payload_bytes();
            rr.report.buffer_header_bytes = buf.header_bytes();
            rr.buffer = std::move(buf);
            break;
        }
    }

    uint64_t payload = rr.report.buffer_payload_bytes;
    uint64_t headers = rr.report.buffer_header_bytes;
    rr.report = evaluate(net, data.test, T);
    rr.report.buffer_payload_bytes = payload;
    rr.report.buffer_header_bytes = headers;
    rr.report.strategy = to_string(kind);
    rr.report.seed = setup.seed;
    rr.report.last_task_classes = stream.last_task_classes();
    rr.report.recency_bias_fraction = recency_bias(rr.report, rr.report.last_task_classes);
    rr.report.wallclock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rr;
}

std::vector<uint8_t> make_pretrained_state(const ExperimentSetup& setup, const ExperimentData& data) {
    Network net(setup.net_spec, Rng::derive(setup.seed, "init"));
    pretrain(net, data.pretrain_set, setup.strategy, data.stream.batch_size, setup.time_steps, setup.seed);
    return net.save_state_bytes();
}

std::vector<std::pair<double, double>> noise_sweep(const ExperimentSetup& setup, const ExperimentData& data,
                                                   const std::vector<double>& sigmas) {
    for (double s : sigmas)
        if (s < 0.0) throw std::invalid_argument("noise_sweep: sigma must be non-negative");
    std::vector<uint8_t> blob = make_pretrained_state(setup, data);
    std::vector<std::pair<double, double>> rows;
    for (double s : sigmas) {
        ExperimentSetup point = setup;
        point.strategy.noise_sigma = s;
        point.strategy.kind = StrategyKind::seslr;
        RunResult rr = run_experiment(point, StrategyKind::seslr, data, &blob);
        rows.emplace_back(s, rr.report.faa);
    }
    return rows;
}

}  // namespace seslr
