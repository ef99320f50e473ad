#pragma once

#include <filesystem>
#include <vector>

#include "seslr/rng.hpp"
#include "seslr/tensor.hpp"

namespace seslr {

struct LabeledDataset {
    std::vector<Tensor> samples;  ///< (C,H,W), or (T,C,H,W) when pre_encoded
    std::vector<int> labels;
    int class_count = 0;
    bool pre_encoded = false;  ///< samples already carry a leading time axis
    std::vector<std::vector<size_t>> per_class;

    size_t size() const { return samples.size(); }
    void rebuild_index();
    void validate() const;
};

/// Reads an IDX image/label pair (big-endian dims, magic 0x00000803 /
/// 0x00000801); pixel values are scaled to [0, 1].
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct SyntheticOptions {
    size_t blobs_per_class = 4;
    double noise_sigma = 0.08;
    long max_shift = 2;
    double brightness_jitter = 0.2;
    double blob_jitter = 1.0;  ///< per-sample stroke wobble, pixels
    /// Class layouts are drawn from their own stream so that, like real
    /// digit classes, class geometry stays fixed while the dataset seed
    /// varies samples, noise and splits.
    uint64_t geometry_seed = 0x5e5 /* fixed across experiment seeds */;
};

/// Gaussian-blob class prototypes with per-sample shift, brightness jitter
/// and pixel noise; deterministic under seed.
LabeledDataset make_synthetic(int class_count, size_t per_class, const Shape& sample_shape, uint64_t seed,
                              const SyntheticOptions& opts = {});

/// Seeded per-class subsample (keeps original sample order).
LabeledDataset subset_per_class(const LabeledDataset& ds, size_t limit_per_class, uint64_t seed);

/// Seeded fraction of samples per class (the pretraining subset).
LabeledDataset pretrain_subset(const LabeledDataset& ds, double fraction, uint64_t seed);

struct MiniBatch {
    Tensor inputs;  ///< (N, C, H, W), or (N, T, C, H, W) when pre-encoded
    std::vector<int> labels;
    size_t task_id = 0;
};

struct TaskStream {
    std::vector<MiniBatch> batches;
    std::vector<std::vector<int>> task_classes;
    size_t batch_size = 0;
    size_t total_samples = 0;
    bool pre_encoded = false;

    const std::vector<int>& last_task_classes() const;
};

/// Orders tasks by class-id groups, shuffles within each task under seed,
/// and concatenates the per-task batch sequences (fixed batch size, last
/// batch possibly short).
TaskStream split_class_incremental(const LabeledDataset& ds, int classes_per_task, size_t batch_size,
                                   uint64_t seed);

/// (C,H,W) -> (T,C,H,W): T identical copies along a new leading axis.
Tensor replicate_temporal(const Tensor& image, size_t steps);

/// Builds the (T, N, C, H, W) network input for one mini-batch: replicates
/// static images, or transposes pre-encoded (N, T, ...) frame sequences.
Tensor encode_batch(const MiniBatch& batch, size_t steps, bool pre_encoded);

struct Event {
    double t;
    int x;
    int y;
    int polarity;  ///< 0 or 1
};

struct EventList {
    std::vector<Event> events;
    int width = 0;
    int height = 0;
};

/// Splits the event stream into `segments` contiguous groups of near-equal
/// count (difference at most 1, ties broken by timestamp then input order)
/// and accumulates per-(polarity, y, x) counts: output (segments, 2, H, W).
Tensor integrate_events(const EventList& ev, size_t segments, int height, int width);

/// Simple fixture format: one "t,x,y,p" line per event.
EventList load_events_csv(const std::filesystem::path& path, int height, int width);

}  // namespace seslr
