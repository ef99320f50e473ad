#include "seslr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace seslr {

void LabeledDataset::rebuild_index() {
    per_class.assign(static_cast<size_t>(class_count), {});
    for (size_t i = 0; i < samples.size(); ++i) {
        int y = labels[i];
        if (y < 0 || y >= class_count)
            throw std::invalid_argument("LabeledDataset: label " + std::to_string(y) + " out of range");
        per_class[static_cast<size_t>(y)].push_back(i);
    }
}

void LabeledDataset::validate() const {
    if (samples.size() != labels.size())
        throw std::invalid_argument("LabeledDataset: sample/label count mismatch");
    size_t indexed = 0;
    for (const auto& c : per_class) indexed += c.size();
    if (indexed != samples.size()) throw std::invalid_argument("LabeledDataset: stale per-class index");
    for (size_t i = 1; i < samples.size(); ++i)
        if (!samples[i].same_shape(samples[0]))
            throw std::invalid_argument("LabeledDataset: samples disagree in shape");
}

namespace {

uint32_t read_be_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error(std::string("load_idx: truncated file while reading ") + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("load_idx: cannot open image file " + images_path.string());
    uint32_t magic = read_be_u32(img, "image magic");
    if (magic != 0x00000803u)
        throw std::runtime_error("load_idx: bad image magic 0x" + [&] {
            std::ostringstream os;
            os << std::hex << magic;
            return os.str();
        }() + " in " + images_path.string());
    uint32_t count = read_be_u32(img, "image count");
    uint32_t rows = read_be_u32(img, "rows");
    uint32_t cols = read_be_u32(img, "cols");

    std::vector<unsigned char> pixels(static_cast<size_t>(count) * rows * cols);
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!img) throw std::runtime_error("load_idx: truncated image data in " + images_path.string());

    std::ifstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw std::runtime_error("load_idx: cannot open label file " + labels_path.string());
    uint32_t lmagic = read_be_u32(lbl, "label magic");
    if (lmagic != 0x00000801u)
        throw std::runtime_error("load_idx: bad label magic in " + labels_path.string());
    uint32_t lcount = read_be_u32(lbl, "label count");
    if (lcount != count)
        throw std::runtime_error("load_idx: image count " + std::to_string(count) + " != label count " +
                                 std::to_string(lcount));
    std::vector<unsigned char> raw_labels(lcount);
    lbl.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size()));
    if (!lbl) throw std::runtime_error("load_idx: truncated label data in " + labels_path.string());

    LabeledDataset ds;
    ds.samples.reserve(count);
    ds.labels.reserve(count);
    int max_label = 0;
    for (uint32_t i = 0; i < count; ++i) {
        Tensor s({1, rows, cols});
        const unsigned char* px = pixels.data() + static_cast<size_t>(i) * rows * cols;
        for (size_t p = 0; p < static_cast<size_t>(rows) * cols; ++p) s[p] = px[p] / 255.0;
        ds.samples.push_back(std::move(s));
        ds.labels.push_back(raw_labels[i]);
        max_label = std::max(max_label, static_cast<int>(raw_labels[i]));
    }
    ds.class_count = max_label + 1;
    ds.rebuild_index();
    return ds;
}

LabeledDataset make_synthetic(int class_count, size_t per_class, const Shape& sample_shape, uint64_t seed,
                              const SyntheticOptions& opts) {
    if (class_count < 1) throw std::invalid_argument("make_synthetic: class_count must be positive");
    if (sample_shape.size() != 3) throw std::invalid_argument("make_synthetic: sample shape must be (C,H,W)");
    const size_t C = sample_shape[0], H = sample_shape[1], W = sample_shape[2];

    Rng rng(Rng::derive(seed, "synthetic"));

    // per-class stroke layouts: a few gaussian bumps whose centers wobble
    // per sample, on top of a global shift, brightness and pixel noise.
    // layouts come from the geometry stream, not the dataset seed, so the
    // class structure is the same in every experiment.
    struct Blob {
        double cy, cx, sigma, amp;
    };
    Rng geometry(Rng::derive(opts.geometry_seed, "synthetic-geometry"));
    std::vector<std::vector<Blob>> layouts;
    for (int c = 0; c < class_count; ++c) {
        std::vector<Blob> blobs;
        for (size_t ch = 0; ch < C; ++ch)
            for (size_t b = 0; b < opts.blobs_per_class; ++b)
                blobs.push_back({geometry.uniform(0.15, 0.85) * static_cast<double>(H),
                                 geometry.uniform(0.15, 0.85) * static_cast<double>(W),
                                 geometry.uniform(static_cast<double>(H) / 14.0, static_cast<double>(H) / 7.0),
                                 geometry.uniform(0.5, 1.0)});
        layouts.push_back(std::move(blobs));
    }

    LabeledDataset ds;
    ds.class_count = class_count;
    ds.samples.reserve(static_cast<size_t>(class_count) * per_class);
    const size_t per_ch = opts.blobs_per_class;
    for (int c = 0; c < class_count; ++c) {
        const auto& blobs = layouts[static_cast<size_t>(c)];
        for (size_t i = 0; i < per_class; ++i) {
            double shift_y = static_cast<double>(rng.index(2 * opts.max_shift + 1)) - opts.max_shift;
            double shift_x = static_cast<double>(rng.index(2 * opts.max_shift + 1)) - opts.max_shift;
            double bright = 1.0 + rng.uniform(-opts.brightness_jitter, opts.brightness_jitter);
            std::vector<Blob> wobbled = blobs;
            for (Blob& b : wobbled) {
                b.cy += shift_y + rng.normal(0.0, opts.blob_jitter);
                b.cx += shift_x + rng.normal(0.0, opts.blob_jitter);
            }
            Tensor s(sample_shape, 0.0);
            for (size_t ch = 0; ch < C; ++ch)
                for (size_t y = 0; y < H; ++y)
                    for (size_t x = 0; x < W; ++x) {
                        double v = 0.0;
                        for (size_t b = 0; b < per_ch; ++b) {
                            const Blob& blob = wobbled[ch * per_ch + b];
                            double dy = (static_cast<double>(y) - blob.cy) / blob.sigma;
                            double dx = (static_cast<double>(x) - blob.cx) / blob.sigma;
                            double d2 = dy * dy + dx * dx;
                            if (d2 < 18.0) v += blob.amp * std::exp(-0.5 * d2);
                        }
                        v = bright * v + rng.normal(0.0, opts.noise_sigma);
                        s[(ch * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
                    }
            ds.samples.push_back(std::move(s));
            ds.labels.push_back(c);
        }
    }
    ds.rebuild_index();
    return ds;
}

namespace {

LabeledDataset take_indices(const LabeledDataset& ds, std::vector<size_t> indices) {
    std::sort(indices.begin(), indices.end());
    LabeledDataset out;
    out.class_count = ds.class_count;
    out.pre_encoded = ds.pre_encoded;
    out.samples.reserve(indices.size());
    for (size_t i : indices) {
        out.samples.push_back(ds.samples[i]);
        out.labels.push_back(ds.labels[i]);
    }
    out.rebuild_index();
    return out;
}

}  // namespace

LabeledDataset subset_per_class(const LabeledDataset& ds, size_t limit_per_class, uint64_t seed) {
    Rng rng(Rng::derive(seed, "subset"));
    std::vector<size_t> chosen;
    for (const auto& cls : ds.per_class) {
        std::vector<size_t> idx = cls;
        rng.shuffle(idx);
        size_t take = std::min(limit_per_class, idx.size());
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<long>(take));
    }
    return take_indices(ds, std::move(chosen));
}

LabeledDataset pretrain_subset(const LabeledDataset& ds, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("pretrain_subset: fraction must lie in (0, 1]");
    Rng rng(Rng::derive(seed, "pretrain-subset"));
    std::vector<size_t> chosen;
    for (const auto& cls : ds.per_class) {
        if (cls.empty()) throw std::invalid_argument("pretrain_subset: a class has no samples");
        std::vector<size_t> idx = cls;
        rng.shuffle(idx);
        size_t take = std::max<size_t>(1, static_cast<size_t>(static_cast<double>(idx.size()) * fraction));
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<long>(take));
    }
    return take_indices(ds, std::move(chosen));
}

const std::vector<int>& TaskStream::last_task_classes() const {
    if (task_classes.empty()) throw std::logic_error("TaskStream: no tasks");
    return task_classes.back();
}

TaskStream split_class_incremental(const LabeledDataset& ds, int classes_per_task, size_t batch_size,
                                   uint64_t seed) {
    if (classes_per_task < 1) throw std::invalid_argument("split_class_incremental: classes_per_task must be positive");
    if (batch_size == 0) throw std::invalid_argument("split_class_incremental: batch size must be positive");
    if (ds.class_count % classes_per_task != 0)
        throw std::invalid_argument("split_class_incremental: class count " + std::to_string(ds.class_count) +
                                    " not divisible by classes_per_task " + std::to_string(classes_per_task));
    ds.validate();

    Rng rng(Rng::derive(seed, "stream"));
    TaskStream stream;
    stream.batch_size = batch_size;
    stream.pre_encoded = ds.pre_encoded;
    const int tasks = ds.class_count / classes_per_task;

    for (int t = 0; t < tasks; ++t) {
        std::vector<int> classes;
        std::vector<size_t> indices;
        for (int c = t * classes_per_task; c < (t + 1) * classes_per_task; ++c) {
            classes.push_back(c);
            const auto& cls = ds.per_class[static_cast<size_t>(c)];
            indices.insert(indices.end(), cls.begin(), cls.end());
        }
        rng.shuffle(indices);
        stream.task_classes.push_back(std::move(classes));

        for (size_t off = 0; off < indices.size(); off += batch_size) {
            size_t n = std::min(batch_size, indices.size() - off);
            MiniBatch mb;
            mb.task_id = static_cast<size_t>(t);
            const Shape& ss = ds.samples[indices[off]].shape();
            Shape bshape;
            bshape.push_back(n);
            bshape.insert(bshape.end(), ss.begin(), ss.end());
            mb.inputs = Tensor(bshape);
            size_t stride = numel(ss);
            for (size_t i = 0; i < n; ++i) {
                const Tensor& s = ds.samples[indices[off + i]];
                std::memcpy(mb.inputs.data() + i * stride, s.data(), stride * sizeof(double));
                mb.labels.push_back(ds.labels[indices[off + i]]);
            }
            stream.total_samples += n;
            stream.batches.push_back(std::move(mb));
        }
    }
    return stream;
}

Tensor replicate_temporal(const Tensor& image, size_t steps) {
    if (steps == 0) throw std::invalid_argument("replicate_temporal: need at least one step");
    Shape out_shape;
    out_shape.push_back(steps);
    out_shape.insert(out_shape.end(), image.shape().begin(), image.shape().end());
    Tensor out(out_shape);
    for (size_t t = 0; t < steps; ++t)
        std::memcpy(out.data() + t * image.size(), image.data(), image.size() * sizeof(double));
    return out;
}

Tensor encode_batch(const MiniBatch& batch, size_t steps, bool pre_encoded) {
    const Tensor& x = batch.inputs;
    if (!pre_encoded) {
        // (N, C, H, W) -> (T, N, C, H, W) with identical frames
        Shape out_shape;
        out_shape.push_back(steps);
        out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
        Tensor out(out_shape);
        for (size_t t = 0; t < steps; ++t)
            std::memcpy(out.data() + t * x.size(), x.data(), x.size() * sizeof(double));
        return out;
    }
    // (N, T, ...) -> (T, N, ...)
    if (x.rank() < 3) throw std::invalid_argument("encode_batch: pre-encoded input must be (N, T, ...)");
    size_t n = x.extent(0), t_steps = x.extent(1);
    if (steps != 0 && steps != t_steps)
        throw std::invalid_argument("encode_batch: configured steps " + std::to_string(steps) +
                                    " disagree with encoded frames " + std::to_string(t_steps));
    size_t rest = x.size() / (n * t_steps);
    Shape out_shape{t_steps, n};
    for (size_t a = 2; a < x.rank(); ++a) out_shape.push_back(x.extent(a));
    Tensor out(out_shape);
    for (size_t i = 0; i < n; ++i)
        for (size_t t = 0; t < t_steps; ++t)
            std::memcpy(out.data() + (t * n + i) * rest, x.data() + (i * t_steps + t) * rest,
                        rest * sizeof(double));
    return out;
}

Tensor integrate_events(const EventList& ev, size_t segments, int height, int width) {
    if (ev.events.empty()) throw std::invalid_argument("integrate_events: empty event list");
    if (segments == 0) throw std::invalid_argument("integrate_events: need at least one segment");
    if (height <= 0 || width <= 0) throw std::invalid_argument("integrate_events: bad sensor extent");

    std::vector<const Event*> sorted;
    sorted.reserve(ev.events.size());
    for (const Event& e : ev.events) {
        if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
            throw std::invalid_argument("integrate_events: event coordinates outside the sensor");
        if (e.polarity != 0 && e.polarity != 1)
            throw std::invalid_argument("integrate_events: polarity must be 0 or 1");
        sorted.push_back(&e);
    }
    // timestamp order, input order on ties
    std::stable_sort(sorted.begin(), sorted.end(), [](const Event* a, const Event* b) { return a->t < b->t; });

    Tensor frames({segments, 2, static_cast<size_t>(height), static_cast<size_t>(width)});
    const size_t n = sorted.size();
    const size_t base = n / segments, rem = n % segments;
    size_t pos = 0;
    for (size_t s = 0; s < segments; ++s) {
        size_t take = base + (s < rem ? 1 : 0);
        for (size_t i = 0; i < take; ++i, ++pos) {
            const Event& e = *sorted[pos];
            size_t idx = ((s * 2 + static_cast<size_t>(e.polarity)) * static_cast<size_t>(height) +
                          static_cast<size_t>(e.y)) *
                             static_cast<size_t>(width) +
                         static_cast<size_t>(e.x);
            frames[idx] += 1.0;
        }
    }
    return frames;
}

EventList load_events_csv(const std::filesystem::path& path, int height, int width) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_events_csv: cannot open " + path.string());
    EventList out;
    out.height = height;
    out.width = width;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        Event e{};
        char c1, c2, c3;
        if (!(ls >> e.t >> c1 >> e.x >> c2 >> e.y >> c3 >> e.polarity) || c1 != ',' || c2 != ',' || c3 != ',')
            throw std::runtime_error("load_events_csv: malformed line " + std::to_string(lineno) + " in " +
                                     path.string());
        out.events.push_back(e);
    }
    return out;
}

}  // namespace seslr
