#include "seslr/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace seslr {

using nlohmann::json;
using Kind = NetworkSpec::LayerDesc::Kind;

namespace {

void reject_unknown_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + path + key + "'");
}

template <typename T>
T get_or(const json& obj, const std::string& path, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value type at '" + path + key + "'");
    }
}

Kind layer_kind_from_string(const std::string& s, const std::string& path) {
    if (s == "conv") return Kind::conv;
    if (s == "batchnorm") return Kind::batchnorm;
    if (s == "maxpool") return Kind::maxpool;
    if (s == "dropout") return Kind::dropout;
    if (s == "fc") return Kind::fc;
    if (s == "voting") return Kind::voting;
    if (s == "temporal_avg") return Kind::temporal_avg;
    throw ConfigError("config: unknown layer kind '" + s + "' at '" + path + "'");
}

std::string layer_kind_name(Kind k) {
    switch (k) {
        case Kind::conv: return "conv";
        case Kind::batchnorm: return "batchnorm";
        case Kind::maxpool: return "maxpool";
        case Kind::dropout: return "dropout";
        case Kind::fc: return "fc";
        case Kind::voting: return "voting";
        case Kind::temporal_avg: return "temporal_avg";
    }
    return "?";
}

DatasetConfig parse_dataset(const json& j) {
    DatasetConfig d;
    reject_unknown_keys(j, "dataset.",
                        {"source", "idx_dir", "classes", "image_channels", "image_height", "image_width",
                         "train_per_class", "test_per_class", "time_steps", "batch_size", "classes_per_task",
                         "synthetic_noise", "synthetic_shift", "synthetic_blobs",
                         "synthetic_brightness_jitter", "synthetic_blob_jitter"});
    d.source = get_or<std::string>(j, "dataset.", "source", d.source);
    d.idx_dir = get_or<std::string>(j, "dataset.", "idx_dir", d.idx_dir);
    d.classes = get_or<int>(j, "dataset.", "classes", d.classes);
    d.image_channels = get_or<size_t>(j, "dataset.", "image_channels", d.image_channels);
    d.image_height = get_or<size_t>(j, "dataset.", "image_height", d.image_height);
    d.image_width = get_or<size_t>(j, "dataset.", "image_width", d.image_width);
    d.train_per_class = get_or<size_t>(j, "dataset.", "train_per_class", d.train_per_class);
    d.test_per_class = get_or<size_t>(j, "dataset.", "test_per_class", d.test_per_class);
    d.time_steps = get_or<size_t>(j, "dataset.", "time_steps", d.time_steps);
    d.batch_size = get_or<size_t>(j, "dataset.", "batch_size", d.batch_size);
    d.classes_per_task = get_or<int>(j, "dataset.", "classes_per_task", d.classes_per_task);
    d.synthetic_noise = get_or<double>(j, "dataset.", "synthetic_noise", d.synthetic_noise);
    d.synthetic_shift = get_or<long>(j, "dataset.", "synthetic_shift", d.synthetic_shift);
    d.synthetic_blobs = get_or<size_t>(j, "dataset.", "synthetic_blobs", d.synthetic_blobs);
    d.synthetic_brightness_jitter =
        get_or<double>(j, "dataset.", "synthetic_brightness_jitter", d.synthetic_brightness_jitter);
    d.synthetic_blob_jitter = get_or<double>(j, "dataset.", "synthetic_blob_jitter", d.synthetic_blob_jitter);
    return d;
}

ModelConfig parse_model(const json& j) {
    ModelConfig m;
    reject_unknown_keys(j, "model.",
                        {"preset", "layers", "split_index", "tau", "dt", "v_th", "surrogate_alpha", "dropout",
                         "voting_group", "init_gain"});
    m.preset = get_or<std::string>(j, "model.", "preset", m.preset);
    m.lif.tau = get_or<double>(j, "model.", "tau", m.lif.tau);
    m.lif.dt = get_or<double>(j, "model.", "dt", m.lif.dt);
    m.lif.v_th = get_or<double>(j, "model.", "v_th", m.lif.v_th);
    m.lif.surrogate_alpha = get_or<double>(j, "model.", "surrogate_alpha", m.lif.surrogate_alpha);
    m.dropout = get_or<double>(j, "model.", "dropout", m.dropout);
    m.voting_group = get_or<size_t>(j, "model.", "voting_group", m.voting_group);
    m.init_gain = get_or<double>(j, "model.", "init_gain", m.init_gain);
    m.split_index = get_or<size_t>(j, "model.", "split_index", m.split_index);
    if (j.contains("layers")) {
        if (!j.at("layers").is_array()) throw ConfigError("config: model.layers must be an array");
        size_t i = 0;
        for (const auto& lj : j.at("layers")) {
            std::string path = "model.layers[" + std::to_string(i) + "].";
            reject_unknown_keys(lj, path, {"kind", "channels", "kernel", "stride", "rate", "width", "group"});
            NetworkSpec::LayerDesc d;
            if (!lj.contains("kind")) throw ConfigError("config: missing '" + path + "kind'");
            d.kind = layer_kind_from_string(lj.at("kind").get<std::string>(), path + "kind");
            d.channels = get_or<size_t>(lj, path, "channels", 0);
            d.kernel = get_or<size_t>(lj, path, "kernel", 0);
            d.stride = get_or<size_t>(lj, path, "stride", 0);
            d.rate = get_or<double>(lj, path, "rate", 0.5);
            d.width = get_or<size_t>(lj, path, "width", 0);
            d.group = get_or<size_t>(lj, path, "group", 10);
            m.layers.push_back(d);
            ++i;
        }
    }
    return m;
}

StrategyConfig parse_strategy(const json& j) {
    StrategyConfig s;
    reject_unknown_keys(j, "strategy.",
                        {"kind", "buffer_capacity", "lambda", "noise_sigma", "pretrain_epochs",
                         "pretrain_fraction", "sleep_epochs", "batch_replay", "joint_epochs", "optimizer",
                         "lr_pretrain", "lr_online", "lr_sleep"});
    s.kind = strategy_from_string(get_or<std::string>(j, "strategy.", "kind", "seslr"));
    s.buffer_capacity = get_or<size_t>(j, "strategy.", "buffer_capacity", s.buffer_capacity);
    s.lambda = get_or<double>(j, "strategy.", "lambda", s.lambda);
    s.noise_sigma = get_or<double>(j, "strategy.", "noise_sigma", s.noise_sigma);
    s.pretrain_epochs = get_or<int>(j, "strategy.", "pretrain_epochs", s.pretrain_epochs);
    s.pretrain_fraction = get_or<double>(j, "strategy.", "pretrain_fraction", s.pretrain_fraction);
    s.sleep_epochs = get_or<int>(j, "strategy.", "sleep_epochs", s.sleep_epochs);
    s.batch_replay = get_or<size_t>(j, "strategy.", "batch_replay", s.batch_replay);
    s.joint_epochs = get_or<int>(j, "strategy.", "joint_epochs", s.joint_epochs);
    s.optimizer = get_or<std::string>(j, "strategy.", "optimizer", s.optimizer);
    s.lr_pretrain = get_or<double>(j, "strategy.", "lr_pretrain", s.lr_pretrain);
    s.lr_online = get_or<double>(j, "strategy.", "lr_online", s.lr_online);
    s.lr_sleep = get_or<double>(j, "strategy.", "lr_sleep", s.lr_sleep);
    return s;
}

OutputConfig parse_output(const json& j) {
    OutputConfig o;
    reject_unknown_keys(j, "output.", {"directory", "formats", "write_buffer"});
    o.directory = get_or<std::string>(j, "output.", "directory", o.directory);
    o.write_buffer = get_or<bool>(j, "output.", "write_buffer", o.write_buffer);
    if (j.contains("formats")) {
        o.formats = j.at("formats").get<std::vector<std::string>>();
        for (const auto& f : o.formats)
            if (f != "txt" && f != "json" && f != "csv")
                throw ConfigError("config: unknown output format '" + f + "'");
    }
    return o;
}

}  // namespace

void DatasetConfig::validate() const {
    if (source != "synthetic" && source != "idx")
        throw ConfigError("config: dataset.source must be 'synthetic' or 'idx'");
    if (source == "idx" && idx_dir.empty()) throw ConfigError("config: dataset.idx_dir required for idx source");
    if (classes < 2) throw ConfigError("config: dataset.classes must be at least 2");
    if (classes_per_task < 1 || classes % classes_per_task != 0)
        throw ConfigError("config: dataset.classes must be divisible by classes_per_task");
    if (batch_size == 0) throw ConfigError("config: dataset.batch_size must be positive");
    if (time_steps == 0) throw ConfigError("config: dataset.time_steps must be positive");
    if (image_channels == 0 || image_height == 0 || image_width == 0)
        throw ConfigError("config: dataset image shape must be positive");
    if (source == "synthetic" && (train_per_class == 0 || test_per_class == 0))
        throw ConfigError("config: synthetic dataset needs train_per_class and test_per_class");
    if (synthetic_noise < 0.0) throw ConfigError("config: dataset.synthetic_noise must be non-negative");
    if (synthetic_shift < 0) throw ConfigError("config: dataset.synthetic_shift must be non-negative");
}

void ExperimentConfig::validate() const {
    dataset.validate();
    try {
        strategy.validate();
        build_network_spec(model, dataset);  // also validates the spec
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

NetworkSpec build_network_spec(const ModelConfig& model, const DatasetConfig& dataset) {
    NetworkSpec spec;
    spec.lif = model.lif;
    spec.init_gain = model.init_gain;
    spec.num_classes = static_cast<size_t>(dataset.classes);
    spec.input_sample_shape = {dataset.image_channels, dataset.image_height, dataset.image_width};

    const size_t wiring = spec.num_classes * model.voting_group;
    auto conv = [](size_t ch, size_t k) {
        NetworkSpec::LayerDesc d;
        d.kind = Kind::conv;
        d.channels = ch;
        d.kernel = k;
        return d;
    };
    auto plain = [](Kind k) {
        NetworkSpec::LayerDesc d;
        d.kind = k;
        return d;
    };
    auto dropout = [&](double rate) {
        NetworkSpec::LayerDesc d;
        d.kind = Kind::dropout;
        d.rate = rate;
        return d;
    };
    auto fc = [](size_t w) {
        NetworkSpec::LayerDesc d;
        d.kind = Kind::fc;
        d.width = w;
        return d;
    };
    auto voting = [&] {
        NetworkSpec::LayerDesc d;
        d.kind = Kind::voting;
        d.group = model.voting_group;
        return d;
    };

    if (model.preset == "mnist") {
        // {32C5-BN-MP}*2 || DP-FC2048-DP-FC(classes*g)-Voting-AP
        for (int block = 0; block < 2; ++block) {
            spec.layers.push_back(conv(32, 5));
            spec.layers.push_back(plain(Kind::batchnorm));
            spec.layers.push_back(plain(Kind::maxpool));
        }
        spec.split_index = spec.layers.size();
        spec.layers.push_back(dropout(model.dropout));
        spec.layers.push_back(fc(2048));
        spec.layers.push_back(dropout(model.dropout));
        spec.layers.push_back(fc(wiring));
        spec.layers.push_back(voting());
        spec.layers.push_back(plain(Kind::temporal_avg));
    } else if (model.preset == "desk") {
        // the mnist-row architecture scaled down for cpu-sized runs
        for (int block = 0; block < 2; ++block) {
            spec.layers.push_back(conv(8, 5));
            spec.layers.push_back(plain(Kind::batchnorm));
            spec.layers.push_back(plain(Kind::maxpool));
        }
        spec.split_index = spec.layers.size();
        spec.layers.push_back(dropout(model.dropout));
        spec.layers.push_back(fc(128));
        spec.layers.push_back(dropout(model.dropout));
        spec.layers.push_back(fc(wiring));
        spec.layers.push_back(voting());
        spec.layers.push_back(plain(Kind::temporal_avg));
    } else if (model.preset == "custom") {
        if (model.layers.empty()) throw ConfigError("config: custom preset needs model.layers");
        spec.layers = model.layers;
        spec.split_index = model.split_index;
    } else {
        throw ConfigError("config: unknown model preset '" + model.preset + "'");
    }
    spec.validate();
    return spec;
}

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
    ExperimentSetup setup;
    setup.net_spec = build_network_spec(cfg.model, cfg.dataset);
    setup.strategy = cfg.strategy;
    setup.time_steps = cfg.dataset.time_steps;
    setup.seed = cfg.seed;
    return setup;
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
    cfg.validate();
    const DatasetConfig& d = cfg.dataset;
    ExperimentData data;

    if (d.source == "synthetic") {
        SyntheticOptions opts;
        opts.noise_sigma = d.synthetic_noise;
        opts.max_shift = d.synthetic_shift;
        opts.blobs_per_class = d.synthetic_blobs;
        opts.brightness_jitter = d.synthetic_brightness_jitter;
        opts.blob_jitter = d.synthetic_blob_jitter;
        // one prototype draw: per class, the first train_per_class samples
        // become training data, the rest are the test split
        LabeledDataset full =
            make_synthetic(d.classes, d.train_per_class + d.test_per_class,
                           {d.image_channels, d.image_height, d.image_width}, Rng::derive(cfg.seed, "data"), opts);
        data.train.class_count = full.class_count;
        data.test.class_count = full.class_count;
        for (int c = 0; c < d.classes; ++c) {
            const auto& idx = full.per_class[static_cast<size_t>(c)];
            for (size_t i = 0; i < idx.size(); ++i) {
                auto& dst = i < d.train_per_class ? data.train : data.test;
                dst.samples.push_back(full.samples[idx[i]]);
                dst.labels.push_back(full.labels[idx[i]]);
            }
        }
        data.train.rebuild_index();
        data.test.rebuild_index();
    } else {
        auto dir = std::filesystem::path(d.idx_dir);
        data.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
        data.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
        if (data.train.class_count != d.classes || data.test.class_count != d.classes)
            throw ConfigError("config: idx data has " + std::to_string(data.train.class_count) +
                              " classes, dataset.classes says " + std::to_string(d.classes));
        if (d.train_per_class > 0)
            data.train = subset_per_class(data.train, d.train_per_class, Rng::derive(cfg.seed, "data"));
        if (d.test_per_class > 0)
            data.test = subset_per_class(data.test, d.test_per_class, Rng::derive(cfg.seed, "data-test"));
    }

    data.pretrain_set =
        pretrain_subset(data.train, cfg.strategy.pretrain_fraction, Rng::derive(cfg.seed, "data-pretrain"));
    data.stream = split_class_incremental(data.train, d.classes_per_task, d.batch_size, cfg.seed);
    return data;
}

namespace {

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["dataset"] = {{"source", c.dataset.source},
                    {"idx_dir", c.dataset.idx_dir},
                    {"classes", c.dataset.classes},
                    {"image_channels", c.dataset.image_channels},
                    {"image_height", c.dataset.image_height},
                    {"image_width", c.dataset.image_width},
                    {"train_per_class", c.dataset.train_per_class},
                    {"test_per_class", c.dataset.test_per_class},
                    {"time_steps", c.dataset.time_steps},
                    {"batch_size", c.dataset.batch_size},
                    {"classes_per_task", c.dataset.classes_per_task},
                    {"synthetic_noise", c.dataset.synthetic_noise},
                    {"synthetic_shift", c.dataset.synthetic_shift},
                    {"synthetic_blobs", c.dataset.synthetic_blobs},
                    {"synthetic_brightness_jitter", c.dataset.synthetic_brightness_jitter},
                    {"synthetic_blob_jitter", c.dataset.synthetic_blob_jitter}};
    json layers = json::array();
    for (const auto& l : c.model.layers) {
        json lj;
        lj["kind"] = layer_kind_name(l.kind);
        if (l.kind == Kind::conv) {
            lj["channels"] = l.channels;
            lj["kernel"] = l.kernel;
            if (l.stride) lj["stride"] = l.stride;
        }
        if (l.kind == Kind::maxpool && l.kernel) lj["kernel"] = l.kernel;
        if (l.kind == Kind::dropout) lj["rate"] = l.rate;
        if (l.kind == Kind::fc) lj["width"] = l.width;
        if (l.kind == Kind::voting) lj["group"] = l.group;
        layers.push_back(lj);
    }
    j["model"] = {{"preset", c.model.preset},
                  {"layers", layers},
                  {"split_index", c.model.split_index},
                  {"tau", c.model.lif.tau},
                  {"dt", c.model.lif.dt},
                  {"v_th", c.model.lif.v_th},
                  {"surrogate_alpha", c.model.lif.surrogate_alpha},
                  {"dropout", c.model.dropout},
                  {"voting_group", c.model.voting_group},
                  {"init_gain", c.model.init_gain}};
    j["strategy"] = {{"kind", to_string(c.strategy.kind)},
                     {"buffer_capacity", c.strategy.buffer_capacity},
                     {"lambda", c.strategy.lambda},
                     {"noise_sigma", c.strategy.noise_sigma},
                     {"pretrain_epochs", c.strategy.pretrain_epochs},
                     {"pretrain_fraction", c.strategy.pretrain_fraction},
                     {"sleep_epochs", c.strategy.sleep_epochs},
                     {"batch_replay", c.strategy.batch_replay},
                     {"joint_epochs", c.strategy.joint_epochs},
                     {"optimizer", c.strategy.optimizer},
                     {"lr_pretrain", c.strategy.lr_pretrain},
                     {"lr_online", c.strategy.lr_online},
                     {"lr_sleep", c.strategy.lr_sleep}};
    j["extractor_path"] = c.extractor_path;
    j["output"] = {{"directory", c.output.directory},
                   {"formats", c.output.formats},
                   {"write_buffer", c.output.write_buffer}};
    j["seed"] = c.seed;
    return j;
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    reject_unknown_keys(j, "", {"dataset", "model", "strategy", "extractor_path", "output", "seed"});
    if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("model")) c.model = parse_model(j.at("model"));
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy"));
    if (j.contains("output")) c.output = parse_output(j.at("output"));
    c.extractor_path = get_or<std::string>(j, "", "extractor_path", "");
    c.seed = get_or<uint64_t>(j, "", "seed", c.seed);
    c.validate();
    return c;
}

}  // namespace

std::string ExperimentConfig::echo_json() const {
    return config_to_json(*this).dump();
}

ExperimentConfig parse_config_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        // byte offset -> line for a useful diagnostic
        size_t line = 1;
        for (size_t i = 0; i < std::min(text.size(), e.byte); ++i)
            if (text[i] == '\n') ++line;
        throw ConfigError("config: " + origin + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: " + origin + ": top level must be an object");
    return parse_config(j);
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_json(buf.str(), path.string());
}

ExperimentConfig load_config_with_overrides(const std::filesystem::path& path,
                                            const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    std::string text = buf.str();

    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        size_t line = 1;
        for (size_t i = 0; i < std::min(text.size(), e.byte); ++i)
            if (text[i] == '\n') ++line;
        throw ConfigError("config: " + path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: " + path.string() + ": top level must be an object");

    for (const std::string& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("config: override '" + ov + "' is not of the form key.path=value");
        std::string dotted = ov.substr(0, eq);
        std::string value = ov.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::parse_error&) {
            parsed = value;  // bare strings stay strings
        }
        json* node = &j;
        size_t pos = 0;
        while (true) {
            auto dot = dotted.find('.', pos);
            std::string part = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
            if (part.empty()) throw ConfigError("config: override path '" + dotted + "' has an empty segment");
            if (dot == std::string::npos) {
                (*node)[part] = parsed;
                break;
            }
            node = &(*node)[part];
            if (!node->is_object() && !node->is_null())
                throw ConfigError("config: override path '" + dotted + "' crosses a non-object value");
            pos = dot + 1;
        }
    }

    ExperimentConfig out = [&] {
        try {
            return parse_config(j);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }();
    return out;
}

}  // namespace seslr
