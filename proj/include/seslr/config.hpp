#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "seslr/continual.hpp"

namespace seslr {

/// Invalid or inconsistent configuration; the CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    std::string source = "synthetic";  ///< "synthetic" or "idx"
    std::string idx_dir;               ///< directory with the IDX file pairs
    int classes = 10;
    size_t image_channels = 1;
    size_t image_height = 28;
    size_t image_width = 28;
    size_t train_per_class = 1000;  ///< 0 = no limit (idx source)
    size_t test_per_class = 200;    ///< 0 = no limit (idx source)
    size_t time_steps = 4;
    size_t batch_size = 16;
    int classes_per_task = 2;
    double synthetic_noise = 0.08;
    long synthetic_shift = 2;
    size_t synthetic_blobs = 3;
    double synthetic_brightness_jitter = 0.2;
    double synthetic_blob_jitter = 1.0;

    void validate() const;
};

struct ModelConfig {
    std::string preset = "desk";  ///< "desk", "mnist" or "custom"
    std::vector<NetworkSpec::LayerDesc> layers;  ///< custom preset only
    size_t split_index = 0;                      ///< custom preset only
    LIFConfig lif;
    double dropout = 0.5;
    size_t voting_group = 10;
    double init_gain = 5.0;
};

struct OutputConfig {
    std::string directory = "results/run";
    std::vector<std::string> formats = {"txt", "json", "csv"};
    bool write_buffer = true;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    StrategyConfig strategy;
    std::string extractor_path;  ///< optional pretrained parameter file
    OutputConfig output;
    uint64_t seed = 1;

    /// Fully-resolved configuration (defaults applied) as canonical json.
    std::string echo_json() const;
    void validate() const;
};

ExperimentConfig parse_config_json(const std::string& text, const std::string& origin);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

/// Reads a config file and applies dotted-path overrides of the form
/// "strategy.noise_sigma=0.4" before validation.
ExperimentConfig load_config_with_overrides(const std::filesystem::path& path,
                                            const std::vector<std::string>& overrides);

NetworkSpec build_network_spec(const ModelConfig& model, const DatasetConfig& dataset);
ExperimentSetup build_setup(const ExperimentConfig& cfg);
ExperimentData prepare_data(const ExperimentConfig& cfg);

}  // namespace seslr
