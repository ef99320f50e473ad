#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seslr/datasets.hpp"
#include "seslr/network.hpp"

namespace seslr {

struct MetricsReport {
    double faa = 0.0;                  ///< percent, overall accuracy on the union test set
    double class_mean_accuracy = 0.0;  ///< percent, mean of per-class accuracies
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<uint64_t>> confusion;  ///< [true class][predicted class]
    std::vector<double> predicted_class_distribution;
    std::vector<uint64_t> per_class_test_counts;
    uint64_t test_count = 0;

    uint64_t buffer_payload_bytes = 0;
    uint64_t buffer_header_bytes = 0;
    std::vector<int> last_task_classes;
    double recency_bias_fraction = 0.0;

    double wallclock_seconds = 0.0;
    std::string strategy;
    uint64_t seed = 0;
    std::string config_echo;  ///< the resolved experiment config as json text

    void validate() const;
};

/// Argmax evaluation over the whole test set (ties break toward the lower
/// class index); mutates nothing.
MetricsReport evaluate(Network& net, const LabeledDataset& test, size_t time_steps, size_t batch_size = 64);

/// Fraction of all test predictions assigned to the given classes.
double recency_bias(const MetricsReport& report, const std::vector<int>& last_task_classes);

struct MemoryReportRow {
    std::string name;
    uint64_t total_bytes = 0;
    double compression_factor = 1.0;  ///< naive bits / this row's bits ("1:N")
};

/// Storage accounting for `samples` buffer entries: raw inputs at
/// precision_bits, latents at precision_bits, latents at 1 bit.
std::vector<MemoryReportRow> memory_report(size_t samples, const Shape& input_shape, const Shape& latent_shape,
                                           unsigned precision_bits);

/// The report as a json document (the same shape report.json uses).
std::string report_json_string(const MetricsReport& report);

void write_report_txt(const MetricsReport& report, const std::filesystem::path& path);
void write_report_json(const MetricsReport& report, const std::filesystem::path& path);
void write_confusion_csv(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report_json(const std::filesystem::path& path);

}  // namespace seslr
