#include "seslr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace seslr {

using nlohmann::json;

void MetricsReport::validate() const {
    if (faa < 0.0 || faa > 100.0) throw std::logic_error("MetricsReport: faa outside [0, 100]");
    uint64_t total = 0;
    for (size_t c = 0; c < confusion.size(); ++c) {
        uint64_t row = 0;
        for (uint64_t v : confusion[c]) row += v;
        if (row != per_class_test_counts[c])
            throw std::logic_error("MetricsReport: confusion row sum disagrees with test counts");
        total += row;
    }
    if (total != test_count) throw std::logic_error("MetricsReport: confusion total disagrees with test size");
    double mass = 0.0;
    for (double p : predicted_class_distribution) mass += p;
    if (test_count > 0 && std::abs(mass - 1.0) > 1e-9)
        throw std::logic_error("MetricsReport: predicted-class distribution does not sum to 1");
}

MetricsReport evaluate(Network& net, const LabeledDataset& test, size_t time_steps, size_t batch_size) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    test.validate();
    const size_t classes = net.num_classes();

    MetricsReport r;
    r.confusion.assign(classes, std::vector<uint64_t>(classes, 0));
    r.per_class_test_counts.assign(classes, 0);

    PassContext ctx;  // eval, hard spikes, no recording
    for (size_t off = 0; off < test.size(); off += batch_size) {
        size_t n = std::min(batch_size, test.size() - off);
        MiniBatch mb;
        const Shape& ss = test.samples[off].shape();
        Shape bshape;
        bshape.push_back(n);
        bshape.insert(bshape.end(), ss.begin(), ss.end());
        mb.inputs = Tensor(bshape);
        for (size_t i = 0; i < n; ++i) {
            std::copy(test.samples[off + i].vec().begin(), test.samples[off + i].vec().end(),
                      mb.inputs.data() + i * numel(ss));
            mb.labels.push_back(test.labels[off + i]);
        }
        Tensor x = encode_batch(mb, time_steps, test.pre_encoded);
        Tensor scores = net.forward(x, ctx).scores;
        for (size_t i = 0; i < n; ++i) {
            const double* s = scores.data() + i * classes;
            size_t pred = 0;
            for (size_t c = 1; c < classes; ++c)
                if (s[c] > s[pred]) pred = c;  // ties keep the lower index
            size_t truth = static_cast<size_t>(mb.labels[i]);
            if (truth >= classes) throw std::invalid_argument("evaluate: test label out of range");
            r.confusion[truth][pred] += 1;
        }
    }

    r.test_count = test.size();
    uint64_t correct = 0;
    std::vector<uint64_t> pred_counts(classes, 0);
    double class_mean = 0.0;
    size_t classes_with_samples = 0;
    r.per_class_accuracy.assign(classes, 0.0);
    for (size_t c = 0; c < classes; ++c) {
        uint64_t row = 0;
        for (size_t p = 0; p < classes; ++p) {
            row += r.confusion[c][p];
            pred_counts[p] += r.confusion[c][p];
        }
        r.per_class_test_counts[c] = row;
        correct += r.confusion[c][c];
        if (row > 0) {
            r.per_class_accuracy[c] = 100.0 * static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
            class_mean += r.per_class_accuracy[c];
            ++classes_with_samples;
        }
    }
    r.faa = 100.0 * static_cast<double>(correct) / static_cast<double>(r.test_count);
    r.class_mean_accuracy = classes_with_samples ? class_mean / static_cast<double>(classes_with_samples) : 0.0;
    r.predicted_class_distribution.assign(classes, 0.0);
    for (size_t p = 0; p < classes; ++p)
        r.predicted_class_distribution[p] =
            static_cast<double>(pred_counts[p]) / static_cast<double>(r.test_count);
    r.validate();
    return r;
}

double recency_bias(const MetricsReport& report, const std::vector<int>& last_task_classes) {
    double frac = 0.0;
    for (int c : last_task_classes) {
        if (c < 0 || static_cast<size_t>(c) >= report.predicted_class_distribution.size())
            throw std::invalid_argument("recency_bias: class index out of range");
        frac += report.predicted_class_distribution[static_cast<size_t>(c)];
    }
    return frac;
}

std::vector<MemoryReportRow> memory_report(size_t samples, const Shape& input_shape, const Shape& latent_shape,
                                           unsigned precision_bits) {
    if (precision_bits == 0) throw std::invalid_argument("memory_report: precision must be positive");
    const uint64_t raw_elems = numel(input_shape);
    const uint64_t latent_elems = numel(latent_shape);
    auto bytes_of = [&](uint64_t bits_per_sample) {
        return samples * ((bits_per_sample + 7) / 8);
    };
    const uint64_t naive_bits = raw_elems * precision_bits;
    const uint64_t latent_bits = latent_elems * precision_bits;
    const uint64_t binary_bits = latent_elems;

    std::vector<MemoryReportRow> rows;
    rows.push_back({"naive_replay", bytes_of(naive_bits), 1.0});
    rows.push_back({"latent_replay", bytes_of(latent_bits),
                    latent_bits ? static_cast<double>(naive_bits) / static_cast<double>(latent_bits) : 0.0});
    rows.push_back({"seslr", bytes_of(binary_bits),
                    binary_bits ? static_cast<double>(naive_bits) / static_cast<double>(binary_bits) : 0.0});
    if (samples == 0)
        for (auto& row : rows) row.total_bytes = 0;
    return rows;
}

namespace {

json report_to_json(const MetricsReport& r) {
    json j;
    j["faa"] = r.faa;
    j["class_mean_accuracy"] = r.class_mean_accuracy;
    j["per_class_accuracy"] = r.per_class_accuracy;
    j["confusion"] = r.confusion;
    j["predicted_class_distribution"] = r.predicted_class_distribution;
    j["per_class_test_counts"] = r.per_class_test_counts;
    j["test_count"] = r.test_count;
    j["buffer_payload_bytes"] = r.buffer_payload_bytes;
    j["buffer_header_bytes"] = r.buffer_header_bytes;
    j["last_task_classes"] = r.last_task_classes;
    j["recency_bias_fraction"] = r.recency_bias_fraction;
    j["wallclock_seconds"] = r.wallclock_seconds;
    j["strategy"] = r.strategy;
    j["seed"] = r.seed;
    j["config"] = r.config_echo.empty() ? json(nullptr) : json::parse(r.config_echo);
    j["argmax_tie_break"] = "lowest_class_index";
    return j;
}

}  // namespace

std::string report_json_string(const MetricsReport& r) {
    return report_to_json(r).dump(2);
}

void write_report_txt(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_report_txt: cannot open " + path.string());
    auto join = [](const auto& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += json(v[i]).dump();
        }
        return s;
    };
    os << "strategy = " << r.strategy << "\n";
    os << "seed = " << r.seed << "\n";
    os << "faa_percent = " << json(r.faa).dump() << "\n";
    os << "class_mean_accuracy_percent = " << json(r.class_mean_accuracy).dump() << "\n";
    os << "per_class_accuracy_percent = " << join(r.per_class_accuracy) << "\n";
    os << "predicted_class_distribution = " << join(r.predicted_class_distribution) << "\n";
    os << "test_count = " << r.test_count << "\n";
    os << "buffer_payload_bytes = " << r.buffer_payload_bytes << "\n";
    os << "buffer_header_bytes = " << r.buffer_header_bytes << "\n";
    os << "last_task_classes = " << join(r.last_task_classes) << "\n";
    os << "recency_bias_fraction = " << json(r.recency_bias_fraction).dump() << "\n";
    os << "argmax_tie_break = lowest_class_index\n";
    os << "wallclock_seconds = " << json(r.wallclock_seconds).dump() << "\n";
    if (!os) throw std::runtime_error("write_report_txt: write failed");
}

void write_report_json(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_report_json: cannot open " + path.string());
    os << report_json_string(r) << "\n";
    if (!os) throw std::runtime_error("write_report_json: write failed");
}

void write_confusion_csv(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_confusion_csv: cannot open " + path.string());
    os << "true_class";
    for (size_t p = 0; p < r.confusion.size(); ++p) os << ",pred_" << p;
    os << "\n";
    for (size_t c = 0; c < r.confusion.size(); ++c) {
        os << c;
        for (uint64_t v : r.confusion[c]) os << "," << v;
        os << "\n";
    }
    if (!os) throw std::runtime_error("write_confusion_csv: write failed");
}

MetricsReport read_report_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_report_json: cannot open " + path.string());
    json j = json::parse(is);
    MetricsReport r;
    r.faa = j.at("faa").get<double>();
    r.class_mean_accuracy = j.at("class_mean_accuracy").get<double>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<uint64_t>>>();
    r.predicted_class_distribution = j.at("predicted_class_distribution").get<std::vector<double>>();
    r.per_class_test_counts = j.at("per_class_test_counts").get<std::vector<uint64_t>>();
    r.test_count = j.at("test_count").get<uint64_t>();
    r.buffer_payload_bytes = j.at("buffer_payload_bytes").get<uint64_t>();
    r.buffer_header_bytes = j.at("buffer_header_bytes").get<uint64_t>();
    r.last_task_classes = j.at("last_task_classes").get<std::vector<int>>();
    r.recency_bias_fraction = j.at("recency_bias_fraction").get<double>();
    r.wallclock_seconds = j.at("wallclock_seconds").get<double>();
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    if (!j.at("config").is_null()) r.config_echo = j.at("config").dump();
    return r;
}

}  // namespace seslr
