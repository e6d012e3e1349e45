#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudfuse/detect.hpp"

namespace cloudfuse {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

ConfusionCounts accumulate(const CloudMask& pred, const CloudMask& truth);

struct MetricsEntry {
    double tpr = 0, tnr = 0, miou = 0, accuracy = 0;
};

// absent-class convention: a metric whose class has no pixels in either
// prediction or truth is defined as 1.0
MetricsEntry metrics(const ConfusionCounts& counts);

// rank-based ROC-AUC of score against binary truth (ties averaged)
double roc_auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth);

struct DetectorReport {
    std::string name;
    bool available = false;
    std::string error;
    ConfusionCounts pooled;
    MetricsEntry pooled_metrics;
    MetricsEntry per_image_mean;
    int images = 0;
};

struct BenchmarkReport {
    std::vector<DetectorReport> rows;
    std::string config_digest;
};

struct BenchmarkInputs {
    std::string quality_checkpoint;   // trained fusion quality net
    std::string calibration_path;     // Platt params JSON; empty to skip
    std::string finetuned_checkpoint; // empty to skip
    double tau = 0.5;
    double p_thresh = 0.5;
    bool direct_probability = false;
};

BenchmarkReport run_benchmark(const DatasetManifest& test_data,
                              const BenchmarkInputs& inputs);

void write_report_json(const BenchmarkReport& report, const std::string& path);
std::string format_report_table(const BenchmarkReport& report);

struct SweepPoint {
    int n_train = 0;
    double accuracy = 0;
    double miou = 0;
};

// subsample n training images (seeded), fine-tune a fresh copy of the
// quality net, evaluate on the test split
std::vector<SweepPoint> size_sweep(const DatasetManifest& train_data,
                                   const DatasetManifest& test_data,
                                   const std::string& quality_checkpoint,
                                   const std::vector<int>& sizes, int epochs,
                                   std::uint64_t seed);

void write_sweep_csv(const std::vector<SweepPoint>& curve, const std::string& path);

} // namespace cloudfuse
