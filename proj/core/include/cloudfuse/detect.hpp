#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cloudfuse/dataset.hpp"
#include "cloudfuse/nn.hpp"

namespace cloudfuse {

// Platt map as printed: P(y=1|Q) = 1 / (1 + e^(b0*Q + b1))
struct CalibrationParams {
    double beta0 = 0.0;
    double beta1 = 0.0;
};

double platt_probability(const CalibrationParams& params, double quality);

void save_calibration(const CalibrationParams& params, const std::string& path);
CalibrationParams load_calibration(const std::string& path);

// binary mask, 1 = cloud
using CloudMask = std::vector<std::uint8_t>;

// mask(p) = 1 iff quality(p) < tau; quality at exactly tau counts as clear
CloudMask detect_threshold(const std::vector<float>& quality, double tau = 0.5);

CloudMask detect_calibrated(const std::vector<float>& quality,
                            const CalibrationParams& params, double p_thresh = 0.5);

struct PlattFitResult {
    CalibrationParams params;
    std::vector<double> log_likelihoods; // one per accepted Newton iterate
    int iterations = 0;
};

// maximum-likelihood fit by damped Newton; requires both classes present
PlattFitResult fit_platt(const std::vector<double>& qualities,
                         const std::vector<std::uint8_t>& labels);

// collects (quality, cloud-label) pixel pairs over a dataset, subsampled
// to at most max_points (seeded)
void collect_calibration_points(const DatasetManifest& data, const QualityNet& net,
                                std::size_t max_points, std::uint64_t seed,
                                std::vector<double>& qualities,
                                std::vector<std::uint8_t>& labels);

struct FinetuneConfig {
    int epochs = 100;   // 30 for the training-size sweep
    float lr = 1e-2f;
    int batch_size = 4;
    std::uint64_t seed = 42;
    bool direct_probability = false; // default: P(cloud) = 1 - net output
    bool lookahead = false;
    bool rectify = false;
};

struct FinetuneResult {
    std::vector<double> epoch_losses;
};

// trains only the head3 parameters; caller must have applied
// freeze_except_head3 beforehand (asserted here)
FinetuneResult finetune(QualityNet& net,
                        const std::vector<std::pair<std::vector<float>, CloudMask>>& samples,
                        int h, int w, const FinetuneConfig& config);

// P(cloud) per pixel from a (fine-tuned) quality net
std::vector<float> cloud_probability(const QualityNet& net, const TensorPtr& image,
                                     bool direct_probability = false);

} // namespace cloudfuse
