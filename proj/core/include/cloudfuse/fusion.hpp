#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudfuse/dataset.hpp"
#include "cloudfuse/nn.hpp"
#include "cloudfuse/tensor.hpp"

namespace cloudfuse {

struct TrainConfig {
    float lr = 1e-4f;
    int batch_size = 4;          // 10 in the full-scale setup
    int epochs = 20;             // 100 in the full-scale setup
    int crop = 64;               // 416 in the full-scale setup
    int images_per_location = 4;
    std::uint64_t seed = 42;
    int num_classes = 6;
    bool lookahead = false;
    int lookahead_k = 5;
    float lookahead_alpha = 0.5f;
    bool rectify = false;

    void validate() const;
};

struct FuseResult {
    TensorPtr fused;                 // [1,3,H,W], convex combination of the stack
    std::vector<TensorPtr> quality;  // K x [1,1,H,W] raw quality masks
    std::vector<TensorPtr> relative; // K x [1,1,H,W] softmax fusion weights
};

FuseResult fuse(const ImageStack& stack, const QualityNet& net);

struct TrainResult {
    std::vector<double> epoch_losses;
    std::string quality_checkpoint; // the "last" checkpoint
    std::string seg_checkpoint;
    std::string loss_log;
};

TrainResult train_fusion(const DatasetManifest& data, const TrainConfig& config,
                         const std::string& out_dir);

// writes K quality masks (P5) plus the fused image (P6); returns emitted paths
std::vector<std::string> export_quality(const ImageStack& stack, const QualityNet& net,
                                        const std::string& out_dir);

} // namespace cloudfuse
