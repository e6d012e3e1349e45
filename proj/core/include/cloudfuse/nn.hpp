#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudfuse/optim.hpp"
#include "cloudfuse/rng.hpp"
#include "cloudfuse/tensor.hpp"

namespace cloudfuse {

struct Conv2dLayer {
    TensorPtr weight; // [F,C,k,k]
    TensorPtr bias;   // [F]
    int stride = 1;
    int padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int k, int stride, int padding, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;
};

struct QualityNetConfig {
    // encoder widths; last entry is the bottleneck
    std::vector<int> widths{8, 16, 32};
};

// Small U-Net: two conv-relu per block, 2x avg-pool downsampling, nearest
// 2x upsampling with skip concatenation, sigmoid head to one channel.
class QualityNet {
public:
    QualityNet(std::uint64_t seed, QualityNetConfig config = {});

    // [N,3,H,W] -> [N,1,H,W] in [0,1]; H and W must be divisible by 4
    TensorPtr forward(const TensorPtr& image) const;

    std::vector<NamedParam> parameters() const;
    // the last decoder block's two convolutions plus the final 1x1 conv
    std::vector<std::string> head3_names() const;

    void save(const std::string& path) const;
    static QualityNet load(const std::string& path);

    const QualityNetConfig& config() const { return cfg_; }

private:
    QualityNetConfig cfg_;
    Conv2dLayer enc0_conv1_, enc0_conv2_;
    Conv2dLayer enc1_conv1_, enc1_conv2_;
    Conv2dLayer bott_conv1_, bott_conv2_;
    Conv2dLayer dec1_conv1_, dec1_conv2_;
    Conv2dLayer dec0_conv1_, dec0_conv2_;
    Conv2dLayer head_;
};

struct SegNetConfig {
    std::vector<int> widths{16, 32, 64};
    int num_classes = 6;
};

// LinkNet-style encoder/decoder: residual stages, stride-2 downsampling,
// additive skips, 1x1 head to class logits.
class SegNet {
public:
    SegNet(std::uint64_t seed, SegNetConfig config = {});

    // [N,3,H,W] -> [N,C,H,W]; H and W must be divisible by 4
    TensorPtr forward(const TensorPtr& image) const;

    std::vector<NamedParam> parameters() const;
    void save(const std::string& path) const;
    static SegNet load(const std::string& path);

    const SegNetConfig& config() const { return cfg_; }

private:
    SegNetConfig cfg_;
    Conv2dLayer stem_;
    Conv2dLayer res1_conv1_, res1_conv2_;
    Conv2dLayer down1_;
    Conv2dLayer res2_conv1_, res2_conv2_;
    Conv2dLayer down2_;
    Conv2dLayer res3_conv1_, res3_conv2_;
    Conv2dLayer up1_;
    Conv2dLayer up2_;
    Conv2dLayer head_;
};

// Partition of the quality net parameters for partial fine-tuning.
struct ParamPartition {
    std::vector<NamedParam> frozen;
    std::vector<NamedParam> trainable;
};

ParamPartition freeze_except_head3(QualityNet& net);

} // namespace cloudfuse
