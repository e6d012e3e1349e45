#include "cloudfuse/fusion.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cloudfuse/netpbm.hpp"
#include "cloudfuse/rng.hpp"

namespace cloudfuse {

void TrainConfig::validate() const {
    if (lr < 0) throw std::invalid_argument("config: learning rate must be >= 0");
    if (batch_size < 1 || epochs < 1 || crop < 1 || images_per_location < 1 ||
        num_classes < 2)
        throw std::invalid_argument("config: sizes must be positive");
    if (crop % 4 != 0)
        throw std::invalid_argument("config: crop size must be divisible by 4");
    if (lookahead_k < 1 || lookahead_alpha <= 0 || lookahead_alpha > 1)
        throw std::invalid_argument("config: bad lookahead parameters");
}

FuseResult fuse(const ImageStack& stack, const QualityNet& net) {
    if (stack.k() < 1) throw std::invalid_argument("fuse: empty stack");
    FuseResult result;
    for (std::size_t j = 0; j < stack.k(); ++j) {
        if (stack.images[j].size() != stack.images[0].size())
            throw std::invalid_argument("fuse: mismatched image shapes in stack");
        result.quality.push_back(net.forward(image_to_tensor(stack, j)));
    }
    result.relative = softmax_over_stack(result.quality);
    for (std::size_t j = 0; j < stack.k(); ++j) {
        auto weighted = mul_channel_broadcast(image_to_tensor(stack, j), result.relative[j]);
        result.fused = result.fused ? add(result.fused, weighted) : weighted;
    }
    return result;
}

TrainResult train_fusion(const DatasetManifest& data, const TrainConfig& config,
                         const std::string& out_dir) {
    config.validate();
    for (const auto& loc : data.locations)
        if (loc.label_path.empty())
            throw std::invalid_argument("train_fusion: dataset has no label maps");

    std::filesystem::create_directories(out_dir);

    QualityNet qnet(mix_seed(config.seed, 1));
    SegNet snet(mix_seed(config.seed, 2), SegNetConfig{{16, 32, 64}, config.num_classes});

    std::vector<NamedParam> params = qnet.parameters();
    for (auto& p : snet.parameters()) params.push_back(p);
    OptimConfig oc;
    oc.lr = config.lr;
    oc.rectify = config.rectify;
    oc.lookahead = config.lookahead;
    oc.lookahead_k = config.lookahead_k;
    oc.lookahead_alpha = config.lookahead_alpha;
    AdamOptimizer opt(params, oc);

    // desk-scale datasets fit comfortably in memory
    std::vector<ImageStack> stacks;
    for (std::size_t i = 0; i < data.locations.size(); ++i)
        stacks.push_back(load_stack(data, i));

    TrainResult result;
    const std::string loss_path = out_dir + "/loss.csv";
    std::ofstream loss_log(loss_path);
    if (!loss_log) throw std::runtime_error("cannot open for writing: " + loss_path);
    loss_log << "epoch,mean_loss\n";

    double best_loss = std::numeric_limits<double>::infinity();
    const std::size_t L = stacks.size();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t loc = 0;
        int batch_index = 0;
        while (loc < L) {
            const std::size_t batch_end =
                std::min(loc + static_cast<std::size_t>(config.batch_size), L);
            const int B = static_cast<int>(batch_end - loc);
            opt.zero_grad();
            TensorPtr batch_loss;
            for (; loc < batch_end; ++loc) {
                // augmentation seeds depend on (epoch, location), not order
                const std::uint64_t aug =
                    mix_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 24) | loc);
                auto sub = sample_k(stacks[loc],
                                    std::min<std::size_t>(config.images_per_location,
                                                          stacks[loc].k()),
                                    mix_seed(aug, 1));
                if (config.crop != sub.h || config.crop != sub.w)
                    sub = random_crop(sub, config.crop, mix_seed(aug, 2));
                auto fused = fuse(sub, qnet);
                auto logits = snet.forward(fused.fused);
                auto loss = cross_entropy(logits, sub.labels);
                batch_loss = batch_loss ? add(batch_loss, loss) : loss;
            }
            auto mean_loss = affine(batch_loss, 1.0f / static_cast<float>(B), 0.0f);
            const double loss_value = mean_loss->data[0];
            if (!std::isfinite(loss_value))
                throw std::runtime_error("train_fusion: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index));
            epoch_loss += loss_value * B;
            backward(mean_loss);
            opt.step();
            ++batch_index;
        }
        epoch_loss /= static_cast<double>(L);
        result.epoch_losses.push_back(epoch_loss);
        char row[64];
        std::snprintf(row, sizeof(row), "%d,%.6f\n", epoch, epoch_loss);
        loss_log << row;
        loss_log.flush();

        qnet.save(out_dir + "/quality_last.ftz");
        snet.save(out_dir + "/seg_last.ftz");
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            qnet.save(out_dir + "/quality_best.ftz");
            snet.save(out_dir + "/seg_best.ftz");
        }
    }

    result.quality_checkpoint = out_dir + "/quality_last.ftz";
    result.seg_checkpoint = out_dir + "/seg_last.ftz";
    result.loss_log = loss_path;
    return result;
}

std::vector<std::string> export_quality(const ImageStack& stack, const QualityNet& net,
                                        const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto result = fuse(stack, net);
    std::vector<std::string> paths;
    const std::size_t hw = static_cast<std::size_t>(stack.h) * stack.w;

    for (std::size_t j = 0; j < stack.k(); ++j) {
        GrayImage mask{stack.h, stack.w, {}};
        mask.pix.resize(hw);
        for (std::size_t i = 0; i < hw; ++i)
            mask.pix[i] = static_cast<std::uint8_t>(
                std::lround(std::clamp(result.quality[j]->data[i], 0.0f, 1.0f) * 255.0f));
        char suffix[16];
        std::snprintf(suffix, sizeof(suffix), "_%02zu", j);
        const std::string path = out_dir + "/" + stack.id + "_quality" + suffix + ".pgm";
        write_pgm(path, mask);
        paths.push_back(path);
    }

    RgbImage fused{stack.h, stack.w, {}};
    fused.pix.resize(hw * 3);
    for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            fused.pix[i * 3 + c] = static_cast<std::uint8_t>(std::lround(
                std::clamp(result.fused->data[c * hw + i], 0.0f, 1.0f) * 255.0f));
    const std::string fused_path = out_dir + "/" + stack.id + "_fused.ppm";
    write_ppm(fused_path, fused);
    paths.push_back(fused_path);
    return paths;
}

} // namespace cloudfuse
