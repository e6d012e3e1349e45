#include "cloudfuse/nn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cloudfuse/checkpoint.hpp"

namespace cloudfuse {

namespace {

void check_spatial(const TensorPtr& x, const char* who) {
    if (x->shape.size() != 4)
        throw std::invalid_argument(std::string(who) + ": input must be [N,C,H,W]");
    const int H = x->shape[2], W = x->shape[3];
    if (H % 4 != 0 || W % 4 != 0) {
        const int ph = (4 - H % 4) % 4, pw = (4 - W % 4) % 4;
        throw std::invalid_argument(
            std::string(who) + ": spatial dims " + std::to_string(H) + "x" +
            std::to_string(W) + " must be divisible by 4 (pad by " +
            std::to_string(ph) + "x" + std::to_string(pw) + ")");
    }
}

void collect(std::vector<NamedParam>& out, const std::string& name,
             const Conv2dLayer& layer) {
    out.push_back({name + ".weight", layer.weight});
    out.push_back({name + ".bias", layer.bias});
}

void save_net(const std::string& path, const std::vector<NamedParam>& params,
              const nlohmann::json& manifest) {
    save_ftz(path, to_entries(params));
    std::ofstream os(path + ".json");
    if (!os) throw std::runtime_error("cannot open for writing: " + path + ".json");
    os << manifest.dump(2) << "\n";
}

nlohmann::json load_manifest(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw std::runtime_error("cannot open: " + path + ".json");
    return nlohmann::json::parse(is);
}

} // namespace

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int k, int stride, int padding,
                         Rng& rng)
    : stride(stride), padding(padding) {
    weight = Tensor::create({out_ch, in_ch, k, k}, true);
    bias = Tensor::create({out_ch}, true);
    // He init for relu chains; harmless for the sigmoid head
    const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    for (auto& w : weight->data) w = static_cast<float>(rng.normal() * std);
}

TensorPtr Conv2dLayer::forward(const TensorPtr& x) const {
    return conv2d(x, weight, bias, stride, padding);
}

// ---------------------------------------------------------------------------
// QualityNet

QualityNet::QualityNet(std::uint64_t seed, QualityNetConfig config)
    : cfg_(std::move(config)) {
    if (cfg_.widths.size() != 3)
        throw std::invalid_argument("QualityNet: expected 3 widths (enc0, enc1, bottleneck)");
    Rng rng(mix_seed(seed, 0x5155414CULL));
    const int w0 = cfg_.widths[0], w1 = cfg_.widths[1], w2 = cfg_.widths[2];
    enc0_conv1_ = Conv2dLayer(3, w0, 3, 1, 1, rng);
    enc0_conv2_ = Conv2dLayer(w0, w0, 3, 1, 1, rng);
    enc1_conv1_ = Conv2dLayer(w0, w1, 3, 1, 1, rng);
    enc1_conv2_ = Conv2dLayer(w1, w1, 3, 1, 1, rng);
    bott_conv1_ = Conv2dLayer(w1, w2, 3, 1, 1, rng);
    bott_conv2_ = Conv2dLayer(w2, w2, 3, 1, 1, rng);
    dec1_conv1_ = Conv2dLayer(w2 + w1, w1, 3, 1, 1, rng);
    dec1_conv2_ = Conv2dLayer(w1, w1, 3, 1, 1, rng);
    dec0_conv1_ = Conv2dLayer(w1 + w0, w0, 3, 1, 1, rng);
    dec0_conv2_ = Conv2dLayer(w0, w0, 3, 1, 1, rng);
    head_ = Conv2dLayer(w0, 1, 1, 1, 0, rng);
}

TensorPtr QualityNet::forward(const TensorPtr& image) const {
    check_spatial(image, "quality_forward");
    auto e0 = relu(enc0_conv2_.forward(relu(enc0_conv1_.forward(image))));
    auto p0 = avg_pool2x(e0);
    auto e1 = relu(enc1_conv2_.forward(relu(enc1_conv1_.forward(p0))));
    auto p1 = avg_pool2x(e1);
    auto b = relu(bott_conv2_.forward(relu(bott_conv1_.forward(p1))));
    auto u1 = concat_channels(upsample_nearest2x(b), e1);
    auto d1 = relu(dec1_conv2_.forward(relu(dec1_conv1_.forward(u1))));
    auto u0 = concat_channels(upsample_nearest2x(d1), e0);
    auto d0 = relu(dec0_conv2_.forward(relu(dec0_conv1_.forward(u0))));
    return sigmoid(head_.forward(d0));
}

std::vector<NamedParam> QualityNet::parameters() const {
    std::vector<NamedParam> out;
    collect(out, "quality.enc0.conv1", enc0_conv1_);
    collect(out, "quality.enc0.conv2", enc0_conv2_);
    collect(out, "quality.enc1.conv1", enc1_conv1_);
    collect(out, "quality.enc1.conv2", enc1_conv2_);
    collect(out, "quality.bott.conv1", bott_conv1_);
    collect(out, "quality.bott.conv2", bott_conv2_);
    collect(out, "quality.dec1.conv1", dec1_conv1_);
    collect(out, "quality.dec1.conv2", dec1_conv2_);
    collect(out, "quality.dec0.conv1", dec0_conv1_);
    collect(out, "quality.dec0.conv2", dec0_conv2_);
    collect(out, "quality.head", head_);
    return out;
}

std::vector<std::string> QualityNet::head3_names() const {
    return {"quality.dec0.conv1", "quality.dec0.conv2", "quality.head"};
}

void QualityNet::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["kind"] = "quality";
    manifest["widths"] = cfg_.widths;
    manifest["head3"] = head3_names();
    save_net(path, parameters(), manifest);
}

QualityNet QualityNet::load(const std::string& path) {
    auto manifest = load_manifest(path);
    QualityNetConfig cfg;
    cfg.widths = manifest.at("widths").get<std::vector<int>>();
    QualityNet net(0, cfg);
    load_into(path, net.parameters());
    return net;
}

// ---------------------------------------------------------------------------
// SegNet

SegNet::SegNet(std::uint64_t seed, SegNetConfig config) : cfg_(std::move(config)) {
    if (cfg_.widths.size() != 3)
        throw std::invalid_argument("SegNet: expected 3 stage widths");
    if (cfg_.num_classes < 2)
        throw std::invalid_argument("SegNet: need at least 2 classes");
    Rng rng(mix_seed(seed, 0x5345474DULL));
    const int w0 = cfg_.widths[0], w1 = cfg_.widths[1], w2 = cfg_.widths[2];
    stem_ = Conv2dLayer(3, w0, 3, 1, 1, rng);
    res1_conv1_ = Conv2dLayer(w0, w0, 3, 1, 1, rng);
    res1_conv2_ = Conv2dLayer(w0, w0, 3, 1, 1, rng);
    down1_ = Conv2dLayer(w0, w1, 3, 2, 1, rng);
    res2_conv1_ = Conv2dLayer(w1, w1, 3, 1, 1, rng);
    res2_conv2_ = Conv2dLayer(w1, w1, 3, 1, 1, rng);
    down2_ = Conv2dLayer(w1, w2, 3, 2, 1, rng);
    res3_conv1_ = Conv2dLayer(w2, w2, 3, 1, 1, rng);
    res3_conv2_ = Conv2dLayer(w2, w2, 3, 1, 1, rng);
    up1_ = Conv2dLayer(w2, w1, 3, 1, 1, rng);
    up2_ = Conv2dLayer(w1, w0, 3, 1, 1, rng);
    head_ = Conv2dLayer(w0, cfg_.num_classes, 1, 1, 0, rng);
}

namespace {
TensorPtr res_block(const Conv2dLayer& c1, const Conv2dLayer& c2, const TensorPtr& x) {
    return relu(add(c2.forward(relu(c1.forward(x))), x));
}
} // namespace

TensorPtr SegNet::forward(const TensorPtr& image) const {
    check_spatial(image, "seg_forward");
    auto s0 = relu(stem_.forward(image));
    auto r1 = res_block(res1_conv1_, res1_conv2_, s0);
    auto r2 = res_block(res2_conv1_, res2_conv2_, relu(down1_.forward(r1)));
    auto r3 = res_block(res3_conv1_, res3_conv2_, relu(down2_.forward(r2)));
    auto u1 = relu(add(up1_.forward(upsample_nearest2x(r3)), r2));
    auto u2 = relu(add(up2_.forward(upsample_nearest2x(u1)), r1));
    return head_.forward(u2);
}

std::vector<NamedParam> SegNet::parameters() const {
    std::vector<NamedParam> out;
    collect(out, "seg.stem", stem_);
    collect(out, "seg.res1.conv1", res1_conv1_);
    collect(out, "seg.res1.conv2", res1_conv2_);
    collect(out, "seg.down1", down1_);
    collect(out, "seg.res2.conv1", res2_conv1_);
    collect(out, "seg.res2.conv2", res2_conv2_);
    collect(out, "seg.down2", down2_);
    collect(out, "seg.res3.conv1", res3_conv1_);
    collect(out, "seg.res3.conv2", res3_conv2_);
    collect(out, "seg.up1", up1_);
    collect(out, "seg.up2", up2_);
    collect(out, "seg.head", head_);
    return out;
}

void SegNet::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["kind"] = "seg";
    manifest["widths"] = cfg_.widths;
    manifest["classes"] = cfg_.num_classes;
    save_net(path, parameters(), manifest);
}

SegNet SegNet::load(const std::string& path) {
    auto manifest = load_manifest(path);
    SegNetConfig cfg;
    cfg.widths = manifest.at("widths").get<std::vector<int>>();
    cfg.num_classes = manifest.at("classes").get<int>();
    SegNet net(0, cfg);
    load_into(path, net.parameters());
    return net;
}

// ---------------------------------------------------------------------------

ParamPartition freeze_except_head3(QualityNet& net) {
    ParamPartition part;
    const auto head3 = net.head3_names();
    for (auto& p : net.parameters()) {
        bool in_head3 = false;
        for (const auto& prefix : head3)
            if (p.name.rfind(prefix + ".", 0) == 0 || p.name == prefix) in_head3 = true;
        if (in_head3) {
            part.trainable.push_back(p);
        } else {
            p.tensor->requires_grad = false;
            p.tensor->grad.clear();
            part.frozen.push_back(p);
        }
    }
    return part;
}

} // namespace cloudfuse
