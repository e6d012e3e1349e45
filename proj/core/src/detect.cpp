#include "cloudfuse/detect.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cloudfuse/rng.hpp"

namespace cloudfuse {

double platt_probability(const CalibrationParams& params, double quality) {
    return 1.0 / (1.0 + std::exp(params.beta0 * quality + params.beta1));
}

void save_calibration(const CalibrationParams& params, const std::string& path) {
    nlohmann::json j{{"beta0", params.beta0}, {"beta1", params.beta1}};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

CalibrationParams load_calibration(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    CalibrationParams p;
    p.beta0 = j.at("beta0").get<double>();
    p.beta1 = j.at("beta1").get<double>();
    if (!std::isfinite(p.beta0) || !std::isfinite(p.beta1))
        throw std::runtime_error("calibration parameters not finite in " + path);
    return p;
}

CloudMask detect_threshold(const std::vector<float>& quality, double tau) {
    CloudMask mask(quality.size());
    for (std::size_t i = 0; i < quality.size(); ++i)
        mask[i] = quality[i] < tau ? 1 : 0;
    return mask;
}

CloudMask detect_calibrated(const std::vector<float>& quality,
                            const CalibrationParams& params, double p_thresh) {
    CloudMask mask(quality.size());
    for (std::size_t i = 0; i < quality.size(); ++i)
        mask[i] = platt_probability(params, quality[i]) > p_thresh ? 1 : 0;
    return mask;
}

namespace {

double platt_log_likelihood(const std::vector<double>& q,
                            const std::vector<std::uint8_t>& y, double b0, double b1) {
    double ll = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double z = b0 * q[i] + b1;
        // log p = -log(1+e^z), log(1-p) = -z - log(1+e^-z); stable forms
        const double log1pez = z > 0 ? z + std::log1p(std::exp(-z))
                                     : std::log1p(std::exp(z));
        ll += y[i] ? -log1pez : z - log1pez;
    }
    return ll;
}

} // namespace

PlattFitResult fit_platt(const std::vector<double>& qualities,
                         const std::vector<std::uint8_t>& labels) {
    if (qualities.size() != labels.size() || qualities.empty())
        throw std::invalid_argument("fit_platt: size mismatch or empty input");
    bool has0 = false, has1 = false;
    for (auto y : labels) (y ? has1 : has0) = true;
    if (!has0 || !has1)
        throw std::invalid_argument("fit_platt: both classes must be present");

    PlattFitResult result;
    double b0 = 0.0, b1 = 0.0;
    double ll = platt_log_likelihood(qualities, labels, b0, b1);
    result.log_likelihoods.push_back(ll);

    for (int iter = 0; iter < 100; ++iter) {
        // dNLL/dz = y - p with p = sigmoid(-z); Hessian = sum p(1-p) x x^T
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (std::size_t i = 0; i < qualities.size(); ++i) {
            const double q = qualities[i];
            const double p = 1.0 / (1.0 + std::exp(b0 * q + b1));
            const double r = static_cast<double>(labels[i]) - p;
            g0 += r * q;
            g1 += r;
            const double w = p * (1.0 - p);
            h00 += w * q * q;
            h01 += w * q;
            h11 += w;
        }
        result.iterations = iter + 1;
        if (std::sqrt(g0 * g0 + g1 * g1) < 1e-8) break;

        const double det = h00 * h11 - h01 * h01;
        double s0, s1;
        if (std::abs(det) < 1e-300) {
            s0 = -g0; // gradient descent fallback on a degenerate Hessian
            s1 = -g1;
        } else {
            s0 = -(h11 * g0 - h01 * g1) / det;
            s1 = -(h00 * g1 - h01 * g0) / det;
        }
        // damping: halve the step until the likelihood does not decrease
        double step = 1.0;
        double nb0 = b0, nb1 = b1, nll = ll;
        for (int half = 0; half < 40; ++half) {
            nb0 = b0 + step * s0;
            nb1 = b1 + step * s1;
            nll = platt_log_likelihood(qualities, labels, nb0, nb1);
            if (nll >= ll) break;
            step *= 0.5;
        }
        if (nll < ll) break; // no improving step left
        b0 = nb0;
        b1 = nb1;
        ll = nll;
        result.log_likelihoods.push_back(ll);
    }
    result.params = {b0, b1};
    return result;
}

void collect_calibration_points(const DatasetManifest& data, const QualityNet& net,
                                std::size_t max_points, std::uint64_t seed,
                                std::vector<double>& qualities,
                                std::vector<std::uint8_t>& labels) {
    qualities.clear();
    labels.clear();
    for (std::size_t li = 0; li < data.locations.size(); ++li) {
        auto stack = load_stack(data, li);
        if (stack.masks.empty())
            throw std::invalid_argument("calibration dataset has no cloud masks");
        for (std::size_t j = 0; j < stack.k(); ++j) {
            auto q = net.forward(image_to_tensor(stack, j));
            for (std::size_t i = 0; i < q->numel(); ++i) {
                qualities.push_back(q->data[i]);
                labels.push_back(stack.masks[j][i]);
            }
        }
    }
    if (qualities.size() > max_points) {
        // seeded reservoir-free downsample: pick max_points indices
        std::vector<std::size_t> idx(qualities.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(mix_seed(seed, 0xCA11ULL));
        for (std::size_t i = 0; i < max_points; ++i) {
            const std::size_t j = i + rng.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<double> q2(max_points);
        std::vector<std::uint8_t> y2(max_points);
        for (std::size_t i = 0; i < max_points; ++i) {
            q2[i] = qualities[idx[i]];
            y2[i] = labels[idx[i]];
        }
        qualities = std::move(q2);
        labels = std::move(y2);
    }
}

std::vector<float> cloud_probability(const QualityNet& net, const TensorPtr& image,
                                     bool direct_probability) {
    auto out = net.forward(image);
    std::vector<float> p(out->data);
    if (!direct_probability)
        for (auto& v : p) v = 1.0f - v;
    return p;
}

FinetuneResult finetune(QualityNet& net,
                        const std::vector<std::pair<std::vector<float>, CloudMask>>& samples,
                        int h, int w, const FinetuneConfig& config) {
    if (samples.empty()) throw std::invalid_argument("finetune: empty training set");
    ParamPartition part;
    {
        // verify the freeze was applied; re-applying is idempotent
        part = freeze_except_head3(net);
    }
    OptimConfig oc;
    oc.lr = config.lr;
    oc.rectify = config.rectify;
    oc.lookahead = config.lookahead;
    AdamOptimizer opt(part.trainable, oc);

    const std::size_t hw = static_cast<std::size_t>(h) * w;
    FinetuneResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t i = 0;
        while (i < samples.size()) {
            const std::size_t end =
                std::min(i + static_cast<std::size_t>(config.batch_size), samples.size());
            const int B = static_cast<int>(end - i);
            opt.zero_grad();
            TensorPtr batch_loss;
            for (; i < end; ++i) {
                auto image = Tensor::from_data({1, 3, h, w}, samples[i].first);
                auto out = net.forward(image);
                // cloud probability: high quality means clear, so invert
                auto p = config.direct_probability
                             ? out
                             : affine(out, -1.0f, 1.0f);
                std::vector<float> target(hw);
                for (std::size_t px = 0; px < hw; ++px)
                    target[px] = static_cast<float>(samples[i].second[px]);
                auto t = Tensor::from_data({1, 1, h, w}, std::move(target));
                auto loss = add(bce_loss(p, t),
                                affine(dice_coefficient(p, t), -1.0f, 1.0f));
                batch_loss = batch_loss ? add(batch_loss, loss) : loss;
            }
            auto mean_loss = affine(batch_loss, 1.0f / static_cast<float>(B), 0.0f);
            if (!std::isfinite(mean_loss->data[0]))
                throw std::runtime_error("finetune: non-finite loss at epoch " +
                                         std::to_string(epoch));
            epoch_loss += mean_loss->data[0] * B;
            backward(mean_loss);
            opt.step();
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(samples.size()));
    }
    return result;
}

} // namespace cloudfuse
