#include "cloudfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cloudfuse/rng.hpp"

namespace cloudfuse {

ConfusionCounts accumulate(const CloudMask& pred, const CloudMask& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("accumulate: mask sizes differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i]) {
            if (pred[i])
                ++c.tp;
            else
                ++c.fn;
        } else {
            if (pred[i])
                ++c.fp;
            else
                ++c.tn;
        }
    }
    return c;
}

namespace {
double ratio_or_one(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}
} // namespace

MetricsEntry metrics(const ConfusionCounts& c) {
    MetricsEntry m;
    m.tpr = ratio_or_one(c.tp, c.tp + c.fn);
    m.tnr = ratio_or_one(c.tn, c.tn + c.fp);
    m.accuracy = ratio_or_one(c.tp + c.tn, c.total());
    const double iou_cloud = ratio_or_one(c.tp, c.tp + c.fp + c.fn);
    const double iou_clear = ratio_or_one(c.tn, c.tn + c.fp + c.fn);
    m.miou = 0.5 * (iou_cloud + iou_clear);
    return m;
}

double roc_auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth) {
    if (scores.size() != truth.size() || scores.empty())
        throw std::invalid_argument("roc_auc: size mismatch or empty input");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over ties, then Mann-Whitney U
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < truth.size(); ++k)
        if (truth[k]) {
            rank_sum_pos += rank[k];
            ++n_pos;
        }
    const std::size_t n_neg = truth.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc: need both classes");
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// benchmark driver

namespace {

struct EvalAccum {
    ConfusionCounts pooled;
    MetricsEntry per_image_sum;
    int images = 0;

    void add(const ConfusionCounts& c) {
        pooled += c;
        const auto m = metrics(c);
        per_image_sum.tpr += m.tpr;
        per_image_sum.tnr += m.tnr;
        per_image_sum.miou += m.miou;
        per_image_sum.accuracy += m.accuracy;
        ++images;
    }

    void fill(DetectorReport& row) const {
        row.pooled = pooled;
        row.pooled_metrics = metrics(pooled);
        row.images = images;
        if (images > 0) {
            row.per_image_mean.tpr = per_image_sum.tpr / images;
            row.per_image_mean.tnr = per_image_sum.tnr / images;
            row.per_image_mean.miou = per_image_sum.miou / images;
            row.per_image_mean.accuracy = per_image_sum.accuracy / images;
        }
    }
};

} // namespace

BenchmarkReport run_benchmark(const DatasetManifest& test_data,
                              const BenchmarkInputs& inputs) {
    BenchmarkReport report;

    DetectorReport threshold_row;
    threshold_row.name = "threshold";
    DetectorReport calibrated_row;
    calibrated_row.name = "calibrated";
    DetectorReport finetuned_row;
    finetuned_row.name = "finetuned";

    std::unique_ptr<QualityNet> qnet;
    try {
        qnet = std::make_unique<QualityNet>(QualityNet::load(inputs.quality_checkpoint));
        threshold_row.available = true;
    } catch (const std::exception& e) {
        threshold_row.error = e.what();
    }

    CalibrationParams calib;
    if (!inputs.calibration_path.empty() && qnet) {
        try {
            calib = load_calibration(inputs.calibration_path);
            calibrated_row.available = true;
        } catch (const std::exception& e) {
            calibrated_row.error = e.what();
        }
    } else if (!qnet) {
        calibrated_row.error = "quality checkpoint unavailable";
    } else {
        calibrated_row.error = "no calibration parameters provided";
    }

    std::unique_ptr<QualityNet> fnet;
    if (!inputs.finetuned_checkpoint.empty()) {
        try {
            fnet = std::make_unique<QualityNet>(QualityNet::load(inputs.finetuned_checkpoint));
            finetuned_row.available = true;
        } catch (const std::exception& e) {
            finetuned_row.error = e.what();
        }
    } else {
        finetuned_row.error = "no fine-tuned checkpoint provided";
    }

    EvalAccum acc_thresh, acc_calib, acc_fine;
    for (std::size_t li = 0; li < test_data.locations.size(); ++li) {
        auto stack = load_stack(test_data, li);
        if (stack.masks.empty())
            throw std::invalid_argument("run_benchmark: test data has no cloud masks");
        for (std::size_t j = 0; j < stack.k(); ++j) {
            CloudMask truth(stack.masks[j].begin(), stack.masks[j].end());
            auto image = image_to_tensor(stack, j);
            if (qnet) {
                auto q = qnet->forward(image);
                if (threshold_row.available)
                    acc_thresh.add(accumulate(detect_threshold(q->data, inputs.tau), truth));
                if (calibrated_row.available)
                    acc_calib.add(accumulate(
                        detect_calibrated(q->data, calib, inputs.p_thresh), truth));
            }
            if (fnet) {
                auto p = cloud_probability(*fnet, image, inputs.direct_probability);
                CloudMask mask(p.size());
                for (std::size_t i = 0; i < p.size(); ++i)
                    mask[i] = p[i] > inputs.p_thresh ? 1 : 0;
                acc_fine.add(accumulate(mask, truth));
            }
        }
    }

    acc_thresh.fill(threshold_row);
    acc_calib.fill(calibrated_row);
    acc_fine.fill(finetuned_row);
    report.rows = {threshold_row, calibrated_row, finetuned_row};
    return report;
}

namespace {
nlohmann::json metrics_json(const MetricsEntry& m) {
    return {{"tpr", m.tpr}, {"tnr", m.tnr}, {"miou", m.miou}, {"accuracy", m.accuracy}};
}
} // namespace

void write_report_json(const BenchmarkReport& report, const std::string& path) {
    nlohmann::json j;
    j["config_digest"] = report.config_digest;
    j["detectors"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
        nlohmann::json rj;
        rj["name"] = row.name;
        rj["available"] = row.available;
        if (!row.available) {
            rj["error"] = row.error;
        } else {
            rj["counts"] = {{"tp", row.pooled.tp},
                            {"fp", row.pooled.fp},
                            {"tn", row.pooled.tn},
                            {"fn", row.pooled.fn}};
            rj["pooled"] = metrics_json(row.pooled_metrics);
            rj["per_image_mean"] = metrics_json(row.per_image_mean);
            rj["images"] = row.images;
        }
        j["detectors"].push_back(std::move(rj));
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

std::string format_report_table(const BenchmarkReport& report) {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %9s\n", "Method", "TPR",
                  "TNR", "mIoU", "Accuracy");
    os << line;
    for (const auto& row : report.rows) {
        if (!row.available) {
            std::snprintf(line, sizeof(line), "%-12s unavailable: %s\n",
                          row.name.c_str(), row.error.c_str());
        } else {
            const auto& m = row.pooled_metrics;
            std::snprintf(line, sizeof(line), "%-12s %8.4f %8.4f %7.2f%% %8.2f%%\n",
                          row.name.c_str(), m.tpr, m.tnr, m.miou * 100.0,
                          m.accuracy * 100.0);
        }
        os << line;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// training-size sweep

std::vector<SweepPoint> size_sweep(const DatasetManifest& train_data,
                                   const DatasetManifest& test_data,
                                   const std::string& quality_checkpoint,
                                   const std::vector<int>& sizes, int epochs,
                                   std::uint64_t seed) {
    // flatten the training pool to (image, mask) pairs
    std::vector<std::pair<std::vector<float>, CloudMask>> pool;
    int h = 0, w = 0;
    for (std::size_t li = 0; li < train_data.locations.size(); ++li) {
        auto stack = load_stack(train_data, li);
        if (stack.masks.empty())
            throw std::invalid_argument("size_sweep: training data has no cloud masks");
        h = stack.h;
        w = stack.w;
        for (std::size_t j = 0; j < stack.k(); ++j) {
            CloudMask mask(stack.masks[j].begin(), stack.masks[j].end());
            pool.emplace_back(stack.images[j], std::move(mask));
        }
    }

    std::vector<SweepPoint> curve;
    for (int n : sizes) {
        if (n < 1 || static_cast<std::size_t>(n) > pool.size())
            throw std::invalid_argument("size_sweep: size " + std::to_string(n) +
                                        " exceeds pool of " +
                                        std::to_string(pool.size()));
        // seeded subsample of the pool
        std::vector<std::size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(n)));
        for (int i = 0; i < n; ++i) {
            const std::size_t j = i + rng.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<std::pair<std::vector<float>, CloudMask>> subset;
        for (int i = 0; i < n; ++i) subset.push_back(pool[idx[i]]);

        auto net = QualityNet::load(quality_checkpoint);
        freeze_except_head3(net);
        FinetuneConfig fc;
        fc.epochs = epochs;
        fc.seed = mix_seed(seed, 0x53574545ULL + static_cast<std::uint64_t>(n));
        finetune(net, subset, h, w, fc);

        ConfusionCounts pooled;
        for (std::size_t li = 0; li < test_data.locations.size(); ++li) {
            auto stack = load_stack(test_data, li);
            for (std::size_t j = 0; j < stack.k(); ++j) {
                auto p = cloud_probability(net, image_to_tensor(stack, j), false);
                CloudMask mask(p.size());
                for (std::size_t i = 0; i < p.size(); ++i) mask[i] = p[i] > 0.5f ? 1 : 0;
                CloudMask truth(stack.masks[j].begin(), stack.masks[j].end());
                pooled += accumulate(mask, truth);
            }
        }
        const auto m = metrics(pooled);
        curve.push_back({n, m.accuracy, m.miou});
    }
    return curve;
}

void write_sweep_csv(const std::vector<SweepPoint>& curve, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "n_train,accuracy,miou\n";
    char row[96];
    for (const auto& p : curve) {
        std::snprintf(row, sizeof(row), "%d,%.6f,%.6f\n", p.n_train, p.accuracy, p.miou);
        os << row;
    }
}

} // namespace cloudfuse
