// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
// Heavier criteria share a single desk-scale training run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cloudfuse/dataset.hpp"
#include "cloudfuse/detect.hpp"
#include "cloudfuse/fusion.hpp"
#include "cloudfuse/metrics.hpp"
#include "cloudfuse/nn.hpp"
#include "cloudfuse/optim.hpp"
#include "cloudfuse/rng.hpp"
#include "cloudfuse/tiles.hpp"
#include "grad_check.hpp"

namespace fs = std::filesystem;
using namespace cloudfuse;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s: %2d. %s (%s)\n", pass ? "PASS" : "FAIL", number, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- 1. gradient fidelity ---------------------------------------------------

bool criterion_gradients(std::string& detail) {
    using gradcheck::max_grad_error;
    using gradcheck::random_tensor;
    using D = gradcheck::DTensorPtr;
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    const int kSeeds = 20;

    auto run = [&](std::uint64_t tag, const std::vector<std::vector<int>>& shapes,
                   const std::function<D(const std::vector<D>&)>& fwd, double lo = -1.0,
                   double hi = 1.0) {
        for (int s = 0; s < kSeeds; ++s) {
            Rng rng(mix_seed(tag, static_cast<std::uint64_t>(s)));
            std::vector<D> inputs;
            for (const auto& sh : shapes) inputs.push_back(random_tensor(sh, rng, lo, hi));
            worst = std::max(worst, max_grad_error(inputs, fwd));
        }
    };

    // conv2d: stride 1 no padding, stride 1 padded, stride 2
    run(101, {{1, 2, 6, 6}, {3, 2, 3, 3}, {3}}, [](const std::vector<D>& in) {
        return sum_all(conv2d(in[0], in[1], in[2], 1, 0));
    });
    run(102, {{2, 3, 8, 8}, {2, 3, 3, 3}, {2}}, [](const std::vector<D>& in) {
        return sum_all(conv2d(in[0], in[1], in[2], 1, 1));
    });
    run(103, {{1, 2, 8, 8}, {2, 2, 3, 3}, {2}}, [](const std::vector<D>& in) {
        return sum_all(conv2d(in[0], in[1], in[2], 2, 1));
    });
    run(104, {{2, 3, 4, 4}}, [](const std::vector<D>& in) {
        return sum_all(upsample_nearest2x(in[0]));
    });
    run(105, {{2, 3, 4, 4}}, [](const std::vector<D>& in) {
        return sum_all(sigmoid(in[0]));
    });
    // relu away from the kink
    run(106, {{2, 3, 4, 4}}, [](const std::vector<D>& in) { return sum_all(relu(in[0])); },
        0.5, 1.5);
    run(107, {{2, 3, 8, 8}}, [](const std::vector<D>& in) {
        return sum_all(avg_pool2x(in[0]));
    });
    run(108, {{2, 3, 4, 4}, {2, 3, 4, 4}}, [](const std::vector<D>& in) {
        return sum_all(add(in[0], in[1]));
    });
    run(109, {{2, 3, 4, 4}}, [](const std::vector<D>& in) {
        return sum_all(affine(in[0], 2.5, -0.75));
    });
    run(110, {{1, 3, 4, 4}, {1, 1, 4, 4}}, [](const std::vector<D>& in) {
        return sum_all(mul_channel_broadcast(in[0], in[1]));
    });
    run(111, {{1, 2, 4, 4}, {1, 3, 4, 4}}, [](const std::vector<D>& in) {
        return sum_all(concat_channels(in[0], in[1]));
    });
    run(112, {{1, 1, 4, 4}, {1, 1, 4, 4}, {1, 1, 4, 4}}, [](const std::vector<D>& in) {
        auto weights = softmax_over_stack(in);
        // weight outputs asymmetrically so every input matters
        gradcheck::DTensorPtr loss;
        for (std::size_t j = 0; j < weights.size(); ++j) {
            auto term = affine(weights[j], 0.5 + static_cast<double>(j), 0.0);
            loss = loss ? add(loss, term) : term;
        }
        return sum_all(loss);
    });
    run(113, {{1, 4, 3, 3}}, [](const std::vector<D>& in) {
        std::vector<int> labels(9);
        for (int i = 0; i < 9; ++i) labels[i] = i % 4;
        return cross_entropy(in[0], labels);
    });
    // bce/dice: targets are labels, constants by contract
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(mix_seed(114, static_cast<std::uint64_t>(s)));
        auto pred_logits = random_tensor({1, 1, 4, 4}, rng);
        auto target = random_tensor({1, 1, 4, 4}, rng, 0.0, 1.0, false);
        worst = std::max(worst, max_grad_error({pred_logits}, [&](const std::vector<D>& in) {
                             return bce_loss(sigmoid(in[0]), target);
                         }));
        worst = std::max(worst, max_grad_error({pred_logits}, [&](const std::vector<D>& in) {
                             return dice_coefficient(sigmoid(in[0]), target);
                         }));
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << "max relative error " << worst << ", " << secs << "s";
    detail = os.str();
    return worst <= 1e-4 && secs < 60.0;
}

// ---- 2. fusion algebra ------------------------------------------------------

bool criterion_fusion_algebra(std::string& detail) {
    QualityNet net(2024);
    const double e_bound = std::exp(1.0) + 1e-6;
    double worst_sum = 0.0, worst_ratio = 0.0;
    bool envelope_ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(mix_seed(5150, static_cast<std::uint64_t>(trial)));
        const int k = 1 + static_cast<int>(rng.below(6));
        ImageStack stack;
        stack.h = stack.w = 16;
        const int n = stack.h * stack.w;
        for (int j = 0; j < k; ++j) {
            std::vector<float> img(static_cast<std::size_t>(3 * n));
            for (auto& v : img) v = static_cast<float>(rng.uniform());
            stack.images.push_back(std::move(img));
        }
        auto result = fuse(stack, net);
        for (int p = 0; p < n; ++p) {
            double sum = 0.0;
            double wmin = 2.0, wmax = -1.0;
            for (int j = 0; j < k; ++j) {
                const double w = result.relative[j]->data[p];
                sum += w;
                wmin = std::min(wmin, w);
                wmax = std::max(wmax, w);
            }
            worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
            worst_ratio = std::max(worst_ratio, wmax / wmin);
            for (int c = 0; c < 3; ++c) {
                double lo = 2.0, hi = -1.0;
                for (int j = 0; j < k; ++j) {
                    const double v = stack.images[j][static_cast<std::size_t>(c) * n + p];
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                const double f = result.fused->data[static_cast<std::size_t>(c) * n + p];
                if (f < lo - 1e-6 || f > hi + 1e-6) envelope_ok = false;
            }
        }
    }
    std::ostringstream os;
    os << "weight-sum dev " << worst_sum << ", max ratio " << worst_ratio;
    detail = os.str();
    return worst_sum <= 1e-6 && envelope_ok && worst_ratio <= e_bound;
}

// ---- shared desk-scale artifacts for 3, 4, 7, 8 -----------------------------

struct DeskRun {
    fs::path root;
    DatasetManifest train, test;
    std::string quality_ckpt;
    double first_loss = 0.0, final_loss = 0.0;
    double train_cpu_seconds = 0.0;
    bool trained = false;
};

DeskRun desk_training() {
    DeskRun run;
    run.root = fs::temp_directory_path() / "cloudfuse_acceptance";
    fs::remove_all(run.root);

    SceneRecipe recipe;
    recipe.seed = 42;
    recipe.image_size = 64;
    recipe.k = 4;
    run.train = generate_dataset(recipe, 64, (run.root / "train").string());
    recipe.seed = 43;
    run.test = generate_dataset(recipe, 16, (run.root / "test").string());

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 4;
    cfg.crop = 64;
    cfg.images_per_location = 4;
    cfg.seed = 42;
    cfg.lr = 1e-4f;
    const std::clock_t c0 = std::clock();
    auto result = train_fusion(run.train, cfg, (run.root / "fusion").string());
    run.train_cpu_seconds = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
    run.quality_ckpt = result.quality_checkpoint;
    run.first_loss = result.epoch_losses.front();
    run.final_loss = result.epoch_losses.back();
    run.trained = true;
    return run;
}

bool criterion_emergent_quality(const DeskRun& run, std::string& detail) {
    auto net = QualityNet::load(run.quality_ckpt);
    std::vector<float> scores;
    std::vector<std::uint8_t> truth;
    for (std::size_t loc = 0; loc < run.test.locations.size(); ++loc) {
        auto stack = load_stack(run.test, loc);
        for (std::size_t j = 0; j < stack.images.size(); ++j) {
            auto out = net.forward(image_to_tensor(stack, j));
            for (std::size_t p = 0; p < out->data.size(); ++p) {
                scores.push_back(1.0f - out->data[p]);
                truth.push_back(stack.masks[j][p]);
            }
        }
    }
    const double auc = roc_auc(scores, truth);
    std::ostringstream os;
    os << "held-out AUC " << auc << ", loss " << run.first_loss << " -> " << run.final_loss
       << ", train CPU " << run.train_cpu_seconds << "s";
    detail = os.str();
    return auc >= 0.80 && run.train_cpu_seconds < 900.0;
}

bool criterion_detector_ordering(const DeskRun& run, std::string& detail) {
    auto net = QualityNet::load(run.quality_ckpt);
    std::vector<double> q;
    std::vector<std::uint8_t> y;
    collect_calibration_points(run.train, net, 20000, 42, q, y);
    auto fit = fit_platt(q, y);
    const auto cal_path = (run.root / "calibration.json").string();
    save_calibration(fit.params, cal_path);

    auto tuned = QualityNet::load(run.quality_ckpt);
    freeze_except_head3(tuned);
    int h = 0, w = 0;
    std::vector<std::pair<std::vector<float>, CloudMask>> samples;
    for (std::size_t loc = 0; loc < run.train.locations.size(); ++loc) {
        auto stack = load_stack(run.train, loc);
        h = stack.h;
        w = stack.w;
        for (std::size_t j = 0; j < stack.images.size(); ++j)
            samples.emplace_back(stack.images[j], stack.masks[j]);
    }
    FinetuneConfig fcfg;
    fcfg.epochs = 10;
    fcfg.seed = 42;
    finetune(tuned, samples, h, w, fcfg);
    const auto tuned_path = (run.root / "quality_finetuned.ftz").string();
    tuned.save(tuned_path);

    BenchmarkInputs inputs;
    inputs.quality_checkpoint = run.quality_ckpt;
    inputs.calibration_path = cal_path;
    inputs.finetuned_checkpoint = tuned_path;
    auto report = run_benchmark(run.test, inputs);

    double miou_thr = -1, miou_cal = -1, miou_ft = -1;
    for (const auto& row : report.rows) {
        if (!row.available) continue;
        if (row.name == "threshold") miou_thr = row.pooled_metrics.miou;
        if (row.name == "calibrated") miou_cal = row.pooled_metrics.miou;
        if (row.name == "finetuned") miou_ft = row.pooled_metrics.miou;
    }
    std::ostringstream os;
    os << "mIoU threshold " << miou_thr << " < calibrated " << miou_cal << " < finetuned "
       << miou_ft;
    detail = os.str();
    return miou_thr >= 0 && miou_cal >= 0 && miou_ft >= 0 && miou_thr < miou_cal &&
           miou_cal < miou_ft && miou_ft >= miou_thr + 0.03;
}

// ---- 5. Platt recovery ------------------------------------------------------

bool criterion_platt(std::string& detail) {
    const double b0 = 6.0, b1 = -3.0;
    Rng rng(77);
    std::vector<double> q(100000);
    std::vector<std::uint8_t> y(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = rng.uniform();
        const double p = 1.0 / (1.0 + std::exp(b0 * q[i] + b1));
        y[i] = rng.uniform() < p ? 1 : 0;
    }
    auto fit = fit_platt(q, y);
    bool monotone = true;
    for (std::size_t i = 1; i < fit.log_likelihoods.size(); ++i)
        if (fit.log_likelihoods[i] < fit.log_likelihoods[i - 1] - 1e-12) monotone = false;
    const double e0 = std::abs(fit.params.beta0 - b0) / std::abs(b0);
    const double e1 = std::abs(fit.params.beta1 - b1) / std::abs(b1);
    std::ostringstream os;
    os << "recovered (" << fit.params.beta0 << ", " << fit.params.beta1 << "), rel err " << e0
       << "/" << e1;
    detail = os.str();
    return e0 <= 0.05 && e1 <= 0.05 && monotone;
}

// ---- 6. metric oracle -------------------------------------------------------

bool criterion_metric_oracle(std::string& detail) {
    const std::size_t n = 32 * 32;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(mix_seed(31337, static_cast<std::uint64_t>(trial)));
        CloudMask pred(n), truth(n);
        if (trial == 0) { /* all zero */
        } else if (trial == 1) {
            std::fill(pred.begin(), pred.end(), 1);
            std::fill(truth.begin(), truth.end(), 1);
        } else if (trial == 2) {
            std::fill(pred.begin(), pred.end(), 1);
        } else if (trial == 3) {
            std::fill(truth.begin(), truth.end(), 1);
        } else {
            for (auto& v : pred) v = rng.below(2) ? 1 : 0;
            for (auto& v : truth) v = rng.below(2) ? 1 : 0;
        }
        auto c = accumulate(pred, truth);
        std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (pred[i] && truth[i]) ++tp;
            else if (pred[i]) ++fp;
            else if (!truth[i]) ++tn;
            else ++fn;
        }
        if (c.tp != tp || c.fp != fp || c.tn != tn || c.fn != fn) {
            detail = "confusion counts diverge from brute force at trial " +
                     std::to_string(trial);
            return false;
        }
        auto m = metrics(c);
        const auto ratio1 = [](double num, double den) { return den == 0 ? 1.0 : num / den; };
        const double tpr = ratio1(double(tp), double(tp + fn));
        const double tnr = ratio1(double(tn), double(tn + fp));
        const double acc = double(tp + tn) / double(n);
        const double miou = 0.5 * (ratio1(double(tp), double(tp + fp + fn)) +
                                   ratio1(double(tn), double(tn + fp + fn)));
        if (m.tpr != tpr || m.tnr != tnr || m.accuracy != acc || m.miou != miou) {
            detail = "derived metrics diverge at trial " + std::to_string(trial);
            return false;
        }
        ++checked;
    }
    detail = std::to_string(checked) + " mask pairs, exact match";
    return true;
}

// ---- 7. freezing contract ---------------------------------------------------

bool criterion_freezing(const DeskRun& run, std::string& detail) {
    auto net = QualityNet::load(run.quality_ckpt);
    auto part = freeze_except_head3(net);
    std::vector<std::vector<float>> before;
    for (const auto& p : part.frozen) before.push_back(p.tensor->data);

    OptimConfig oc;
    oc.lr = 1e-2f;
    AdamOptimizer opt(part.trainable, oc);
    Rng rng(8);
    auto img = Tensor::create({1, 3, 16, 16});
    auto target = Tensor::create({1, 1, 16, 16});
    for (int step = 0; step < 10; ++step) {
        for (auto& v : img->data) v = static_cast<float>(rng.uniform());
        for (auto& v : target->data) v = static_cast<float>(rng.below(2));
        opt.zero_grad();
        auto out = net.forward(img);
        auto loss = add(bce_loss(out, target),
                        affine(dice_coefficient(out, target), -1.0f, 1.0f));
        backward(loss);
        opt.step();
    }
    for (std::size_t i = 0; i < part.frozen.size(); ++i)
        if (part.frozen[i].tensor->data != before[i]) {
            detail = "frozen parameter " + part.frozen[i].name + " changed";
            return false;
        }
    detail = std::to_string(part.frozen.size()) + " frozen tensors bitwise stable over 10 steps";
    return true;
}

// ---- 8. size sweep ----------------------------------------------------------

bool criterion_size_sweep(const DeskRun& run, std::string& detail) {
    auto curve = size_sweep(run.train, run.test, run.quality_ckpt, {4, 16, 64}, 30, 42);
    const auto csv = (run.root / "sweep.csv").string();
    write_sweep_csv(curve, csv);
    std::ostringstream os;
    for (const auto& pt : curve) os << "acc(" << pt.n_train << ")=" << pt.accuracy << " ";
    detail = os.str();
    return curve.size() == 3 && fs::exists(csv) && curve.back().accuracy > curve.front().accuracy;
}

// ---- 9. determinism ---------------------------------------------------------

bool criterion_determinism(std::string& detail) {
    const auto root = fs::temp_directory_path() / "cloudfuse_acceptance_det";
    fs::remove_all(root);
    SceneRecipe recipe;
    recipe.seed = 99;
    recipe.image_size = 32;
    recipe.k = 3;
    auto data = generate_dataset(recipe, 4, (root / "data").string());

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.crop = 32;
    cfg.images_per_location = 2;
    cfg.seed = 7;
    auto a = train_fusion(data, cfg, (root / "a").string());
    auto b = train_fusion(data, cfg, (root / "b").string());
    if (slurp(a.quality_checkpoint) != slurp(b.quality_checkpoint) ||
        slurp(a.seg_checkpoint) != slurp(b.seg_checkpoint) ||
        slurp(a.loss_log) != slurp(b.loss_log)) {
        detail = "repeated training runs differ";
        return false;
    }

    BenchmarkInputs inputs;
    inputs.quality_checkpoint = a.quality_checkpoint;
    auto r1 = run_benchmark(data, inputs);
    auto r2 = run_benchmark(data, inputs);
    write_report_json(r1, (root / "r1.json").string());
    write_report_json(r2, (root / "r2.json").string());
    const bool eval_same = slurp(root / "r1.json") == slurp(root / "r2.json");
    fs::remove_all(root);
    detail = "checkpoints, logs, and reports byte-identical";
    return eval_same;
}

// ---- 10. tile math ----------------------------------------------------------

bool criterion_tiles(std::string& detail) {
    Rng rng(424242);
    for (int i = 0; i < 1000; ++i) {
        const int z = static_cast<int>(rng.below(16));
        const double lon = rng.uniform(-180.0, 180.0);
        const double lat = rng.uniform(-85.05, 85.05);
        auto tile = lonlat_to_tile(lon, lat, z);

        // independent slippy-map formula
        const double n = std::pow(2.0, z);
        long long ex = static_cast<long long>(std::floor((lon + 180.0) / 360.0 * n));
        const double rad = lat * M_PI / 180.0;
        long long ey = static_cast<long long>(
            std::floor((1.0 - std::log(std::tan(rad) + 1.0 / std::cos(rad)) / M_PI) / 2.0 * n));
        const long long grid = static_cast<long long>(n);
        ex = std::min(std::max(ex, 0LL), grid - 1);
        ey = std::min(std::max(ey, 0LL), grid - 1);
        if (tile.x != ex || tile.y != ey) {
            std::ostringstream os;
            os << "mismatch at lon " << lon << " lat " << lat << " z " << z << ": got ("
               << tile.x << "," << tile.y << ") want (" << ex << "," << ey << ")";
            detail = os.str();
            return false;
        }
    }
    detail = "1000 coordinates, exact match";
    return true;
}

} // namespace

int main() {
    std::string detail;

    report(1, "gradient fidelity vs finite differences", criterion_gradients(detail), detail);
    report(2, "fusion weight algebra on random stacks", criterion_fusion_algebra(detail),
           detail);

    DeskRun run = desk_training();

    report(3, "emergent quality after desk-scale training",
           criterion_emergent_quality(run, detail), detail);
    report(4, "detector mIoU ordering on held-out split",
           criterion_detector_ordering(run, detail), detail);
    report(5, "Platt parameter recovery", criterion_platt(detail), detail);
    report(6, "confusion metrics vs brute-force oracle", criterion_metric_oracle(detail),
           detail);
    report(7, "fine-tune freezing contract", criterion_freezing(run, detail), detail);
    report(8, "training-size sweep shape", criterion_size_sweep(run, detail), detail);
    report(9, "byte-identical repeated runs", criterion_determinism(detail), detail);
    report(10, "slippy-map tile math oracle", criterion_tiles(detail), detail);

    fs::remove_all(run.root);
    return g_failures == 0 ? 0 : 1;
}
