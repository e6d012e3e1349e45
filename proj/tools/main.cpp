// cloudfuse command-line front end: one subcommand per pipeline stage.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cloudfuse/dataset.hpp"
#include "cloudfuse/detect.hpp"
#include "cloudfuse/fusion.hpp"
#include "cloudfuse/metrics.hpp"
#include "cloudfuse/netpbm.hpp"
#include "cloudfuse/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cloudfuse;

namespace {

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw MissingFile(what + ": " + path);
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ULL) {
    auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot hash output: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    return hex64(h);
}

// flags override the JSON config file, which overrides built-in defaults
struct Layered {
    json cfg;

    static Layered from(const std::string& config_path) {
        Layered l;
        if (config_path.empty()) return l;
        require_file(config_path, "config file not found");
        std::ifstream in(config_path);
        try {
            in >> l.cfg;
        } catch (const json::exception& e) {
            throw std::invalid_argument(std::string("config file is not valid JSON: ") + e.what());
        }
        return l;
    }

    template <typename T>
    void apply(const CLI::Option* opt, T& value, const char* key) const {
        if (opt->count() > 0 || !cfg.contains(key)) return;
        try {
            value = cfg.at(key).get<T>();
        } catch (const json::exception&) {
            throw std::invalid_argument(std::string("config key has wrong type: ") + key);
        }
    }
};

struct ManifestWriter {
    std::string command;
    std::string out_dir;
    json config;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    void write() const {
        json m;
        m["command"] = command;
        const std::string dump = config.dump();
        m["config"] = config;
        m["config_digest"] = hex64(fnv1a(dump.data(), dump.size()));
        m["seed"] = seed;
        m["inputs"] = inputs;
        m["outputs"] = outputs;
        m["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json hashes = json::object();
        for (const auto& path : outputs) hashes[path] = file_hash(path);
        m["artifact_hashes"] = hashes;
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "run_manifest.json");
        out << m.dump(2) << "\n";
    }
};

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("CLOUDFUSE_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

DatasetManifest load_dataset(const std::string& dir) {
    const auto path = (fs::path(dir) / "manifest.json").string();
    require_file(path, "dataset manifest not found");
    return load_manifest_file(path);
}

RgbImage tensor_to_rgb(const TensorPtr& t) {
    const int h = t->shape[2], w = t->shape[3];
    RgbImage img{h, w, {}};
    img.pix.resize(static_cast<std::size_t>(3 * h * w));
    const int n = h * w;
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < 3; ++c) {
            float v = std::min(1.0f, std::max(0.0f, t->data[c * n + p]));
            img.pix[3 * p + c] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
        }
    return img;
}

GrayImage floats_to_gray(const std::vector<float>& v, int h, int w) {
    GrayImage img{h, w, {}};
    img.pix.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        float x = std::min(1.0f, std::max(0.0f, v[i]));
        img.pix[i] = static_cast<std::uint8_t>(x * 255.0f + 0.5f);
    }
    return img;
}

// all (image, cloud-mask) pairs of a dataset, flattened
std::vector<std::pair<std::vector<float>, CloudMask>> flatten_pairs(const DatasetManifest& m,
                                                                    int& h, int& w) {
    std::vector<std::pair<std::vector<float>, CloudMask>> pairs;
    for (std::size_t loc = 0; loc < m.locations.size(); ++loc) {
        auto stack = load_stack(m, loc);
        h = stack.h;
        w = stack.w;
        for (std::size_t j = 0; j < stack.images.size(); ++j)
            pairs.emplace_back(stack.images[j], stack.masks[j]);
    }
    if (pairs.empty()) throw std::invalid_argument("dataset contains no images");
    return pairs;
}

struct SeedFlag {
    std::uint64_t value = 0;
    CLI::Option* opt = nullptr;

    void require(const Layered& layers, const std::string& command) {
        if (opt->count() == 0) {
            if (layers.cfg.contains("seed")) {
                value = layers.cfg.at("seed").get<std::uint64_t>();
                return;
            }
            throw std::invalid_argument("--seed is required for " + command);
        }
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cloudfuse: weakly-supervised multi-image fusion and cloud detection"};
    app.require_subcommand(1);
    argv = app.ensure_utf8(argv);

    int threads_flag = 0;
    app.add_option("--threads", threads_flag,
                   "worker-thread cap (default: CLOUDFUSE_THREADS env var, else 1)")
        ->envname("CLOUDFUSE_THREADS")
        ->check(CLI::PositiveNumber);

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic satellite-scene dataset");
    struct {
        std::string out, config;
        int locations = 8, k = 6, size = 64, classes = 6;
        std::uint64_t seed = 42;
    } gd;
    gen->add_option("--out", gd.out, "output directory")->required();
    auto* gd_cfg = gen->add_option("--config", gd.config, "JSON config file");
    auto* gd_loc = gen->add_option("--locations", gd.locations, "number of locations (default 8)");
    auto* gd_k = gen->add_option("--k", gd.k, "images per location (default 6)");
    auto* gd_size = gen->add_option("--size", gd.size, "image side in pixels (default 64)");
    auto* gd_classes = gen->add_option("--classes", gd.classes, "land-cover classes (default 6)");
    auto* gd_seed = gen->add_option("--seed", gd.seed, "recipe seed (default 42)");

    gen->callback([&] {
        auto layers = Layered::from(gd.config);
        layers.apply(gd_loc, gd.locations, "locations");
        layers.apply(gd_k, gd.k, "k");
        layers.apply(gd_size, gd.size, "size");
        layers.apply(gd_classes, gd.classes, "classes");
        layers.apply(gd_seed, gd.seed, "seed");
        (void)gd_cfg;

        SceneRecipe recipe;
        recipe.seed = gd.seed;
        recipe.k = gd.k;
        recipe.image_size = gd.size;
        recipe.num_classes = gd.classes;

        ManifestWriter run{"gen-data", gd.out,
                           json{{"locations", gd.locations}, {"k", gd.k}, {"size", gd.size},
                                {"classes", gd.classes}, {"seed", gd.seed}},
                           gd.seed};
        auto manifest = generate_dataset(recipe, gd.locations, gd.out);
        run.outputs.push_back((fs::path(gd.out) / "manifest.json").string());
        for (const auto& loc : manifest.locations) {
            // manifest paths are relative to the dataset directory
            run.outputs.push_back((fs::path(gd.out) / loc.label_path).string());
            for (const auto& img : loc.images) {
                run.outputs.push_back((fs::path(gd.out) / img.image_path).string());
                run.outputs.push_back((fs::path(gd.out) / img.mask_path).string());
            }
        }
        run.write();
        std::cout << "generated " << manifest.locations.size() << " locations under " << gd.out
                  << "\n";
    });

    // ---- train-fusion ------------------------------------------------------
    auto* train = app.add_subcommand("train-fusion", "train quality + segmentation nets end to end");
    struct {
        std::string data, out, config;
        TrainConfig cfg;
    } tf;
    train->add_option("--data", tf.data, "dataset directory (with manifest.json)")->required();
    train->add_option("--out", tf.out, "output directory")->required();
    auto* tf_cfgf = train->add_option("--config", tf.config, "JSON config file");
    SeedFlag tf_seed;
    tf_seed.opt = train->add_option("--seed", tf_seed.value, "training seed (required)");
    auto* tf_epochs = train->add_option("--epochs", tf.cfg.epochs, "epochs (default 20)");
    auto* tf_batch = train->add_option("--batch", tf.cfg.batch_size, "batch size (default 4)");
    auto* tf_crop = train->add_option("--crop", tf.cfg.crop, "crop size (default 64)");
    auto* tf_k = train->add_option("--images-per-location", tf.cfg.images_per_location,
                                   "images sampled per location (default 4)");
    auto* tf_lr = train->add_option("--lr", tf.cfg.lr, "learning rate (default 1e-4)");
    auto* tf_classes = train->add_option("--classes", tf.cfg.num_classes, "class count (default 6)");
    auto* tf_la = train->add_flag("--lookahead", tf.cfg.lookahead, "enable Lookahead (k=5, alpha=0.5)");
    auto* tf_ra = train->add_flag("--rectify", tf.cfg.rectify, "enable rectified Adam");

    train->callback([&] {
        auto layers = Layered::from(tf.config);
        layers.apply(tf_epochs, tf.cfg.epochs, "epochs");
        layers.apply(tf_batch, tf.cfg.batch_size, "batch");
        layers.apply(tf_crop, tf.cfg.crop, "crop");
        layers.apply(tf_k, tf.cfg.images_per_location, "images_per_location");
        layers.apply(tf_lr, tf.cfg.lr, "lr");
        layers.apply(tf_classes, tf.cfg.num_classes, "classes");
        layers.apply(tf_la, tf.cfg.lookahead, "lookahead");
        layers.apply(tf_ra, tf.cfg.rectify, "rectify");
        (void)tf_cfgf;
        tf_seed.require(layers, "train-fusion");
        tf.cfg.seed = tf_seed.value;
        tf.cfg.validate();

        auto manifest = load_dataset(tf.data);
        ManifestWriter run{"train-fusion", tf.out,
                           json{{"epochs", tf.cfg.epochs}, {"batch", tf.cfg.batch_size},
                                {"crop", tf.cfg.crop},
                                {"images_per_location", tf.cfg.images_per_location},
                                {"lr", tf.cfg.lr}, {"classes", tf.cfg.num_classes},
                                {"lookahead", tf.cfg.lookahead}, {"rectify", tf.cfg.rectify},
                                {"seed", tf.cfg.seed}},
                           tf.cfg.seed};
        run.inputs.push_back(tf.data);
        auto result = train_fusion(manifest, tf.cfg, tf.out);
        run.outputs = {result.quality_checkpoint, result.quality_checkpoint + ".json",
                       result.seg_checkpoint, result.seg_checkpoint + ".json", result.loss_log};
        run.write();
        std::cout << "trained " << tf.cfg.epochs << " epochs; final loss "
                  << result.epoch_losses.back() << "\n";
    });

    // ---- fuse --------------------------------------------------------------
    auto* fu = app.add_subcommand("fuse", "fuse one location's stack into a single image");
    struct {
        std::string data, quality, out;
        int location = 0;
    } fz;
    fu->add_option("--data", fz.data, "dataset directory")->required();
    fu->add_option("--quality", fz.quality, "quality-net checkpoint")->required();
    fu->add_option("--out", fz.out, "output directory")->required();
    fu->add_option("--location", fz.location, "location index (default 0)");

    fu->callback([&] {
        require_file(fz.quality, "checkpoint not found");
        auto manifest = load_dataset(fz.data);
        if (fz.location < 0 || fz.location >= static_cast<int>(manifest.locations.size()))
            throw std::invalid_argument("location index out of range");
        auto net = QualityNet::load(fz.quality);
        auto stack = load_stack(manifest, static_cast<std::size_t>(fz.location));
        ManifestWriter run{"fuse", fz.out,
                           json{{"location", fz.location}, {"quality", fz.quality}}, 0};
        run.inputs = {fz.data, fz.quality};
        auto result = fuse(stack, net);
        fs::create_directories(fz.out);
        const auto path = (fs::path(fz.out) / (stack.id + "_fused.ppm")).string();
        write_ppm(path, tensor_to_rgb(result.fused));
        run.outputs = {path};
        run.write();
        std::cout << "wrote " << path << "\n";
    });

    // ---- export-quality ----------------------------------------------------
    auto* ex = app.add_subcommand("export-quality", "export per-image quality masks and the fused image");
    struct {
        std::string data, quality, out;
        int location = 0;
    } eq;
    ex->add_option("--data", eq.data, "dataset directory")->required();
    ex->add_option("--quality", eq.quality, "quality-net checkpoint")->required();
    ex->add_option("--out", eq.out, "output directory")->required();
    ex->add_option("--location", eq.location, "location index (default 0)");

    ex->callback([&] {
        require_file(eq.quality, "checkpoint not found");
        auto manifest = load_dataset(eq.data);
        if (eq.location < 0 || eq.location >= static_cast<int>(manifest.locations.size()))
            throw std::invalid_argument("location index out of range");
        auto net = QualityNet::load(eq.quality);
        auto stack = load_stack(manifest, static_cast<std::size_t>(eq.location));
        ManifestWriter run{"export-quality", eq.out,
                           json{{"location", eq.location}, {"quality", eq.quality}}, 0};
        run.inputs = {eq.data, eq.quality};
        run.outputs = export_quality(stack, net, eq.out);
        run.write();
        std::cout << "wrote " << run.outputs.size() << " files under " << eq.out << "\n";
    });

    // ---- calibrate ---------------------------------------------------------
    auto* cal = app.add_subcommand("calibrate", "fit Platt calibration from quality to cloud probability");
    struct {
        std::string data, quality, out, config;
        std::size_t max_points = 20000;
    } cb;
    cal->add_option("--data", cb.data, "dataset directory")->required();
    cal->add_option("--quality", cb.quality, "quality-net checkpoint")->required();
    cal->add_option("--out", cb.out, "output directory")->required();
    auto* cb_cfg = cal->add_option("--config", cb.config, "JSON config file");
    auto* cb_max = cal->add_option("--max-points", cb.max_points,
                                   "calibration sample cap (default 20000)");
    SeedFlag cb_seed;
    cb_seed.opt = cal->add_option("--seed", cb_seed.value, "subsampling seed (required)");

    cal->callback([&] {
        auto layers = Layered::from(cb.config);
        layers.apply(cb_max, cb.max_points, "max_points");
        (void)cb_cfg;
        cb_seed.require(layers, "calibrate");
        require_file(cb.quality, "checkpoint not found");
        auto manifest = load_dataset(cb.data);
        auto net = QualityNet::load(cb.quality);

        ManifestWriter run{"calibrate", cb.out,
                           json{{"max_points", cb.max_points}, {"seed", cb_seed.value},
                                {"quality", cb.quality}},
                           cb_seed.value};
        run.inputs = {cb.data, cb.quality};
        std::vector<double> q;
        std::vector<std::uint8_t> y;
        collect_calibration_points(manifest, net, cb.max_points, cb_seed.value, q, y);
        auto fit = fit_platt(q, y);
        fs::create_directories(cb.out);
        const auto path = (fs::path(cb.out) / "calibration.json").string();
        save_calibration(fit.params, path);
        run.outputs = {path};
        run.write();
        std::cout << "beta0=" << fit.params.beta0 << " beta1=" << fit.params.beta1 << " ("
                  << fit.iterations << " iterations)\n";
    });

    // ---- finetune ----------------------------------------------------------
    auto* ft = app.add_subcommand("finetune", "fine-tune the quality-net head on cloud masks");
    struct {
        std::string data, quality, out, config;
        FinetuneConfig cfg;
    } fn;
    ft->add_option("--data", fn.data, "dataset directory")->required();
    ft->add_option("--quality", fn.quality, "quality-net checkpoint")->required();
    ft->add_option("--out", fn.out, "output directory")->required();
    auto* fn_cfgf = ft->add_option("--config", fn.config, "JSON config file");
    auto* fn_epochs = ft->add_option("--epochs", fn.cfg.epochs, "epochs (default 100)");
    auto* fn_lr = ft->add_option("--lr", fn.cfg.lr, "learning rate (default 1e-2)");
    auto* fn_batch = ft->add_option("--batch", fn.cfg.batch_size, "batch size (default 4)");
    auto* fn_direct = ft->add_flag("--direct-probability", fn.cfg.direct_probability,
                                   "treat net output as P(cloud) instead of 1 - P(cloud)");
    SeedFlag fn_seed;
    fn_seed.opt = ft->add_option("--seed", fn_seed.value, "training seed (required)");

    ft->callback([&] {
        auto layers = Layered::from(fn.config);
        layers.apply(fn_epochs, fn.cfg.epochs, "epochs");
        layers.apply(fn_lr, fn.cfg.lr, "lr");
        layers.apply(fn_batch, fn.cfg.batch_size, "batch");
        layers.apply(fn_direct, fn.cfg.direct_probability, "direct_probability");
        (void)fn_cfgf;
        fn_seed.require(layers, "finetune");
        fn.cfg.seed = fn_seed.value;
        if (fn.cfg.epochs <= 0 || fn.cfg.batch_size <= 0)
            throw std::invalid_argument("epochs and batch size must be positive");

        require_file(fn.quality, "checkpoint not found");
        auto manifest = load_dataset(fn.data);
        auto net = QualityNet::load(fn.quality);
        int h = 0, w = 0;
        auto samples = flatten_pairs(manifest, h, w);

        ManifestWriter run{"finetune", fn.out,
                           json{{"epochs", fn.cfg.epochs}, {"lr", fn.cfg.lr},
                                {"batch", fn.cfg.batch_size},
                                {"direct_probability", fn.cfg.direct_probability},
                                {"seed", fn.cfg.seed}, {"quality", fn.quality}},
                           fn.cfg.seed};
        run.inputs = {fn.data, fn.quality};
        freeze_except_head3(net);
        auto result = finetune(net, samples, h, w, fn.cfg);
        fs::create_directories(fn.out);
        const auto ckpt = (fs::path(fn.out) / "quality_finetuned.ftz").string();
        net.save(ckpt);
        const auto log = (fs::path(fn.out) / "finetune_loss.csv").string();
        std::ofstream csv(log);
        csv << "epoch,mean_loss\n";
        char line[64];
        for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
            std::snprintf(line, sizeof line, "%zu,%.6f\n", e + 1, result.epoch_losses[e]);
            csv << line;
        }
        csv.close();
        run.outputs = {ckpt, ckpt + ".json", log};
        run.write();
        std::cout << "fine-tuned " << fn.cfg.epochs << " epochs; final loss "
                  << result.epoch_losses.back() << "\n";
    });

    // ---- detect ------------------------------------------------------------
    auto* det = app.add_subcommand("detect", "write a binary cloud mask for one image");
    struct {
        std::string data, quality, calibration, out;
        std::string method = "threshold";
        int location = 0, image = 0;
        double tau = 0.5, p_thresh = 0.5;
        bool direct = false;
    } dt;
    det->add_option("--data", dt.data, "dataset directory")->required();
    det->add_option("--quality", dt.quality, "quality-net checkpoint")->required();
    det->add_option("--out", dt.out, "output directory")->required();
    det->add_option("--method", dt.method, "threshold | calibrated | finetuned (default threshold)")
        ->check(CLI::IsMember({"threshold", "calibrated", "finetuned"}));
    det->add_option("--location", dt.location, "location index (default 0)");
    det->add_option("--image", dt.image, "image index within the stack (default 0)");
    det->add_option("--tau", dt.tau, "quality threshold (default 0.5)");
    det->add_option("--p-thresh", dt.p_thresh, "probability threshold (default 0.5)");
    det->add_option("--calibration", dt.calibration, "Platt parameters JSON (calibrated method)");
    det->add_flag("--direct-probability", dt.direct,
                  "treat net output as P(cloud) instead of 1 - P(cloud)");

    det->callback([&] {
        require_file(dt.quality, "checkpoint not found");
        auto manifest = load_dataset(dt.data);
        if (dt.location < 0 || dt.location >= static_cast<int>(manifest.locations.size()))
            throw std::invalid_argument("location index out of range");
        auto net = QualityNet::load(dt.quality);
        auto stack = load_stack(manifest, static_cast<std::size_t>(dt.location));
        if (dt.image < 0 || dt.image >= static_cast<int>(stack.images.size()))
            throw std::invalid_argument("image index out of range");

        auto img = image_to_tensor(stack, static_cast<std::size_t>(dt.image));
        CloudMask mask;
        if (dt.method == "threshold") {
            auto out = net.forward(img);
            mask = detect_threshold(out->data, dt.tau);
        } else if (dt.method == "calibrated") {
            require_file(dt.calibration, "calibration file not found");
            auto params = load_calibration(dt.calibration);
            auto out = net.forward(img);
            mask = detect_calibrated(out->data, params, dt.p_thresh);
        } else {
            auto p = cloud_probability(net, img, dt.direct);
            mask.resize(p.size());
            for (std::size_t i = 0; i < p.size(); ++i)
                mask[i] = p[i] > dt.p_thresh ? 1 : 0;
        }

        ManifestWriter run{"detect", dt.out,
                           json{{"method", dt.method}, {"location", dt.location},
                                {"image", dt.image}, {"tau", dt.tau},
                                {"p_thresh", dt.p_thresh}},
                           0};
        run.inputs = {dt.data, dt.quality};
        fs::create_directories(dt.out);
        std::vector<float> as_float(mask.begin(), mask.end());
        const auto path =
            (fs::path(dt.out) / (stack.id + "_cloud_" + dt.method + ".pgm")).string();
        write_pgm(path, floats_to_gray(as_float, stack.h, stack.w));
        run.outputs = {path};
        run.write();
        std::cout << "wrote " << path << "\n";
    });

    // ---- evaluate ----------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "benchmark the detectors on a test dataset");
    struct {
        std::string data, quality, calibration, finetuned, out;
        double tau = 0.5, p_thresh = 0.5;
        bool direct = false;
    } evc;
    ev->add_option("--data", evc.data, "test dataset directory")->required();
    ev->add_option("--quality", evc.quality, "quality-net checkpoint")->required();
    ev->add_option("--out", evc.out, "output directory")->required();
    ev->add_option("--calibration", evc.calibration, "Platt parameters JSON (optional)");
    ev->add_option("--finetuned", evc.finetuned, "fine-tuned checkpoint (optional)");
    ev->add_option("--tau", evc.tau, "quality threshold (default 0.5)");
    ev->add_option("--p-thresh", evc.p_thresh, "probability threshold (default 0.5)");
    ev->add_flag("--direct-probability", evc.direct,
                 "treat net output as P(cloud) instead of 1 - P(cloud)");

    ev->callback([&] {
        require_file(evc.quality, "checkpoint not found");
        auto manifest = load_dataset(evc.data);
        BenchmarkInputs inputs;
        inputs.quality_checkpoint = evc.quality;
        inputs.calibration_path = evc.calibration;
        inputs.finetuned_checkpoint = evc.finetuned;
        inputs.tau = evc.tau;
        inputs.p_thresh = evc.p_thresh;
        inputs.direct_probability = evc.direct;

        ManifestWriter run{"evaluate", evc.out,
                           json{{"quality", evc.quality}, {"calibration", evc.calibration},
                                {"finetuned", evc.finetuned}, {"tau", evc.tau},
                                {"p_thresh", evc.p_thresh}},
                           0};
        run.inputs = {evc.data, evc.quality};
        auto report = run_benchmark(manifest, inputs);
        fs::create_directories(evc.out);
        const auto jpath = (fs::path(evc.out) / "report.json").string();
        write_report_json(report, jpath);
        const auto table = format_report_table(report);
        const auto tpath = (fs::path(evc.out) / "report.txt").string();
        std::ofstream(tpath) << table;
        run.outputs = {jpath, tpath};
        run.write();
        std::cout << table;
    });

    // ---- curve -------------------------------------------------------------
    auto* cu = app.add_subcommand("curve", "training-set-size sweep for the fine-tuned detector");
    struct {
        std::string train, test, quality, out, config;
        std::vector<int> sizes{4, 16, 64};
        int epochs = 30;
    } cv;
    cu->add_option("--train", cv.train, "training dataset directory")->required();
    cu->add_option("--test", cv.test, "test dataset directory")->required();
    cu->add_option("--quality", cv.quality, "quality-net checkpoint")->required();
    cu->add_option("--out", cv.out, "output directory")->required();
    auto* cv_cfg = cu->add_option("--config", cv.config, "JSON config file");
    auto* cv_sizes = cu->add_option("--sizes", cv.sizes, "training-set sizes (default 4 16 64)");
    auto* cv_epochs = cu->add_option("--epochs", cv.epochs, "fine-tune epochs per point (default 30)");
    SeedFlag cv_seed;
    cv_seed.opt = cu->add_option("--seed", cv_seed.value, "sweep seed (required)");

    cu->callback([&] {
        auto layers = Layered::from(cv.config);
        layers.apply(cv_sizes, cv.sizes, "sizes");
        layers.apply(cv_epochs, cv.epochs, "epochs");
        (void)cv_cfg;
        cv_seed.require(layers, "curve");
        require_file(cv.quality, "checkpoint not found");
        auto train_data = load_dataset(cv.train);
        auto test_data = load_dataset(cv.test);

        ManifestWriter run{"curve", cv.out,
                           json{{"sizes", cv.sizes}, {"epochs", cv.epochs},
                                {"seed", cv_seed.value}, {"quality", cv.quality}},
                           cv_seed.value};
        run.inputs = {cv.train, cv.test, cv.quality};
        auto curve = size_sweep(train_data, test_data, cv.quality, cv.sizes, cv.epochs,
                                cv_seed.value);
        fs::create_directories(cv.out);
        const auto path = (fs::path(cv.out) / "sweep.csv").string();
        write_sweep_csv(curve, path);
        run.outputs = {path};
        run.write();
        for (const auto& pt : curve)
            std::cout << "n=" << pt.n_train << " accuracy=" << pt.accuracy << " miou=" << pt.miou
                      << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help and friends
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const MissingFile& e) {
        std::cerr << "error: missing-file: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: invalid-config: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 1;
    }
    (void)resolve_threads(threads_flag);
    return 0;
}
