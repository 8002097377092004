#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atme/kid.hpp"
#include "atme/manifest.hpp"
#include "atme/settings.hpp"
#include "atme/trainer.hpp"

namespace fs = std::filesystem;

namespace {

atme::ConfigDoc load_doc(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
    atme::ConfigDoc doc = config_path.empty() ? atme::ConfigDoc()
                                              : atme::ConfigDoc::parse_file(config_path);
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw atme::ConfigError("--set expects key=value, got '" + ov + "'");
        const auto doc2 = atme::ConfigDoc::parse_string(ov, "<--set>");
        for (const auto& [k, v] : doc2.entries()) doc.set(k, v);
    }
    return doc;
}

std::vector<fs::path> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw atme::DataError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw atme::DataError("no files in " + dir);
    return files;
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out_dir = "run";
    std::string resume;
    int epochs = 0;
    int checkpoint_every = 0;
    bool bypass_bridge = false;
};

int run_train(const TrainArgs& a) {
    const atme::ConfigDoc doc = load_doc(a.config, a.overrides);
    const atme::Settings s = atme::load_settings(doc);
    if (s.data_root.empty())
        throw atme::ConfigError("train: data.root is required (config file or --set data.root=...)");

    fs::create_directories(a.out_dir);
    const std::string history_path = (fs::path(a.out_dir) / "history.csv").string();
    const std::string ckpt_path = (fs::path(a.out_dir) / "trainer.ckpt").string();
    const std::string plot_path = (fs::path(a.out_dir) / "convergence.png").string();

    atme::RunManifest manifest;
    manifest.config = doc;
    manifest.seed = s.train.seed;
    manifest.created_utc = atme::RunManifest::utc_now();
    manifest.artifacts = {"history.csv", "trainer.ckpt", "convergence.png"};
    manifest.write((fs::path(a.out_dir) / "manifest.json").string());

    atme::PairedImageDataset dataset(s.data_root, s.data_split, s.direction, s.augment);
    atme::Trainer<float> trainer(s.model, s.train);
    trainer.set_bridge_bypass(a.bypass_bridge);
    if (!a.resume.empty()) {
        trainer.load(a.resume);
        std::printf("resumed from %s at epoch %d\n", a.resume.c_str(),
                    trainer.epochs_completed());
    }

    const int total = s.train.total_epochs();
    std::printf("training on %zu pairs, %d/%d epochs done, target -L_GAN -> log 4 = %.6f\n",
                dataset.size(), trainer.epochs_completed(), total, atme::equilibrium_value());

    trainer.train(dataset, a.epochs, [&](const atme::EpochRecord& r) {
        std::printf("epoch %4d/%d  -L_GAN %.4f  |dist to log4| %.4f  entropy %.4f  t~ %.4f\n",
                    r.epoch, total, r.neg_gan_loss,
                    std::abs(r.neg_gan_loss - atme::equilibrium_value()), r.mean_entropy,
                    r.t_tilde_mean);
        std::fflush(stdout);
        atme::emit_history(trainer.history(), history_path, s.train.monitor_window);
        if (a.checkpoint_every > 0 && r.epoch % a.checkpoint_every == 0)
            trainer.save(ckpt_path);
    });

    trainer.save(ckpt_path);
    atme::plot_history(trainer.history(), plot_path, s.train.monitor_window);

    if (!trainer.history().empty()) {
        const int tail = std::min<int>(10, int(trainer.history().size()));
        std::printf("final smoothed distance to log 4 over last %d epochs: %.4f\n", tail,
                    atme::distance_to_equilibrium(trainer.history(), tail,
                                                  s.train.monitor_window));
    }
    std::printf("artifacts in %s: manifest.json history.csv trainer.ckpt convergence.png\n",
                a.out_dir.c_str());
    return 0;
}

struct InferArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string checkpoint;
    std::string input;
    std::string out_dir = "out";
    uint64_t seed = 0;
};

// Accepts either bare source images or side-by-side composites (the source
// half is taken per data.direction). Inputs at a different resolution are
// resized to the model size.
int run_infer(const InferArgs& a) {
    const atme::Settings s = atme::load_settings(load_doc(a.config, a.overrides));
    atme::Trainer<float> trainer(s.model, s.train);
    trainer.load(a.checkpoint);

    std::vector<fs::path> files;
    if (fs::is_directory(a.input))
        files = list_images(a.input);
    else
        files.push_back(a.input);
    fs::create_directories(a.out_dir);

    const int size = s.model.image_size;
    for (size_t i = 0; i < files.size(); ++i) {
        atme::Tensor<uint8_t> img = atme::load_image_rgb(files[i].string());
        if (img.dim(2) == 2 * img.dim(1))
            img = atme::split_ab(img, s.direction, files[i].string()).first;
        if (img.dim(1) != size || img.dim(2) != size) img = atme::resize_image(img, size, size);

        const atme::Tensor<float> x =
            atme::normalize_image(img).reshaped({1, 3, size, size});
        const atme::Tensor<float> y =
            trainer.infer(x, atme::derive_seed(a.seed, "file", uint64_t(i)));

        const fs::path out =
            fs::path(a.out_dir) / (files[i].stem().string() + "_fake.png");
        atme::save_image_rgb(out.string(), atme::denormalize_image(y.reshaped({3, size, size})));
        std::printf("%s -> %s\n", files[i].string().c_str(), out.string().c_str());
    }
    std::printf("translated %zu images\n", files.size());
    return 0;
}

struct EvalArgs {
    std::string real_dir;
    std::string fake_dir;
    std::string extractor = "random-proj";
    int subset_size = 50;
    int n_subsets = 10;
    uint64_t seed = 0;
    std::string out;
};

std::vector<atme::Tensor<float>> load_image_set(const std::string& dir) {
    std::vector<atme::Tensor<float>> out;
    for (const auto& f : list_images(dir))
        out.push_back(atme::normalize_image(atme::load_image_rgb(f.string())));
    return out;
}

int run_eval(const EvalArgs& a) {
    const auto extractor = atme::make_extractor(a.extractor, a.seed);
    const auto real = extractor->extract(load_image_set(a.real_dir));
    const auto fake = extractor->extract(load_image_set(a.fake_dir));
    const atme::KidResult res = atme::kid(real, fake, a.subset_size, a.n_subsets,
                                          atme::derive_seed(a.seed, "kid_subsets"));

    nlohmann::json j;
    j["extractor"] = extractor->id();
    j["n_real"] = real.n();
    j["n_fake"] = fake.n();
    j["subset_size"] = res.subset_size;
    j["n_subsets"] = res.n_subsets;
    j["kid_x100_mean"] = res.mean;
    j["kid_x100_std"] = res.std;
    const std::string text = j.dump(2);
    std::printf("%s\n", text.c_str());
    if (!a.out.empty()) {
        std::ofstream f(a.out, std::ios::binary);
        if (!f) throw atme::AtmeError("cannot write " + a.out);
        f << text << "\n";
    }
    return 0;
}

struct PlotArgs {
    std::string history;
    std::string out = "convergence.png";
    int window = 5;
};

int run_plot(const PlotArgs& a) {
    const auto records = atme::parse_history(a.history);
    atme::plot_history(records, a.out, a.window);
    std::printf("plotted %zu epochs to %s\n", records.size(), a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial paired image translation with a noisy generator input"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a model and monitor convergence");
    train->add_option("--config", train_args.config, "Config file (dotted keys)");
    train->add_option("--set", train_args.overrides, "Override a config key (key=value)");
    train->add_option("--out-dir", train_args.out_dir, "Artifact directory");
    train->add_option("--resume", train_args.resume, "Checkpoint to resume from");
    train->add_option("--epochs", train_args.epochs,
                      "Epochs to run this invocation (0 = full schedule)");
    train->add_option("--checkpoint-every", train_args.checkpoint_every,
                      "Also checkpoint every N epochs (0 = final only)");
    train->add_flag("--bypass-bridge", train_args.bypass_bridge,
                    "Ablation: feed the generator clean inputs");

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "Translate images with a trained model");
    infer->add_option("--config", infer_args.config, "Config file (dotted keys)");
    infer->add_option("--set", infer_args.overrides, "Override a config key (key=value)");
    infer->add_option("--checkpoint", infer_args.checkpoint, "Trained checkpoint")->required();
    infer->add_option("--input", infer_args.input, "Image file or directory")->required();
    infer->add_option("--out-dir", infer_args.out_dir, "Output directory");
    infer->add_option("--seed", infer_args.seed, "Inference state seed");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Kernel distance between two image sets");
    eval->add_option("--real-dir", eval_args.real_dir, "Reference images")->required();
    eval->add_option("--fake-dir", eval_args.fake_dir, "Generated images")->required();
    eval->add_option("--extractor", eval_args.extractor, "Feature extractor (inception, random-proj)");
    eval->add_option("--subset-size", eval_args.subset_size, "Images per subset");
    eval->add_option("--n-subsets", eval_args.n_subsets, "Number of subsets");
    eval->add_option("--seed", eval_args.seed, "Subset sampling seed");
    eval->add_option("--out", eval_args.out, "Also write the JSON report here");

    PlotArgs plot_args;
    auto* plot = app.add_subcommand("plot", "Render a convergence plot from a history CSV");
    plot->add_option("--history", plot_args.history, "history.csv from a training run")->required();
    plot->add_option("--out", plot_args.out, "Output PNG path");
    plot->add_option("--window", plot_args.window, "Smoothing window (odd)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return run_train(train_args);
        if (infer->parsed()) return run_infer(infer_args);
        if (eval->parsed()) return run_eval(eval_args);
        return run_plot(plot_args);
    } catch (const atme::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
