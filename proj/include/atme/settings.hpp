#pragma once

#include <string>
#include <vector>

#include "atme/config.hpp"
#include "atme/data.hpp"
#include "atme/trainer.hpp"

namespace atme {

// Typed view of a run configuration. Defaults are the full training recipe
// (256px images, embed dim 64, lambda 100, Adam 2e-4 with beta1 0.5, 100+100
// epochs, batch 48); desk-scale runs override them from a config file.
struct Settings {
    std::string data_root;
    std::string data_split = "train";
    Direction direction = Direction::kAToB;
    AugmentPolicy augment;

    ModelConfig model;
    TrainConfig train;

    std::string eval_extractor = "random-proj";
    int eval_subset_size = 50;
    int eval_n_subsets = 10;
    uint64_t eval_seed = 0;

    static const std::vector<std::string>& known_keys() {
        static const std::vector<std::string> keys = {
            "data.root",
            "data.split",
            "data.direction",
            "data.jitter_resize",
            "data.crop_size",
            "data.hflip_prob",
            "data.augment",
            "gen.embed_dim",
            "gen.resolutions",
            "gen.attention_levels",
            "gen.time_embed_dim",
            "disc.base_channels",
            "disc.n_layers",
            "bridge.hidden_channels",
            "bridge.inference_sigma",
            "bridge.output_scale",
            "loss.lambda_l1",
            "loss.mode",
            "loss.eps",
            "train.seed",
            "train.epochs_const",
            "train.epochs_decay",
            "train.batch_size",
            "train.lr",
            "train.beta1",
            "train.beta2",
            "train.monitor_window",
            "train.probe_samples",
            "eval.extractor",
            "eval.subset_size",
            "eval.n_subsets",
            "eval.seed",
        };
        return keys;
    }
};

inline AdversarialMode adversarial_mode_from_string(const std::string& s) {
    if (s == "nonsaturating") return AdversarialMode::kNonsaturating;
    if (s == "minimax") return AdversarialMode::kMinimax;
    throw ConfigError("loss.mode must be 'nonsaturating' or 'minimax', got '" + s + "'");
}

inline Settings load_settings(const ConfigDoc& doc) {
    validate_config_keys(doc, Settings::known_keys());
    Settings s;

    s.data_root = doc.get_string("data.root", "");
    s.data_split = doc.get_string("data.split", s.data_split);
    s.direction = direction_from_string(doc.get_string("data.direction", "atob"));
    s.augment.jitter_resize = doc.get_int("data.jitter_resize", s.augment.jitter_resize);
    s.augment.crop_size = doc.get_int("data.crop_size", s.augment.crop_size);
    s.augment.hflip_prob = doc.get_double("data.hflip_prob", s.augment.hflip_prob);
    s.augment.enabled = doc.get_bool("data.augment", s.augment.enabled);
    s.augment.validate();

    s.model.image_size = s.augment.crop_size;
    s.model.gen.embed_dim = doc.get_int("gen.embed_dim", s.model.gen.embed_dim);
    s.model.gen.resolutions = doc.get_int_list("gen.resolutions", s.model.gen.resolutions);
    s.model.gen.attention_levels = doc.get_int_list(
        "gen.attention_levels",
        GeneratorConfig::default_attention_levels(int(s.model.gen.resolutions.size())));
    s.model.gen.time_embed_dim = doc.get_int("gen.time_embed_dim", s.model.gen.time_embed_dim);
    s.model.disc.base_channels = doc.get_int("disc.base_channels", s.model.disc.base_channels);
    s.model.disc.n_layers = doc.get_int("disc.n_layers", s.model.disc.n_layers);
    s.model.bridge.hidden_channels =
        doc.get_int("bridge.hidden_channels", s.model.bridge.hidden_channels);
    s.model.bridge.inference_sigma =
        doc.get_double("bridge.inference_sigma", s.model.bridge.inference_sigma);
    s.model.bridge.output_scale =
        doc.get_double("bridge.output_scale", s.model.bridge.output_scale);

    s.train.loss.lambda_l1 = doc.get_double("loss.lambda_l1", s.train.loss.lambda_l1);
    s.train.loss.adversarial_mode =
        adversarial_mode_from_string(doc.get_string("loss.mode", "nonsaturating"));
    s.train.loss.eps = doc.get_double("loss.eps", s.train.loss.eps);

    s.train.seed = uint64_t(doc.get_int64("train.seed", int64_t(s.train.seed)));
    s.train.epochs_const = doc.get_int("train.epochs_const", s.train.epochs_const);
    s.train.epochs_decay = doc.get_int("train.epochs_decay", s.train.epochs_decay);
    s.train.batch_size = doc.get_int("train.batch_size", s.train.batch_size);
    s.train.adam.lr = doc.get_double("train.lr", s.train.adam.lr);
    s.train.adam.beta1 = doc.get_double("train.beta1", s.train.adam.beta1);
    s.train.adam.beta2 = doc.get_double("train.beta2", s.train.adam.beta2);
    s.train.monitor_window = doc.get_int("train.monitor_window", s.train.monitor_window);
    s.train.probe_samples = doc.get_int("train.probe_samples", s.train.probe_samples);

    s.eval_extractor = doc.get_string("eval.extractor", s.eval_extractor);
    s.eval_subset_size = doc.get_int("eval.subset_size", s.eval_subset_size);
    s.eval_n_subsets = doc.get_int("eval.n_subsets", s.eval_n_subsets);
    s.eval_seed = uint64_t(doc.get_int64("eval.seed", int64_t(s.eval_seed)));

    s.model.validate();
    s.train.validate();
    return s;
}

}  // namespace atme
