#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "atme/bridge.hpp"
#include "atme/checkpoint.hpp"
#include "atme/data.hpp"
#include "atme/discriminator.hpp"
#include "atme/generator.hpp"
#include "atme/monitor.hpp"
#include "atme/objectives.hpp"
#include "atme/optim.hpp"

namespace atme {

struct TrainConfig {
    int epochs_const = 100;
    int epochs_decay = 100;
    int batch_size = 48;
    uint64_t seed = 0;
    AdamConfig adam;
    LossConfig loss;
    int monitor_window = 5;
    int probe_samples = 16;

    int total_epochs() const { return epochs_const + epochs_decay; }

    void validate() const {
        if (epochs_const < 1 || epochs_decay < 1)
            throw ConfigError("train: epochs_const and epochs_decay must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (monitor_window < 1) throw ConfigError("train: monitor_window must be >= 1");
        if (probe_samples < 1) throw ConfigError("train: probe_samples must be >= 1");
        adam.validate();
        loss.validate();
    }
};

struct ModelConfig {
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    BridgeConfig bridge;
    int image_size = 256;

    void validate() const {
        gen.validate();
        disc.validate();
        bridge.validate();
        if (image_size < 16) throw ConfigError("model: image_size must be >= 16");
        const int div = 1 << gen.levels();
        if (image_size % div != 0)
            throw ConfigError("model: image_size must be divisible by " + std::to_string(div));
    }
};

struct StepStats {
    int epoch = 0;
    int step = 0;
    double d_loss = 0;
    double g_loss = 0;
    double g_adv = 0;
    double l1 = 0;
    double t_tilde_mean = 0;
};

// One training run: generator and W transform share an optimizer, the
// discriminator gets its own, and the decision-state store carries each
// sample's previous-epoch decision map between epochs.
//
// Per-epoch shuffling and augmentation draw from seeds derived as
// (seed, "order", epoch) and (seed, "augment", epoch), so a resumed run
// replays exactly the stream a straight run would have used, with no RNG
// state in the checkpoint.
template <typename T = float>
class Trainer {
  public:
    Trainer(ModelConfig mc, TrainConfig tc) : mc_(std::move(mc)), tc_(std::move(tc)) {
        mc_.validate();
        tc_.validate();
        Rng gen_rng(derive_seed(tc_.seed, "init_gen"));
        Rng disc_rng(derive_seed(tc_.seed, "init_disc"));
        Rng w_rng(derive_seed(tc_.seed, "init_w"));
        gen_ = std::make_unique<UNetGenerator<T>>(gen_rng, mc_.gen);
        disc_ = std::make_unique<PatchDiscriminator<T>>(disc_rng, mc_.disc);
        const auto [mh, mw] =
            PatchDiscriminator<T>::output_hw(mc_.image_size, mc_.image_size, mc_.disc.n_layers);
        map_h_ = mh;
        map_w_ = mw;
        w_ = std::make_unique<WTransform<T>>(w_params_, "w", w_rng, mc_.bridge, map_h_, map_w_,
                                             mc_.image_size, mc_.image_size);
        store_ = std::make_unique<DecisionStateStore>(derive_seed(tc_.seed, "store"),
                                                      mc_.bridge.inference_sigma);
        opt_g_ = Adam<T>(
            Adam<T>::collect({{"gen/", &gen_->params()}, {"w/", &w_params_}}), tc_.adam);
        opt_d_ = Adam<T>(Adam<T>::collect({{"disc/", &disc_->params()}}), tc_.adam);
    }

    // Route around the noisy-input bridge: the generator sees the clean
    // source and pseudo-time zero. Used by ablation comparisons only.
    void set_bridge_bypass(bool b) { bridge_bypass_ = b; }
    bool bridge_bypass() const { return bridge_bypass_; }

    int map_h() const { return map_h_; }
    int map_w() const { return map_w_; }
    int epochs_completed() const { return epochs_completed_; }
    const std::vector<EpochRecord>& history() const { return history_; }
    const std::vector<Tensor<float>>& w_snapshots() const { return w_history_; }

    UNetGenerator<T>& generator() { return *gen_; }
    PatchDiscriminator<T>& discriminator() { return *disc_; }
    WTransform<T>& w_transform() { return *w_; }
    ParamSet<T>& w_params() { return w_params_; }
    DecisionStateStore& store() { return *store_; }
    Adam<T>& opt_g() { return opt_g_; }
    Adam<T>& opt_d() { return opt_d_; }
    const ModelConfig& model_config() const { return mc_; }
    const TrainConfig& train_config() const { return tc_; }

    std::function<void(const StepStats&)> on_step;

    // Corruption stage shared by training, evaluation, and inference:
    // w = W(d_prev), x_t = x0 + x0 * w, t~ = mean(w) per sample.
    struct BridgeOut {
        Var<T> w;
        Var<T> x_t;
        Var<T> t;
    };

    BridgeOut apply_bridge(const Var<T>& x0, const Var<T>& d_prev) const {
        BridgeOut out;
        if (bridge_bypass_) {
            out.x_t = x0;
            out.t = Var<T>::leaf(Tensor<T>({x0.shape()[0]}));
            out.w = Var<T>::leaf(Tensor<T>({x0.shape()[0], 1, mc_.image_size, mc_.image_size}));
            return out;
        }
        out.w = (*w_)(d_prev);
        out.x_t = corrupt_input(x0, out.w);
        out.t = estimate_time(out.w);
        return out;
    }

    // Previous-epoch decision maps for a batch, [B,1,map_h,map_w].
    Tensor<float> gather_decision_maps(const std::vector<std::string>& ids) const {
        const int B = int(ids.size());
        Tensor<float> d({B, 1, map_h_, map_w_});
        for (int b = 0; b < B; ++b) {
            const Tensor<float> one = store_->get(ids[size_t(b)], {1, map_h_, map_w_});
            std::copy(one.raw().begin(), one.raw().end(),
                      d.raw().begin() + int64_t(b) * map_h_ * map_w_);
        }
        return d;
    }

    StepStats train_step(const typename PairedImageDataset::Batch& batch, int epoch, int step) {
        check(batch.size() >= 1, "train_step: empty batch");
        check(batch.source.dim(2) == mc_.image_size && batch.source.dim(3) == mc_.image_size,
              "train_step: batch size " + batch.source.shape_str() + " does not match image_size " +
                  std::to_string(mc_.image_size));
        const int B = batch.size();

        auto x0 = Var<T>::leaf(batch.source.template cast<T>());
        auto y = Var<T>::leaf(batch.target.template cast<T>());
        auto d_prev = Var<T>::leaf(gather_decision_maps(batch.ids).template cast<T>());

        const BridgeOut bridge = apply_bridge(x0, d_prev);
        auto y_hat = gen_->forward(bridge.x_t, bridge.t);

        // Discriminator update on the detached candidate.
        auto y_hat_detached = Var<T>::leaf(y_hat.val());
        auto z_real = disc_->forward(x0, y);
        auto z_fake_d = disc_->forward(x0, y_hat_detached);
        auto d_loss = discriminator_loss(z_real, z_fake_d);
        abort_if_not_finite(double(d_loss.val()[0]), "discriminator loss", epoch, step);
        opt_d_.zero_grad();
        backward(d_loss);
        opt_d_.step();

        // Generator + W update against the frozen, freshly updated critic.
        disc_->params().set_requires_grad(false);
        auto z_fake_g = disc_->forward(x0, y_hat);
        LossBreakdown<T> breakdown;
        auto g_loss = generator_loss(z_fake_g, y_hat, y, tc_.loss, &breakdown);
        abort_if_not_finite(double(breakdown.g_loss), "generator loss", epoch, step);
        opt_g_.zero_grad();
        backward(g_loss);
        opt_g_.step();
        disc_->params().set_requires_grad(true);

        StepStats stats;
        stats.epoch = epoch;
        stats.step = step;
        stats.d_loss = double(d_loss.val()[0]);
        stats.g_loss = double(breakdown.g_loss);
        stats.l1 = double(breakdown.l1_value);
        stats.g_adv = stats.g_loss - tc_.loss.lambda_l1 * stats.l1;
        double tsum = 0;
        for (int b = 0; b < B; ++b) tsum += double(bridge.t.val()[b]);
        stats.t_tilde_mean = tsum / double(B);

        // The decision maps the next epoch will see: this epoch's post-update
        // critic response to the generator's candidates.
        const Tensor<T> probs = sigmoid_tensor(z_fake_g.val());
        for (int b = 0; b < B; ++b) {
            Tensor<float> one({1, map_h_, map_w_});
            const int64_t n = int64_t(map_h_) * map_w_;
            for (int64_t i = 0; i < n; ++i) one[i] = float(probs[int64_t(b) * n + i]);
            store_->put(batch.ids[size_t(b)], std::move(one));
        }

        if (on_step) on_step(stats);
        return stats;
    }

    // Fixed probe over the first probe_samples sorted ids, no augmentation:
    // the GAN objective from fresh logits, patch entropy of the fake map, t~
    // statistics, and a W snapshot for the increment diagnostics.
    EpochRecord evaluate(const PairedImageDataset& dataset, int epoch) {
        NoGradGuard ng;
        const int k = int(std::min<size_t>(size_t(tc_.probe_samples), dataset.size()));
        check(k >= 1, "evaluate: empty dataset");

        double gan_acc = 0, ent_acc = 0;
        std::vector<double> t_vals;
        Tensor<float> w_snap({k, 1, mc_.image_size, mc_.image_size});
        for (int i = 0; i < k; ++i) {
            const ImagePair pair = dataset.load(size_t(i), nullptr);
            check(pair.source.dim(1) == mc_.image_size && pair.source.dim(2) == mc_.image_size,
                  "evaluate: probe image " + pair.sample_id + " is " + pair.source.shape_str() +
                      ", expected native size " + std::to_string(mc_.image_size) +
                      " (probe images are not augmented)");
            auto x0 = Var<T>::leaf(
                pair.source.template cast<T>().reshaped({1, 3, mc_.image_size, mc_.image_size}));
            auto y = Var<T>::leaf(
                pair.target.template cast<T>().reshaped({1, 3, mc_.image_size, mc_.image_size}));
            auto d_prev = Var<T>::leaf(
                store_->get(pair.sample_id, {1, map_h_, map_w_}).template cast<T>().reshaped(
                    {1, 1, map_h_, map_w_}));

            const BridgeOut bridge = apply_bridge(x0, d_prev);
            auto y_hat = gen_->forward(bridge.x_t, bridge.t);
            auto z_real = disc_->forward(x0, y);
            auto z_fake = disc_->forward(x0, y_hat);

            gan_acc += gan_objective_from_logits(z_real.val(), z_fake.val());
            ent_acc += mean_patch_entropy(sigmoid_tensor(z_fake.val()), tc_.loss.eps);
            t_vals.push_back(double(bridge.t.val()[0]));
            const Tensor<float> w_f = bridge.w.val().template cast<float>();
            std::copy(w_f.raw().begin(), w_f.raw().end(),
                      w_snap.raw().begin() + int64_t(i) * mc_.image_size * mc_.image_size);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.neg_gan_loss = -gan_acc / double(k);
        rec.mean_entropy = ent_acc / double(k);
        double tm = 0;
        for (double v : t_vals) tm += v;
        tm /= double(t_vals.size());
        rec.t_tilde_mean = tm;
        double tv = 0;
        for (double v : t_vals) tv += (v - tm) * (v - tm);
        rec.t_tilde_std = t_vals.size() > 1 ? std::sqrt(tv / double(t_vals.size() - 1)) : 0.0;

        w_history_.push_back(w_snap);
        if (w_history_.size() >= 3) {
            const size_t take = std::min<size_t>(w_history_.size(), size_t(kDiagSnapshots));
            const std::vector<Tensor<float>> recent(w_history_.end() - long(take), w_history_.end());
            const BrownianReport rep = brownian_diagnostics(recent);
            rec.dw_autocorr = rep.lag1_autocorr;
            rec.dw_kurtosis = rep.excess_kurtosis;
        }
        return rec;
    }

    // Runs epochs [epochs_completed+1, epochs_completed+count] (count <= 0
    // means "to the end of the schedule"). on_epoch fires after each epoch's
    // evaluation with the trainer still mutable, for checkpoint/CSV sinks.
    std::vector<EpochRecord> train(
        const PairedImageDataset& dataset, int count = 0,
        const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
        const int total = tc_.total_epochs();
        int last = count <= 0 ? total : std::min(total, epochs_completed_ + count);
        for (int epoch = epochs_completed_ + 1; epoch <= last; ++epoch) {
            const double lr = lr_at_epoch(epoch, tc_.epochs_const, tc_.epochs_decay, tc_.adam.lr);
            opt_g_.set_lr(lr);
            opt_d_.set_lr(lr);

            Rng order_rng(derive_seed(tc_.seed, "order", uint64_t(epoch)));
            Rng aug_rng(derive_seed(tc_.seed, "augment", uint64_t(epoch)));
            const std::vector<size_t> order = dataset.epoch_order(order_rng);

            int step = 0;
            for (size_t off = 0; off < order.size(); off += size_t(tc_.batch_size)) {
                const size_t end = std::min(order.size(), off + size_t(tc_.batch_size));
                const std::vector<size_t> idx(order.begin() + long(off), order.begin() + long(end));
                train_step(dataset.make_batch(idx, &aug_rng), epoch, step);
                ++step;
            }

            store_->set_epoch_tag(epoch);
            history_.push_back(evaluate(dataset, epoch));
            epochs_completed_ = epoch;
            if (on_epoch) on_epoch(history_.back());
        }
        return history_;
    }

    // Inference: a fresh maximum-entropy decision state per sample (never the
    // training store), one generator forward per call.
    Tensor<T> infer(const Tensor<T>& source, uint64_t call_seed = 0) {
        NoGradGuard ng;
        check(source.ndim() == 4 && source.dim(1) == 3 && source.dim(2) == mc_.image_size &&
                  source.dim(3) == mc_.image_size,
              "infer: expected [B,3," + std::to_string(mc_.image_size) + "," +
                  std::to_string(mc_.image_size) + "], got " + source.shape_str());
        const int B = source.dim(0);
        Tensor<T> d({B, 1, map_h_, map_w_});
        const uint64_t base = derive_seed(tc_.seed, "infer_state", call_seed);
        for (int b = 0; b < B; ++b) {
            const Tensor<T> one = sample_inference_state<T>(
                {1, map_h_, map_w_}, derive_seed(base, "sample", uint64_t(b)),
                mc_.bridge.inference_sigma);
            std::copy(one.raw().begin(), one.raw().end(),
                      d.raw().begin() + int64_t(b) * map_h_ * map_w_);
        }
        auto x0 = Var<T>::leaf(source);
        const BridgeOut bridge = apply_bridge(x0, Var<T>::leaf(d));
        return gen_->forward(bridge.x_t, bridge.t).val();
    }

    // Everything a byte-identical resume needs: parameters, both optimizers'
    // moments and step counts, the decision store, the epoch history, and the
    // recent W snapshots feeding the increment diagnostics.
    void save(const std::string& path) const {
        CheckpointWriter w;
        w.meta()["format"] = "atme-trainer";
        w.meta()["epoch"] = epochs_completed_;
        w.meta()["seed"] = tc_.seed;
        w.meta()["epochs_const"] = tc_.epochs_const;
        w.meta()["epochs_decay"] = tc_.epochs_decay;
        w.meta()["batch_size"] = tc_.batch_size;
        w.meta()["image_size"] = mc_.image_size;
        w.meta()["map_h"] = map_h_;
        w.meta()["map_w"] = map_w_;

        for (const auto& [name, v] : gen_->params().items()) w.add_tensor("params/gen/" + name, v.val());
        for (const auto& [name, v] : disc_->params().items())
            w.add_tensor("params/disc/" + name, v.val());
        for (const auto& [name, v] : w_params_.items()) w.add_tensor("params/w/" + name, v.val());

        save_optimizer(w, "optg", opt_g_);
        save_optimizer(w, "optd", opt_d_);

        nlohmann::json ids = nlohmann::json::array();
        for (const auto& [id, t] : store_->snapshot()) {
            ids.push_back(id);
            w.add_tensor("store/" + id, t);
        }
        w.meta()["store_ids"] = ids;
        w.meta()["store_epoch_tag"] = store_->epoch_tag();

        nlohmann::json hist = nlohmann::json::array();
        for (const auto& r : history_) {
            nlohmann::json row;
            row["epoch"] = r.epoch;
            row["neg_gan_loss"] = r.neg_gan_loss;
            row["mean_entropy"] = r.mean_entropy;
            row["t_tilde_mean"] = r.t_tilde_mean;
            row["t_tilde_std"] = r.t_tilde_std;
            row["dw_autocorr"] = r.dw_autocorr;
            row["dw_kurtosis"] = r.dw_kurtosis;
            hist.push_back(row);
        }
        w.meta()["history"] = hist;

        const size_t keep = std::min<size_t>(w_history_.size(), size_t(kDiagSnapshots));
        w.meta()["w_snapshots"] = keep;
        for (size_t i = 0; i < keep; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "monitor/w%03zu", i);
            w.add_tensor(name, w_history_[w_history_.size() - keep + i]);
        }

        w.write(path);
    }

    void load(const std::string& path) {
        CheckpointReader r(path);
        if (r.meta().value("format", "") != "atme-trainer")
            throw CheckpointError("checkpoint: not a trainer checkpoint: " + path);
        if (r.meta().at("seed").get<uint64_t>() != tc_.seed)
            throw CheckpointError("checkpoint: seed mismatch (run has " +
                                  std::to_string(tc_.seed) + ")");
        if (r.meta().at("image_size").get<int>() != mc_.image_size ||
            r.meta().at("map_h").get<int>() != map_h_ || r.meta().at("map_w").get<int>() != map_w_)
            throw CheckpointError("checkpoint: geometry mismatch for " + path);

        for (const auto& [name, v] : gen_->params().items())
            load_param(r, "params/gen/" + name, v);
        for (const auto& [name, v] : disc_->params().items())
            load_param(r, "params/disc/" + name, v);
        for (const auto& [name, v] : w_params_.items()) load_param(r, "params/w/" + name, v);

        restore_optimizer(r, "optg", opt_g_);
        restore_optimizer(r, "optd", opt_d_);

        std::vector<std::pair<std::string, Tensor<float>>> entries;
        for (const auto& id : r.meta().at("store_ids"))
            entries.emplace_back(id.get<std::string>(),
                                 r.tensor_f32("store/" + id.get<std::string>()));
        store_->restore(std::move(entries), r.meta().at("store_epoch_tag").get<int>());

        history_.clear();
        for (const auto& row : r.meta().at("history")) {
            EpochRecord rec;
            rec.epoch = row.at("epoch").get<int>();
            rec.neg_gan_loss = row.at("neg_gan_loss").get<double>();
            rec.mean_entropy = row.at("mean_entropy").get<double>();
            rec.t_tilde_mean = row.at("t_tilde_mean").get<double>();
            rec.t_tilde_std = row.at("t_tilde_std").get<double>();
            rec.dw_autocorr = row.at("dw_autocorr").get<double>();
            rec.dw_kurtosis = row.at("dw_kurtosis").get<double>();
            history_.push_back(rec);
        }

        w_history_.clear();
        const size_t keep = r.meta().at("w_snapshots").get<size_t>();
        for (size_t i = 0; i < keep; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "monitor/w%03zu", i);
            w_history_.push_back(r.tensor_f32(name));
        }

        epochs_completed_ = r.meta().at("epoch").get<int>();
    }

    static constexpr int kDiagSnapshots = 12;

  private:
    static void save_optimizer(CheckpointWriter& w, const std::string& prefix,
                               const Adam<T>& opt) {
        nlohmann::json steps = nlohmann::json::array();
        for (size_t i = 0; i < opt.param_count(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s/%05zu", prefix.c_str(), i);
            w.add_tensor(std::string(name) + "/m", opt.state(i).m);
            w.add_tensor(std::string(name) + "/v", opt.state(i).v);
            steps.push_back(opt.state(i).steps);
        }
        w.meta()[prefix + "_steps"] = steps;
    }

    static void restore_optimizer(const CheckpointReader& r, const std::string& prefix,
                                  Adam<T>& opt) {
        const auto& steps = r.meta().at(prefix + "_steps");
        if (steps.size() != opt.param_count())
            throw CheckpointError("checkpoint: optimizer " + prefix + " has " +
                                  std::to_string(steps.size()) + " entries, expected " +
                                  std::to_string(opt.param_count()));
        for (size_t i = 0; i < opt.param_count(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s/%05zu", prefix.c_str(), i);
            opt.restore_state(i, r.tensor_f64(std::string(name) + "/m"),
                              r.tensor_f64(std::string(name) + "/v"),
                              steps[i].get<int64_t>());
        }
    }

    // Vars are shared handles, so a by-value copy still writes the live node.
    static void load_param(const CheckpointReader& r, const std::string& name, Var<T> v) {
        Tensor<T> t;
        if constexpr (std::is_same_v<T, float>)
            t = r.tensor_f32(name);
        else
            t = r.tensor_f64(name);
        check(t.shape() == v.val().shape(), "checkpoint: shape mismatch for " + name);
        v.val() = std::move(t);
    }

    static void abort_if_not_finite(double v, const char* what, int epoch, int step) {
        if (std::isfinite(v)) return;
        throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step) + ": non-finite " + what + " (" +
                              std::to_string(v) + ")");
    }

    ModelConfig mc_;
    TrainConfig tc_;
    int map_h_ = 0, map_w_ = 0;
    bool bridge_bypass_ = false;
    int epochs_completed_ = 0;

    ParamSet<T> w_params_;
    std::unique_ptr<UNetGenerator<T>> gen_;
    std::unique_ptr<PatchDiscriminator<T>> disc_;
    std::unique_ptr<WTransform<T>> w_;
    std::unique_ptr<DecisionStateStore> store_;
    Adam<T> opt_g_;
    Adam<T> opt_d_;

    std::vector<EpochRecord> history_;
    std::vector<Tensor<float>> w_history_;
};

}  // namespace atme
