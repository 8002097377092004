#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "atme/image_io.hpp"
#include "atme/rng.hpp"

namespace atme {

enum class Direction { kAToB, kBToA };

inline Direction direction_from_string(const std::string& s) {
    if (s == "atob" || s == "AtoB") return Direction::kAToB;
    if (s == "btoa" || s == "BtoA") return Direction::kBToA;
    throw ConfigError("data.direction must be 'atob' or 'btoa', got '" + s + "'");
}

struct ImagePair {
    std::string sample_id;
    Tensor<float> source;
    Tensor<float> target;
    Direction direction = Direction::kAToB;
};

struct AugmentPolicy {
    int jitter_resize = 286;
    int crop_size = 256;
    double hflip_prob = 0.5;
    bool enabled = true;

    void validate() const {
        if (crop_size < 1) throw ConfigError("augment: crop_size must be >= 1");
        if (jitter_resize < crop_size)
            throw ConfigError("augment: jitter_resize must be >= crop_size");
        if (hflip_prob < 0 || hflip_prob > 1)
            throw ConfigError("augment: hflip_prob must be in [0,1]");
    }
};

// Left half of the composite is A, right half is B; (source, target) follow
// the requested direction.
inline std::pair<Tensor<uint8_t>, Tensor<uint8_t>> split_ab(const Tensor<uint8_t>& composite,
                                                            Direction direction,
                                                            const std::string& name) {
    check(composite.ndim() == 3 && composite.dim(0) == 3, "split_ab: expected [3,H,W]");
    const int w = composite.dim(2);
    if (w % 2 != 0)
        throw DataError("malformed sample (odd composite width " + std::to_string(w) +
                        "): " + name);
    const int half = w / 2;
    auto a = crop_image(composite, 0, 0, composite.dim(1), half);
    auto b = crop_image(composite, 0, half, composite.dim(1), half);
    if (direction == Direction::kAToB) return {std::move(a), std::move(b)};
    return {std::move(b), std::move(a)};
}

// One shared draw per pair, so source and target always get the same crop
// offsets and flip decision.
struct AugmentDraw {
    int dy = 0, dx = 0;
    bool flip = false;
};

inline AugmentDraw draw_augment(Rng& rng, const AugmentPolicy& policy) {
    AugmentDraw d;
    const int slack = policy.jitter_resize - policy.crop_size;
    d.dy = slack > 0 ? int(rng.uniform_int(slack + 1)) : 0;
    d.dx = slack > 0 ? int(rng.uniform_int(slack + 1)) : 0;
    d.flip = rng.bernoulli(policy.hflip_prob);
    return d;
}

inline Tensor<uint8_t> apply_augment(const Tensor<uint8_t>& img, const AugmentPolicy& policy,
                                     const AugmentDraw& draw) {
    auto out = resize_image(img, policy.jitter_resize, policy.jitter_resize);
    out = crop_image(out, draw.dy, draw.dx, policy.crop_size, policy.crop_size);
    if (draw.flip) out = hflip_image(out);
    return out;
}

// Paired AB dataset over <root>/<split>/*.{png,jpg,jpeg}. Files are scanned
// in sorted order; sample_id is the path relative to root, so ids survive
// shuffling and restarts. Unreadable files are skipped with a warning.
class PairedImageDataset {
  public:
    PairedImageDataset(std::string root, std::string split, Direction direction,
                       AugmentPolicy policy)
        : root_(std::move(root)), direction_(direction), policy_(policy) {
        policy_.validate();
        namespace fs = std::filesystem;
        const fs::path dir = fs::path(root_) / split;
        if (!fs::is_directory(dir)) throw DataError("dataset split not found: " + dir.string());
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char c) { return char(std::tolower(c)); });
            if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
            files_.push_back(entry.path());
        }
        std::sort(files_.begin(), files_.end());
        if (files_.empty()) throw DataError("no samples under " + dir.string());
    }

    size_t size() const { return files_.size(); }

    std::string sample_id(size_t index) const {
        namespace fs = std::filesystem;
        return fs::relative(files_.at(index), root_).generic_string();
    }

    // Sorted ids of the whole split (probe sets take a stable prefix).
    std::vector<std::string> all_ids() const {
        std::vector<std::string> ids;
        ids.reserve(files_.size());
        for (size_t i = 0; i < files_.size(); ++i) ids.push_back(sample_id(i));
        return ids;
    }

    ImagePair load(size_t index, Rng* aug_rng = nullptr) const {
        const std::string id = sample_id(index);
        auto [src, tgt] = split_ab(load_image_rgb(files_.at(index).string()), direction_, id);
        if (policy_.enabled && aug_rng) {
            const AugmentDraw d = draw_augment(*aug_rng, policy_);
            src = apply_augment(src, policy_, d);
            tgt = apply_augment(tgt, policy_, d);
        }
        ImagePair pair;
        pair.sample_id = id;
        pair.source = normalize_image(src);
        pair.target = normalize_image(tgt);
        pair.direction = direction_;
        return pair;
    }

    // Batch tensors [B,3,H,W] plus ids, skipping unreadable files with a
    // warning (the skip count is queryable).
    struct Batch {
        std::vector<std::string> ids;
        Tensor<float> source;
        Tensor<float> target;
        int size() const { return int(ids.size()); }
    };

    Batch make_batch(const std::vector<size_t>& indices, Rng* aug_rng = nullptr) const {
        std::vector<ImagePair> pairs;
        pairs.reserve(indices.size());
        for (size_t idx : indices) {
            try {
                pairs.push_back(load(idx, aug_rng));
            } catch (const DataError& e) {
                ++skipped_;
                std::cerr << "warning: skipping sample: " << e.what() << "\n";
            }
        }
        if (pairs.empty()) throw DataError("batch had no readable samples");
        const auto& s0 = pairs.front().source.shape();
        Batch batch;
        batch.source = Tensor<float>({int(pairs.size()), s0[0], s0[1], s0[2]});
        batch.target = Tensor<float>({int(pairs.size()), s0[0], s0[1], s0[2]});
        const int64_t n = pairs.front().source.size();
        for (size_t i = 0; i < pairs.size(); ++i) {
            check(pairs[i].source.shape() == s0 && pairs[i].target.shape() == s0,
                  "batch: inconsistent image shapes at " + pairs[i].sample_id);
            std::copy(pairs[i].source.raw().begin(), pairs[i].source.raw().end(),
                      batch.source.raw().begin() + int64_t(i) * n);
            std::copy(pairs[i].target.raw().begin(), pairs[i].target.raw().end(),
                      batch.target.raw().begin() + int64_t(i) * n);
            batch.ids.push_back(std::move(pairs[i].sample_id));
        }
        return batch;
    }

    std::vector<size_t> epoch_order(Rng& rng) const {
        std::vector<size_t> order(files_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        return order;
    }

    int64_t skipped() const { return skipped_; }
    Direction direction() const { return direction_; }
    const AugmentPolicy& policy() const { return policy_; }

  private:
    std::string root_;
    Direction direction_;
    AugmentPolicy policy_;
    std::vector<std::filesystem::path> files_;
    mutable int64_t skipped_ = 0;
};

}  // namespace atme
