#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/dnn.hpp>

#include "atme/image_io.hpp"
#include "atme/ops.hpp"
#include "atme/rng.hpp"

namespace atme {

struct FeatureSet {
    Eigen::MatrixXd features;  // one row per image
    std::string extractor_id;

    int n() const { return int(features.rows()); }
    int dim() const { return int(features.cols()); }
};

// Cubic polynomial kernel (x.y/dim + 1)^3, the standard KID choice.
inline double poly_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    check(x.size() == y.size(), "poly_kernel: dimension mismatch");
    const double base = x.dot(y) / double(x.size()) + 1.0;
    return base * base * base;
}

// Unbiased MMD^2: off-diagonal means of k(x,x') and k(y,y') minus twice the
// full cross mean. May be slightly negative, by design of the estimator.
inline double mmd2_unbiased(const FeatureSet& X, const FeatureSet& Y) {
    const int n = X.n(), m = Y.n();
    check(n >= 2 && m >= 2, "mmd2_unbiased: need at least 2 samples per set");
    check(X.dim() == Y.dim(), "mmd2_unbiased: feature dimensions differ");

    double kxx = 0, kyy = 0, kxy = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) kxx += poly_kernel(X.features.row(i), X.features.row(j));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) kyy += poly_kernel(Y.features.row(i), Y.features.row(j));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) kxy += poly_kernel(X.features.row(i), Y.features.row(j));

    return kxx / (double(n) * (n - 1)) + kyy / (double(m) * (m - 1)) -
           2.0 * kxy / (double(n) * m);
}

struct KidResult {
    double mean = 0;
    double std = 0;
    int subset_size = 0;
    int n_subsets = 0;
    bool scaled_by_100 = true;
};

// Mean and std of mmd2_unbiased over seeded random subsets; reported x100 by
// convention, matching how KID tables are presented.
inline KidResult kid(const FeatureSet& real, const FeatureSet& fake, int subset_size,
                     int n_subsets, uint64_t seed, bool scale_by_100 = true) {
    check(n_subsets >= 1, "kid: n_subsets must be >= 1");
    check(subset_size >= 2, "kid: subset_size must be >= 2");
    check(subset_size <= real.n() && subset_size <= fake.n(),
          "kid: subset_size exceeds a set size");

    Rng rng(seed);
    auto subset = [&](const FeatureSet& fs) {
        std::vector<int> idx(size_t(fs.n()));
        for (int i = 0; i < fs.n(); ++i) idx[size_t(i)] = i;
        rng.shuffle(idx);
        FeatureSet out;
        out.extractor_id = fs.extractor_id;
        out.features.resize(subset_size, fs.dim());
        for (int i = 0; i < subset_size; ++i) out.features.row(i) = fs.features.row(idx[size_t(i)]);
        return out;
    };

    std::vector<double> vals;
    vals.reserve(size_t(n_subsets));
    for (int s = 0; s < n_subsets; ++s) vals.push_back(mmd2_unbiased(subset(real), subset(fake)));

    KidResult res;
    res.subset_size = subset_size;
    res.n_subsets = n_subsets;
    res.scaled_by_100 = scale_by_100;
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var = vals.size() > 1 ? var / double(vals.size() - 1) : 0.0;
    const double scale = scale_by_100 ? 100.0 : 1.0;
    res.mean = mean * scale;
    res.std = std::sqrt(var) * scale;
    return res;
}

// Feature extraction is injected: production uses Inception-v3 features from
// an external weights file, tests and desk runs use a seeded linear random
// projection of downsampled pixels.
class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    // images: [3,H,W] floats in [-1,1].
    virtual FeatureSet extract(const std::vector<Tensor<float>>& images) const = 0;
};

class RandomProjectionExtractor : public FeatureExtractor {
  public:
    explicit RandomProjectionExtractor(uint64_t seed = 0, int out_dim = 128, int in_res = 32)
        : seed_(seed), out_dim_(out_dim), in_res_(in_res) {
        check(out_dim >= 1 && in_res >= 1, "random-proj extractor: invalid dimensions");
        const int in_dim = 3 * in_res_ * in_res_;
        Rng rng(derive_seed(seed_, "feature_projection"));
        proj_.resize(out_dim_, in_dim);
        for (int i = 0; i < out_dim_; ++i)
            for (int j = 0; j < in_dim; ++j)
                proj_(i, j) = rng.normal(0.0, 1.0 / std::sqrt(double(in_dim)));
    }

    std::string id() const override {
        return "random-proj-" + std::to_string(seed_) + "-" + std::to_string(out_dim_);
    }

    const Eigen::MatrixXd& projection() const { return proj_; }

    FeatureSet extract(const std::vector<Tensor<float>>& images) const override {
        check(!images.empty(), "extract: empty image list");
        FeatureSet fs;
        fs.extractor_id = id();
        fs.features.resize(int(images.size()), out_dim_);
        NoGradGuard ng;
        for (size_t k = 0; k < images.size(); ++k) {
            const auto& img = images[k];
            check(img.ndim() == 3 && img.dim(0) == 3, "extract: expected [3,H,W] image");
            auto batched = Var<float>::leaf(img.reshaped({1, 3, img.dim(1), img.dim(2)}));
            const auto small = resize_nearest(batched, in_res_, in_res_).val();
            Eigen::VectorXd flat(small.size());
            for (int64_t i = 0; i < small.size(); ++i) flat(i) = double(small[i]);
            fs.features.row(int(k)) = (proj_ * flat).transpose();
        }
        return fs;
    }

  private:
    uint64_t seed_;
    int out_dim_;
    int in_res_;
    Eigen::MatrixXd proj_;
};

inline std::string weights_dir() {
    const char* env = std::getenv("ATME_WEIGHTS_DIR");
    return env ? std::string(env) : std::string("weights");
}

// Inception-v3 pool features via the OpenCV dnn runtime. The weights file is
// a declared runtime asset; a missing file is an explicit error naming it,
// never a silent fallback to another extractor.
class InceptionV3Extractor : public FeatureExtractor {
  public:
    explicit InceptionV3Extractor(const std::string& weights_path = "")
        : path_(weights_path.empty()
                    ? (std::filesystem::path(weights_dir()) / "inception_v3.onnx").string()
                    : weights_path) {
        if (!std::filesystem::exists(path_))
            throw AssetError("missing external weights asset 'inception_v3.onnx' (looked at " +
                             path_ + "; set ATME_WEIGHTS_DIR)");
        net_ = cv::dnn::readNet(path_);
        if (net_.empty()) throw AssetError("failed to load weights asset " + path_);
    }

    std::string id() const override { return "inception-v3"; }

    FeatureSet extract(const std::vector<Tensor<float>>& images) const override {
        check(!images.empty(), "extract: empty image list");
        FeatureSet fs;
        fs.extractor_id = id();
        for (size_t k = 0; k < images.size(); ++k) {
            cv::Mat rgb = chw_to_mat(denormalize_image(images[k]));
            cv::Mat resized;
            cv::resize(rgb, resized, cv::Size(299, 299), 0, 0, cv::INTER_LINEAR);
            // Inception expects [-1,1] inputs.
            cv::Mat blob = cv::dnn::blobFromImage(resized, 1.0 / 127.5, cv::Size(299, 299),
                                                  cv::Scalar(127.5, 127.5, 127.5), false, false);
            net_.setInput(blob);
            cv::Mat out = net_.forward();
            const int d = int(out.total());
            if (fs.features.cols() == 0) fs.features.resize(int(images.size()), d);
            check(d == fs.features.cols(), "inception extractor: inconsistent feature size");
            for (int j = 0; j < d; ++j)
                fs.features(int(k), j) = double(out.ptr<float>(0)[j]);
        }
        return fs;
    }

  private:
    std::string path_;
    mutable cv::dnn::Net net_;
};

inline std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, uint64_t seed) {
    if (name == "random-proj") return std::make_unique<RandomProjectionExtractor>(seed);
    if (name == "inception") return std::make_unique<InceptionV3Extractor>();
    throw ConfigError("unknown extractor '" + name + "' (want 'inception' or 'random-proj')");
}

}  // namespace atme
