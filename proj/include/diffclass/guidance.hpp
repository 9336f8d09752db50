#pragma once

// Dual-granularity conditional guidance: a global prior from the whole image
// and a local prior from attention-pooled crops around the most salient cells.
//
// The global head is a 1x1 convolution producing one activation map per class;
// its spatial average is the classification logit (the same as a linear head on
// the pooled feature), and its rectified per-cell maximum is the saliency map.

#include "diffclass/diffusion.hpp"
#include "diffclass/nn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace diffclass {

struct SaliencyMap {
    Tensor grid;     // (h, w), all entries >= 0
    int stride = 1;  // input pixels per grid cell

    int height() const { return grid.dim(0); }
    int width() const { return grid.dim(1); }
    double at(int row, int col) const { return grid[static_cast<std::size_t>(row) * width() + col]; }
};

struct RoiBox {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
    bool operator==(const RoiBox&) const = default;
};

struct RoiSet {
    std::vector<RoiBox> boxes;    // descending score
    std::vector<double> scores;
    std::optional<std::string> warning;  // set when k was clamped to the cell count
};

struct DualPrior {
    ClassVector global;
    ClassVector local;
};

struct GuidanceConfig {
    int num_classes = 2;
    int image_size = 224;
    nn::EncoderConfig global_encoder = nn::EncoderConfig::resnet18();
    nn::EncoderConfig local_encoder = nn::EncoderConfig::resnet18();
    int roi_count = 4;
    int crop_size = 112;
    int local_input_size = 112;

    void validate() const;
    bool operator==(const GuidanceConfig&) const = default;
};

// Picks the k most salient cells (ties in row-major order) and centers a
// crop_size box on each, shifted inward to stay inside the image.
RoiSet extract_rois(const SaliencyMap& saliency, int k, int crop_size, int image_h, int image_w);

struct GlobalCache {
    nn::EncoderCache encoder;
    std::vector<int> feature_shape;
    nn::ConvCache class_map;
};

struct LocalCache {
    std::vector<nn::EncoderCache> crops;
    std::vector<std::vector<int>> map_shapes;
    std::vector<nn::Vec> crop_features;
    nn::Vec attention;
    nn::Vec pooled;
};

struct DcgCache {
    GlobalCache global;
    LocalCache local;
};

struct GlobalPriorOutput {
    nn::Vec feature;  // pooled encoder representation
    SaliencyMap saliency;
    nn::Vec logits;
    ClassVector y_g;
};

struct LocalPriorOutput {
    nn::Vec logits;
    nn::Vec attention;  // one weight per crop, sums to 1
    ClassVector y_l;
};

struct DcgOutput {
    DualPrior priors;
    SaliencyMap saliency;
    nn::Vec feature;
    RoiSet rois;
    nn::Vec global_logits;
    nn::Vec local_logits;
    nn::Vec attention;
};

class GuidanceNet {
public:
    explicit GuidanceNet(GuidanceConfig config);

    void init(Rng& rng);

    // Non-finite logits raise NumericFailure with where() 0 (global) or 1 (local).
    GlobalPriorOutput global_prior(const Tensor& image, GlobalCache* cache = nullptr) const;
    LocalPriorOutput local_prior(const Tensor& image, const RoiSet& rois,
                                 LocalCache* cache = nullptr) const;
    DcgOutput forward(const Tensor& image, DcgCache* cache = nullptr) const;

    // Accumulates grads from the prior logits; `dfeature` (optional) is the
    // gradient on the pooled global feature when it doubles as the image feature.
    void backward(const DcgCache& cache, std::span<const double> dglobal_logits,
                  std::span<const double> dlocal_logits, std::span<const double> dfeature = {});

    const GuidanceConfig& config() const { return config_; }
    int feature_dim() const { return config_.global_encoder.feature_dim(); }
    void collect(const std::string& prefix, nn::ParamList& out);

private:
    void check_image(const Tensor& image) const;

    GuidanceConfig config_;
    nn::Encoder global_encoder_;
    nn::Conv2d class_map_;
    nn::Encoder local_encoder_;
    nn::Param attention_;  // scoring vector over local features
    nn::Linear local_head_;
};

}  // namespace diffclass
