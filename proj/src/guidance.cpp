#include "diffclass/guidance.hpp"

#include "diffclass/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diffclass {

void GuidanceConfig::validate() const
{
    if (num_classes < 2) {
        throw std::invalid_argument("guidance needs at least 2 classes");
    }
    if (image_size <= 0 || roi_count < 1 || crop_size < 1 || local_input_size < 1) {
        throw std::invalid_argument("guidance sizes must be positive");
    }
    if (crop_size > image_size) {
        throw std::invalid_argument("crop size " + std::to_string(crop_size) +
                                    " exceeds image size " + std::to_string(image_size));
    }
    global_encoder.validate();
    local_encoder.validate();
}

RoiSet extract_rois(const SaliencyMap& saliency, int k, int crop_size, int image_h, int image_w)
{
    if (k < 1) {
        throw std::invalid_argument("ROI count must be at least 1");
    }
    if (crop_size < 1 || crop_size > std::min(image_h, image_w)) {
        throw std::invalid_argument("crop size " + std::to_string(crop_size) +
                                    " does not fit a " + std::to_string(image_h) + "x" +
                                    std::to_string(image_w) + " image");
    }
    const int cells = saliency.height() * saliency.width();
    RoiSet out;
    if (k > cells) {
        out.warning = "requested " + std::to_string(k) + " ROIs but the saliency grid has only " +
                      std::to_string(cells) + " cells; using " + std::to_string(cells);
        k = cells;
    }
    std::vector<int> order(static_cast<std::size_t>(cells));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return saliency.grid[static_cast<std::size_t>(a)] > saliency.grid[static_cast<std::size_t>(b)];
    });

    for (int i = 0; i < k; ++i) {
        const int cell = order[static_cast<std::size_t>(i)];
        const int row = cell / saliency.width();
        const int col = cell % saliency.width();
        const double cy = (row + 0.5) * saliency.stride;
        const double cx = (col + 0.5) * saliency.stride;
        RoiBox box;
        box.height = crop_size;
        box.width = crop_size;
        box.top = std::clamp(static_cast<int>(std::floor(cy - crop_size / 2.0)), 0, image_h - crop_size);
        box.left = std::clamp(static_cast<int>(std::floor(cx - crop_size / 2.0)), 0, image_w - crop_size);
        out.boxes.push_back(box);
        out.scores.push_back(saliency.grid[static_cast<std::size_t>(cell)]);
    }
    return out;
}

GuidanceNet::GuidanceNet(GuidanceConfig config)
    : config_(std::move(config)),
      global_encoder_(config_.global_encoder),
      class_map_(config_.global_encoder.feature_dim(), config_.num_classes, 1, 1, 0),
      local_encoder_(config_.local_encoder),
      attention_({config_.local_encoder.feature_dim()}),
      local_head_(config_.local_encoder.feature_dim(), config_.num_classes)
{
    config_.validate();
}

void GuidanceNet::init(Rng& rng)
{
    global_encoder_.init(rng);
    class_map_.init(rng, 1.0 / std::sqrt(6.0));
    local_encoder_.init(rng);
    nn::init_uniform(attention_.value, 1.0 / std::sqrt(static_cast<double>(attention_.value.size())), rng);
    local_head_.init(rng);
}

void GuidanceNet::check_image(const Tensor& image) const
{
    if (image.rank() != 3 || image.dim(0) != config_.global_encoder.in_channels ||
        image.dim(1) != config_.image_size || image.dim(2) != config_.image_size) {
        throw std::invalid_argument("guidance expects a (" +
                                    std::to_string(config_.global_encoder.in_channels) + ", " +
                                    std::to_string(config_.image_size) + ", " +
                                    std::to_string(config_.image_size) + ") image, got " +
                                    image.shape_string());
    }
}

GlobalPriorOutput GuidanceNet::global_prior(const Tensor& image, GlobalCache* cache) const
{
    check_image(image);
    Tensor fmap = global_encoder_.forward(image, cache ? &cache->encoder : nullptr);
    Tensor maps = class_map_.forward(fmap, cache ? &cache->class_map : nullptr);
    if (cache) {
        cache->feature_shape = fmap.shape();
    }

    const int h = maps.dim(1), w = maps.dim(2);
    SaliencyMap sal;
    sal.grid = Tensor({h, w});
    sal.stride = config_.global_encoder.downsampling();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double best = maps.at(0, y, x);
            for (int c = 1; c < config_.num_classes; ++c) {
                best = std::max(best, maps.at(c, y, x));
            }
            sal.grid[static_cast<std::size_t>(y) * w + x] = std::max(best, 0.0);
        }
    }

    GlobalPriorOutput out{nn::global_avg_pool(fmap), std::move(sal), nn::global_avg_pool(maps),
                          ClassVector::one_hot(0, config_.num_classes)};
    if (!all_finite(out.logits)) {
        throw NumericFailure("non-finite activation in the global guidance stream", 0);
    }
    out.y_g = ClassVector::distribution(softmax(out.logits));
    return out;
}

LocalPriorOutput GuidanceNet::local_prior(const Tensor& image, const RoiSet& rois,
                                          LocalCache* cache) const
{
    if (rois.boxes.empty()) {
        throw std::invalid_argument("local prior needs at least one ROI");
    }
    const std::size_t k = rois.boxes.size();
    std::vector<nn::Vec> features(k);
    if (cache) {
        cache->crops.assign(k, nn::EncoderCache{});
        cache->map_shapes.assign(k, {});
    }
    for (std::size_t i = 0; i < k; ++i) {
        const RoiBox& b = rois.boxes[i];
        Tensor patch = resize_bilinear(crop(image, b.top, b.left, b.height, b.width),
                                       config_.local_input_size, config_.local_input_size);
        Tensor fmap = local_encoder_.forward(patch, cache ? &cache->crops[i] : nullptr);
        if (cache) {
            cache->map_shapes[i] = fmap.shape();
        }
        features[i] = nn::global_avg_pool(fmap);
    }

    const std::size_t dim = attention_.value.size();
    nn::Vec scores(k);
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            s += attention_.value[d] * features[i][d];
        }
        scores[i] = s;
    }
    nn::Vec weights = softmax(scores);
    nn::Vec pooled(dim, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            pooled[d] += weights[i] * features[i][d];
        }
    }

    LocalPriorOutput out{local_head_.forward(pooled), weights,
                         ClassVector::one_hot(0, config_.num_classes)};
    if (!all_finite(out.logits)) {
        throw NumericFailure("non-finite activation in the local guidance stream", 1);
    }
    out.y_l = ClassVector::distribution(softmax(out.logits));
    if (cache) {
        cache->crop_features = std::move(features);
        cache->attention = std::move(weights);
        cache->pooled = std::move(pooled);
    }
    return out;
}

DcgOutput GuidanceNet::forward(const Tensor& image, DcgCache* cache) const
{
    GlobalPriorOutput g = global_prior(image, cache ? &cache->global : nullptr);
    RoiSet rois = extract_rois(g.saliency, config_.roi_count, config_.crop_size, image.dim(1),
                               image.dim(2));
    LocalPriorOutput l = local_prior(image, rois, cache ? &cache->local : nullptr);
    return DcgOutput{DualPrior{std::move(g.y_g), std::move(l.y_l)},
                     std::move(g.saliency),
                     std::move(g.feature),
                     std::move(rois),
                     std::move(g.logits),
                     std::move(l.logits),
                     std::move(l.attention)};
}

void GuidanceNet::backward(const DcgCache& cache, std::span<const double> dglobal_logits,
                           std::span<const double> dlocal_logits, std::span<const double> dfeature)
{
    // Global stream: logits are the spatial mean of the class maps.
    {
        const auto& fshape = cache.global.feature_shape;
        const std::vector<int> map_shape{config_.num_classes, fshape[1], fshape[2]};
        Tensor dmaps = nn::global_avg_pool_backward(dglobal_logits, map_shape);
        Tensor dfmap = class_map_.backward(dmaps, cache.global.class_map, true);
        if (!dfeature.empty()) {
            dfmap += nn::global_avg_pool_backward(dfeature, fshape);
        }
        global_encoder_.backward(cache.global.encoder, std::move(dfmap));
    }

    // Local stream: head -> attention pooling -> per-crop encoders.
    const LocalCache& lc = cache.local;
    const std::size_t k = lc.crop_features.size();
    const std::size_t dim = attention_.value.size();
    nn::Vec dpooled(dim);
    local_head_.backward(lc.pooled, dlocal_logits, dpooled);

    nn::Vec dweight(k);
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            s += dpooled[d] * lc.crop_features[i][d];
        }
        dweight[i] = s;
    }
    double mean_dweight = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        mean_dweight += lc.attention[i] * dweight[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
        const double dscore = lc.attention[i] * (dweight[i] - mean_dweight);
        nn::Vec dfeat(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            dfeat[d] = lc.attention[i] * dpooled[d] + dscore * attention_.value[d];
            attention_.grad[d] += dscore * lc.crop_features[i][d];
        }
        local_encoder_.backward(lc.crops[i], nn::global_avg_pool_backward(dfeat, lc.map_shapes[i]));
    }
}

void GuidanceNet::collect(const std::string& prefix, nn::ParamList& out)
{
    global_encoder_.collect(prefix + ".global_encoder", out);
    class_map_.collect(prefix + ".class_map", out);
    local_encoder_.collect(prefix + ".local_encoder", out);
    out.push_back({prefix + ".attention", &attention_});
    local_head_.collect(prefix + ".local_head", out);
}

}  // namespace diffclass
