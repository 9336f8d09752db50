#include "diffclass/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace diffclass {

std::size_t shape_numel(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw std::invalid_argument("negative tensor dimension");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill)
{
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values))
{
    if (data_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("tensor value count does not match shape " + shape_string());
    }
}

Tensor Tensor::vector(std::vector<double> values)
{
    const int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    if (other.size() != size()) {
        throw std::invalid_argument("tensor size mismatch in +=: " + shape_string() + " vs " +
                                    other.shape_string());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Tensor& Tensor::operator*=(double s)
{
    for (double& v : data_) {
        v *= s;
    }
    return *this;
}

std::string Tensor::shape_string() const
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        os << (i ? ", " : "") << shape_[i];
    }
    os << ')';
    return os.str();
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w)
{
    if (image.rank() != 3 || out_h <= 0 || out_w <= 0) {
        throw std::invalid_argument("resize_bilinear expects a (C, H, W) tensor and positive size");
    }
    const int channels = image.dim(0);
    const int in_h = image.dim(1);
    const int in_w = image.dim(2);
    if (in_h == out_h && in_w == out_w) {
        return image;
    }
    Tensor out({channels, out_h, out_w});
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;

    struct Tap {
        int lo, hi;
        double w;
    };
    auto taps = [](int n_out, int n_in, double scale) {
        std::vector<Tap> t(n_out);
        for (int i = 0; i < n_out; ++i) {
            double src = (i + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            const int lo = static_cast<int>(std::floor(src));
            const int hi = std::min(lo + 1, n_in - 1);
            t[i] = {lo, hi, src - lo};
        }
        return t;
    };
    const auto ty = taps(out_h, in_h, sy);
    const auto tx = taps(out_w, in_w, sx);

    for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                const double top = image.at(c, ty[y].lo, tx[x].lo) * (1 - tx[x].w) +
                                   image.at(c, ty[y].lo, tx[x].hi) * tx[x].w;
                const double bottom = image.at(c, ty[y].hi, tx[x].lo) * (1 - tx[x].w) +
                                      image.at(c, ty[y].hi, tx[x].hi) * tx[x].w;
                out.at(c, y, x) = top * (1 - ty[y].w) + bottom * ty[y].w;
            }
        }
    }
    return out;
}

Tensor crop(const Tensor& image, int top, int left, int h, int w)
{
    if (image.rank() != 3 || top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > image.dim(1) ||
        left + w > image.dim(2)) {
        throw std::invalid_argument("crop window outside image " + image.shape_string());
    }
    const int channels = image.dim(0);
    Tensor out({channels, h, w});
    for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < h; ++y) {
            const double* src = &image.data()[(static_cast<std::size_t>(c) * image.dim(1) + top + y) *
                                                  image.dim(2) +
                                              left];
            std::copy(src, src + w, &out.at(c, y, 0));
        }
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image)
{
    Tensor out = image;
    const int channels = image.dim(0), h = image.dim(1), w = image.dim(2);
    for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = image.at(c, y, w - 1 - x);
            }
        }
    }
    return out;
}

bool all_finite(std::span<const double> values)
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace diffclass
