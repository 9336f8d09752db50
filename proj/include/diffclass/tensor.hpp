#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffclass {

// Dense row-major array of doubles. Images are stored channel-first (C, H, W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor vector(std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int c, int y, int x) { return data_[index3(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index3(c, y, x)]; }

    void fill(double v);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;

private:
    std::size_t index3(int c, int y, int x) const
    {
        return (static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<int>& shape);

// Bilinear resize of a (C, H, W) tensor, half-pixel centers (matches cv::INTER_LINEAR).
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Copies the (C, h, w) window whose top-left corner is (top, left).
Tensor crop(const Tensor& image, int top, int left, int h, int w);

Tensor flip_horizontal(const Tensor& image);

bool all_finite(std::span<const double> values);

}  // namespace diffclass
