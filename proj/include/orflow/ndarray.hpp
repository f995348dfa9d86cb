#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace orflow {

/// Dense row-major matrix of doubles. All model math runs in 64-bit.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double value = 0.0) : rows(r), cols(c), data(r * c, value) {}

    double& operator()(std::size_t r, std::size_t c) {
        assert(r < rows && c < cols);
        return data[r * cols + c];
    }
    double operator()(std::size_t r, std::size_t c) const {
        assert(r < rows && c < cols);
        return data[r * cols + c];
    }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    const double* row_const(std::size_t r) const { return data.data() + r * cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    bool empty() const { return data.empty(); }
};

/// groups x steps x dim tensor, the shape flowing through the temporal layers.
struct Ten3 {
    std::size_t groups = 0;
    std::size_t steps = 0;
    std::size_t dim = 0;
    std::vector<double> data;

    Ten3() = default;
    Ten3(std::size_t g, std::size_t t, std::size_t d, double value = 0.0)
        : groups(g), steps(t), dim(d), data(g * t * d, value) {}

    double& at(std::size_t g, std::size_t t, std::size_t d) {
        assert(g < groups && t < steps && d < dim);
        return data[(g * steps + t) * dim + d];
    }
    double at(std::size_t g, std::size_t t, std::size_t d) const {
        assert(g < groups && t < steps && d < dim);
        return data[(g * steps + t) * dim + d];
    }

    double* slab(std::size_t g, std::size_t t) { return data.data() + (g * steps + t) * dim; }
    const double* slab(std::size_t g, std::size_t t) const {
        return data.data() + (g * steps + t) * dim;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace orflow
