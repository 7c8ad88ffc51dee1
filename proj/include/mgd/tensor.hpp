#ifndef MGD_TENSOR_HPP
#define MGD_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mgd {

/// Dense row-major tensor. Spatial data uses (height, width, channels) order,
/// so the flat index of (y, x, c) is (y * W + x) * C + c.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        values.assign(element_count(shape), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != element_count(shape))
            throw std::invalid_argument("tensor: value count does not match shape");
    }

    static std::size_t element_count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return values.size(); }

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

}  // namespace mgd

#endif
