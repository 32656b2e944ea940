#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "protorel/errors.hpp"

namespace protorel {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor of 64-bit reals. Rank 0 is a scalar (numel 1).
// `grad` is the accumulator used by Graph::backward; it is kept zero-filled
// for registered leaves so a tensor that never participates in a loss reads
// back an all-zero gradient.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }
    static Tensor full(Shape s, double v) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vector(std::vector<double> d) {
        Shape s{static_cast<std::int64_t>(d.size())};
        return Tensor(std::move(s), std::move(d));
    }
    // Row-major matrix from nested initializer list, mostly for tests.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        Shape s{static_cast<std::int64_t>(rows.size()),
                rows.size() ? static_cast<std::int64_t>(rows.begin()->size()) : 0};
        std::vector<double> d;
        d.reserve(static_cast<std::size_t>(numel(s)));
        for (const auto& r : rows) {
            if (static_cast<std::int64_t>(r.size()) != s[1])
                throw ShapeError("ragged matrix initializer");
            d.insert(d.end(), r.begin(), r.end());
        }
        return Tensor(std::move(s), std::move(d));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

    Tensor& set_requires_grad(bool f = true) {
        requires_grad = f;
        if (f && grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return *this;
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace protorel
