#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace aptlab {

// Dense row-major array of doubles, rank 0 (scalar), 1 or 2.
struct Shape {
    std::vector<int> dims;

    Shape() = default;
    Shape(std::initializer_list<int> d) : dims(d) { validate(); }
    explicit Shape(std::vector<int> d) : dims(std::move(d)) { validate(); }

    int rank() const { return static_cast<int>(dims.size()); }

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }

    int rows() const { return rank() == 2 ? dims[0] : (rank() == 1 ? 1 : 1); }
    int cols() const { return rank() == 2 ? dims[1] : (rank() == 1 ? dims[0] : 1); }

    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return dims != o.dims; }

    std::string str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }

private:
    void validate() const {
        if (dims.size() > 2) throw std::invalid_argument("Shape: rank > 2 unsupported");
        for (int d : dims)
            if (d <= 0) throw std::invalid_argument("Shape: dims must be positive");
    }
};

struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(shape.numel(), 0.0) {}
    Tensor(Shape s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != shape.numel())
            throw std::invalid_argument("Tensor: buffer length " + std::to_string(v.size()) +
                                        " does not match shape " + shape.str());
    }

    static Tensor scalar(double x) { return Tensor(Shape{}, {x}); }
    static Tensor vec(std::vector<double> data) {
        int n = static_cast<int>(data.size());
        return Tensor(Shape{n}, std::move(data));
    }
    static Tensor mat(int r, int c, std::vector<double> data) {
        return Tensor(Shape{r, c}, std::move(data));
    }
    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    std::size_t numel() const { return v.size(); }
    double item() const {
        if (v.size() != 1) throw std::logic_error("Tensor::item on non-scalar");
        return v[0];
    }

    double& at(int i) { return v[static_cast<std::size_t>(i)]; }
    double at(int i) const { return v[static_cast<std::size_t>(i)]; }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * shape.cols() + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * shape.cols() + c]; }

    // Row r as a fresh vector tensor (rank-2 only).
    Tensor row(int r) const {
        int c = shape.cols();
        Tensor out(Shape{c});
        for (int j = 0; j < c; ++j) out.v[j] = at(r, j);
        return out;
    }

    bool same_values(const Tensor& o) const { return shape == o.shape && v == o.v; }
};

inline double linf_norm(const Tensor& t) {
    double m = 0.0;
    for (double x : t.v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace aptlab
