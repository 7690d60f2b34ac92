#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace ksa {

enum class Dtype { F32, F64 };

Dtype dtype_from_string(const std::string& s);
const char* dtype_name(Dtype d);

// Minimal dense row-major tensor. The scalar type is a template parameter so
// f32 runs really accumulate in f32; the Dtype enum is only used by callers
// that dispatch at runtime. All operations accumulate left-to-right in index
// order, so repeated runs are bit-identical.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);
    Tensor(std::vector<std::size_t> s, std::vector<T> d);

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    T& at(std::size_t i) { return data[i]; }
    T at(std::size_t i) const { return data[i]; }
    T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [m,k]x[k,n] -> [m,n]

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);  // [m,n] -> [n,m]

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Row-wise numerically stable softmax over a [rows, cols] tensor. The
// optional bias is added to the logits first; entries whose bias is -inf are
// excluded entirely and come out exactly 0. A row with no admissible entry
// throws ("empty attention row") rather than producing NaN.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x,
                       const std::optional<Tensor<T>>& mask_row_bias = std::nullopt);

// In-place softmax of a contiguous row of `n` logits; same exclusion rule.
template <typename T>
void softmax_row_inplace(T* logits, std::size_t n);

}  // namespace ksa
