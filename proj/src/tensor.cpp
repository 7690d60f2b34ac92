#include "ksa/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ksa {

Dtype dtype_from_string(const std::string& s) {
    if (s == "f32") return Dtype::F32;
    if (s == "f64") return Dtype::F64;
    throw std::invalid_argument("unknown dtype: " + s + " (expected f32 or f64)");
}

const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }

namespace {

std::size_t shape_product(const std::vector<std::size_t>& s) {
    std::size_t p = 1;
    for (auto d : s) p *= d;
    return p;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> s)
    : shape(std::move(s)), data(shape_product(shape), T(0)) {}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> s, std::vector<T> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_product(shape) != data.size())
        throw std::invalid_argument("tensor shape does not match data length");
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
    Tensor<T> t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T(1);
    return t;
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (const auto& x : data)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul shape mismatch");
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose expects rank-2 tensor");
    Tensor<T> out({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add shape mismatch");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("sub shape mismatch");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out = a;
    for (auto& x : out.data) x *= factor;
    return out;
}

template <typename T>
void softmax_row_inplace(T* logits, std::size_t n) {
    T row_max = -std::numeric_limits<T>::infinity();
    std::size_t admissible = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (logits[j] == -std::numeric_limits<T>::infinity()) continue;
        ++admissible;
        if (logits[j] > row_max) row_max = logits[j];
    }
    if (admissible == 0) throw std::runtime_error("empty attention row");
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
        if (logits[j] == -std::numeric_limits<T>::infinity()) {
            logits[j] = T(0);
        } else {
            logits[j] = std::exp(logits[j] - row_max);
            denom += logits[j];
        }
    }
    for (std::size_t j = 0; j < n; ++j) logits[j] /= denom;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const std::optional<Tensor<T>>& mask_row_bias) {
    if (x.rank() != 2) throw std::invalid_argument("softmax_rows expects rank-2 tensor");
    if (mask_row_bias && !mask_row_bias->same_shape(x))
        throw std::invalid_argument("softmax bias shape mismatch");
    const std::size_t rows = x.shape[0], cols = x.shape[1];
    Tensor<T> out = x;
    for (std::size_t i = 0; i < rows; ++i) {
        T* row = out.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!std::isfinite(static_cast<double>(x.at(i, j))))
                throw std::invalid_argument("softmax input must be finite");
            if (mask_row_bias) row[j] += mask_row_bias->at(i, j);
        }
        softmax_row_inplace(row, cols);
    }
    return out;
}

template struct Tensor<float>;
template struct Tensor<double>;
template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> transpose(const Tensor<float>&);
template Tensor<double> transpose(const Tensor<double>&);
template Tensor<float> add(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> add(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> sub(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> sub(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> scale(const Tensor<float>&, float);
template Tensor<double> scale(const Tensor<double>&, double);
template void softmax_row_inplace(float*, std::size_t);
template void softmax_row_inplace(double*, std::size_t);
template Tensor<float> softmax_rows(const Tensor<float>&, const std::optional<Tensor<float>>&);
template Tensor<double> softmax_rows(const Tensor<double>&, const std::optional<Tensor<double>>&);

}  // namespace ksa
