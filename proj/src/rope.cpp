#include "ksa/rope.hpp"

#include <cmath>
#include <stdexcept>

namespace ksa {

void RopeConfig::validate() const {
    if (head_dim == 0 || head_dim % 2 != 0)
        throw std::invalid_argument("rope head_dim must be a positive even integer");
    if (!(theta > 0.0)) throw std::invalid_argument("rope theta must be positive");
}

template <typename T>
void rope_rotate_inplace(T* head_vec, std::size_t head_dim, double theta, std::int64_t position) {
    const double pos = static_cast<double>(position);
    for (std::size_t i = 0; i * 2 < head_dim; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) /
                                                static_cast<double>(head_dim));
        const double angle = pos * freq;
        const double c = std::cos(angle), s = std::sin(angle);
        const double x0 = static_cast<double>(head_vec[2 * i]);
        const double x1 = static_cast<double>(head_vec[2 * i + 1]);
        head_vec[2 * i] = static_cast<T>(x0 * c - x1 * s);
        head_vec[2 * i + 1] = static_cast<T>(x0 * s + x1 * c);
    }
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, const std::vector<std::int64_t>& positions,
                     const RopeConfig& cfg) {
    cfg.validate();
    if (x.rank() != 3 || x.shape[2] != cfg.head_dim)
        throw std::invalid_argument("rope_apply expects [tokens, heads, head_dim]");
    if (positions.size() != x.shape[0])
        throw std::invalid_argument("rope_apply positions length mismatch");
    Tensor<T> out = x;
    const std::size_t heads = x.shape[1], d = x.shape[2];
    for (std::size_t t = 0; t < x.shape[0]; ++t)
        for (std::size_t h = 0; h < heads; ++h)
            rope_rotate_inplace(out.data.data() + (t * heads + h) * d, d, cfg.theta,
                                positions[t]);
    return out;
}

template void rope_rotate_inplace(float*, std::size_t, double, std::int64_t);
template void rope_rotate_inplace(double*, std::size_t, double, std::int64_t);
template Tensor<float> rope_apply(const Tensor<float>&, const std::vector<std::int64_t>&,
                                  const RopeConfig&);
template Tensor<double> rope_apply(const Tensor<double>&, const std::vector<std::int64_t>&,
                                   const RopeConfig&);

}  // namespace ksa
