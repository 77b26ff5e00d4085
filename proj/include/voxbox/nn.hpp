#pragma once

#include <random>
#include <span>
#include <vector>

#include "voxbox/partition.hpp"
#include "voxbox/tensor.hpp"

namespace voxbox {

struct ConvSpec {
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;
    Index3 kernel{1, 1, 1};
    Index3 stride{1, 1, 1};
    Index3 padding{0, 0, 0};
    bool transposed = false;

    /// Throws unless every extent is positive and padding < kernel.
    void validate() const;
    /// Weight layout: (Co,Ci,k...) for conv, (Ci,Co,k...) for transposed conv.
    Shape weight_shape() const;
    /// Spatial output extents for a given input, throwing if any is < 1.
    Index3 output_extents(const Index3& input) const;
};

/// Cross-correlation (no kernel flip) plus bias. `bias` may be undefined.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

/// Adjoint of conv3d with respect to its input, plus bias. Output extent per
/// axis is (in-1)*stride - 2*pad + kernel.
Tensor conv_transpose3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

/// Per-(n,c) standardization over D*H*W using the biased variance, followed
/// by a per-channel affine transform.
Tensor instance_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Trilinear resampling of the last three axes with align_corners=false.
/// Equal extents return an exact copy.
Tensor interp_trilinear(const Tensor& x, const Index3& out_extents);

/// One axis of align_corners=false linear resampling: output i reads
/// (1-frac)*in[lo] + frac*in[hi].
struct LinearTap {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    double frac = 0.0;
};
std::vector<LinearTap> linear_taps(std::int64_t in_extent, std::int64_t out_extent);

/// Kaiming-uniform (fan-in) initialization: U(-b, b), b = sqrt(6 / fan_in).
Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, std::mt19937_64& rng, DType dtype);

/// Plain forward kernels for the frozen encoder. They work on raw buffers and
/// never touch the tape.
namespace frozen {

/// Normalizes each row of length `width` to zero mean, unit variance.
void layernorm(std::span<double> x, std::size_t width, double eps = 1e-6);
void softmax(std::span<double> x, std::size_t width);
/// Exact (erf) GELU.
void gelu(std::span<double> x);

/// Row-major (rows x inner) * (inner x cols) -> (rows x cols).
std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::size_t rows,
                           std::size_t inner, std::size_t cols);

/// Bilinear (align_corners=false) resize of a (h, w) image.
std::vector<double> resize_bilinear(std::span<const double> image, std::int64_t h, std::int64_t w,
                                    std::int64_t out_h, std::int64_t out_w);

} // namespace frozen

} // namespace voxbox
