#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <string>

#include "mifcn/errors.hpp"
#include "mifcn/tensor.hpp"

namespace mifcn {

/// Square kernel of odd size with "same" zero padding; output keeps the input's H x W.
struct ConvSpec {
  Index kernel_size = 3;
  Index dilation = 1;

  Index radius() const { return (kernel_size - 1) / 2; }
  Index padding() const { return radius() * dilation; }
};

namespace detail {

// Upper bound on im2col buffer entries per tile.
inline constexpr Index kColumnBudget = Index{1} << 19;

template <typename Scalar>
void check_conv_shapes(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernels,
                       const ConvSpec& spec) {
  require(spec.kernel_size >= 1 && spec.kernel_size % 2 == 1,
          "conv2d_dilated: kernel size must be odd, got " + std::to_string(spec.kernel_size));
  require(spec.dilation >= 1, "conv2d_dilated: dilation must be >= 1");
  require(input.rank() == 3, "conv2d_dilated: input must be [Cin,H,W], got " + shape_string(input.shape()));
  require(kernels.rank() == 4 && kernels.dim(1) == input.dim(0) && kernels.dim(2) == spec.kernel_size &&
              kernels.dim(3) == spec.kernel_size,
          "conv2d_dilated: kernels " + shape_string(kernels.shape()) + " incompatible with input " +
              shape_string(input.shape()) + " and kernel size " + std::to_string(spec.kernel_size));
}

inline Index tile_rows(Index taps, Index height, Index width) {
  return std::clamp<Index>(kColumnBudget / std::max<Index>(taps * width, 1), 1, height);
}

// Fills `cols` (taps x rows*W) with the zero-padded, dilated neighbourhoods of output
// rows [y0, y0+rows). Tap (i,ky,kx) at output (y,x) reads input (y - d*(ky-r), x - d*(kx-r)),
// the a = x - d*b relation of a literal convolution.
template <typename Scalar>
void im2col(const BasicTensor<Scalar>& input, const ConvSpec& spec, Index y0, Index rows,
            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
  const Index channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const Index k = spec.kernel_size, r = spec.radius(), d = spec.dilation;
  cols.resize(channels * k * k, rows * width);
  for (Index i = 0; i < channels; ++i) {
    const Scalar* plane = input.data() + i * height * width;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.data() + ((i * k + ky) * k + kx) * rows * width;
        const Index sy = -d * (ky - r), sx = -d * (kx - r);
        const Index x_lo = std::clamp<Index>(-sx, 0, width), x_hi = std::clamp<Index>(width - sx, 0, width);
        for (Index y = y0; y < y0 + rows; ++y, dst += width) {
          const Index yi = y + sy;
          if (yi < 0 || yi >= height || x_lo >= x_hi) {
            std::fill(dst, dst + width, Scalar(0));
            continue;
          }
          std::fill(dst, dst + x_lo, Scalar(0));
          std::memcpy(dst + x_lo, plane + yi * width + x_lo + sx, sizeof(Scalar) * (x_hi - x_lo));
          std::fill(dst + x_hi, dst + width, Scalar(0));
        }
      }
    }
  }
}

// Scatter-adds `cols` back into `grad_input`; adjoint of im2col.
template <typename Scalar>
void col2im(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols,
            const ConvSpec& spec, Index y0, Index rows, BasicTensor<Scalar>& grad_input) {
  const Index channels = grad_input.dim(0), height = grad_input.dim(1), width = grad_input.dim(2);
  const Index k = spec.kernel_size, r = spec.radius(), d = spec.dilation;
  for (Index i = 0; i < channels; ++i) {
    Scalar* plane = grad_input.data() + i * height * width;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.data() + ((i * k + ky) * k + kx) * rows * width;
        const Index sy = -d * (ky - r), sx = -d * (kx - r);
        const Index x_lo = std::clamp<Index>(-sx, 0, width), x_hi = std::clamp<Index>(width - sx, 0, width);
        for (Index y = y0; y < y0 + rows; ++y, src += width) {
          const Index yi = y + sy;
          if (yi < 0 || yi >= height) continue;
          Scalar* dst = plane + yi * width + sx;
          for (Index x = x_lo; x < x_hi; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

template <typename Scalar>
using StridedRows = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                               Eigen::OuterStride<>>;
template <typename Scalar>
using ConstStridedRows = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                    0, Eigen::OuterStride<>>;

}  // namespace detail

/// Dilated 2-D convolution with "same" zero padding.
///
/// out[o](x) = bias[o] + sum_i sum_b input[i](x - d*b) * kernels[o,i](b), where b ranges over
/// the centred kernel offsets. Computed per row tile as an im2col product.
template <typename Scalar>
BasicTensor<Scalar> conv2d_dilated(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernels,
                                   const BasicTensor<Scalar>& bias, const ConvSpec& spec) {
  detail::check_conv_shapes(input, kernels, spec);
  const Index cout = kernels.dim(0), cin = input.dim(0), height = input.dim(1), width = input.dim(2);
  require(bias.rank() == 1 && bias.dim(0) == cout,
          "conv2d_dilated: bias " + shape_string(bias.shape()) + " does not match " + std::to_string(cout) +
              " output channels");
  const Index taps = cin * spec.kernel_size * spec.kernel_size;
  const Index pixels = height * width;

  BasicTensor<Scalar> out({cout, height, width});
  typename BasicTensor<Scalar>::ConstMatrixMap weights(kernels.data(), cout, taps);
  const auto bias_col = bias.array().matrix();

  if (spec.kernel_size == 1) {
    typename BasicTensor<Scalar>::ConstMatrixMap in(input.data(), cin, pixels);
    typename BasicTensor<Scalar>::MatrixMap result(out.data(), cout, pixels);
    result.noalias() = weights * in;
    result.colwise() += bias_col;
    return out;
  }

  const Index tile = detail::tile_rows(taps, height, width);
  typename BasicTensor<Scalar>::RowMatrix cols;
  for (Index y0 = 0; y0 < height; y0 += tile) {
    const Index rows = std::min(tile, height - y0);
    detail::im2col(input, spec, y0, rows, cols);
    detail::StridedRows<Scalar> block(out.data() + y0 * width, cout, rows * width, Eigen::OuterStride<>(pixels));
    block.noalias() = weights * cols;
    block.colwise() += bias_col;
  }
  return out;
}

/// Gradients of conv2d_dilated with respect to its three operands.
template <typename Scalar>
struct ConvGradients {
  BasicTensor<Scalar> input;
  BasicTensor<Scalar> kernels;
  BasicTensor<Scalar> bias;
};

template <typename Scalar>
ConvGradients<Scalar> conv2d_dilated_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernels,
                                              const BasicTensor<Scalar>& grad_output, const ConvSpec& spec) {
  detail::check_conv_shapes(input, kernels, spec);
  const Index cout = kernels.dim(0), cin = input.dim(0), height = input.dim(1), width = input.dim(2);
  require(grad_output.shape() == Shape({cout, height, width}),
          "conv2d_dilated_backward: upstream gradient has shape " + shape_string(grad_output.shape()));
  const Index taps = cin * spec.kernel_size * spec.kernel_size;
  const Index pixels = height * width;

  ConvGradients<Scalar> grads{BasicTensor<Scalar>::zeros_like(input), BasicTensor<Scalar>::zeros_like(kernels),
                              BasicTensor<Scalar>({cout})};
  typename BasicTensor<Scalar>::ConstMatrixMap weights(kernels.data(), cout, taps);
  typename BasicTensor<Scalar>::MatrixMap grad_weights(grads.kernels.data(), cout, taps);
  typename BasicTensor<Scalar>::ConstMatrixMap upstream(grad_output.data(), cout, pixels);
  grads.bias.array() = upstream.rowwise().sum().array();

  if (spec.kernel_size == 1) {
    typename BasicTensor<Scalar>::ConstMatrixMap in(input.data(), cin, pixels);
    typename BasicTensor<Scalar>::MatrixMap grad_in(grads.input.data(), cin, pixels);
    grad_weights.noalias() = upstream * in.transpose();
    grad_in.noalias() = weights.transpose() * upstream;
    return grads;
  }

  const Index tile = detail::tile_rows(taps, height, width);
  typename BasicTensor<Scalar>::RowMatrix cols;
  for (Index y0 = 0; y0 < height; y0 += tile) {
    const Index rows = std::min(tile, height - y0);
    detail::ConstStridedRows<Scalar> block(grad_output.data() + y0 * width, cout, rows * width,
                                           Eigen::OuterStride<>(pixels));
    detail::im2col(input, spec, y0, rows, cols);
    grad_weights.noalias() += block * cols.transpose();
    cols.noalias() = weights.transpose() * block;
    detail::col2im(cols, spec, y0, rows, grads.input);
  }
  return grads;
}

}  // namespace mifcn
