#pragma once

// Slow, literal implementations used as independent oracles by the gradient
// checker and the test suites. Nothing on the production path calls these.

#include <functional>

#include "mifcn/conv.hpp"
#include "mifcn/tensor.hpp"

namespace mifcn::reference {

/// (F *_d K)(x) = sum over a + d*b = x of F(a) K(b), with F = 0 outside the image and
/// b indexing the centred kernel offsets. Direct loops, no tiling.
template <typename Scalar>
BasicTensor<Scalar> conv2d_dilated(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernels,
                                   const BasicTensor<Scalar>& bias, const ConvSpec& spec) {
  const Index cout = kernels.dim(0), cin = input.dim(0), height = input.dim(1), width = input.dim(2);
  const Index r = spec.radius(), d = spec.dilation;
  BasicTensor<Scalar> out({cout, height, width});
  for (Index o = 0; o < cout; ++o) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        Scalar acc = bias[o];
        for (Index i = 0; i < cin; ++i) {
          for (Index by = -r; by <= r; ++by) {
            for (Index bx = -r; bx <= r; ++bx) {
              const Index ay = y - d * by, ax = x - d * bx;
              if (ay < 0 || ay >= height || ax < 0 || ax >= width) continue;
              acc += input(i, ay, ax) * kernels(o, i, by + r, bx + r);
            }
          }
        }
        out(o, y, x) = acc;
      }
    }
  }
  return out;
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  require(eps > 0.0, "finite_difference_grad: eps must be positive");
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(probe);
    probe[i] = saved - eps;
    const double down = f(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace mifcn::reference
