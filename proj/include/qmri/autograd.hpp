#pragma once

// Op-construction API for modules that define their own differentiable
// primitives (Fourier transforms, coil operators). Not needed by callers
// that only compose existing ops.

#include <functional>
#include <span>
#include <vector>

#include "qmri/tensor.hpp"

namespace qmri::detail {

// Called once during the reverse pass. `grad_in[i]` is null when input i does
// not need a gradient; otherwise it is a buffer of the input's size that the
// function must accumulate into (+=).
using BackwardFn = std::function<void(std::span<const double> out_value,
                                      std::span<const double> grad_out,
                                      std::span<std::vector<double>*> grad_in)>;

// Builds the output tensor. Records a graph node when grad mode is on and at
// least one input requires a gradient; otherwise `backward` is dropped.
Tensor make_op(Shape shape, std::vector<double> values, DType dtype, std::vector<Tensor> inputs,
               BackwardFn backward);

// Shared argument validation.
void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);
void require_complex(const Tensor& a, const char* op);

}  // namespace qmri::detail
