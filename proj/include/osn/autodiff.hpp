#pragma once

#include <functional>
#include <span>
#include <vector>

#include "osn/tensor.hpp"

namespace osn::ad {

// Reverse-mode derivative of a 0-d recorded tensor with respect to leaves.
// With carry_graph set the returned gradients are themselves recorded, so a
// second gradient() call through them is valid. A leaf the scalar does not
// depend on gets a zero tensor.
std::vector<Tensor> gradient(const Tensor& scalar, std::span<const Tensor> wrt, bool carry_graph = false);
Tensor gradient(const Tensor& scalar, const Tensor& wrt, bool carry_graph = false);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, one coordinate at a
// time. Independent of the recorded path; used as a verification oracle.
std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> x, double h);
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace osn::ad
