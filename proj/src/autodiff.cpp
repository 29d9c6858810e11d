#include "osn/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "osn/ops.hpp"

namespace osn::ad {

namespace {

// Post-order DFS over recorded nodes; iterative so deep records do not blow
// the stack.
std::vector<std::shared_ptr<Node>> topo_order(const std::shared_ptr<Node>& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{root, 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      const auto& in = n->inputs[next++];
      if (in->requires_grad && seen.insert(in.get()).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Tensor> gradient(const Tensor& scalar, std::span<const Tensor> wrt, bool carry_graph) {
  require(scalar.defined() && scalar.dim() == 0,
          "gradient: expected a 0-d tensor, got " + (scalar.defined() ? shape_str(scalar.shape()) : "undefined"));
  require(scalar.recorded(), "gradient: scalar is not recorded");
  for (const auto& w : wrt) require(w.is_leaf(), "gradient: differentiation target is not a recorded leaf");

  const auto order = topo_order(scalar.node());
  std::unordered_map<Node*, Tensor> grads;
  grads.emplace(scalar.node().get(), Tensor::scalar(1.0));

  RecordModeGuard mode(carry_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::shared_ptr<Node>& n = *it;
    if (!n->backward) continue;
    auto git = grads.find(n.get());
    if (git == grads.end()) continue;
    const Tensor g = git->second;
    // Interior gradients are no longer needed once propagated.
    grads.erase(git);
    const Tensor out(n);
    std::vector<Tensor> in_grads = n->backward(out, g);
    for (std::size_t i = 0; i < n->inputs.size() && i < in_grads.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad || !in_grads[i].defined()) continue;
      auto [slot, fresh] = grads.try_emplace(in, in_grads[i]);
      if (!fresh) slot->second = add(slot->second, in_grads[i]);
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node().get());
    result.push_back(it != grads.end() ? it->second : Tensor::zeros(w.shape()));
  }
  return result;
}

Tensor gradient(const Tensor& scalar, const Tensor& wrt, bool carry_graph) {
  return gradient(scalar, std::span<const Tensor>(&wrt, 1), carry_graph).front();
}

std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> x, double h) {
  require(h > 0.0, "finite_diff_gradient: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    require(std::isfinite(fp) && std::isfinite(fm),
            "finite_diff_gradient: non-finite function value at coordinate " + std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  const Shape shape = x.shape();
  auto flat = [&](std::span<const double> v) {
    return f(Tensor::constant(shape, std::vector<double>(v.begin(), v.end())));
  };
  return Tensor::constant(shape, finite_diff_gradient(flat, x.values(), h));
}

}  // namespace osn::ad
