#include "cigli/nn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cigli::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(numel(shape), v);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                                shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("Tensor::dim: axis out of range");
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("Tensor::item on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::backward() const {
  if (size() != 1) throw std::logic_error("backward() requires a single-element tensor");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::grad_norm() const {
  double s = 0.0;
  for (double g : node_->grad) s += g * g;
  return std::sqrt(s);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->value = node_->value;
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<Tensor> inputs) {
  auto node = std::make_shared<Node>();
  node->value.assign(numel(shape), 0.0);
  node->shape = std::move(shape);
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
    }
  }
  return Tensor(std::move(node));
}

}  // namespace cigli::nn
