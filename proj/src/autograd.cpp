#include "wavediff/autograd.hpp"

#include "wavediff/ops.hpp"

namespace wavediff::ag {

Value Tape::leaf(NDTensor value, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Value Tape::emplace(NDTensor value, std::vector<Value> inputs, const char* op,
                    std::function<void(const Value&, const Value&, std::vector<Value>&)> vjp) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->op = op;
  n->inputs.reserve(inputs.size());
  for (const Value& in : inputs) {
    if (in.tape != this) throw std::logic_error(std::string(op) + ": input from another tape");
    n->inputs.push_back(in.id);
    n->requires_grad = n->requires_grad || in.requires_grad();
  }
  if (n->requires_grad) n->vjp = std::move(vjp);
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int32_t>(nodes_.size() - 1)};
}

std::unordered_map<int32_t, Value> Tape::backward(const Value& root) {
  if (root.tape != this) throw std::logic_error("backward: root from another tape");
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(root.shape()));
  }
  std::unordered_map<int32_t, Value> grads;
  if (!root.requires_grad()) {
    throw std::logic_error("backward: root is detached from every differentiable leaf");
  }
  grads[root.id] = constant(NDTensor::full(root.shape(), 1.0));

  // New nodes appended by vjps get ids beyond `last` and are not ancestors of
  // root, so sweeping a snapshot of the id range is exact.
  const int32_t last = root.id;
  for (int32_t id = last; id >= 0; --id) {
    auto it = grads.find(id);
    if (it == grads.end()) continue;
    const Node& n = node(id);
    if (!n.vjp) continue;
    Value self{this, id};
    std::vector<Value> input_grads(n.inputs.size());
    n.vjp(self, it->second, input_grads);
    for (size_t k = 0; k < n.inputs.size(); ++k) {
      if (!input_grads[k].valid()) continue;
      int32_t in_id = n.inputs[k];
      if (!node(in_id).requires_grad) continue;
      auto found = grads.find(in_id);
      if (found == grads.end()) {
        grads.emplace(in_id, input_grads[k]);
      } else {
        found->second = add(found->second, input_grads[k]);
      }
    }
  }
  return grads;
}

Value Tape::grad(const Value& root, const Value& wrt) {
  auto g = backward(root);
  auto it = g.find(wrt.id);
  if (it == g.end()) {
    throw std::logic_error("grad: target does not influence root (detached graph)");
  }
  return it->second;
}

}  // namespace wavediff::ag
