#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "wavediff/tensor.hpp"

namespace wavediff::ag {

class Tape;

/// Handle to a node on a tape. Cheap to copy; lifetime bound to the tape.
struct Value {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const NDTensor& val() const;
  const Shape& shape() const { return val().shape(); }
  int64_t size() const { return val().size(); }
  bool requires_grad() const;
};

/// One operation record. `vjp` receives the upstream gradient and must append
/// gradient contributions for each input (invalid Value = no contribution);
/// it builds those contributions out of tape ops, which is what makes
/// higher-order differentiation work.
struct Node {
  NDTensor value;
  std::vector<int32_t> inputs;
  bool requires_grad = false;
  const char* op = "leaf";
  std::function<void(const Value& self, const Value& grad, std::vector<Value>& input_grads)> vjp;
};

/// Append-only operation tape. Creation order is a topological order, which
/// backward() exploits by sweeping ids in reverse. Gradients are themselves
/// nodes on the same tape, so a second backward() differentiates through them.
class Tape {
 public:
  Value leaf(NDTensor value, bool requires_grad = false);
  Value constant(NDTensor value) { return leaf(std::move(value), false); }

  Value emplace(NDTensor value, std::vector<Value> inputs, const char* op,
                std::function<void(const Value&, const Value&, std::vector<Value>&)> vjp);

  const Node& node(int32_t id) const { return *nodes_[static_cast<size_t>(id)]; }
  size_t num_nodes() const { return nodes_.size(); }

  /// Reverse-mode sweep from `root` (scalar). Returns the gradient node for
  /// every ancestor that requires a gradient. Fan-out accumulates additively;
  /// each node's vjp runs at most once.
  std::unordered_map<int32_t, Value> backward(const Value& root);

  /// Gradient of `root` with respect to a single leaf; throws if detached.
  Value grad(const Value& root, const Value& wrt);

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

inline const NDTensor& Value::val() const { return tape->node(id).value; }
inline bool Value::requires_grad() const { return tape->node(id).requires_grad; }

}  // namespace wavediff::ag
