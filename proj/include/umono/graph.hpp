#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "umono/tensor.hpp"

namespace umono {

// Reverse-mode tape. Nodes are appended in forward order, so the list is a
// topological order by construction; backward walks it once in reverse and
// visits each node at most once. One Graph belongs to one logical thread and
// records one forward pass.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<Scalar>&)>;

  Graph() : self_(std::make_shared<Graph* const>(this)) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  bool owns(const Tensor<Scalar>& t) const {
    if (t.node < 0 || t.node >= static_cast<int>(nodes_.size())) return false;
    auto p = t.tape.lock();
    return p && *p == this;
  }

  // Registers a gradient leaf. Idempotent within one pass so parameters can
  // be watched unconditionally at the top of every forward.
  int watch(Tensor<Scalar>& t) {
    if (owns(t)) return t.node;
    int id = push_node("leaf", {}, t.shape, nullptr);
    t.tape = self_;
    t.node = id;
    t.requires_grad = true;
    return id;
  }

  int add_op(const char* op, std::vector<int> inputs, const std::vector<int>& out_shape,
             BackwardFn fn) {
    return push_node(op, std::move(inputs), out_shape, std::move(fn));
  }

  void attach(Tensor<Scalar>& t, int node_id) {
    t.tape = self_;
    t.node = node_id;
  }

  // Accumulates into the stored gradient of node `id`; id < 0 marks a
  // constant input and is dropped. `g` must have the node's element count.
  void accumulate(int id, const Tensor<Scalar>& g) {
    if (id < 0) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.numel() == 0) {
      slot = g;
      slot.shape = nodes_[static_cast<std::size_t>(id)].shape;
      return;
    }
    for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
  }

  void backward(const Tensor<Scalar>& loss) {
    if (!owns(loss)) throw NumericError("backward: loss tensor is detached from this graph");
    if (loss.numel() != 1)
      throw NumericError("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    if (ran_backward_) throw NumericError("backward: called twice on one graph without reset()");
    ran_backward_ = true;
    grads_.assign(nodes_.size(), Tensor<Scalar>());
    grads_[static_cast<std::size_t>(loss.node)] = Tensor<Scalar>(loss.shape, Scalar(1));
    for (int i = loss.node; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      const auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.numel() == 0 || !n.backward) continue;
      n.backward(*this, g);
    }
  }

  // Gradient of a watched or produced tensor; zeros when none flowed.
  Tensor<Scalar> grad(const Tensor<Scalar>& t) const {
    if (!owns(t)) throw NumericError("grad: tensor is not attached to this graph");
    if (!ran_backward_) throw NumericError("grad: backward() has not run");
    const auto& g = grads_[static_cast<std::size_t>(t.node)];
    if (g.numel() == 0) return Tensor<Scalar>::zeros(t.shape);
    return g;
  }

  // Discards the tape. Tensors attached to the old pass become constants.
  void reset() {
    nodes_.clear();
    grads_.clear();
    ran_backward_ = false;
    self_ = std::make_shared<Graph* const>(this);
  }

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

 private:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    std::vector<int> shape;
    BackwardFn backward;
  };

  int push_node(const char* op, std::vector<int> inputs, std::vector<int> shape, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(shape), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<Scalar>> grads_;
  bool ran_backward_ = false;
  std::shared_ptr<Graph* const> self_;
};

namespace detail {

template <typename Scalar>
Graph<Scalar>* live_graph(const Tensor<Scalar>& t) {
  if (t.node < 0) return nullptr;
  auto p = t.tape.lock();
  return p ? *p : nullptr;
}

// The common graph of all tape-linked arguments; nullptr when every argument
// is a constant. Mixing two live graphs in one op is an error.
template <typename Scalar>
Graph<Scalar>* same_graph(std::initializer_list<const Tensor<Scalar>*> ts) {
  Graph<Scalar>* g = nullptr;
  for (const Tensor<Scalar>* t : ts) {
    Graph<Scalar>* gt = live_graph(*t);
    if (!gt) continue;
    if (g && g != gt) throw NumericError("op mixes tensors from two different graphs");
    g = gt;
  }
  return g;
}

template <typename Scalar>
int id_in(Graph<Scalar>* g, const Tensor<Scalar>& t) {
  return (g && live_graph(t) == g) ? t.node : -1;
}

}  // namespace detail
}  // namespace umono
