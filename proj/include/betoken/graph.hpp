#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "betoken/errors.hpp"
#include "betoken/tensor.hpp"

namespace betoken::numcore {

using NodeId = int;

// Accumulates the gradient of a designated trainable buffer across
// micro-batches; zeroed between optimizer steps.
template <typename T>
struct GradSlot {
  Tensor<T>* target = nullptr;
  Tensor<T> grad;

  explicit GradSlot(Tensor<T>* t) : target(t), grad(t->shape) {}

  void accumulate(const Tensor<T>& g) {
    if (!g.same_shape(grad)) {
      throw InvalidArgumentError("grad slot: shape mismatch, target " + grad.shape_str() +
                                 " vs grad " + g.shape_str());
    }
    for (size_t i = 0; i < grad.size(); ++i) grad.data[i] += g.data[i];
  }

  void scale(T s) {
    for (auto& v : grad.data) v *= s;
  }

  void zero() { grad.fill(T(0)); }
};

// Reverse-mode tape. Nodes are appended in topological order by construction;
// backward() replays the tape in reverse, accumulating into the grad buffers
// of every node with requires_grad. Frozen weights enter as constant() leaves,
// so their gradients are never materialized.
//
// Every op validates shapes and rejects non-finite outputs; backward names the
// node at which a non-finite gradient first appears.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- leaves -------------------------------------------------------------
  NodeId constant(const Tensor<T>* external);  // borrowed, no grad
  NodeId value(Tensor<T> owned);               // owned, no grad
  NodeId param(const Tensor<T>* external);     // borrowed, grad slot allocated

  // --- primitives ----------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_bias(NodeId a, NodeId b, NodeId bias);  // fused a*b + row-broadcast bias
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId scale(NodeId x, T factor);
  NodeId gelu(NodeId x);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId causal_attention(NodeId q, NodeId k, NodeId v, int n_heads);
  NodeId row_softmax(NodeId x, T temperature);
  NodeId kl_divergence(NodeId p, NodeId q);  // rowwise KL(p||q), [R,V] -> [R]
  NodeId cross_entropy(NodeId logits, std::vector<int> targets);  // mean NLL, scalar
  NodeId row_slice(NodeId x, int first, int count);
  NodeId gather_rows(const std::vector<std::pair<NodeId, int>>& rows);
  NodeId mean(NodeId x);
  NodeId sum(NodeId x);

  // --- execution -----------------------------------------------------------
  void backward(NodeId loss);

  const Tensor<T>& val(NodeId id) const { return value_of(check_id(id)); }
  const Tensor<T>& grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[check_id(id)].requires_grad; }
  const char* op_name(NodeId id) const { return nodes_[check_id(id)].op; }
  size_t node_count() const { return nodes_.size(); }

  static constexpr T kProbFloor = T(1e-9);       // probability floor inside log()
  static constexpr T kLayerNormEps = T(1e-5);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    const char* op = "";
    std::function<void(Graph&)> back;
  };

  std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
  bool backward_done_ = false;
  NodeId cur_ = -1;  // node whose backward closure is currently running

  int check_id(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
      throw InvalidArgumentError("graph: bad node id");
    }
    return id;
  }
  const Tensor<T>& value_of(NodeId id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
  }
  Tensor<T>& grad_of(NodeId id) { return nodes_[id].grad; }

  NodeId push(Tensor<T> out, bool req, const char* op, std::function<void(Graph&)> back);
  void ensure_finite(const Tensor<T>& t, const char* op) const;
  void check_2d(NodeId id, const char* op) const;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace betoken::numcore
