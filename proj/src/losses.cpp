#include "betoken/losses.hpp"

#include <algorithm>
#include <vector>

namespace betoken::training {

using model::Vocab;

template <typename T>
NodeId loss_ae(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& ae, NodeId ae_node,
               std::span<const int> text) {
  const int n = static_cast<int>(text.size());
  if (n < 1) throw InvalidArgumentError("loss_ae: empty text");
  MixedSequence<T> seq;
  seq.push_tokens(text);
  seq.push_soft(&ae);
  seq.push_tokens(text);
  typename ModelGraph<T>::SoftBinding binding{&ae, ae_node};
  const NodeId logits = mg.logits(seq, {&binding, 1});
  // Rows from the AE position onward predict x_1..x_n.
  const NodeId rows = g.row_slice(logits, n + ae.width() - 1, n);
  return g.cross_entropy(rows, std::vector<int>(text.begin(), text.end()));
}

template <typename T>
NodeId loss_recon(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& be, NodeId be_node,
                  const SoftToken<T>* ae, NodeId ae_node, std::span<const int> prompt) {
  const int m = static_cast<int>(prompt.size());
  if (m < 1) throw InvalidArgumentError("loss_recon: empty prompt");
  MixedSequence<T> seq;
  seq.push_soft(&be);
  int prefix_len = be.width();
  std::vector<typename ModelGraph<T>::SoftBinding> bindings{{&be, be_node}};
  if (ae) {
    seq.push_soft(ae);
    prefix_len += ae->width();
    bindings.push_back({ae, ae_node});
  }
  seq.push_tokens(prompt);
  const NodeId logits = mg.logits(seq, bindings);
  const NodeId rows = g.row_slice(logits, prefix_len - 1, m);
  return g.cross_entropy(rows, std::vector<int>(prompt.begin(), prompt.end()));
}

template <typename T>
NodeId loss_kd(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& be, NodeId be_node,
               std::span<const int> query_ids, std::span<const int> answer_ids,
               const Tensor<T>* teacher_logits, double tau) {
  if (!(tau > 0)) throw InvalidArgumentError("loss_kd: temperature must be positive");
  const int steps_total = static_cast<int>(answer_ids.size());
  if (steps_total < 1) throw InvalidArgumentError("loss_kd: empty trajectory");
  if (teacher_logits->rows() != steps_total) {
    throw InvariantViolationError("loss_kd: trajectory length " + std::to_string(steps_total) +
                                  " does not match cached logits rows " +
                                  std::to_string(teacher_logits->rows()));
  }
  MixedSequence<T> seq = model::chat_soft(&be, query_ids);
  const int prefix_len = seq.length();
  // T' = steps whose student context fits max_seq; the student sequence for
  // step t has length prefix_len + t - 1.
  const int steps = std::min(steps_total, mg.model().config().max_seq - prefix_len + 1);
  if (steps < 1) throw InvalidArgumentError("loss_kd: prefix leaves no room for trajectory steps");
  for (int t = 0; t + 1 < steps; ++t) seq.push_token(answer_ids[t]);

  typename ModelGraph<T>::SoftBinding binding{&be, be_node};
  const NodeId logits = mg.logits(seq, {&binding, 1});
  const NodeId student_rows = g.row_slice(logits, prefix_len - 1, steps);
  const NodeId teacher_node = g.constant(teacher_logits);
  const NodeId teacher_rows = steps == steps_total ? teacher_node : g.row_slice(teacher_node, 0, steps);
  const NodeId p = g.row_softmax(teacher_rows, static_cast<T>(tau));
  const NodeId q = g.row_softmax(student_rows, static_cast<T>(tau));
  return g.mean(g.kl_divergence(p, q));
}

template <typename T>
NodeId loss_pt(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& be, NodeId be_node,
               std::span<const int> query_ids, std::span<const int> gold_ids) {
  const int steps = static_cast<int>(gold_ids.size());
  if (steps < 1) throw InvalidArgumentError("loss_pt: empty gold answer");
  MixedSequence<T> seq = model::chat_soft(&be, query_ids);
  const int prefix_len = seq.length();
  for (int t = 0; t + 1 < steps; ++t) seq.push_token(gold_ids[t]);
  typename ModelGraph<T>::SoftBinding binding{&be, be_node};
  const NodeId logits = mg.logits(seq, {&binding, 1});
  const NodeId rows = g.row_slice(logits, prefix_len - 1, steps);
  return g.cross_entropy(rows, std::vector<int>(gold_ids.begin(), gold_ids.end()));
}

template <typename T>
NodeId total_loss(Graph<T>& g, NodeId recon, NodeId align, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidArgumentError("total_loss: lambda must be in [0,1]");
  }
  return g.add(g.scale(recon, static_cast<T>(1.0 - lambda)), g.scale(align, static_cast<T>(lambda)));
}

template NodeId loss_ae(Graph<float>&, ModelGraph<float>&, const SoftToken<float>&, NodeId,
                        std::span<const int>);
template NodeId loss_ae(Graph<double>&, ModelGraph<double>&, const SoftToken<double>&, NodeId,
                        std::span<const int>);
template NodeId loss_recon(Graph<float>&, ModelGraph<float>&, const SoftToken<float>&, NodeId,
                           const SoftToken<float>*, NodeId, std::span<const int>);
template NodeId loss_recon(Graph<double>&, ModelGraph<double>&, const SoftToken<double>&, NodeId,
                           const SoftToken<double>*, NodeId, std::span<const int>);
template NodeId loss_kd(Graph<float>&, ModelGraph<float>&, const SoftToken<float>&, NodeId,
                        std::span<const int>, std::span<const int>, const Tensor<float>*, double);
template NodeId loss_kd(Graph<double>&, ModelGraph<double>&, const SoftToken<double>&, NodeId,
                        std::span<const int>, std::span<const int>, const Tensor<double>*, double);
template NodeId loss_pt(Graph<float>&, ModelGraph<float>&, const SoftToken<float>&, NodeId,
                        std::span<const int>, std::span<const int>);
template NodeId loss_pt(Graph<double>&, ModelGraph<double>&, const SoftToken<double>&, NodeId,
                        std::span<const int>, std::span<const int>);
template NodeId total_loss<float>(Graph<float>&, NodeId, NodeId, double);
template NodeId total_loss<double>(Graph<double>&, NodeId, NodeId, double);

}  // namespace betoken::training
