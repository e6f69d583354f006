#pragma once

#include <span>

#include "betoken/graph.hpp"
#include "betoken/model.hpp"

namespace betoken::training {

using model::MixedSequence;
using model::ModelGraph;
using model::SoftToken;
using numcore::Graph;
using numcore::NodeId;
using numcore::Tensor;

// Loss builders append subgraphs to a caller-owned graph and return the
// scalar loss node. Which inputs are trainable is decided by the caller: a
// soft token bound through Graph::param receives gradients, one bound as a
// constant does not.

// Reconstruction pretraining: feed [X, AE, X] and score the second copy of X.
template <typename T>
NodeId loss_ae(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& ae, NodeId ae_node,
               std::span<const int> text);

// Prompt compression: feed [BE, AE, P] (or [BE, P] in the memory-token
// ablation, ae == nullptr) and score P.
template <typename T>
NodeId loss_recon(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& be, NodeId be_node,
                  const SoftToken<T>* ae, NodeId ae_node, std::span<const int> prompt);

// Behavior distillation: mean KL between tempered teacher and student rows
// over a trajectory. Teacher logits enter as a constant, so no gradient can
// reach the teacher side. Steps that would push the student sequence past
// max_seq are dropped (T' <= T).
template <typename T>
NodeId loss_kd(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& be, NodeId be_node,
               std::span<const int> query_ids, std::span<const int> answer_ids,
               const Tensor<T>* teacher_logits, double tau);

// Prompt-tuning ablation: plain cross-entropy of the gold answer given
// [BE, q].
template <typename T>
NodeId loss_pt(Graph<T>& g, ModelGraph<T>& mg, const SoftToken<T>& be, NodeId be_node,
               std::span<const int> query_ids, std::span<const int> gold_ids);

// Combined objective: (1 - lambda) * recon + lambda * align.
template <typename T>
NodeId total_loss(Graph<T>& g, NodeId recon, NodeId align, double lambda);

}  // namespace betoken::training
