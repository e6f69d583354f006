#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "betoken/errors.hpp"
#include "betoken/graph.hpp"
#include "betoken/rng.hpp"
#include "betoken/tensor.hpp"
#include "betoken/vocab.hpp"

namespace betoken::model {

using numcore::Graph;
using numcore::NodeId;
using numcore::Tensor;

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq = 256;
  int vocab_size = 0;

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq <= 0 ||
        vocab_size <= 0) {
      throw InvalidArgumentError("model config: all extents must be positive");
    }
    if (d_model % n_heads != 0) {
      throw InvalidArgumentError("model config: d_model must be divisible by n_heads");
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> w_fc, b_fc, w_proj, b_proj;
};

// All transformer parameters. Traversal order below is the documented
// parameter order for checkpoints, checksums and the optimizer.
template <typename T>
struct Weights {
  Tensor<T> tok_emb;  // [V, d]
  Tensor<T> pos_emb;  // [max_seq, d]
  std::vector<LayerWeights<T>> layers;
  Tensor<T> ln_f_g, ln_f_b;
  Tensor<T> lm_head;  // [d, V]

  template <typename Self, typename Fn>
  static void visit(Self& w, Fn&& fn) {
    fn("tok_emb", w.tok_emb);
    fn("pos_emb", w.pos_emb);
    for (size_t l = 0; l < w.layers.size(); ++l) {
      auto& lw = w.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      fn(p + "ln1_g", lw.ln1_g);
      fn(p + "ln1_b", lw.ln1_b);
      fn(p + "wq", lw.wq);
      fn(p + "bq", lw.bq);
      fn(p + "wk", lw.wk);
      fn(p + "bk", lw.bk);
      fn(p + "wv", lw.wv);
      fn(p + "bv", lw.bv);
      fn(p + "wo", lw.wo);
      fn(p + "bo", lw.bo);
      fn(p + "ln2_g", lw.ln2_g);
      fn(p + "ln2_b", lw.ln2_b);
      fn(p + "w_fc", lw.w_fc);
      fn(p + "b_fc", lw.b_fc);
      fn(p + "w_proj", lw.w_proj);
      fn(p + "b_proj", lw.b_proj);
    }
    fn("ln_f_g", w.ln_f_g);
    fn("ln_f_b", w.ln_f_b);
    fn("lm_head", w.lm_head);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }
};

// A single trainable embedding block spliced into input sequences by name.
// Canonical names are "AE" and "BE"; width > 1 covers multi-row soft prompts.
template <typename T>
struct SoftToken {
  std::string name;
  Tensor<T> embedding;  // [width, d_model]
  bool trainable = true;

  SoftToken() = default;
  SoftToken(std::string n, Tensor<T> e) : name(std::move(n)), embedding(std::move(e)) {
    if (embedding.rank() != 2) throw InvalidArgumentError("soft token: embedding must be [width, d]");
  }

  int width() const { return embedding.shape[0]; }
  int dim() const { return embedding.shape[1]; }

  static SoftToken gaussian_init(std::string name, int width, int d_model, RngStream& rng,
                                 double sd = 0.02) {
    Tensor<T> e({width, d_model});
    for (auto& v : e.data) v = static_cast<T>(rng.normal(0.0, sd));
    return SoftToken(std::move(name), std::move(e));
  }
};

// Ordered mix of hard token ids and soft-token references.
template <typename T>
class MixedSequence {
 public:
  struct Item {
    int token = -1;
    const SoftToken<T>* soft = nullptr;
  };

  MixedSequence() = default;

  static MixedSequence hard(std::span<const int> ids) {
    MixedSequence s;
    for (int id : ids) s.push_token(id);
    return s;
  }

  void push_token(int id) {
    if (id < 0) throw InvalidArgumentError("mixed sequence: negative token id");
    items_.push_back({id, nullptr});
    ++length_;
  }

  void push_tokens(std::span<const int> ids) {
    for (int id : ids) push_token(id);
  }

  void push_soft(const SoftToken<T>* t) {
    if (!t) throw InvalidArgumentError("mixed sequence: null soft token");
    items_.push_back({-1, t});
    length_ += t->width();
  }

  const std::vector<Item>& items() const { return items_; }
  int length() const { return length_; }
  bool has_soft() const {
    for (const auto& it : items_) {
      if (it.soft) return true;
    }
    return false;
  }

  // At most one AE and one BE reference; hard ids within the vocabulary.
  void validate(const ModelConfig& cfg) const {
    int ae = 0, be = 0;
    for (const auto& it : items_) {
      if (it.soft) {
        if (it.soft->name == "AE") ++ae;
        if (it.soft->name == "BE") ++be;
        if (it.soft->dim() != cfg.d_model) {
          throw InvalidArgumentError("mixed sequence: soft token width " +
                                     std::to_string(it.soft->dim()) + " != d_model");
        }
      } else if (it.token >= cfg.vocab_size) {
        throw InvalidArgumentError("mixed sequence: token id " + std::to_string(it.token) +
                                   " outside vocabulary");
      }
    }
    if (ae > 1 || be > 1) {
      throw InvalidArgumentError("mixed sequence: at most one AE and one BE reference allowed");
    }
    if (length_ > cfg.max_seq) {
      throw InvalidArgumentError("mixed sequence: length " + std::to_string(length_) +
                                 " exceeds max_seq " + std::to_string(cfg.max_seq));
    }
  }

 private:
  std::vector<Item> items_;
  int length_ = 0;
};

// The tiny causal transformer. After freeze() the parameters never change;
// every training entry point asserts the checksum before and after.
template <typename T>
class FrozenModel {
 public:
  FrozenModel() = default;
  FrozenModel(ModelConfig cfg, Weights<T> w, bool frozen)
      : config_(cfg), weights_(std::move(w)), frozen_(frozen) {
    cfg.validate();
  }

  static FrozenModel random_init(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Weights<T>& weights() const { return weights_; }
  Weights<T>& mutable_weights() {
    if (frozen_) throw InvariantViolationError("model: attempt to mutate frozen weights");
    return weights_;
  }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  uint64_t theta_checksum() const;

  template <typename U>
  FrozenModel<U> cast() const {
    Weights<U> w;
    w.tok_emb = weights_.tok_emb.template cast<U>();
    w.pos_emb = weights_.pos_emb.template cast<U>();
    for (const auto& l : weights_.layers) {
      LayerWeights<U> o;
      o.ln1_g = l.ln1_g.template cast<U>();
      o.ln1_b = l.ln1_b.template cast<U>();
      o.wq = l.wq.template cast<U>();
      o.bq = l.bq.template cast<U>();
      o.wk = l.wk.template cast<U>();
      o.bk = l.bk.template cast<U>();
      o.wv = l.wv.template cast<U>();
      o.bv = l.bv.template cast<U>();
      o.wo = l.wo.template cast<U>();
      o.bo = l.bo.template cast<U>();
      o.ln2_g = l.ln2_g.template cast<U>();
      o.ln2_b = l.ln2_b.template cast<U>();
      o.w_fc = l.w_fc.template cast<U>();
      o.b_fc = l.b_fc.template cast<U>();
      o.w_proj = l.w_proj.template cast<U>();
      o.b_proj = l.b_proj.template cast<U>();
      w.layers.push_back(std::move(o));
    }
    w.ln_f_g = weights_.ln_f_g.template cast<U>();
    w.ln_f_b = weights_.ln_f_b.template cast<U>();
    w.lm_head = weights_.lm_head.template cast<U>();
    return FrozenModel<U>(config_, std::move(w), frozen_);
  }

 private:
  ModelConfig config_;
  Weights<T> weights_;
  bool frozen_ = false;
};

// Binds model weights into a graph once (as constants when frozen, as params
// when pretraining) and builds forward passes over mixed sequences. Several
// sequences may share one binder within a graph; their weight gradients
// accumulate.
template <typename T>
class ModelGraph {
 public:
  struct SoftBinding {
    const SoftToken<T>* token;
    NodeId node;
  };
  struct ParamBinding {
    Tensor<T>* target;
    NodeId node;
  };

  // Frozen binding: weights enter as constants, no weight gradients exist.
  ModelGraph(Graph<T>& g, const FrozenModel<T>& m);
  // Trainable binding for base pretraining; rejects frozen models.
  ModelGraph(Graph<T>& g, FrozenModel<T>& m, bool trainable);

  // Splices soft tokens at their positions (no embedding-table lookup) and
  // returns the [len, V] logits node, or [1, V] with last_only.
  NodeId logits(const MixedSequence<T>& seq, std::span<const SoftBinding> soft = {},
                bool last_only = false);

  NodeId bind_soft(const SoftToken<T>* t) { return g_->param(&t->embedding); }

  const FrozenModel<T>& model() const { return *model_; }
  const std::vector<ParamBinding>& param_bindings() const { return params_; }

 private:
  void bind(bool trainable, FrozenModel<T>* mutable_model);
  NodeId weight_node(const Tensor<T>* w, bool trainable, Tensor<T>* target);

  Graph<T>* g_;
  const FrozenModel<T>* model_;
  std::vector<ParamBinding> params_;

  NodeId tok_emb_ = -1, pos_emb_ = -1;
  struct LayerNodes {
    NodeId ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  std::vector<LayerNodes> layers_;
  NodeId ln_f_g_ = -1, ln_f_b_ = -1, lm_head_ = -1;
};

struct GenerateOptions {
  bool greedy = true;
  double temperature = 1.0;
  uint64_t seed = 0;
};

// Plain forward pass (no gradients). Causal: row i depends only on items <= i.
template <typename T>
Tensor<T> forward_logits(const FrozenModel<T>& m, const MixedSequence<T>& seq);

// Greedy or seeded sampling from the prefix; stops after emitting EOS or after
// max_new tokens. The returned ids include the terminating EOS when produced.
template <typename T>
std::vector<int> generate(const FrozenModel<T>& m, const MixedSequence<T>& prefix, int max_new,
                          const GenerateOptions& opt = {});

// Gradient of a caller-built scalar loss with respect to every soft token in
// the sequence. theta stays untouched (asserted by checksum).
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> input_gradient(
    const FrozenModel<T>& m, const MixedSequence<T>& seq,
    const std::type_identity_t<std::function<NodeId(Graph<T>&, NodeId)>>& loss_builder);

// Chat framing: role separators are single reserved tokens and the system
// span carries either the prompt text or its soft replacement.
std::vector<int> chat_tokens(std::span<const int> prompt_ids, std::span<const int> query_ids);

template <typename T>
MixedSequence<T> chat_soft(const SoftToken<T>* system_token, std::span<const int> query_ids);

using FrozenModelF = FrozenModel<float>;
using FrozenModelD = FrozenModel<double>;
using SoftTokenF = SoftToken<float>;

}  // namespace betoken::model
