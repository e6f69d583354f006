#include "betoken/model.hpp"

#include <algorithm>
#include <cmath>

namespace betoken::model {

template <typename T>
FrozenModel<T> FrozenModel<T>::random_init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  RngStream rng = RngStream::substream(seed, seeds::kInit);
  const double sd = 0.02;
  // Residual projections are scaled down with depth, GPT-2 style.
  const double proj_sd = sd / std::sqrt(2.0 * cfg.n_layers);

  auto normal = [&rng](std::vector<int> shape, double s) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, s));
    return t;
  };
  auto zeros = [](std::vector<int> shape) { return Tensor<T>(std::move(shape)); };
  auto ones = [](std::vector<int> shape) { return Tensor<T>(std::move(shape), T(1)); };

  Weights<T> w;
  w.tok_emb = normal({cfg.vocab_size, cfg.d_model}, sd);
  w.pos_emb = normal({cfg.max_seq, cfg.d_model}, sd);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWeights<T> lw;
    lw.ln1_g = ones({cfg.d_model});
    lw.ln1_b = zeros({cfg.d_model});
    lw.wq = normal({cfg.d_model, cfg.d_model}, sd);
    lw.bq = zeros({cfg.d_model});
    lw.wk = normal({cfg.d_model, cfg.d_model}, sd);
    lw.bk = zeros({cfg.d_model});
    lw.wv = normal({cfg.d_model, cfg.d_model}, sd);
    lw.bv = zeros({cfg.d_model});
    lw.wo = normal({cfg.d_model, cfg.d_model}, proj_sd);
    lw.bo = zeros({cfg.d_model});
    lw.ln2_g = ones({cfg.d_model});
    lw.ln2_b = zeros({cfg.d_model});
    lw.w_fc = normal({cfg.d_model, cfg.d_ff}, sd);
    lw.b_fc = zeros({cfg.d_ff});
    lw.w_proj = normal({cfg.d_ff, cfg.d_model}, proj_sd);
    lw.b_proj = zeros({cfg.d_model});
    w.layers.push_back(std::move(lw));
  }
  w.ln_f_g = ones({cfg.d_model});
  w.ln_f_b = zeros({cfg.d_model});
  w.lm_head = normal({cfg.d_model, cfg.vocab_size}, sd);
  return FrozenModel<T>(cfg, std::move(w), false);
}

template <typename T>
uint64_t FrozenModel<T>::theta_checksum() const {
  uint64_t h = kFnvOffset;
  weights_.for_each([&h](const std::string&, const Tensor<T>& t) {
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(T), h);
  });
  return h;
}

// --- ModelGraph ---------------------------------------------------------------

template <typename T>
ModelGraph<T>::ModelGraph(Graph<T>& g, const FrozenModel<T>& m) : g_(&g), model_(&m) {
  bind(false, nullptr);
}

template <typename T>
ModelGraph<T>::ModelGraph(Graph<T>& g, FrozenModel<T>& m, bool trainable) : g_(&g), model_(&m) {
  if (trainable && m.frozen()) {
    throw InvariantViolationError("model graph: frozen model cannot be bound as trainable");
  }
  bind(trainable, &m);
}

template <typename T>
NodeId ModelGraph<T>::weight_node(const Tensor<T>* w, bool trainable, Tensor<T>* target) {
  if (!trainable) return g_->constant(w);
  const NodeId id = g_->param(w);
  params_.push_back({target, id});
  return id;
}

template <typename T>
void ModelGraph<T>::bind(bool trainable, FrozenModel<T>* mutable_model) {
  const Weights<T>& w = model_->weights();
  Weights<T>* mw = (mutable_model && trainable) ? &mutable_model->mutable_weights() : nullptr;

  auto mk = [&](const Tensor<T>& cref, Tensor<T>* mref) {
    return weight_node(&cref, trainable, mref);
  };

  tok_emb_ = mk(w.tok_emb, mw ? &mw->tok_emb : nullptr);
  pos_emb_ = mk(w.pos_emb, mw ? &mw->pos_emb : nullptr);
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights<T>& lw = w.layers[l];
    LayerWeights<T>* ml = mw ? &mw->layers[l] : nullptr;
    LayerNodes n;
    n.ln1_g = mk(lw.ln1_g, ml ? &ml->ln1_g : nullptr);
    n.ln1_b = mk(lw.ln1_b, ml ? &ml->ln1_b : nullptr);
    n.wq = mk(lw.wq, ml ? &ml->wq : nullptr);
    n.bq = mk(lw.bq, ml ? &ml->bq : nullptr);
    n.wk = mk(lw.wk, ml ? &ml->wk : nullptr);
    n.bk = mk(lw.bk, ml ? &ml->bk : nullptr);
    n.wv = mk(lw.wv, ml ? &ml->wv : nullptr);
    n.bv = mk(lw.bv, ml ? &ml->bv : nullptr);
    n.wo = mk(lw.wo, ml ? &ml->wo : nullptr);
    n.bo = mk(lw.bo, ml ? &ml->bo : nullptr);
    n.ln2_g = mk(lw.ln2_g, ml ? &ml->ln2_g : nullptr);
    n.ln2_b = mk(lw.ln2_b, ml ? &ml->ln2_b : nullptr);
    n.w_fc = mk(lw.w_fc, ml ? &ml->w_fc : nullptr);
    n.b_fc = mk(lw.b_fc, ml ? &ml->b_fc : nullptr);
    n.w_proj = mk(lw.w_proj, ml ? &ml->w_proj : nullptr);
    n.b_proj = mk(lw.b_proj, ml ? &ml->b_proj : nullptr);
    layers_.push_back(n);
  }
  ln_f_g_ = mk(w.ln_f_g, mw ? &mw->ln_f_g : nullptr);
  ln_f_b_ = mk(w.ln_f_b, mw ? &mw->ln_f_b : nullptr);
  lm_head_ = mk(w.lm_head, mw ? &mw->lm_head : nullptr);
}

template <typename T>
NodeId ModelGraph<T>::logits(const MixedSequence<T>& seq, std::span<const SoftBinding> soft,
                             bool last_only) {
  const ModelConfig& cfg = model_->config();
  seq.validate(cfg);
  const int len = seq.length();
  if (len == 0) throw InvalidArgumentError("forward: empty sequence");

  std::vector<std::pair<NodeId, int>> rows;
  rows.reserve(len);
  for (const auto& item : seq.items()) {
    if (!item.soft) {
      rows.emplace_back(tok_emb_, item.token);
      continue;
    }
    NodeId soft_node = -1;
    for (const auto& b : soft) {
      if (b.token == item.soft) {
        soft_node = b.node;
        break;
      }
    }
    // Unbound soft tokens contribute their current embedding as a constant.
    if (soft_node < 0) soft_node = g_->constant(&item.soft->embedding);
    for (int r = 0; r < item.soft->width(); ++r) rows.emplace_back(soft_node, r);
  }

  Graph<T>& g = *g_;
  NodeId x = g.add(g.gather_rows(rows), g.row_slice(pos_emb_, 0, len));
  for (const LayerNodes& n : layers_) {
    NodeId h = g.layer_norm(x, n.ln1_g, n.ln1_b);
    NodeId q = g.matmul_bias(h, n.wq, n.bq);
    NodeId k = g.matmul_bias(h, n.wk, n.bk);
    NodeId v = g.matmul_bias(h, n.wv, n.bv);
    NodeId a = g.causal_attention(q, k, v, cfg.n_heads);
    x = g.add(x, g.matmul_bias(a, n.wo, n.bo));
    NodeId h2 = g.layer_norm(x, n.ln2_g, n.ln2_b);
    NodeId u = g.gelu(g.matmul_bias(h2, n.w_fc, n.b_fc));
    x = g.add(x, g.matmul_bias(u, n.w_proj, n.b_proj));
  }
  NodeId xf = g.layer_norm(x, ln_f_g_, ln_f_b_);
  if (last_only) xf = g.row_slice(xf, len - 1, 1);
  return g.matmul(xf, lm_head_);
}

// --- free functions -------------------------------------------------------------

template <typename T>
Tensor<T> forward_logits(const FrozenModel<T>& m, const MixedSequence<T>& seq) {
  Graph<T> g;
  ModelGraph<T> mg(g, m);
  return g.val(mg.logits(seq));
}

template <typename T>
std::vector<int> generate(const FrozenModel<T>& m, const MixedSequence<T>& prefix, int max_new,
                          const GenerateOptions& opt) {
  if (prefix.length() == 0) throw InvalidArgumentError("generate: empty prefix");
  if (max_new < 0) throw InvalidArgumentError("generate: negative max_new");
  if (prefix.length() + max_new > m.config().max_seq) {
    throw InvalidArgumentError("generate: prefix length + max_new exceeds max_seq");
  }
  RngStream rng(opt.seed);
  MixedSequence<T> seq = prefix;
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    Graph<T> g;
    ModelGraph<T> mg(g, m);
    const Tensor<T>& logits = g.val(mg.logits(seq, {}, /*last_only=*/true));
    const int vocab = logits.cols();
    int next;
    if (opt.greedy) {
      next = 0;
      for (int c = 1; c < vocab; ++c) {
        if (logits.data[c] > logits.data[next]) next = c;
      }
    } else {
      if (!(opt.temperature > 0)) throw InvalidArgumentError("generate: temperature must be positive");
      // Tempered softmax, then inverse-CDF sampling from our own stream.
      double mx = logits.data[0];
      for (int c = 1; c < vocab; ++c) mx = std::max(mx, static_cast<double>(logits.data[c]));
      std::vector<double> probs(vocab);
      double denom = 0;
      for (int c = 0; c < vocab; ++c) {
        probs[c] = std::exp((static_cast<double>(logits.data[c]) - mx) / opt.temperature);
        denom += probs[c];
      }
      const double u = rng.next_unit() * denom;
      double acc = 0;
      next = vocab - 1;
      for (int c = 0; c < vocab; ++c) {
        acc += probs[c];
        if (u < acc) {
          next = c;
          break;
        }
      }
    }
    out.push_back(next);
    seq.push_token(next);
    if (next == Vocab::kEos) break;
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> input_gradient(
    const FrozenModel<T>& m, const MixedSequence<T>& seq,
    const std::type_identity_t<std::function<NodeId(Graph<T>&, NodeId)>>& loss_builder) {
  if (!seq.has_soft()) {
    throw InvalidArgumentError("input_gradient: sequence contains no soft token");
  }
  const uint64_t checksum_before = m.theta_checksum();
  Graph<T> g;
  ModelGraph<T> mg(g, m);
  std::vector<typename ModelGraph<T>::SoftBinding> bindings;
  std::vector<std::string> names;
  for (const auto& item : seq.items()) {
    if (!item.soft) continue;
    bindings.push_back({item.soft, mg.bind_soft(item.soft)});
    names.push_back(item.soft->name);
  }
  const NodeId logits = mg.logits(seq, bindings);
  const NodeId loss = loss_builder(g, logits);
  g.backward(loss);
  std::vector<std::pair<std::string, Tensor<T>>> grads;
  for (size_t i = 0; i < bindings.size(); ++i) {
    grads.emplace_back(names[i], g.grad(bindings[i].node));
  }
  if (m.theta_checksum() != checksum_before) {
    throw InvariantViolationError("input_gradient: frozen parameters changed");
  }
  return grads;
}

std::vector<int> chat_tokens(std::span<const int> prompt_ids, std::span<const int> query_ids) {
  std::vector<int> seq;
  seq.reserve(prompt_ids.size() + query_ids.size() + 3);
  seq.push_back(Vocab::kSys);
  seq.insert(seq.end(), prompt_ids.begin(), prompt_ids.end());
  seq.push_back(Vocab::kUsr);
  seq.insert(seq.end(), query_ids.begin(), query_ids.end());
  seq.push_back(Vocab::kAsst);
  return seq;
}

template <typename T>
MixedSequence<T> chat_soft(const SoftToken<T>* system_token, std::span<const int> query_ids) {
  MixedSequence<T> seq;
  seq.push_token(Vocab::kSys);
  if (system_token) seq.push_soft(system_token);
  seq.push_token(Vocab::kUsr);
  seq.push_tokens(query_ids);
  seq.push_token(Vocab::kAsst);
  return seq;
}

template class FrozenModel<float>;
template class FrozenModel<double>;
template class ModelGraph<float>;
template class ModelGraph<double>;
template Tensor<float> forward_logits(const FrozenModel<float>&, const MixedSequence<float>&);
template Tensor<double> forward_logits(const FrozenModel<double>&, const MixedSequence<double>&);
template std::vector<int> generate(const FrozenModel<float>&, const MixedSequence<float>&, int,
                                   const GenerateOptions&);
template std::vector<int> generate(const FrozenModel<double>&, const MixedSequence<double>&, int,
                                   const GenerateOptions&);
template std::vector<std::pair<std::string, Tensor<float>>> input_gradient(
    const FrozenModel<float>&, const MixedSequence<float>&,
    const std::type_identity_t<std::function<NodeId(Graph<float>&, NodeId)>>&);
template std::vector<std::pair<std::string, Tensor<double>>> input_gradient(
    const FrozenModel<double>&, const MixedSequence<double>&,
    const std::type_identity_t<std::function<NodeId(Graph<double>&, NodeId)>>&);
template MixedSequence<float> chat_soft(const SoftToken<float>*, std::span<const int>);
template MixedSequence<double> chat_soft(const SoftToken<double>*, std::span<const int>);

}  // namespace betoken::model
