#include "betoken/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace betoken::model {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& os, int32_t v) { put_u32(os, static_cast<uint32_t>(v)); }

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<uint32_t>(v)); }

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

int32_t get_i32(std::istream& is) { return static_cast<int32_t>(get_u32(is)); }

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

void put_floats(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) put_f32(os, f);
}

void get_floats(std::istream& is, std::vector<float>& v) {
  for (auto& f : v) f = get_f32(is);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FrozenModelF& model,
                     std::span<const SoftTokenF> soft_tokens) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const ModelConfig& c = model.config();
  put_i32(os, c.d_model);
  put_i32(os, c.n_layers);
  put_i32(os, c.n_heads);
  put_i32(os, c.d_ff);
  put_i32(os, c.max_seq);
  put_i32(os, c.vocab_size);
  put_i32(os, model.frozen() ? 1 : 0);
  model.weights().for_each(
      [&os](const std::string&, const numcore::TensorF& t) { put_floats(os, t.data); });
  for (const auto& tok : soft_tokens) {
    if (tok.dim() != c.d_model) {
      throw InvalidArgumentError("checkpoint: soft token '" + tok.name + "' width mismatch");
    }
    for (int r = 0; r < tok.width(); ++r) {
      put_u32(os, static_cast<uint32_t>(tok.name.size()));
      os.write(tok.name.data(), static_cast<std::streamsize>(tok.name.size()));
      for (int cidx = 0; cidx < tok.dim(); ++cidx) put_f32(os, tok.embedding.at(r, cidx));
    }
  }
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  ModelConfig c;
  c.d_model = get_i32(is);
  c.n_layers = get_i32(is);
  c.n_heads = get_i32(is);
  c.d_ff = get_i32(is);
  c.max_seq = get_i32(is);
  c.vocab_size = get_i32(is);
  const bool frozen = get_i32(is) != 0;
  c.validate();

  Weights<float> w;
  auto tensor = [&is](std::vector<int> shape) {
    numcore::TensorF t(std::move(shape));
    get_floats(is, t.data);
    return t;
  };
  w.tok_emb = tensor({c.vocab_size, c.d_model});
  w.pos_emb = tensor({c.max_seq, c.d_model});
  for (int l = 0; l < c.n_layers; ++l) {
    LayerWeights<float> lw;
    lw.ln1_g = tensor({c.d_model});
    lw.ln1_b = tensor({c.d_model});
    lw.wq = tensor({c.d_model, c.d_model});
    lw.bq = tensor({c.d_model});
    lw.wk = tensor({c.d_model, c.d_model});
    lw.bk = tensor({c.d_model});
    lw.wv = tensor({c.d_model, c.d_model});
    lw.bv = tensor({c.d_model});
    lw.wo = tensor({c.d_model, c.d_model});
    lw.bo = tensor({c.d_model});
    lw.ln2_g = tensor({c.d_model});
    lw.ln2_b = tensor({c.d_model});
    lw.w_fc = tensor({c.d_model, c.d_ff});
    lw.b_fc = tensor({c.d_ff});
    lw.w_proj = tensor({c.d_ff, c.d_model});
    lw.b_proj = tensor({c.d_model});
    w.layers.push_back(std::move(lw));
  }
  w.ln_f_g = tensor({c.d_model});
  w.ln_f_b = tensor({c.d_model});
  w.lm_head = tensor({c.d_model, c.vocab_size});

  Checkpoint ckpt{FrozenModelF(c, std::move(w), frozen), {}};

  // Consecutive records sharing a name fold into one multi-row token.
  std::string pending_name;
  std::vector<float> pending_rows;
  auto flush = [&]() {
    if (pending_name.empty() && pending_rows.empty()) return;
    const int rows = static_cast<int>(pending_rows.size()) / c.d_model;
    ckpt.soft_tokens.emplace_back(
        pending_name, numcore::TensorF::from({rows, c.d_model}, std::move(pending_rows)));
    pending_rows = {};
    pending_name.clear();
  };
  while (true) {
    is.peek();
    if (is.eof()) break;
    if (!is) throw IoError("checkpoint: read failed: " + path.string());
    const uint32_t name_len = get_u32(is);
    if (name_len == 0 || name_len > 256) throw IoError("checkpoint: bad soft-token name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint: truncated soft-token record");
    if (name != pending_name) {
      flush();
      pending_name = name;
    }
    const size_t off = pending_rows.size();
    pending_rows.resize(off + static_cast<size_t>(c.d_model));
    for (int i = 0; i < c.d_model; ++i) pending_rows[off + i] = get_f32(is);
  }
  flush();
  return ckpt;
}

}  // namespace betoken::model
