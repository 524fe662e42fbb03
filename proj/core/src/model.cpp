#include "sira/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sira/rng.hpp"

namespace sira {

namespace {

constexpr char kMagic[8] = {'S', 'I', 'R', 'A', 'T', 'O', 'Y', '1'};
constexpr float kRopeTheta = 10000.0f;

void fill_gaussian(Matrix& m, Rng& rng, float scale) {
  for (float& v : m.data) v = rng.gaussian() * scale;
}

void fill_ones(Matrix& m) {
  for (float& v : m.data) v = 1.0f;
}

/// Rotary encoding applied in place to one d-wide row, per head, pairing
/// adjacent lanes (2i, 2i+1) within each head slice.
void apply_rope(std::span<float> row, int position, int num_heads, int head_dim) {
  for (int h = 0; h < num_heads; ++h) {
    float* vec = row.data() + static_cast<size_t>(h) * head_dim;
    for (int i = 0; i + 1 < head_dim; i += 2) {
      const float freq = 1.0f / std::pow(kRopeTheta, static_cast<float>(i) / static_cast<float>(head_dim));
      const float angle = static_cast<float>(position) * freq;
      const float c = std::cos(angle);
      const float s = std::sin(angle);
      const float v0 = vec[i];
      const float v1 = vec[i + 1];
      vec[i] = v0 * c - v1 * s;
      vec[i + 1] = v0 * s + v1 * c;
    }
  }
}

bool row_fully_masked(std::span<const float> mask_row) {
  for (const float m : mask_row)
    if (!is_masked_value(m)) return false;
  return true;
}

}  // namespace

// ============================================================================
// Config / weights
// ============================================================================

void ModelConfig::validate() const {
  if (num_layers < 2) throw ConfigError("ModelConfig: num_layers must be >= 2");
  if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads != 0)
    throw ConfigError("ModelConfig: hidden_dim must be positive and divisible by num_heads");
  if (head_dim != hidden_dim / num_heads) throw ConfigError("ModelConfig: head_dim != hidden_dim / num_heads");
  if (mlp_dim <= 0) throw ConfigError("ModelConfig: mlp_dim must be positive");
  if (vocab_size < 4) throw ConfigError("ModelConfig: vocab_size must be >= 4");
  if (max_seq_len < 1) throw ConfigError("ModelConfig: max_seq_len must be >= 1");
  if (!(norm_eps > 0.0f)) throw ConfigError("ModelConfig: norm_eps must be positive");
}

std::vector<std::pair<std::string, Matrix*>> ToyModel::weight_entries() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerWeights& w = layers[l];
    out.emplace_back(p + "attn_norm_gain", &w.attn_norm_gain);
    out.emplace_back(p + "wq", &w.wq);
    out.emplace_back(p + "wk", &w.wk);
    out.emplace_back(p + "wv", &w.wv);
    out.emplace_back(p + "wo", &w.wo);
    out.emplace_back(p + "mlp_norm_gain", &w.mlp_norm_gain);
    out.emplace_back(p + "mlp_in", &w.mlp_in);
    out.emplace_back(p + "mlp_out", &w.mlp_out);
  }
  out.emplace_back("final_norm_gain", &final_norm_gain);
  out.emplace_back("output_projection", &output_projection);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ToyModel::weight_entries() const {
  auto mutable_entries = const_cast<ToyModel*>(this)->weight_entries();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mutable_entries.size());
  for (auto& [name, m] : mutable_entries) out.emplace_back(name, m);
  return out;
}

ToyModel init_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ToyModel model;
  model.config = config;
  Rng rng(seed);

  const int d = config.hidden_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));

  model.token_embedding = Matrix(config.vocab_size, d);
  fill_gaussian(model.token_embedding, rng, scale);

  model.layers.resize(static_cast<size_t>(config.num_layers));
  for (LayerWeights& w : model.layers) {
    w.attn_norm_gain = Matrix(1, d);
    fill_ones(w.attn_norm_gain);
    w.wq = Matrix(d, d);
    w.wk = Matrix(d, d);
    w.wv = Matrix(d, d);
    w.wo = Matrix(d, d);
    fill_gaussian(w.wq, rng, scale);
    fill_gaussian(w.wk, rng, scale);
    fill_gaussian(w.wv, rng, scale);
    fill_gaussian(w.wo, rng, scale);
    w.mlp_norm_gain = Matrix(1, d);
    fill_ones(w.mlp_norm_gain);
    w.mlp_in = Matrix(d, config.mlp_dim);
    w.mlp_out = Matrix(config.mlp_dim, d);
    fill_gaussian(w.mlp_in, rng, scale);
    fill_gaussian(w.mlp_out, rng, 1.0f / std::sqrt(static_cast<float>(config.mlp_dim)));
  }

  model.final_norm_gain = Matrix(1, d);
  fill_ones(model.final_norm_gain);
  model.output_projection = Matrix(config.vocab_size, d);
  fill_gaussian(model.output_projection, rng, scale);
  return model;
}

// ============================================================================
// Cache
// ============================================================================

LayerCache LayerCache::for_range(int layer_begin, int layer_end, int hidden_dim) {
  LayerCache c;
  c.first_layer = layer_begin;
  c.layers.resize(static_cast<size_t>(layer_end - layer_begin));
  for (KV& kv : c.layers) {
    kv.keys = Matrix(0, hidden_dim);
    kv.values = Matrix(0, hidden_dim);
  }
  return c;
}

void LayerCache::zero_rows(std::span<const int> positions) {
  for (KV& kv : layers) {
    for (const int p : positions) {
      if (p < 0 || p >= kv.keys.rows) throw ShapeError("zero_rows: position out of range");
      for (int c = 0; c < kv.keys.cols; ++c) {
        kv.keys.at(p, c) = 0.0f;
        kv.values.at(p, c) = 0.0f;
      }
    }
  }
}

// ============================================================================
// Forward
// ============================================================================

Matrix embed_tokens(const ToyModel& model, std::span<const int> tokens) {
  Matrix out(static_cast<int>(tokens.size()), model.config.hidden_dim);
  for (size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= model.config.vocab_size)
      throw ShapeError("embed_tokens: token id " + std::to_string(t) + " outside vocabulary");
    const auto src = model.token_embedding.row(t);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

Matrix forward_layers(const ToyModel& model, int layer_begin, int layer_end, Matrix hidden,
                      LayerCache& cache, const AdditiveMask& mask, std::span<const int> positions,
                      std::vector<std::vector<float>>* layer_capture) {
  const ModelConfig& cfg = model.config;
  if (layer_begin < 0 || layer_end > cfg.num_layers || layer_begin > layer_end)
    throw ShapeError("forward_layers: layer range out of bounds");
  if (layer_begin == layer_end) return hidden;

  const int n = hidden.rows;
  if (hidden.cols != cfg.hidden_dim) throw ShapeError("forward_layers: hidden width != hidden_dim");
  if (static_cast<int>(positions.size()) != n) throw ShapeError("forward_layers: positions/rows mismatch");
  if (cache.first_layer != layer_begin || cache.layer_count() != layer_end - layer_begin)
    throw ShapeError("forward_layers: cache does not cover the requested layer range");

  const int prior = cache.length();
  const int total = prior + n;
  if (mask.query_count != n || mask.key_count != total)
    throw ShapeError("forward_layers: mask must be n x (cache+n), got " +
                     std::to_string(mask.query_count) + " x " + std::to_string(mask.key_count));

  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));

  for (int layer = layer_begin; layer < layer_end; ++layer) {
    const LayerWeights& w = model.layers[static_cast<size_t>(layer)];
    LayerCache::KV& kv = cache.kv(layer);

    // --- attention ---
    Matrix normed(n, cfg.hidden_dim);
    for (int i = 0; i < n; ++i) {
      const auto nr = rms_normalize(hidden.row(i), w.attn_norm_gain.row(0), cfg.norm_eps);
      std::copy(nr.begin(), nr.end(), normed.row(i).begin());
    }
    Matrix q = matmul(normed, w.wq);
    Matrix k = matmul(normed, w.wk);
    Matrix v = matmul(normed, w.wv);
    for (int i = 0; i < n; ++i) {
      apply_rope(q.row(i), positions[static_cast<size_t>(i)], heads, hd);
      apply_rope(k.row(i), positions[static_cast<size_t>(i)], heads, hd);
      kv.keys.append_row(k.row(i));
      kv.values.append_row(v.row(i));
    }

    Matrix att(n, cfg.hidden_dim);
    std::vector<float> scores(static_cast<size_t>(total));
    for (int i = 0; i < n; ++i) {
      const auto mask_row = mask.row(i);
      if (row_fully_masked(mask_row)) continue;  // blanked query row: zero attention output
      for (int h = 0; h < heads; ++h) {
        const float* qh = q.row(i).data() + static_cast<size_t>(h) * hd;
        for (int j = 0; j < total; ++j) {
          const float* kh = kv.keys.row(j).data() + static_cast<size_t>(h) * hd;
          float acc = 0.0f;
          for (int c = 0; c < hd; ++c) acc += qh[c] * kh[c];
          scores[static_cast<size_t>(j)] = acc * att_scale;
        }
        const auto probs = softmax_row({scores.data(), static_cast<size_t>(total)}, mask_row);
        float* out = att.row(i).data() + static_cast<size_t>(h) * hd;
        for (int j = 0; j < total; ++j) {
          const float p = probs[static_cast<size_t>(j)];
          if (p == 0.0f) continue;
          const float* vh = kv.values.row(j).data() + static_cast<size_t>(h) * hd;
          for (int c = 0; c < hd; ++c) out[c] += p * vh[c];
        }
      }
    }
    Matrix att_proj = matmul(att, w.wo);
    for (size_t i = 0; i < hidden.data.size(); ++i) hidden.data[i] += att_proj.data[i];

    // --- mlp ---
    Matrix mnormed(n, cfg.hidden_dim);
    for (int i = 0; i < n; ++i) {
      const auto nr = rms_normalize(hidden.row(i), w.mlp_norm_gain.row(0), cfg.norm_eps);
      std::copy(nr.begin(), nr.end(), mnormed.row(i).begin());
    }
    Matrix up = matmul(mnormed, w.mlp_in);
    for (float& x : up.data) {
      const float sig = 1.0f / (1.0f + std::exp(-x));
      x = x * sig;  // silu
    }
    Matrix down = matmul(up, w.mlp_out);
    for (size_t i = 0; i < hidden.data.size(); ++i) hidden.data[i] += down.data[i];

    if (layer_capture) {
      const auto last = hidden.row(n - 1);
      layer_capture->emplace_back(last.begin(), last.end());
    }
  }
  return hidden;
}

std::vector<float> project_logits(const ToyModel& model, std::span<const float> hidden_last) {
  const ModelConfig& cfg = model.config;
  if (static_cast<int>(hidden_last.size()) != cfg.hidden_dim)
    throw ShapeError("project_logits: hidden state width != hidden_dim");
  const auto normed = rms_normalize(hidden_last, model.final_norm_gain.row(0), cfg.norm_eps);
  std::vector<float> logits(static_cast<size_t>(cfg.vocab_size));
  for (int v = 0; v < cfg.vocab_size; ++v) {
    const float* wrow = model.output_projection.row(v).data();
    float acc = 0.0f;
    for (int c = 0; c < cfg.hidden_dim; ++c) acc += wrow[c] * normed[static_cast<size_t>(c)];
    logits[static_cast<size_t>(v)] = acc;
  }
  return logits;
}

// ============================================================================
// Serialization
// ============================================================================

namespace {

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void save_model(const ToyModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_model: cannot open " + path);
  f.write(kMagic, 8);
  const ModelConfig& c = model.config;
  write_u32(f, static_cast<uint32_t>(c.num_layers));
  write_u32(f, static_cast<uint32_t>(c.hidden_dim));
  write_u32(f, static_cast<uint32_t>(c.num_heads));
  write_u32(f, static_cast<uint32_t>(c.head_dim));
  write_u32(f, static_cast<uint32_t>(c.mlp_dim));
  write_u32(f, static_cast<uint32_t>(c.vocab_size));
  write_u32(f, static_cast<uint32_t>(c.max_seq_len));
  uint32_t eps_bits = 0;
  std::memcpy(&eps_bits, &c.norm_eps, 4);
  write_u32(f, eps_bits);
  for (const auto& [name, m] : model.weight_entries()) {
    (void)name;
    f.write(reinterpret_cast<const char*>(m->data.data()),
            static_cast<std::streamsize>(m->data.size() * sizeof(float)));
  }
  if (!f) throw IoError("save_model: write failed for " + path);
}

ToyModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_model: cannot open " + path);
  char magic[8] = {};
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("load_model: bad magic header in " + path);

  ModelConfig c;
  c.num_layers = static_cast<int>(read_u32(f));
  c.hidden_dim = static_cast<int>(read_u32(f));
  c.num_heads = static_cast<int>(read_u32(f));
  c.head_dim = static_cast<int>(read_u32(f));
  c.mlp_dim = static_cast<int>(read_u32(f));
  c.vocab_size = static_cast<int>(read_u32(f));
  c.max_seq_len = static_cast<int>(read_u32(f));
  const uint32_t eps_bits = read_u32(f);
  std::memcpy(&c.norm_eps, &eps_bits, 4);
  if (!f) throw FormatError("load_model: truncated header in " + path);
  c.validate();

  ToyModel model = init_model(c, 0);  // allocates correct shapes
  for (const auto& [name, m] : model.weight_entries()) {
    f.read(reinterpret_cast<char*>(m->data.data()),
           static_cast<std::streamsize>(m->data.size() * sizeof(float)));
    if (!f) throw ShapeError("load_model: stored weights end before " + name);
  }
  f.peek();
  if (!f.eof()) throw ShapeError("load_model: trailing bytes after declared weights");
  return model;
}

uint64_t model_checksum(const ToyModel& model) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const void* bytes, size_t len) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const ModelConfig& c = model.config;
  const int32_t fields[7] = {c.num_layers, c.hidden_dim, c.num_heads, c.head_dim,
                             c.mlp_dim,    c.vocab_size, c.max_seq_len};
  mix(fields, sizeof(fields));
  mix(&c.norm_eps, sizeof(float));
  for (const auto& [name, m] : model.weight_entries()) {
    (void)name;
    mix(m->data.data(), m->data.size() * sizeof(float));
  }
  return h;
}

}  // namespace sira
