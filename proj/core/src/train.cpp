#include "sira/train.hpp"

#include <cmath>

#include "sira/rng.hpp"

namespace sira {

namespace {

constexpr float kRopeTheta = 10000.0f;

// dX(n x in) = dY(n x out) * W^T, with W stored (in x out).
Matrix mul_wt(const Matrix& dy, const Matrix& w) {
  Matrix dx(dy.rows, w.rows);
  for (int i = 0; i < dy.rows; ++i)
    for (int c = 0; c < w.rows; ++c) {
      float acc = 0.0f;
      for (int o = 0; o < w.cols; ++o) acc += dy.at(i, o) * w.at(c, o);
      dx.at(i, c) = acc;
    }
  return dx;
}

// dW(in x out) += X^T(n x in)^T * dY(n x out).
void accum_weight(Matrix& dw, const Matrix& x, const Matrix& dy) {
  for (int i = 0; i < x.rows; ++i)
    for (int c = 0; c < x.cols; ++c) {
      const float xv = x.at(i, c);
      if (xv == 0.0f) continue;
      for (int o = 0; o < dy.cols; ++o) dw.at(c, o) += xv * dy.at(i, o);
    }
}

void rope_rotate(std::span<float> row, int position, int num_heads, int head_dim, bool inverse) {
  for (int h = 0; h < num_heads; ++h) {
    float* vec = row.data() + static_cast<size_t>(h) * head_dim;
    for (int i = 0; i + 1 < head_dim; i += 2) {
      const float freq = 1.0f / std::pow(kRopeTheta, static_cast<float>(i) / static_cast<float>(head_dim));
      const float angle = static_cast<float>(position) * freq;
      const float c = std::cos(angle);
      const float s = inverse ? -std::sin(angle) : std::sin(angle);
      const float v0 = vec[i];
      const float v1 = vec[i + 1];
      vec[i] = v0 * c - v1 * s;
      vec[i + 1] = v0 * s + v1 * c;
    }
  }
}

struct NormCache {
  std::vector<float> inv_rms;  // per row
  Matrix normed;               // includes gain
};

NormCache rms_forward(const Matrix& x, const Matrix& gain, float eps) {
  NormCache nc;
  nc.inv_rms.resize(static_cast<size_t>(x.rows));
  nc.normed = Matrix(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    float sumsq = 0.0f;
    for (int c = 0; c < x.cols; ++c) sumsq += x.at(i, c) * x.at(i, c);
    const float inv = 1.0f / std::sqrt(sumsq / static_cast<float>(x.cols) + eps);
    nc.inv_rms[static_cast<size_t>(i)] = inv;
    for (int c = 0; c < x.cols; ++c) nc.normed.at(i, c) = x.at(i, c) * inv * gain.at(0, c);
  }
  return nc;
}

// Backward of y = rms(x) * gain. Accumulates dgain; adds input grads into dx.
void rms_backward(const Matrix& x, const Matrix& gain, const NormCache& nc, const Matrix& dy,
                  Matrix& dx, Matrix& dgain) {
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const float inv = nc.inv_rms[static_cast<size_t>(i)];
    float inner = 0.0f;  // sum_j dy_j * g_j * x_j
    for (int c = 0; c < d; ++c) {
      dgain.at(0, c) += dy.at(i, c) * x.at(i, c) * inv;
      inner += dy.at(i, c) * gain.at(0, c) * x.at(i, c);
    }
    const float k = inv * inv * inv * inner / static_cast<float>(d);
    for (int c = 0; c < d; ++c)
      dx.at(i, c) += dy.at(i, c) * gain.at(0, c) * inv - x.at(i, c) * k;
  }
}

struct LayerActs {
  Matrix x_in;       // hidden entering the block
  NormCache anorm;
  Matrix q, k, v;    // q, k post-rope
  std::vector<Matrix> probs;  // per head, n x n lower-tri
  Matrix attn_out;   // pre-Wo concat
  Matrix x_mid;      // after attention residual
  NormCache mnorm;
  Matrix mlp_pre;    // before activation
  Matrix mlp_act;    // silu output
};

struct ForwardActs {
  Matrix emb;
  std::vector<LayerActs> layers;
  Matrix x_final;
  NormCache fnorm;
  Matrix logits;  // n x V
};

ForwardActs forward_for_training(const ToyModel& model, std::span<const int> tokens) {
  const ModelConfig& cfg = model.config;
  const int n = static_cast<int>(tokens.size());
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  ForwardActs acts;
  acts.emb = embed_tokens(model, tokens);
  Matrix h = acts.emb;

  acts.layers.resize(static_cast<size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& w = model.layers[static_cast<size_t>(l)];
    LayerActs& a = acts.layers[static_cast<size_t>(l)];
    a.x_in = h;

    a.anorm = rms_forward(h, w.attn_norm_gain, cfg.norm_eps);
    a.q = matmul(a.anorm.normed, w.wq);
    a.k = matmul(a.anorm.normed, w.wk);
    a.v = matmul(a.anorm.normed, w.wv);
    for (int i = 0; i < n; ++i) {
      rope_rotate(a.q.row(i), i, heads, hd, false);
      rope_rotate(a.k.row(i), i, heads, hd, false);
    }

    a.attn_out = Matrix(n, cfg.hidden_dim);
    a.probs.assign(static_cast<size_t>(heads), Matrix(n, n));
    for (int hh = 0; hh < heads; ++hh) {
      Matrix& p = a.probs[static_cast<size_t>(hh)];
      for (int i = 0; i < n; ++i) {
        const float* qh = a.q.row(i).data() + static_cast<size_t>(hh) * hd;
        float maxs = 0.0f;
        std::vector<float> s(static_cast<size_t>(i) + 1);
        for (int j = 0; j <= i; ++j) {
          const float* kh = a.k.row(j).data() + static_cast<size_t>(hh) * hd;
          float acc = 0.0f;
          for (int c = 0; c < hd; ++c) acc += qh[c] * kh[c];
          s[static_cast<size_t>(j)] = acc * scale;
          if (j == 0 || s[static_cast<size_t>(j)] > maxs) maxs = s[static_cast<size_t>(j)];
        }
        float denom = 0.0f;
        for (int j = 0; j <= i; ++j) {
          s[static_cast<size_t>(j)] = std::exp(s[static_cast<size_t>(j)] - maxs);
          denom += s[static_cast<size_t>(j)];
        }
        float* out = a.attn_out.row(i).data() + static_cast<size_t>(hh) * hd;
        for (int j = 0; j <= i; ++j) {
          const float pv = s[static_cast<size_t>(j)] / denom;
          p.at(i, j) = pv;
          const float* vh = a.v.row(j).data() + static_cast<size_t>(hh) * hd;
          for (int c = 0; c < hd; ++c) out[c] += pv * vh[c];
        }
      }
    }

    Matrix proj = matmul(a.attn_out, w.wo);
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += proj.data[i];
    a.x_mid = h;

    a.mnorm = rms_forward(h, w.mlp_norm_gain, cfg.norm_eps);
    a.mlp_pre = matmul(a.mnorm.normed, w.mlp_in);
    a.mlp_act = a.mlp_pre;
    for (float& x : a.mlp_act.data) {
      const float sig = 1.0f / (1.0f + std::exp(-x));
      x = x * sig;
    }
    Matrix down = matmul(a.mlp_act, w.mlp_out);
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += down.data[i];
  }

  acts.x_final = h;
  acts.fnorm = rms_forward(h, model.final_norm_gain, cfg.norm_eps);
  acts.logits = Matrix(n, cfg.vocab_size);
  for (int i = 0; i < n; ++i) {
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
      const float* wrow = model.output_projection.row(vtok).data();
      float acc = 0.0f;
      for (int c = 0; c < cfg.hidden_dim; ++c) acc += wrow[c] * acts.fnorm.normed.at(i, c);
      acts.logits.at(i, vtok) = acc;
    }
  }
  return acts;
}

struct GradIndex {
  Matrix* embedding = nullptr;
  struct Layer {
    Matrix *attn_norm_gain, *wq, *wk, *wv, *wo, *mlp_norm_gain, *mlp_in, *mlp_out;
  };
  std::vector<Layer> layers;
  Matrix* final_norm_gain = nullptr;
  Matrix* output_projection = nullptr;
};

GradIndex index_grads(ModelGrads& g, int num_layers) {
  GradIndex gi;
  size_t i = 0;
  gi.embedding = &g.by_index(i++);
  gi.layers.resize(static_cast<size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) {
    GradIndex::Layer& gl = gi.layers[static_cast<size_t>(l)];
    gl.attn_norm_gain = &g.by_index(i++);
    gl.wq = &g.by_index(i++);
    gl.wk = &g.by_index(i++);
    gl.wv = &g.by_index(i++);
    gl.wo = &g.by_index(i++);
    gl.mlp_norm_gain = &g.by_index(i++);
    gl.mlp_in = &g.by_index(i++);
    gl.mlp_out = &g.by_index(i++);
  }
  gi.final_norm_gain = &g.by_index(i++);
  gi.output_projection = &g.by_index(i++);
  return gi;
}

/// Cross-entropy over the answer region, gradients scaled by inv_total_tokens
/// and accumulated into gi. Returns the unnormalized summed loss.
double backward_example(const ToyModel& model, const Example& ex, const ForwardActs& acts,
                        float inv_total_tokens, GradIndex& gi) {
  const ModelConfig& cfg = model.config;
  const std::vector<int> tokens = ex.training_tokens();
  const int n = static_cast<int>(tokens.size());
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  // --- loss and dlogits ---
  double loss = 0.0;
  Matrix dlogits(n, cfg.vocab_size);
  const int first_pred = ex.answer_begin() - 1;  // predicts the first answer token
  for (int i = first_pred; i < n - 1; ++i) {
    const int target = tokens[static_cast<size_t>(i) + 1];
    float maxv = acts.logits.at(i, 0);
    for (int vtok = 1; vtok < cfg.vocab_size; ++vtok) maxv = std::max(maxv, acts.logits.at(i, vtok));
    float denom = 0.0f;
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok)
      denom += std::exp(acts.logits.at(i, vtok) - maxv);
    const float log_denom = std::log(denom);
    loss += -static_cast<double>(acts.logits.at(i, target) - maxv - log_denom);
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
      const float p = std::exp(acts.logits.at(i, vtok) - maxv) / denom;
      dlogits.at(i, vtok) = (p - (vtok == target ? 1.0f : 0.0f)) * inv_total_tokens;
    }
  }

  // --- output projection and final norm ---
  Matrix dfn(n, cfg.hidden_dim);
  for (int i = 0; i < n; ++i) {
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
      const float dz = dlogits.at(i, vtok);
      if (dz == 0.0f) continue;
      const float* wrow = model.output_projection.row(vtok).data();
      float* grow = gi.output_projection->row(vtok).data();
      const float* fnrow = acts.fnorm.normed.row(i).data();
      for (int c = 0; c < cfg.hidden_dim; ++c) {
        grow[c] += dz * fnrow[c];
        dfn.at(i, c) += dz * wrow[c];
      }
    }
  }
  Matrix dh(n, cfg.hidden_dim);
  rms_backward(acts.x_final, model.final_norm_gain, acts.fnorm, dfn, dh, *gi.final_norm_gain);

  // --- layers, top down ---
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerWeights& w = model.layers[static_cast<size_t>(l)];
    const LayerActs& a = acts.layers[static_cast<size_t>(l)];
    GradIndex::Layer& gl = gi.layers[static_cast<size_t>(l)];

    // mlp: x_out = x_mid + silu(m W_in) W_out
    Matrix ds = mul_wt(dh, w.mlp_out);  // n x mlp
    accum_weight(*gl.mlp_out, a.mlp_act, dh);
    Matrix du = ds;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < cfg.mlp_dim; ++c) {
        const float u = a.mlp_pre.at(i, c);
        const float sig = 1.0f / (1.0f + std::exp(-u));
        du.at(i, c) = ds.at(i, c) * sig * (1.0f + u * (1.0f - sig));
      }
    Matrix dm = mul_wt(du, w.mlp_in);
    accum_weight(*gl.mlp_in, a.mnorm.normed, du);
    // dh currently = dx_out; residual carries it into dx_mid, plus norm path.
    rms_backward(a.x_mid, w.mlp_norm_gain, a.mnorm, dm, dh, *gl.mlp_norm_gain);

    // attention: x_mid = x_in + attn_out Wo
    Matrix dao = mul_wt(dh, w.wo);
    accum_weight(*gl.wo, a.attn_out, dh);

    Matrix dq(n, cfg.hidden_dim);
    Matrix dk(n, cfg.hidden_dim);
    Matrix dv(n, cfg.hidden_dim);
    for (int hh = 0; hh < heads; ++hh) {
      const Matrix& p = a.probs[static_cast<size_t>(hh)];
      for (int i = 0; i < n; ++i) {
        const float* daoh = dao.row(i).data() + static_cast<size_t>(hh) * hd;
        // dP and the softmax Jacobian, fused row-wise
        std::vector<float> dp(static_cast<size_t>(i) + 1, 0.0f);
        float inner = 0.0f;
        for (int j = 0; j <= i; ++j) {
          const float* vh = a.v.row(j).data() + static_cast<size_t>(hh) * hd;
          float acc = 0.0f;
          for (int c = 0; c < hd; ++c) acc += daoh[c] * vh[c];
          dp[static_cast<size_t>(j)] = acc;
          inner += acc * p.at(i, j);
        }
        const float* qh = a.q.row(i).data() + static_cast<size_t>(hh) * hd;
        float* dqh = dq.row(i).data() + static_cast<size_t>(hh) * hd;
        for (int j = 0; j <= i; ++j) {
          const float pij = p.at(i, j);
          // dv accumulation
          float* dvh = dv.row(j).data() + static_cast<size_t>(hh) * hd;
          for (int c = 0; c < hd; ++c) dvh[c] += pij * daoh[c];
          // score grad
          const float dsij = pij * (dp[static_cast<size_t>(j)] - inner) * scale;
          if (dsij == 0.0f) continue;
          const float* kh = a.k.row(j).data() + static_cast<size_t>(hh) * hd;
          float* dkh = dk.row(j).data() + static_cast<size_t>(hh) * hd;
          for (int c = 0; c < hd; ++c) {
            dqh[c] += dsij * kh[c];
            dkh[c] += dsij * qh[c];
          }
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      rope_rotate(dq.row(i), i, heads, hd, true);
      rope_rotate(dk.row(i), i, heads, hd, true);
    }

    Matrix da = mul_wt(dq, w.wq);
    accum_weight(*gl.wq, a.anorm.normed, dq);
    {
      Matrix dk_in = mul_wt(dk, w.wk);
      accum_weight(*gl.wk, a.anorm.normed, dk);
      Matrix dv_in = mul_wt(dv, w.wv);
      accum_weight(*gl.wv, a.anorm.normed, dv);
      for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += dk_in.data[i] + dv_in.data[i];
    }
    rms_backward(a.x_in, w.attn_norm_gain, a.anorm, da, dh, *gl.attn_norm_gain);
  }

  // --- embedding rows ---
  for (int i = 0; i < n; ++i) {
    float* erow = gi.embedding->row(tokens[static_cast<size_t>(i)]).data();
    const float* drow = dh.row(i).data();
    for (int c = 0; c < cfg.hidden_dim; ++c) erow[c] += drow[c];
  }
  return loss;
}

}  // namespace

// ============================================================================
// Public API
// ============================================================================

ModelGrads ModelGrads::like(const ToyModel& model) {
  ModelGrads g;
  for (const auto& [name, m] : model.weight_entries())
    g.grads.emplace_back(name, Matrix(m->rows, m->cols));
  return g;
}

void ModelGrads::zero() {
  for (auto& [name, m] : grads) std::fill(m.data.begin(), m.data.end(), 0.0f);
}

double loss_and_grads(const ToyModel& model, std::span<const Example> batch, ModelGrads& out) {
  if (batch.empty()) throw ConfigError("loss_and_grads: empty batch");
  long total_tokens = 0;
  for (const Example& ex : batch) total_tokens += static_cast<long>(ex.gold.size()) + 1;  // + EOS
  const float inv = 1.0f / static_cast<float>(total_tokens);

  GradIndex gi = index_grads(out, model.config.num_layers);
  double loss_sum = 0.0;
  for (const Example& ex : batch) {
    const std::vector<int> tokens = ex.training_tokens();
    if (static_cast<int>(tokens.size()) > model.config.max_seq_len)
      throw ConfigError("loss_and_grads: training sequence exceeds max_seq_len");
    const ForwardActs acts = forward_for_training(model, tokens);
    loss_sum += backward_example(model, ex, acts, inv, gi);
  }
  return loss_sum / static_cast<double>(total_tokens);
}

TrainResult train_toy(ToyModel& model, const std::vector<Example>& train_set, int steps, float lr,
                      uint64_t seed, const TrainOptions& options) {
  if (train_set.empty()) throw ConfigError("train_toy: empty dataset");
  if (steps < 0) throw ConfigError("train_toy: negative step count");

  TrainResult result;
  if (steps == 0) return result;

  Rng rng(seed);
  ModelGrads grads = ModelGrads::like(model);
  ModelGrads m1 = ModelGrads::like(model);
  ModelGrads m2 = ModelGrads::like(model);
  auto weights = model.weight_entries();

  for (int step = 1; step <= steps; ++step) {
    std::vector<Example> batch;
    batch.reserve(static_cast<size_t>(options.batch_size));
    for (int i = 0; i < options.batch_size; ++i)
      batch.push_back(train_set[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(train_set.size()) - 1))]);

    grads.zero();
    const double loss = loss_and_grads(model, batch, grads);
    if (!std::isfinite(loss))
      throw TrainingError("train_toy: loss diverged at step " + std::to_string(step));
    result.loss_curve.push_back(loss);

    const float bc1 = 1.0f - std::pow(options.beta1, static_cast<float>(step));
    const float bc2 = 1.0f - std::pow(options.beta2, static_cast<float>(step));
    for (size_t w = 0; w < weights.size(); ++w) {
      Matrix& param = *weights[w].second;
      Matrix& g = grads.by_index(w);
      Matrix& mom1 = m1.by_index(w);
      Matrix& mom2 = m2.by_index(w);
      for (size_t i = 0; i < param.data.size(); ++i) {
        mom1.data[i] = options.beta1 * mom1.data[i] + (1.0f - options.beta1) * g.data[i];
        mom2.data[i] = options.beta2 * mom2.data[i] + (1.0f - options.beta2) * g.data[i] * g.data[i];
        const float mhat = mom1.data[i] / bc1;
        const float vhat = mom2.data[i] / bc2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + options.adam_eps);
      }
    }
  }
  return result;
}

}  // namespace sira
