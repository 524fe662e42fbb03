#pragma once

// Test-only oracle: the same architecture and loss evaluated end to end in
// double precision, used as the ground truth for finite-difference gradient
// checks. Written independently of the float32 trainer.

#include <cmath>
#include <span>
#include <vector>

#include "sira/model.hpp"
#include "sira/synth.hpp"

namespace sira::testing {

struct DoubleModel {
  ModelConfig config;
  std::vector<std::vector<double>> weights;  // flattened, weight_entries() order

  static DoubleModel from(const ToyModel& model) {
    DoubleModel dm;
    dm.config = model.config;
    for (const auto& [name, m] : model.weight_entries()) {
      (void)name;
      dm.weights.emplace_back(m->data.begin(), m->data.end());
    }
    return dm;
  }
};

namespace detail {

using DVec = std::vector<double>;
using DMat = std::vector<DVec>;  // rows of doubles

inline DVec rms_norm_d(const DVec& x, const DVec& gain, double eps) {
  double sumsq = 0.0;
  for (const double v : x) sumsq += v * v;
  const double inv = 1.0 / std::sqrt(sumsq / static_cast<double>(x.size()) + eps);
  DVec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
  return out;
}

inline void rope_d(DVec& row, int position, int num_heads, int head_dim) {
  for (int h = 0; h < num_heads; ++h) {
    double* vec = row.data() + static_cast<size_t>(h) * head_dim;
    for (int i = 0; i + 1 < head_dim; i += 2) {
      const double freq = 1.0 / std::pow(10000.0, static_cast<double>(i) / head_dim);
      const double angle = position * freq;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double v0 = vec[i];
      const double v1 = vec[i + 1];
      vec[i] = v0 * c - v1 * s;
      vec[i + 1] = v0 * s + v1 * c;
    }
  }
}

// y = x * W with W flat (in x out).
inline DVec mul_d(const DVec& x, const DVec& w, int in, int out) {
  DVec y(static_cast<size_t>(out), 0.0);
  for (int o = 0; o < out; ++o) {
    double acc = 0.0;
    for (int c = 0; c < in; ++c) acc += x[static_cast<size_t>(c)] * w[static_cast<size_t>(c) * out + o];
    y[static_cast<size_t>(o)] = acc;
  }
  return y;
}

}  // namespace detail

/// Mean next-token cross-entropy over the answer region of each example,
/// matching the trainer's loss definition, in double arithmetic throughout.
inline double reference_loss(const DoubleModel& dm, std::span<const Example> batch) {
  using namespace detail;
  const ModelConfig& cfg = dm.config;
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim;
  const int d = cfg.hidden_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // weight layout per weight_entries(): embedding, then 8 matrices per layer,
  // then final gain and output projection
  size_t wi = 0;
  const DVec& emb = dm.weights[wi++];
  struct LW {
    const DVec *ag, *wq, *wk, *wv, *wo, *mg, *mi, *mo;
  };
  std::vector<LW> lw(static_cast<size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    lw[static_cast<size_t>(l)] = {&dm.weights[wi], &dm.weights[wi + 1], &dm.weights[wi + 2],
                                  &dm.weights[wi + 3], &dm.weights[wi + 4], &dm.weights[wi + 5],
                                  &dm.weights[wi + 6], &dm.weights[wi + 7]};
    wi += 8;
  }
  const DVec& final_gain = dm.weights[wi++];
  const DVec& wout = dm.weights[wi++];

  double loss_sum = 0.0;
  long total = 0;
  for (const Example& ex : batch) total += static_cast<long>(ex.gold.size()) + 1;

  for (const Example& ex : batch) {
    const std::vector<int> tokens = ex.training_tokens();
    const int n = static_cast<int>(tokens.size());

    DMat h(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      h[static_cast<size_t>(i)].assign(
          emb.begin() + static_cast<long>(tokens[static_cast<size_t>(i)]) * d,
          emb.begin() + (static_cast<long>(tokens[static_cast<size_t>(i)]) + 1) * d);
    }

    for (int l = 0; l < cfg.num_layers; ++l) {
      const LW& w = lw[static_cast<size_t>(l)];
      DMat q(static_cast<size_t>(n)), k(static_cast<size_t>(n)), v(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const DVec a = rms_norm_d(h[static_cast<size_t>(i)], *w.ag, cfg.norm_eps);
        q[static_cast<size_t>(i)] = mul_d(a, *w.wq, d, d);
        k[static_cast<size_t>(i)] = mul_d(a, *w.wk, d, d);
        v[static_cast<size_t>(i)] = mul_d(a, *w.wv, d, d);
        rope_d(q[static_cast<size_t>(i)], i, heads, hd);
        rope_d(k[static_cast<size_t>(i)], i, heads, hd);
      }
      for (int i = 0; i < n; ++i) {
        DVec att(static_cast<size_t>(d), 0.0);
        for (int hh = 0; hh < heads; ++hh) {
          const double* qh = q[static_cast<size_t>(i)].data() + static_cast<size_t>(hh) * hd;
          DVec s(static_cast<size_t>(i) + 1);
          double maxs = -1e300;
          for (int j = 0; j <= i; ++j) {
            const double* kh = k[static_cast<size_t>(j)].data() + static_cast<size_t>(hh) * hd;
            double acc = 0.0;
            for (int c = 0; c < hd; ++c) acc += qh[c] * kh[c];
            s[static_cast<size_t>(j)] = acc * scale;
            maxs = std::max(maxs, s[static_cast<size_t>(j)]);
          }
          double denom = 0.0;
          for (int j = 0; j <= i; ++j) {
            s[static_cast<size_t>(j)] = std::exp(s[static_cast<size_t>(j)] - maxs);
            denom += s[static_cast<size_t>(j)];
          }
          for (int j = 0; j <= i; ++j) {
            const double p = s[static_cast<size_t>(j)] / denom;
            const double* vh = v[static_cast<size_t>(j)].data() + static_cast<size_t>(hh) * hd;
            for (int c = 0; c < hd; ++c) att[static_cast<size_t>(hh) * hd + static_cast<size_t>(c)] += p * vh[c];
          }
        }
        const DVec proj = mul_d(att, *w.wo, d, d);
        for (int c = 0; c < d; ++c) h[static_cast<size_t>(i)][static_cast<size_t>(c)] += proj[static_cast<size_t>(c)];
      }
      for (int i = 0; i < n; ++i) {
        const DVec m = rms_norm_d(h[static_cast<size_t>(i)], *w.mg, cfg.norm_eps);
        DVec u = mul_d(m, *w.mi, d, cfg.mlp_dim);
        for (double& x : u) x = x / (1.0 + std::exp(-x));
        const DVec down = mul_d(u, *w.mo, cfg.mlp_dim, d);
        for (int c = 0; c < d; ++c) h[static_cast<size_t>(i)][static_cast<size_t>(c)] += down[static_cast<size_t>(c)];
      }
    }

    const int first_pred = ex.answer_begin() - 1;
    for (int i = first_pred; i < n - 1; ++i) {
      const DVec fn = rms_norm_d(h[static_cast<size_t>(i)], final_gain, cfg.norm_eps);
      DVec z(static_cast<size_t>(cfg.vocab_size));
      for (int vt = 0; vt < cfg.vocab_size; ++vt) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += wout[static_cast<size_t>(vt) * d + c] * fn[static_cast<size_t>(c)];
        z[static_cast<size_t>(vt)] = acc;
      }
      double maxv = z[0];
      for (const double zv : z) maxv = std::max(maxv, zv);
      double denom = 0.0;
      for (const double zv : z) denom += std::exp(zv - maxv);
      const int target = tokens[static_cast<size_t>(i) + 1];
      loss_sum += -(z[static_cast<size_t>(target)] - maxv - std::log(denom));
    }
  }
  return loss_sum / static_cast<double>(total);
}

}  // namespace sira::testing
