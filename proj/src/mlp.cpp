#include "isda/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace isda {

Mlp make_mlp(const std::vector<int>& dims, double leaky_slope, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("make_mlp: dims must be >= 1");
  }
  Mlp m;
  m.dims = dims;
  m.leaky_slope = leaky_slope;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    Mat W(fan_out, fan_in);
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& w : W.d) w = std * rng.next_normal();
    m.W.push_back(std::move(W));
    m.b.emplace_back(fan_out, 0.0);
  }
  return m;
}

Mat mlp_forward(const Mlp& model, const Mat& inputs, MlpCache* cache) {
  if (inputs.cols != model.input_dim()) {
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  }
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(inputs);
  }
  Mat cur = inputs;
  const int L = model.num_layers();
  for (int l = 0; l < L; ++l) {
    const Mat& W = model.W[l];
    const Vec& bias = model.b[l];
    const bool last = (l == L - 1);
    Mat next(cur.rows, W.rows);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < cur.rows; ++i) {
      const double* x = cur.row(i);
      double* out = next.row(i);
      for (int o = 0; o < W.rows; ++o) {
        double v = dot(W.row(o), x, W.cols) + bias[o];
        if (!last && v < 0.0) v *= model.leaky_slope;
        out[o] = v;
      }
    }
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

void MlpGrads::init_like(const Mlp& model) {
  gW.clear();
  gb.clear();
  for (int l = 0; l < model.num_layers(); ++l) {
    gW.emplace_back(model.W[l].rows, model.W[l].cols, 0.0);
    gb.emplace_back(model.b[l].size(), 0.0);
  }
}

void MlpGrads::zero() {
  for (auto& m : gW) std::fill(m.d.begin(), m.d.end(), 0.0);
  for (auto& v : gb) std::fill(v.begin(), v.end(), 0.0);
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  for (size_t l = 0; l < gW.size(); ++l) {
    for (size_t k = 0; k < gW[l].d.size(); ++k) gW[l].d[k] += scale * other.gW[l].d[k];
    for (size_t k = 0; k < gb[l].size(); ++k) gb[l][k] += scale * other.gb[l][k];
  }
}

Mat mlp_backward(const Mlp& model, const MlpCache& cache, const Mat& grad_features,
                 MlpGrads& grads, double scale, bool want_input_grad) {
  const int L = model.num_layers();
  if (static_cast<int>(cache.acts.size()) != L + 1) {
    throw std::invalid_argument("mlp_backward: cache does not match model");
  }
  if (grads.gW.empty()) grads.init_like(model);

  Mat delta = grad_features;  // d loss / d (post-activation of layer l)
  for (int l = L - 1; l >= 0; --l) {
    const Mat& W = model.W[l];
    const Mat& out = cache.acts[l + 1];
    const Mat& in = cache.acts[l];
    const bool last = (l == L - 1);
    const int B = delta.rows;

    if (!last) {
      // Fold the leaky-ReLU derivative into delta; the sign of the cached
      // post-activation decides the branch (slope > 0 preserves it).
#pragma omp parallel for schedule(static)
      for (int i = 0; i < B; ++i) {
        double* dr = delta.row(i);
        const double* orow = out.row(i);
        for (int o = 0; o < W.rows; ++o) {
          if (orow[o] < 0.0) dr[o] *= model.leaky_slope;
        }
      }
    }

    Mat& gW = grads.gW[l];
    Vec& gb = grads.gb[l];
#pragma omp parallel for schedule(static)
    for (int o = 0; o < W.rows; ++o) {
      double* gwrow = gW.row(o);
      double gbo = 0.0;
      for (int i = 0; i < B; ++i) {
        const double dv = delta(i, o);
        gbo += dv;
        axpy(scale * dv, in.row(i), gwrow, W.cols);
      }
      gb[o] += scale * gbo;
    }

    if (l > 0 || want_input_grad) {
      Mat prev(B, W.cols, 0.0);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < B; ++i) {
        double* pr = prev.row(i);
        const double* dr = delta.row(i);
        for (int o = 0; o < W.rows; ++o) axpy(dr[o], W.row(o), pr, W.cols);
      }
      delta = std::move(prev);
    }
  }
  if (want_input_grad) return delta;
  return Mat();
}

}  // namespace isda
