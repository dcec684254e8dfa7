#pragma once

// Small deterministic MLP feature extractor: dense layers with leaky-ReLU
// on the hidden layers and a linear output. Forward caches activations for
// the analytic backward pass.

#include <vector>

#include "isda/numeric.hpp"

namespace isda {

struct Mlp {
  std::vector<int> dims;  // input dim, hidden..., feature dim
  double leaky_slope = 0.1;
  std::vector<Mat> W;  // layer l: dims[l+1] x dims[l]
  std::vector<Vec> b;

  int num_layers() const { return static_cast<int>(W.size()); }
  int input_dim() const { return dims.front(); }
  int feature_dim() const { return dims.back(); }
};

// He-style scaled normal initialization, deterministic from the rng.
Mlp make_mlp(const std::vector<int>& dims, double leaky_slope, Rng& rng);

struct MlpCache {
  // acts[0] is the input batch, acts[l+1] the post-activation output of
  // layer l (the last one linear).
  std::vector<Mat> acts;
};

// Features of a B x D0 input batch; cache may be null for inference.
Mat mlp_forward(const Mlp& model, const Mat& inputs, MlpCache* cache);

struct MlpGrads {
  std::vector<Mat> gW;
  std::vector<Vec> gb;

  void init_like(const Mlp& model);
  void zero();
  void add_scaled(const MlpGrads& other, double scale);
};

// Backpropagates d loss / d features; accumulates parameter gradients
// (scaled by `scale`) into grads. Returns d loss / d inputs when asked.
Mat mlp_backward(const Mlp& model, const MlpCache& cache, const Mat& grad_features,
                 MlpGrads& grads, double scale = 1.0, bool want_input_grad = false);

}  // namespace isda
