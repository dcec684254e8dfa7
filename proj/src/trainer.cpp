#include "isda/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "isda/mc.hpp"
#include "isda/wire.hpp"

namespace isda {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Mat head_logits(const ClassifierHead& head, const Mat& features) {
  const int B = features.rows;
  const int C = head.W.rows;
  Mat z(B, C);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < B; ++i) {
    const double* f = features.row(i);
    double* zr = z.row(i);
    for (int j = 0; j < C; ++j) zr[j] = dot(head.W.row(j), f, head.W.cols) + head.b[j];
  }
  return z;
}

void softmax_rows(Mat& z) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < z.rows; ++i) {
    double* zr = z.row(i);
    const double lse = logsumexp(zr, z.cols);
    for (int j = 0; j < z.cols; ++j) zr[j] = std::exp(zr[j] - lse);
  }
}

void gather(const Dataset& data, const std::vector<int>& order, int lo, int hi, Mat& X,
            std::vector<int>* labels) {
  const int B = hi - lo;
  X = Mat(B, data.dim());
  if (labels) labels->resize(B);
  for (int i = 0; i < B; ++i) {
    const int src = order[lo + i];
    std::memcpy(X.row(i), data.X.row(src), sizeof(double) * data.dim());
    if (labels) (*labels)[i] = data.labels[src];
  }
}

std::vector<int> shuffled_indices(int n, Rng rng) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = n; i > 1; --i) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::vector<ParamRef> param_list(Mlp& model, ClassifierHead& head, const MlpGrads& mg,
                                 const Mat& ghW, const Vec& ghb) {
  std::vector<ParamRef> params;
  for (int l = 0; l < model.num_layers(); ++l) {
    params.push_back({model.W[l].d.data(), mg.gW[l].d.data(), model.W[l].d.size(), true});
    params.push_back({model.b[l].data(), mg.gb[l].data(), model.b[l].size(), false});
  }
  params.push_back({head.W.d.data(), ghW.d.data(), head.W.d.size(), true});
  params.push_back({head.b.data(), ghb.data(), head.b.size(), false});
  return params;
}

AugmentationConfig aug_at(const TrainConfig& config, int64_t iter, int64_t ramp_total) {
  AugmentationConfig aug;
  aug.lambda0 = config.lambda0;
  aug.schedule = config.schedule;
  aug.cov_mode = config.cov_mode;
  aug.T = ramp_total;
  aug.t = std::min<int64_t>(iter, ramp_total);
  return aug;
}

// Input-perturbation consistency: mean squared distance between the
// predictions under two independent noise draws, gradients through both
// branches. Model gradients land unscaled in reg_grads.
double pi_regularizer(Mlp& model, ClassifierHead& head, const Mat& inputs, double noise_std,
                      Rng rng, MlpGrads& reg_grads, Mat& reg_gW, Vec& reg_gb) {
  const int B = inputs.rows;
  const int C = head.W.rows;

  Mat X1 = inputs, X2 = inputs;
  for (auto& v : X1.d) v += noise_std * rng.next_normal();
  for (auto& v : X2.d) v += noise_std * rng.next_normal();

  MlpCache c1, c2;
  const Mat f1 = mlp_forward(model, X1, &c1);
  const Mat f2 = mlp_forward(model, X2, &c2);
  Mat p1 = head_logits(head, f1);
  Mat p2 = head_logits(head, f2);
  softmax_rows(p1);
  softmax_rows(p2);

  double loss = 0.0;
  Mat dz1(B, C), dz2(B, C);
  for (int i = 0; i < B; ++i) {
    const double* a = p1.row(i);
    const double* b = p2.row(i);
    double dot1 = 0.0, dot2 = 0.0;
    for (int j = 0; j < C; ++j) {
      const double d = a[j] - b[j];
      loss += d * d;
      dot1 += a[j] * d;
      dot2 += b[j] * d;
    }
    // d ||p1 - p2||^2 / d z = 2 * p o (d - (p . d) 1) through the softmax.
    for (int j = 0; j < C; ++j) {
      const double d = a[j] - b[j];
      dz1(i, j) = 2.0 / B * a[j] * (d - dot1);
      dz2(i, j) = -2.0 / B * b[j] * (d - dot2);
    }
  }
  loss /= B;

  // Head gradients from both branches, then features, then the model.
  Mat gf1(B, head.W.cols, 0.0), gf2(B, head.W.cols, 0.0);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < C; ++j) {
      reg_gb[j] += dz1(i, j) + dz2(i, j);
      axpy(dz1(i, j), f1.row(i), reg_gW.row(j), head.W.cols);
      axpy(dz2(i, j), f2.row(i), reg_gW.row(j), head.W.cols);
      axpy(dz1(i, j), head.W.row(j), gf1.row(i), head.W.cols);
      axpy(dz2(i, j), head.W.row(j), gf2.row(i), head.W.cols);
    }
  }
  mlp_backward(model, c1, gf1, reg_grads);
  mlp_backward(model, c2, gf2, reg_grads);
  return loss;
}

}  // namespace

ClassifierHead make_head(int num_classes, int feature_dim, Rng& rng) {
  ClassifierHead head;
  head.W = Mat(num_classes, feature_dim);
  const double std = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (auto& w : head.W.d) w = std * rng.next_normal();
  head.b.assign(num_classes, 0.0);
  return head;
}

double evaluate(const Mlp& model, const ClassifierHead& head, const Dataset& test) {
  if (test.size() < 1) throw std::invalid_argument("evaluate: empty test set");
  if (static_cast<int>(test.labels.size()) != test.size()) {
    throw std::invalid_argument("evaluate: test set has no labels");
  }
  const Mat features = mlp_forward(model, test.X, nullptr);
  const Mat z = head_logits(head, features);
  int wrong = 0;
  for (int i = 0; i < z.rows; ++i) {
    const double* zr = z.row(i);
    int best = 0;
    for (int j = 1; j < z.cols; ++j) {
      if (zr[j] > zr[best]) best = j;
    }
    if (best != test.labels[i]) wrong += 1;
  }
  return static_cast<double>(wrong) / test.size();
}

double last_k_mean_error(const std::vector<EpochRecord>& history, int k) {
  if (history.empty()) throw std::invalid_argument("last_k_mean_error: empty history");
  const int n = static_cast<int>(history.size());
  const int kk = std::max(1, std::min(k, n));
  double sum = 0.0;
  for (int i = n - kk; i < n; ++i) sum += history[i].test_error;
  return sum / kk;
}

namespace {

// Shared supervised loop; starts from (start_epoch, start_iter) so resumed
// runs replay the identical schedule and rng streams.
TrainResult supervised_loop(const Dataset& train, const Dataset& test, Mlp& model,
                            ClassifierHead& head, const TrainConfig& config, CovTracker tracker,
                            SgdState sgd, int start_epoch, int64_t start_iter) {
  const int N = train.size();
  const int C = train.num_classes;
  if (N < 1) throw std::invalid_argument("train_supervised: empty training set");
  if (config.batch_size < 1) throw std::invalid_argument("train_supervised: batch_size >= 1");
  if (config.epochs < 1) throw std::invalid_argument("train_supervised: epochs >= 1");
  if (head.W.rows != C) throw std::invalid_argument("train_supervised: head/class mismatch");
  if (model.feature_dim() != head.W.cols) {
    throw std::invalid_argument("train_supervised: model/head feature dim mismatch");
  }

  const Rng root(config.seed);
  const int iters_per_epoch = (N + config.batch_size - 1) / config.batch_size;
  const int64_t ramp_total = config.ramp_iterations > 0
                                 ? config.ramp_iterations
                                 : static_cast<int64_t>(config.epochs) * iters_per_epoch;

  MlpGrads mgrads;
  mgrads.init_like(model);
  Mat ghW(head.W.rows, head.W.cols, 0.0);
  Vec ghb(head.b.size(), 0.0);
  const std::vector<ParamRef> params = param_list(model, head, mgrads, ghW, ghb);
  if (!sgd.initialized()) sgd.init(params);

  // Fixed probe batch in original dataset order.
  LabeledBatch probe;
  if (config.probe_draws > 0) {
    const int P = std::min(config.probe_batch, N);
    probe.features = Mat(P, train.dim());
    probe.labels.assign(train.labels.begin(), train.labels.begin() + P);
    std::memcpy(probe.features.d.data(), train.X.d.data(), sizeof(double) * probe.features.size());
  }

  TrainResult result;
  int64_t iter = start_iter;
  Mat bx;
  std::vector<int> by;

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = lr_at_epoch(config.sgd, epoch);
    const std::vector<int> order = shuffled_indices(N, root.split(epoch));
    double loss_sum = 0.0;

    for (int it = 0; it < iters_per_epoch; ++it) {
      const int lo = it * config.batch_size;
      const int hi = std::min(N, lo + config.batch_size);
      gather(train, order, lo, hi, bx, &by);

      MlpCache cache;
      const Mat features = mlp_forward(model, bx, &cache);

      LossReport rep;
      if (config.loss == LossKind::Isda) {
        tracker.update(features, by);
        rep = surrogate_loss({features, by}, head, tracker, aug_at(config, iter, ramp_total));
      } else {
        rep = cross_entropy({features, by}, head);
      }
      if (!std::isfinite(rep.loss)) {
        throw std::runtime_error("training diverged (non-finite loss) at iteration " +
                                 std::to_string(iter));
      }
      loss_sum += rep.loss;

      mgrads.zero();
      mlp_backward(model, cache, rep.grad_features, mgrads);
      ghW = std::move(rep.grad_W);
      ghb = std::move(rep.grad_b);
      // ParamRef holds stable pointers; moving reassigns the buffers.
      const std::vector<ParamRef> step_params = param_list(model, head, mgrads, ghW, ghb);
      sgd_step(config.sgd, lr, step_params, sgd);
      iter += 1;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iteration = iter;
    rec.lambda = config.loss == LossKind::Isda ? lambda_at(aug_at(config, iter, ramp_total)) : 0.0;
    rec.train_loss = loss_sum / iters_per_epoch;
    rec.wall_ms = ms_since(epoch_start);
    result.train_wall_ms += rec.wall_ms;
    rec.test_error = evaluate(model, head, test);
    result.history.push_back(rec);

    if (config.probe_draws > 0 && config.loss == LossKind::Isda) {
      const Mat pf = mlp_forward(model, probe.features, nullptr);
      const AugmentationConfig aug = aug_at(config, iter, ramp_total);
      const LossReport sur = surrogate_loss({pf, probe.labels}, head, tracker, aug);
      Rng probe_rng = root.split(0x980BEull + epoch);
      const McEstimate mc = mc_expected_ce({pf, probe.labels}, head, tracker, config.cov_mode,
                                           lambda_at(aug), config.probe_draws, probe_rng);
      result.probes.push_back({iter, sur.loss, mc.estimate, mc.std_error});
    }
  }

  result.final_error = last_k_mean_error(result.history, config.eval_last_k);
  result.tracker = std::move(tracker);
  result.sgd = std::move(sgd);
  return result;
}

}  // namespace

TrainResult train_supervised(const Dataset& train, const Dataset& test, Mlp& model,
                             ClassifierHead& head, const TrainConfig& config) {
  CovTracker tracker(train.num_classes, model.feature_dim(), config.cov_mode);
  return supervised_loop(train, test, model, head, config, std::move(tracker), SgdState{}, 0, 0);
}

TrainResult resume_supervised(const Dataset& train, const Dataset& test, Checkpoint& ckpt,
                              const TrainConfig& config) {
  if (ckpt.seed != config.seed) {
    throw std::invalid_argument("resume_supervised: checkpoint seed differs from config seed");
  }
  return supervised_loop(train, test, ckpt.model, ckpt.head, config, std::move(ckpt.tracker),
                         std::move(ckpt.sgd), static_cast<int>(ckpt.epoch), ckpt.iteration);
}

TrainResult train_semi(const Dataset& labeled, const Dataset& unlabeled, const Dataset& test,
                       Mlp& model, ClassifierHead& head, const TrainConfig& config) {
  const int NL = labeled.size();
  const int NU = unlabeled.size();
  const int C = labeled.num_classes;
  if (NL < 1) throw std::invalid_argument("train_semi: empty labeled set");
  if (config.semi.eta1 < 0.0 || config.semi.eta2 < 0.0) {
    throw std::invalid_argument("train_semi: weights must be >= 0");
  }

  const Rng root(config.seed);
  const int iters_per_epoch = (NL + config.batch_size - 1) / config.batch_size;
  const int64_t ramp_total = config.ramp_iterations > 0
                                 ? config.ramp_iterations
                                 : static_cast<int64_t>(config.epochs) * iters_per_epoch;

  CovTracker tracker(C, model.feature_dim(), config.cov_mode);
  MlpGrads mgrads, reg_grads;
  mgrads.init_like(model);
  reg_grads.init_like(model);
  Mat ghW(head.W.rows, head.W.cols, 0.0);
  Vec ghb(head.b.size(), 0.0);
  SgdState sgd;
  sgd.init(param_list(model, head, mgrads, ghW, ghb));

  TrainResult result;
  int64_t iter = 0;
  int64_t u_cursor = 0;
  std::vector<int> u_order;
  Mat bx, ux;
  std::vector<int> by;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = lr_at_epoch(config.sgd, epoch);
    const std::vector<int> order = shuffled_indices(NL, root.split(2 * epoch));
    double loss_sum = 0.0;

    for (int it = 0; it < iters_per_epoch; ++it) {
      const int lo = it * config.batch_size;
      const int hi = std::min(NL, lo + config.batch_size);
      gather(labeled, order, lo, hi, bx, &by);

      // Cycle the unlabeled pool with its own shuffle stream.
      int ub = std::min(config.batch_size, NU);
      if (ub > 0) {
        ux = Mat(ub, unlabeled.dim());
        for (int k = 0; k < ub; ++k) {
          if (u_cursor % NU == 0) {
            u_order = shuffled_indices(NU, root.split(0xC0FFEEull + u_cursor / NU));
          }
          std::memcpy(ux.row(k), unlabeled.X.row(u_order[u_cursor % NU]),
                      sizeof(double) * unlabeled.dim());
          u_cursor += 1;
        }
      } else {
        ux = Mat(0, unlabeled.dim() > 0 ? unlabeled.dim() : labeled.dim());
      }

      MlpCache cache_l, cache_u;
      const Mat feat_l = mlp_forward(model, bx, &cache_l);
      tracker.update(feat_l, by);

      UnlabeledBatch ubatch;
      bool have_u = ux.rows > 0;
      if (have_u) {
        ubatch.features = mlp_forward(model, ux, &cache_u);
        Mat probs = head_logits(head, ubatch.features);
        softmax_rows(probs);
        ubatch.probs = std::move(probs);  // constants from here on
      } else {
        ubatch.features = Mat(0, model.feature_dim());
        ubatch.probs = Mat(0, C);
      }

      const AugmentationConfig aug = aug_at(config, iter, ramp_total);
      reg_grads.zero();
      Mat reg_gW(head.W.rows, head.W.cols, 0.0);
      Vec reg_gb(head.b.size(), 0.0);
      double reg_loss = 0.0;
      Regularizer reg = nullptr;
      if (have_u && config.semi.eta2 > 0.0) {
        reg = [&]() {
          RegularizerOutput out;
          out.loss = pi_regularizer(model, head, ux, config.pi_noise_std,
                                    root.split(0x11AAull).split(iter), reg_grads, reg_gW, reg_gb);
          out.grad_W = reg_gW;
          out.grad_b = reg_gb;
          reg_loss = out.loss;
          return out;
        };
      }

      CombinedReport rep =
          combined_loss({feat_l, by}, ubatch, head, tracker, aug, config.semi, reg);
      (void)reg_loss;
      if (!std::isfinite(rep.loss)) {
        throw std::runtime_error("training diverged (non-finite loss) at iteration " +
                                 std::to_string(iter));
      }
      loss_sum += rep.loss;

      mgrads.zero();
      mlp_backward(model, cache_l, rep.grad_labeled_features, mgrads);
      if (have_u && config.semi.eta1 > 0.0) {
        mlp_backward(model, cache_u, rep.grad_unlabeled_features, mgrads);
      }
      if (have_u && config.semi.eta2 > 0.0) {
        mgrads.add_scaled(reg_grads, config.semi.eta2);
      }
      ghW = std::move(rep.grad_W);
      ghb = std::move(rep.grad_b);
      const std::vector<ParamRef> step_params = param_list(model, head, mgrads, ghW, ghb);
      sgd_step(config.sgd, lr, step_params, sgd);
      iter += 1;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iteration = iter;
    rec.lambda = lambda_at(aug_at(config, iter, ramp_total));
    rec.train_loss = loss_sum / iters_per_epoch;
    rec.wall_ms = ms_since(epoch_start);
    result.train_wall_ms += rec.wall_ms;
    rec.test_error = evaluate(model, head, test);
    result.history.push_back(rec);
  }

  result.final_error = last_k_mean_error(result.history, config.eval_last_k);
  result.tracker = std::move(tracker);
  result.sgd = std::move(sgd);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {
constexpr char kCkptMagic[4] = {'I', 'S', 'D', 'C'};
constexpr uint16_t kCkptVersion = 1;

void put_mat(std::string& buf, const Mat& m) {
  wire::put_u32(buf, static_cast<uint32_t>(m.rows));
  wire::put_u32(buf, static_cast<uint32_t>(m.cols));
  for (double v : m.d) wire::put_f64(buf, v);
}

Mat get_mat(wire::Reader& r) {
  const int rows = static_cast<int>(r.u32());
  const int cols = static_cast<int>(r.u32());
  Mat m(rows, cols);
  for (auto& v : m.d) v = r.f64();
  return m;
}

void put_vec(std::string& buf, const Vec& v) {
  wire::put_u32(buf, static_cast<uint32_t>(v.size()));
  for (double x : v) wire::put_f64(buf, x);
}

Vec get_vec(wire::Reader& r) {
  Vec v(r.u32());
  for (auto& x : v) x = r.f64();
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(kCkptMagic, 4);
  wire::put_u16(buf, kCkptVersion);
  wire::put_u64(buf, ckpt.seed);
  wire::put_u64(buf, static_cast<uint64_t>(ckpt.epoch));
  wire::put_u64(buf, static_cast<uint64_t>(ckpt.iteration));

  wire::put_u32(buf, static_cast<uint32_t>(ckpt.model.dims.size()));
  for (int d : ckpt.model.dims) wire::put_u32(buf, static_cast<uint32_t>(d));
  wire::put_f64(buf, ckpt.model.leaky_slope);
  for (int l = 0; l < ckpt.model.num_layers(); ++l) {
    put_mat(buf, ckpt.model.W[l]);
    put_vec(buf, ckpt.model.b[l]);
  }
  put_mat(buf, ckpt.head.W);
  put_vec(buf, ckpt.head.b);

  const std::string tracker_bytes = ckpt.tracker.serialize();
  wire::put_u32(buf, static_cast<uint32_t>(tracker_bytes.size()));
  buf += tracker_bytes;

  wire::put_u32(buf, static_cast<uint32_t>(ckpt.sgd.velocity.size()));
  for (const Vec& v : ckpt.sgd.velocity) put_vec(buf, v);

  wire::write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = wire::read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kCkptMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  wire::Reader r(buf, 4);
  const uint16_t version = r.u16();
  if (version != kCkptVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.seed = r.u64();
  ckpt.epoch = static_cast<int64_t>(r.u64());
  ckpt.iteration = static_cast<int64_t>(r.u64());

  const int ndims = static_cast<int>(r.u32());
  ckpt.model.dims.resize(ndims);
  for (auto& d : ckpt.model.dims) d = static_cast<int>(r.u32());
  ckpt.model.leaky_slope = r.f64();
  for (int l = 0; l + 1 < ndims; ++l) {
    ckpt.model.W.push_back(get_mat(r));
    ckpt.model.b.push_back(get_vec(r));
  }
  ckpt.head.W = get_mat(r);
  ckpt.head.b = get_vec(r);

  const size_t tracker_len = r.u32();
  r.need(tracker_len);
  ckpt.tracker = CovTracker::deserialize(
      std::string(reinterpret_cast<const char*>(r.p), tracker_len));
  r.p += tracker_len;
  r.left -= tracker_len;

  const int nvel = static_cast<int>(r.u32());
  for (int i = 0; i < nvel; ++i) ckpt.sgd.velocity.push_back(get_vec(r));
  if (r.left != 0) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

}  // namespace isda
