// 1D convolutional angle regressor: conv -> batch-norm -> ReLU -> max-pool ->
// dropout stages feeding a fully connected head, trained with mini-batch
// gradient descent with momentum on MSE. Backpropagation is hand-written and
// verified against central finite differences.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icregress/dataset.hpp"

namespace icregress {

struct ArchitectureDescriptor {
  int input_channels = FeatureWindow::kChannels;
  int input_timesteps = FeatureWindow::kTimesteps;
  std::vector<int> conv_maps = {64, 16, 8};
  int kernel_size = 3;
  int pool_size = 2;
  double dropout_p = 0.3;
  std::vector<int> fc_widths = {64, 32, 1};

  friend bool operator==(const ArchitectureDescriptor&, const ArchitectureDescriptor&) = default;

  void validate() const {
    if (input_channels != FeatureWindow::kChannels ||
        input_timesteps != FeatureWindow::kTimesteps) {
      throw std::invalid_argument("descriptor input shape must match the 8x20 feature window");
    }
    if (conv_maps.empty()) throw std::invalid_argument("descriptor needs at least one conv stage");
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw std::invalid_argument("kernel size must be odd for same padding");
    }
    if (pool_size < 1) throw std::invalid_argument("pool size must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("dropout_p outside [0,1)");
    if (fc_widths.empty() || fc_widths.back() != 1) {
      throw std::invalid_argument("fully connected head must end in a single output");
    }
    int t = input_timesteps;
    for (std::size_t s = 0; s < conv_maps.size(); ++s) {
      if (conv_maps[s] < 1) throw std::invalid_argument("conv stage with no feature maps");
      t = t / pool_size;
      if (t < 1) throw std::invalid_argument("pooling collapses the sequence to length zero");
    }
  }

  /// Sequence length entering conv stage `s` (0-based).
  int timesteps_into_stage(std::size_t s) const {
    int t = input_timesteps;
    for (std::size_t i = 0; i < s; ++i) t /= pool_size;
    return t;
  }

  int flatten_dim() const { return conv_maps.back() * timesteps_into_stage(conv_maps.size()); }

  /// Learnable parameters: conv weights/biases, batch-norm scale/shift, and
  /// the fully connected head.
  std::size_t parameter_count() const {
    std::size_t count = 0;
    int in_c = input_channels;
    for (int maps : conv_maps) {
      count += static_cast<std::size_t>(maps) * in_c * kernel_size + maps;  // conv
      count += 2 * static_cast<std::size_t>(maps);                          // bn gamma/beta
      in_c = maps;
    }
    int in = flatten_dim();
    for (int out : fc_widths) {
      count += static_cast<std::size_t>(out) * in + out;
      in = out;
    }
    return count;
  }
};

struct ConvStageParams {
  std::vector<double> weight;  // [maps][in_channels][kernel]
  std::vector<double> bias;    // [maps]
  std::vector<double> bn_gamma;
  std::vector<double> bn_beta;
  std::vector<double> bn_running_mean;
  std::vector<double> bn_running_var;

  friend bool operator==(const ConvStageParams&, const ConvStageParams&) = default;
};

struct FcLayerParams {
  std::vector<double> weight;  // [out][in]
  std::vector<double> bias;    // [out]

  friend bool operator==(const FcLayerParams&, const FcLayerParams&) = default;
};

/// Architecture descriptor, all learnable tensors, batch-norm running
/// statistics, and the input/target normalization fitted on the training set.
struct RegressorParams {
  std::uint32_t format_version = 1;
  ArchitectureDescriptor descriptor;
  std::vector<ConvStageParams> conv;
  std::vector<FcLayerParams> fc;
  std::vector<double> feature_mean;  // [channels * timesteps]
  std::vector<double> feature_std;   // same shape, guarded > 0
  double target_mean = 0.0;
  double target_std = 1.0;

  friend bool operator==(const RegressorParams&, const RegressorParams&) = default;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum outside [0,1)");
  }
};

enum class ForwardMode {
  kEval,        // running statistics, no dropout (inference, gradient checks)
  kTrainStats,  // batch statistics, no dropout, running stats untouched
  kTrainFull,   // batch statistics, dropout, running stats updated
};

namespace detail {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnDecay = 0.9;

struct StageDims {
  int in_c;
  int in_t;
  int maps;
  int out_t;  // after pooling
};

inline std::vector<StageDims> stage_dims(const ArchitectureDescriptor& d) {
  std::vector<StageDims> dims;
  int in_c = d.input_channels;
  int t = d.input_timesteps;
  for (int maps : d.conv_maps) {
    dims.push_back({in_c, t, maps, t / d.pool_size});
    in_c = maps;
    t = t / d.pool_size;
  }
  return dims;
}

struct StageCache {
  std::vector<double> input;    // [B][C][T_in]
  std::vector<double> xhat;     // [B][M][T_in]
  std::vector<double> act;      // [B][M][T_in] after bn+relu
  std::vector<double> pooled;   // [B][M][T_out] after dropout
  std::vector<int> argmax;      // [B][M][T_out]
  std::vector<double> dropout;  // [B][M][T_out] multiplier
  std::vector<double> mean, inv_std;  // [M], stats used by this pass
};

struct Workspace {
  int batch = 0;
  std::vector<StageCache> stages;
  std::vector<std::vector<double>> fc_in;   // [layer][B * in]
  std::vector<std::vector<double>> fc_out;  // [layer][B * out], post-activation
  std::vector<double> output;               // [B]
};

struct Gradients {
  std::vector<ConvStageParams> conv;  // weight/bias/bn_gamma/bn_beta used; running unused
  std::vector<FcLayerParams> fc;

  static Gradients zeros_like(const RegressorParams& p) {
    Gradients g;
    g.conv.resize(p.conv.size());
    for (std::size_t s = 0; s < p.conv.size(); ++s) {
      g.conv[s].weight.assign(p.conv[s].weight.size(), 0.0);
      g.conv[s].bias.assign(p.conv[s].bias.size(), 0.0);
      g.conv[s].bn_gamma.assign(p.conv[s].bn_gamma.size(), 0.0);
      g.conv[s].bn_beta.assign(p.conv[s].bn_beta.size(), 0.0);
    }
    g.fc.resize(p.fc.size());
    for (std::size_t l = 0; l < p.fc.size(); ++l) {
      g.fc[l].weight.assign(p.fc[l].weight.size(), 0.0);
      g.fc[l].bias.assign(p.fc[l].bias.size(), 0.0);
    }
    return g;
  }
};

/// Normalized copy of the window values under the params' feature statistics.
inline void normalize_input(const RegressorParams& p, const FeatureWindow& w, double* out) {
  for (int i = 0; i < FeatureWindow::kValues; ++i) {
    out[i] = (w.values[i] - p.feature_mean[i]) / p.feature_std[i];
  }
}

/// Forward pass over a batch. `params` is mutated only in kTrainFull mode
/// (running statistics); `rng` is consumed only in kTrainFull mode.
inline void forward(RegressorParams& params, std::span<const FeatureWindow* const> batch,
                    ForwardMode mode, std::mt19937_64* rng, Workspace& ws) {
  const ArchitectureDescriptor& d = params.descriptor;
  const auto dims = stage_dims(d);
  const int B = static_cast<int>(batch.size());
  ws.batch = B;
  ws.stages.resize(dims.size());

  ws.stages[0].input.resize(static_cast<std::size_t>(B) * d.input_channels * d.input_timesteps);
  for (int b = 0; b < B; ++b) {
    normalize_input(params, *batch[b],
                    ws.stages[0].input.data() +
                        static_cast<std::size_t>(b) * d.input_channels * d.input_timesteps);
  }

  const int pad = d.kernel_size / 2;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t s = 0; s < dims.size(); ++s) {
    const StageDims& sd = dims[s];
    StageCache& cache = ws.stages[s];
    ConvStageParams& layer = params.conv[s];
    const int M = sd.maps, C = sd.in_c, T = sd.in_t, K = d.kernel_size;
    const std::size_t conv_n = static_cast<std::size_t>(B) * M * T;
    cache.xhat.resize(conv_n);
    cache.act.resize(conv_n);
    std::vector<double>& pre = cache.act;  // reused: conv output, then bn+relu in place

    for (int b = 0; b < B; ++b) {
      const double* x = cache.input.data() + static_cast<std::size_t>(b) * C * T;
      for (int m = 0; m < M; ++m) {
        double* z = pre.data() + (static_cast<std::size_t>(b) * M + m) * T;
        const double* wm = layer.weight.data() + static_cast<std::size_t>(m) * C * K;
        for (int t = 0; t < T; ++t) z[t] = layer.bias[m];
        for (int c = 0; c < C; ++c) {
          const double* xc = x + static_cast<std::size_t>(c) * T;
          const double* wc = wm + static_cast<std::size_t>(c) * K;
          for (int j = 0; j < K; ++j) {
            const double w = wc[j];
            const int shift = j - pad;
            const int t_begin = std::max(0, -shift);
            const int t_end = std::min(T, T - shift);
            for (int t = t_begin; t < t_end; ++t) z[t] += w * xc[t + shift];
          }
        }
      }
    }

    // Batch normalization per feature map over (batch, time).
    cache.mean.assign(M, 0.0);
    cache.inv_std.assign(M, 0.0);
    const double n = static_cast<double>(B) * T;
    for (int m = 0; m < M; ++m) {
      double mean, var;
      if (mode == ForwardMode::kEval) {
        mean = layer.bn_running_mean[m];
        var = layer.bn_running_var[m];
      } else {
        double sum = 0.0, sum_sq = 0.0;
        for (int b = 0; b < B; ++b) {
          const double* z = pre.data() + (static_cast<std::size_t>(b) * M + m) * T;
          for (int t = 0; t < T; ++t) {
            sum += z[t];
            sum_sq += z[t] * z[t];
          }
        }
        mean = sum / n;
        var = std::max(0.0, sum_sq / n - mean * mean);
        if (mode == ForwardMode::kTrainFull) {
          layer.bn_running_mean[m] = kBnDecay * layer.bn_running_mean[m] + (1.0 - kBnDecay) * mean;
          layer.bn_running_var[m] = kBnDecay * layer.bn_running_var[m] + (1.0 - kBnDecay) * var;
        }
      }
      cache.mean[m] = mean;
      cache.inv_std[m] = 1.0 / std::sqrt(var + kBnEps);
      const double gamma = layer.bn_gamma[m];
      const double beta = layer.bn_beta[m];
      for (int b = 0; b < B; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * M + m) * T;
        for (int t = 0; t < T; ++t) {
          const double xh = (pre[base + t] - mean) * cache.inv_std[m];
          cache.xhat[base + t] = xh;
          pre[base + t] = std::max(0.0, gamma * xh + beta);  // bn + relu
        }
      }
    }

    // Max pool, then dropout.
    const int To = sd.out_t;
    const std::size_t pool_n = static_cast<std::size_t>(B) * M * To;
    cache.pooled.resize(pool_n);
    cache.argmax.resize(pool_n);
    cache.dropout.assign(pool_n, 1.0);
    for (int b = 0; b < B; ++b) {
      for (int m = 0; m < M; ++m) {
        const std::size_t in_base = (static_cast<std::size_t>(b) * M + m) * T;
        const std::size_t out_base = (static_cast<std::size_t>(b) * M + m) * To;
        for (int u = 0; u < To; ++u) {
          int best = u * d.pool_size;
          double best_v = cache.act[in_base + best];
          for (int q = 1; q < d.pool_size; ++q) {
            const int t = u * d.pool_size + q;
            if (cache.act[in_base + t] > best_v) {
              best_v = cache.act[in_base + t];
              best = t;
            }
          }
          cache.argmax[out_base + u] = best;
          double value = best_v;
          if (mode == ForwardMode::kTrainFull && d.dropout_p > 0.0) {
            const double keep = (unit(*rng) >= d.dropout_p) ? 1.0 : 0.0;
            const double scale = keep / (1.0 - d.dropout_p);
            cache.dropout[out_base + u] = scale;
            value *= scale;
          }
          cache.pooled[out_base + u] = value;
        }
      }
    }

    if (s + 1 < dims.size()) {
      ws.stages[s + 1].input = cache.pooled;
    }
  }

  // Fully connected head; ReLU between layers, linear output.
  const std::size_t n_fc = d.fc_widths.size();
  ws.fc_in.resize(n_fc);
  ws.fc_out.resize(n_fc);
  ws.fc_in[0] = ws.stages.back().pooled;
  int in_dim = d.flatten_dim();
  for (std::size_t l = 0; l < n_fc; ++l) {
    const int out_dim = d.fc_widths[l];
    const FcLayerParams& layer = params.fc[l];
    ws.fc_out[l].assign(static_cast<std::size_t>(B) * out_dim, 0.0);
    for (int b = 0; b < B; ++b) {
      const double* in = ws.fc_in[l].data() + static_cast<std::size_t>(b) * in_dim;
      double* out = ws.fc_out[l].data() + static_cast<std::size_t>(b) * out_dim;
      for (int o = 0; o < out_dim; ++o) {
        double z = layer.bias[o];
        const double* w = layer.weight.data() + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) z += w[i] * in[i];
        out[o] = (l + 1 < n_fc) ? std::max(0.0, z) : z;
      }
    }
    if (l + 1 < n_fc) ws.fc_in[l + 1] = ws.fc_out[l];
    in_dim = out_dim;
  }
  ws.output.resize(B);
  for (int b = 0; b < B; ++b) ws.output[b] = ws.fc_out.back()[b];
}

/// Backward pass for MSE given d(loss)/d(output). Must follow a forward call
/// on the same workspace with matching mode semantics.
inline void backward(const RegressorParams& params, const Workspace& ws,
                     std::span<const double> d_output, ForwardMode mode, Gradients& grads) {
  const ArchitectureDescriptor& d = params.descriptor;
  const auto dims = stage_dims(d);
  const int B = ws.batch;

  // Fully connected head.
  const std::size_t n_fc = d.fc_widths.size();
  std::vector<double> delta(d_output.begin(), d_output.end());  // [B * out_dim of last]
  for (std::size_t li = n_fc; li-- > 0;) {
    const int out_dim = d.fc_widths[li];
    const int in_dim = li == 0 ? d.flatten_dim() : d.fc_widths[li - 1];
    const FcLayerParams& layer = params.fc[li];
    FcLayerParams& g = grads.fc[li];
    if (li + 1 < n_fc) {
      // ReLU mask from this layer's post-activation output.
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (ws.fc_out[li][i] <= 0.0) delta[i] = 0.0;
      }
    }
    std::vector<double> d_in(static_cast<std::size_t>(B) * in_dim, 0.0);
    for (int b = 0; b < B; ++b) {
      const double* in = ws.fc_in[li].data() + static_cast<std::size_t>(b) * in_dim;
      const double* dz = delta.data() + static_cast<std::size_t>(b) * out_dim;
      double* di = d_in.data() + static_cast<std::size_t>(b) * in_dim;
      for (int o = 0; o < out_dim; ++o) {
        const double dzo = dz[o];
        g.bias[o] += dzo;
        double* gw = g.weight.data() + static_cast<std::size_t>(o) * in_dim;
        const double* w = layer.weight.data() + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) {
          gw[i] += dzo * in[i];
          di[i] += dzo * w[i];
        }
      }
    }
    delta = std::move(d_in);
  }

  // Conv stages in reverse; delta arrives shaped [B][M][T_out].
  const int pad = d.kernel_size / 2;
  for (std::size_t s = dims.size(); s-- > 0;) {
    const StageDims& sd = dims[s];
    const StageCache& cache = ws.stages[s];
    const ConvStageParams& layer = params.conv[s];
    ConvStageParams& g = grads.conv[s];
    const int M = sd.maps, C = sd.in_c, T = sd.in_t, To = sd.out_t, K = d.kernel_size;

    // Dropout, then un-pool to the conv/bn/relu resolution.
    std::vector<double> d_act(static_cast<std::size_t>(B) * M * T, 0.0);
    for (int b = 0; b < B; ++b) {
      for (int m = 0; m < M; ++m) {
        const std::size_t out_base = (static_cast<std::size_t>(b) * M + m) * To;
        const std::size_t in_base = (static_cast<std::size_t>(b) * M + m) * T;
        for (int u = 0; u < To; ++u) {
          const double dv = delta[out_base + u] * cache.dropout[out_base + u];
          d_act[in_base + cache.argmax[out_base + u]] += dv;
        }
      }
    }

    // ReLU, then batch-norm.
    std::vector<double> d_pre(static_cast<std::size_t>(B) * M * T, 0.0);
    const double n = static_cast<double>(B) * T;
    for (int m = 0; m < M; ++m) {
      const double gamma = layer.bn_gamma[m];
      const double inv_std = cache.inv_std[m];
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (int b = 0; b < B; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * M + m) * T;
        for (int t = 0; t < T; ++t) {
          double dy = d_act[base + t];
          if (cache.act[base + t] <= 0.0) dy = 0.0;  // ReLU
          d_act[base + t] = dy;
          g.bn_beta[m] += dy;
          g.bn_gamma[m] += dy * cache.xhat[base + t];
          sum_dxhat += dy * gamma;
          sum_dxhat_xhat += dy * gamma * cache.xhat[base + t];
        }
      }
      for (int b = 0; b < B; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * M + m) * T;
        for (int t = 0; t < T; ++t) {
          const double dxhat = d_act[base + t] * gamma;
          if (mode == ForwardMode::kEval) {
            d_pre[base + t] = dxhat * inv_std;
          } else {
            d_pre[base + t] =
                inv_std * (dxhat - (sum_dxhat + cache.xhat[base + t] * sum_dxhat_xhat) / n);
          }
        }
      }
    }

    // Conv weights/bias and the gradient flowing into the stage input.
    std::vector<double> d_in;
    if (s > 0) d_in.assign(static_cast<std::size_t>(B) * C * T, 0.0);
    for (int b = 0; b < B; ++b) {
      const double* x = cache.input.data() + static_cast<std::size_t>(b) * C * T;
      for (int m = 0; m < M; ++m) {
        const double* dz = d_pre.data() + (static_cast<std::size_t>(b) * M + m) * T;
        const double* wm = layer.weight.data() + static_cast<std::size_t>(m) * C * K;
        double* gw = g.weight.data() + static_cast<std::size_t>(m) * C * K;
        for (int t = 0; t < T; ++t) g.bias[m] += dz[t];
        for (int c = 0; c < C; ++c) {
          const double* xc = x + static_cast<std::size_t>(c) * T;
          for (int j = 0; j < K; ++j) {
            const int shift = j - pad;
            const int t_begin = std::max(0, -shift);
            const int t_end = std::min(T, T - shift);
            double acc = 0.0;
            for (int t = t_begin; t < t_end; ++t) acc += dz[t] * xc[t + shift];
            gw[static_cast<std::size_t>(c) * K + j] += acc;
            if (s > 0) {
              double* dxc = d_in.data() + (static_cast<std::size_t>(b) * C + c) * T;
              const double w = wm[static_cast<std::size_t>(c) * K + j];
              for (int t = t_begin; t < t_end; ++t) dxc[t + shift] += dz[t] * w;
            }
          }
        }
      }
    }
    if (s > 0) delta = std::move(d_in);
  }
}

inline std::vector<const FeatureWindow*> window_pointers(std::span<const FeatureWindow> features) {
  std::vector<const FeatureWindow*> ptrs(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) ptrs[i] = &features[i];
  return ptrs;
}

}  // namespace detail

inline RegressorParams initialize_params(const ArchitectureDescriptor& descriptor,
                                         std::mt19937_64& rng) {
  descriptor.validate();
  RegressorParams p;
  p.descriptor = descriptor;
  const auto dims = detail::stage_dims(descriptor);
  for (const auto& sd : dims) {
    ConvStageParams layer;
    const std::size_t weights =
        static_cast<std::size_t>(sd.maps) * sd.in_c * descriptor.kernel_size;
    const double bound = std::sqrt(1.0 / (sd.in_c * descriptor.kernel_size));
    std::uniform_real_distribution<double> dist(-bound, bound);
    layer.weight.resize(weights);
    for (double& w : layer.weight) w = dist(rng);
    layer.bias.assign(sd.maps, 0.0);
    layer.bn_gamma.assign(sd.maps, 1.0);
    layer.bn_beta.assign(sd.maps, 0.0);
    layer.bn_running_mean.assign(sd.maps, 0.0);
    layer.bn_running_var.assign(sd.maps, 1.0);
    p.conv.push_back(std::move(layer));
  }
  int in_dim = descriptor.flatten_dim();
  for (int out_dim : descriptor.fc_widths) {
    FcLayerParams layer;
    const double bound = std::sqrt(1.0 / in_dim);
    std::uniform_real_distribution<double> dist(-bound, bound);
    layer.weight.resize(static_cast<std::size_t>(out_dim) * in_dim);
    for (double& w : layer.weight) w = dist(rng);
    layer.bias.assign(out_dim, 0.0);
    p.fc.push_back(std::move(layer));
    in_dim = out_dim;
  }
  p.feature_mean.assign(FeatureWindow::kValues, 0.0);
  p.feature_std.assign(FeatureWindow::kValues, 1.0);
  return p;
}

namespace detail {

inline void fit_normalization(RegressorParams& params, std::span<const FeatureWindow> features,
                              std::span<const double> targets) {
  const double n = static_cast<double>(features.size());
  for (int i = 0; i < FeatureWindow::kValues; ++i) {
    double sum = 0.0, sum_sq = 0.0;
    for (const FeatureWindow& w : features) {
      sum += w.values[i];
      sum_sq += w.values[i] * w.values[i];
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    params.feature_mean[i] = mean;
    params.feature_std[i] = std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0;
  }
  double sum = 0.0, sum_sq = 0.0;
  for (double y : targets) {
    sum += y;
    sum_sq += y * y;
  }
  params.target_mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - params.target_mean * params.target_mean);
  params.target_std = std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0;
}

/// Shared mini-batch SGD loop used by train and finetune.
inline void optimize(RegressorParams& params, std::span<const FeatureWindow> features,
                     std::span<const double> targets, const TrainConfig& config,
                     std::mt19937_64& rng) {
  const std::size_t n = features.size();
  Gradients velocity = Gradients::zeros_like(params);
  Gradients grads = Gradients::zeros_like(params);
  Workspace ws;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<const FeatureWindow*> batch_ptrs;
  std::vector<double> batch_targets;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const int B = static_cast<int>(end - begin);
      batch_ptrs.clear();
      batch_targets.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch_ptrs.push_back(&features[order[i]]);
        batch_targets.push_back((targets[order[i]] - params.target_mean) / params.target_std);
      }
      forward(params, batch_ptrs, ForwardMode::kTrainFull, &rng, ws);

      std::vector<double> d_out(B);
      for (int b = 0; b < B; ++b) {
        d_out[b] = 2.0 * (ws.output[b] - batch_targets[b]) / B;
      }
      for (auto& layer : grads.conv) {
        std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
        std::fill(layer.bn_gamma.begin(), layer.bn_gamma.end(), 0.0);
        std::fill(layer.bn_beta.begin(), layer.bn_beta.end(), 0.0);
      }
      for (auto& layer : grads.fc) {
        std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
      }
      backward(params, ws, d_out, ForwardMode::kTrainFull, grads);

      const auto update = [&](std::vector<double>& value, std::vector<double>& vel,
                              const std::vector<double>& grad) {
        for (std::size_t i = 0; i < value.size(); ++i) {
          vel[i] = config.momentum * vel[i] - config.learning_rate * grad[i];
          value[i] += vel[i];
        }
      };
      for (std::size_t s = 0; s < params.conv.size(); ++s) {
        update(params.conv[s].weight, velocity.conv[s].weight, grads.conv[s].weight);
        update(params.conv[s].bias, velocity.conv[s].bias, grads.conv[s].bias);
        update(params.conv[s].bn_gamma, velocity.conv[s].bn_gamma, grads.conv[s].bn_gamma);
        update(params.conv[s].bn_beta, velocity.conv[s].bn_beta, grads.conv[s].bn_beta);
      }
      for (std::size_t l = 0; l < params.fc.size(); ++l) {
        update(params.fc[l].weight, velocity.fc[l].weight, grads.fc[l].weight);
        update(params.fc[l].bias, velocity.fc[l].bias, grads.fc[l].bias);
      }
    }
  }
}

inline void check_dataset(std::span<const FeatureWindow> features, std::span<const double> targets) {
  if (features.empty()) throw std::invalid_argument("empty dataset");
  if (features.size() != targets.size()) {
    throw std::invalid_argument("feature/target count mismatch");
  }
}

}  // namespace detail

/// Trains a fresh regressor; deterministic for a fixed config seed (weight
/// initialization, shuffling, and dropout all derive from it).
inline RegressorParams train(std::span<const FeatureWindow> features,
                             std::span<const double> targets, const TrainConfig& config,
                             const ArchitectureDescriptor& descriptor = {}) {
  detail::check_dataset(features, targets);
  config.validate();
  if (config.epochs < 1) throw std::invalid_argument("train needs epochs >= 1");
  if (features.size() < static_cast<std::size_t>(config.batch_size)) {
    throw std::invalid_argument("dataset smaller than one batch");
  }
  std::mt19937_64 rng(splitmix64(config.seed));
  RegressorParams params = initialize_params(descriptor, rng);
  detail::fit_normalization(params, features, targets);
  detail::optimize(params, features, targets, config, rng);
  return params;
}

/// Same procedure as train but starting from `init` (including running
/// statistics and normalization); momentum buffers start at zero. Zero epochs
/// returns init unchanged.
inline RegressorParams finetune(std::span<const FeatureWindow> features,
                                std::span<const double> targets, const RegressorParams& init,
                                const TrainConfig& config) {
  if (config.epochs == 0) return init;
  detail::check_dataset(features, targets);
  config.validate();
  if (config.epochs < 0) throw std::invalid_argument("negative epoch count");
  init.descriptor.validate();
  RegressorParams params = init;
  std::mt19937_64 rng(splitmix64(config.seed));
  detail::optimize(params, features, targets, config, rng);
  return params;
}

/// Deterministic inference: dropout disabled, batch-norm uses running
/// statistics. One angle in degrees per window.
inline std::vector<double> predict(std::span<const FeatureWindow> features,
                                   const RegressorParams& params) {
  params.descriptor.validate();
  std::vector<double> out;
  out.reserve(features.size());
  detail::Workspace ws;
  RegressorParams& mutable_params = const_cast<RegressorParams&>(params);  // kEval never mutates
  constexpr std::size_t kChunk = 256;
  std::vector<const FeatureWindow*> ptrs;
  for (std::size_t begin = 0; begin < features.size(); begin += kChunk) {
    const std::size_t end = std::min(features.size(), begin + kChunk);
    ptrs.clear();
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&features[i]);
    detail::forward(mutable_params, ptrs, ForwardMode::kEval, nullptr, ws);
    for (double y : ws.output) out.push_back(y * params.target_std + params.target_mean);
  }
  return out;
}

/// MSE on the normalized target scale, as optimized internally.
inline double mse_loss(const RegressorParams& params, std::span<const FeatureWindow> features,
                       std::span<const double> targets, ForwardMode mode) {
  detail::check_dataset(features, targets);
  if (mode == ForwardMode::kTrainFull) throw std::invalid_argument("loss probe cannot use dropout mode");
  detail::Workspace ws;
  RegressorParams& mutable_params = const_cast<RegressorParams&>(params);
  const auto ptrs = detail::window_pointers(features);
  detail::forward(mutable_params, ptrs, mode, nullptr, ws);
  double loss = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const double y = (targets[b] - params.target_mean) / params.target_std;
    const double r = ws.output[b] - y;
    loss += r * r;
  }
  return loss / static_cast<double>(targets.size());
}

/// Pointers to every learnable parameter in the canonical (checkpoint) order:
/// per conv stage weight, bias, gamma, beta; then per fc layer weight, bias.
inline std::vector<double*> learnable_pointers(RegressorParams& params) {
  std::vector<double*> ptrs;
  const auto append = [&ptrs](std::vector<double>& v) {
    for (double& x : v) ptrs.push_back(&x);
  };
  for (ConvStageParams& s : params.conv) {
    append(s.weight);
    append(s.bias);
    append(s.bn_gamma);
    append(s.bn_beta);
  }
  for (FcLayerParams& l : params.fc) {
    append(l.weight);
    append(l.bias);
  }
  return ptrs;
}

/// Analytic gradient of the MSE loss w.r.t. every learnable parameter, in
/// canonical order.
struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

inline LossGradient mse_loss_gradient(const RegressorParams& params,
                                      std::span<const FeatureWindow> features,
                                      std::span<const double> targets, ForwardMode mode) {
  detail::check_dataset(features, targets);
  if (mode == ForwardMode::kTrainFull) throw std::invalid_argument("gradient probe cannot use dropout mode");
  detail::Workspace ws;
  RegressorParams& mutable_params = const_cast<RegressorParams&>(params);
  const auto ptrs = detail::window_pointers(features);
  detail::forward(mutable_params, ptrs, mode, nullptr, ws);
  const int B = static_cast<int>(targets.size());
  LossGradient result;
  std::vector<double> d_out(B);
  for (int b = 0; b < B; ++b) {
    const double y = (targets[b] - params.target_mean) / params.target_std;
    const double r = ws.output[b] - y;
    result.loss += r * r / B;
    d_out[b] = 2.0 * r / B;
  }
  detail::Gradients grads = detail::Gradients::zeros_like(params);
  detail::backward(params, ws, d_out, mode, grads);
  const auto append = [&result](const std::vector<double>& v) {
    result.gradient.insert(result.gradient.end(), v.begin(), v.end());
  };
  for (const auto& s : grads.conv) {
    append(s.weight);
    append(s.bias);
    append(s.bn_gamma);
    append(s.bn_beta);
  }
  for (const auto& l : grads.fc) {
    append(l.weight);
    append(l.bias);
  }
  return result;
}

/// Smallest margins to a ReLU or max-pool kink over an evaluation forward
/// pass. Central finite differences are only trustworthy when these margins
/// exceed the perturbation's reach.
struct KinkMargins {
  double min_relu_abs = std::numeric_limits<double>::infinity();
  double min_pool_gap = std::numeric_limits<double>::infinity();
};

inline KinkMargins kink_margins(const RegressorParams& params,
                                std::span<const FeatureWindow> features) {
  detail::Workspace ws;
  RegressorParams& mutable_params = const_cast<RegressorParams&>(params);
  const auto ptrs = detail::window_pointers(features);
  detail::forward(mutable_params, ptrs, ForwardMode::kEval, nullptr, ws);
  KinkMargins margins;
  const auto dims = detail::stage_dims(params.descriptor);
  for (std::size_t s = 0; s < dims.size(); ++s) {
    const auto& cache = ws.stages[s];
    const int M = dims[s].maps, T = dims[s].in_t, To = dims[s].out_t;
    for (int b = 0; b < ws.batch; ++b) {
      for (int m = 0; m < M; ++m) {
        const std::size_t base = (static_cast<std::size_t>(b) * M + m) * T;
        for (int t = 0; t < T; ++t) {
          // act stores relu(bn); the pre-activation margin equals the value
          // itself when positive and its bn magnitude when clipped. Recover
          // the bn output from xhat.
          const double bn = params.conv[s].bn_gamma[m] * cache.xhat[base + t] +
                            params.conv[s].bn_beta[m];
          margins.min_relu_abs = std::min(margins.min_relu_abs, std::abs(bn));
        }
        const std::size_t out_base = (static_cast<std::size_t>(b) * M + m) * To;
        for (int u = 0; u < To; ++u) {
          const double top = cache.act[base + cache.argmax[out_base + u]];
          for (int q = 0; q < params.descriptor.pool_size; ++q) {
            const int t = u * params.descriptor.pool_size + q;
            if (t == cache.argmax[out_base + u]) continue;
            margins.min_pool_gap = std::min(margins.min_pool_gap, top - cache.act[base + t]);
          }
        }
      }
    }
  }
  for (std::size_t l = 0; l + 1 < ws.fc_out.size(); ++l) {
    for (double a : ws.fc_out[l]) {
      // Post-ReLU zero means the pre-activation was <= 0; its margin is not
      // recoverable here, so treat exact zeros as unknown-but-small.
      margins.min_relu_abs = std::min(margins.min_relu_abs, std::abs(a));
    }
  }
  return margins;
}

/// Compares the analytic gradient against central finite differences with
/// step `eps` (batch-norm in fixed-statistics mode, dropout disabled) and
/// returns the maximum guarded relative error over all parameters.
inline double gradient_check(const RegressorParams& params,
                             std::span<const FeatureWindow> features,
                             std::span<const double> targets, double eps) {
  if (features.empty()) throw std::invalid_argument("gradient check needs a nonempty batch");
  RegressorParams probe = params;
  const LossGradient analytic = mse_loss_gradient(probe, features, targets, ForwardMode::kEval);
  const std::vector<double*> slots = learnable_pointers(probe);
  double max_rel = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + eps;
    const double up = mse_loss(probe, features, targets, ForwardMode::kEval);
    *slots[i] = saved - eps;
    const double down = mse_loss(probe, features, targets, ForwardMode::kEval);
    *slots[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.gradient[i];
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace icregress
