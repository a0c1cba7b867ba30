#pragma once

// Toy end-to-end acoustic model: token encoder, simplified per-token
// variational posterior (single cross-attention over position-embedded target
// frames), the duration/upsampling path, a lightweight-convolution decoder
// stack with a spectrogram head per block, and the total objective
// (1/(L*T)) sum_l L_spec^l + lambda_dur * L_dur + beta * D_KL.

#include <atomic>
#include <thread>

#include "duralign/aligner.hpp"
#include "duralign/data.hpp"
#include "duralign/softdtw.hpp"

namespace duralign {

struct ModelConfig {
  int vocab_size = 20;
  int embed_dim = 32;     // M
  int feature_dim = 8;    // F
  int latent_dim = 4;     // Z
  int decoder_blocks = 6;  // L
  int decoder_conv_width = 3;
  int duration_conv_width = 3;
  SoftDtwConfig dtw;
  double lambda_dur = 100.0;
  int64_t beta_start = 100;
  int64_t beta_end = 1000;
  int64_t warmup_steps = 400;
  int lr_dim = 32;
  double grad_clip = 1.0;  // global L2 norm cap; 0 disables
  uint64_t seed = 1;
  int batch_size = 8;
  bool layer_norm = false;  // config `norm = layer` swaps batch norm out
  double bn_momentum = 0.99;
  bool train_length_predicted = false;  // `train_length = predicted`

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || feature_dim < 1 || latent_dim < 1)
      throw ConfigError("model: all dimensions must be >= 1");
    if (decoder_blocks < 1) throw ConfigError("model: decoder_blocks must be >= 1");
    if (decoder_conv_width % 2 == 0 || duration_conv_width % 2 == 0)
      throw ConfigError("model: conv widths must be odd");
    if (beta_start >= beta_end) throw ConfigError("model: beta_start must be < beta_end");
    if (warmup_steps < 1) throw ConfigError("model: warmup_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("model: batch_size must be >= 1");
    if (!(bn_momentum >= 0 && bn_momentum < 1)) throw ConfigError("model: bad bn_momentum");
  }
};

/// 0 before `start`, 1 after `end`, linear in between.
inline double beta_schedule(int64_t step, int64_t start, int64_t end) {
  if (start >= end) throw std::invalid_argument("beta_schedule: start must be < end");
  if (step <= start) return 0.0;
  if (step >= end) return 1.0;
  return static_cast<double>(step - start) / static_cast<double>(end - start);
}

/// dim^-0.5 * min(step^-0.5, step * warmup^-1.5); step 0 is treated as 1.
inline double lr_schedule(int64_t step, int64_t warmup, int dim) {
  if (warmup < 1) throw std::invalid_argument("lr_schedule: warmup must be >= 1");
  if (step < 1) step = 1;
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(dim), -0.5) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

struct LossBreakdown {
  std::vector<double> spec_losses;  // per decoder block, unnormalized
  double dur = 0;
  double kl = 0;
  double beta = 0;
  double total = 0;  // recombined in double from the parts
  int target_frames = 0;

  double recombine(double lambda_dur) const {
    double spec = 0;
    for (double s : spec_losses) spec += s;
    spec /= static_cast<double>(spec_losses.size()) * target_frames;
    return spec + lambda_dur * dur + beta * kl;
  }
  /// Mean final-block Soft-DTW per target frame; the `spec` CSV column.
  double final_spec_per_frame() const {
    return spec_losses.back() / static_cast<double>(target_frames);
  }
};

struct DurationSpan {
  int start = 0;  // token range [start, end)
  int end = 0;
  double factor = 1.0;
};

/// d'_k = factor * d_k inside each span, unchanged outside. Spans must not
/// overlap; factors must be nonnegative.
template <class T>
std::vector<T> control_durations(const std::vector<T>& d, const std::vector<DurationSpan>& spans) {
  int k = static_cast<int>(d.size());
  std::vector<int> owner(static_cast<size_t>(k), -1);
  for (size_t s = 0; s < spans.size(); ++s) {
    const auto& span = spans[s];
    if (span.factor < 0) throw std::invalid_argument("control_durations: factor must be >= 0");
    if (span.start < 0 || span.end > k || span.start >= span.end)
      throw std::invalid_argument("control_durations: span out of range");
    for (int i = span.start; i < span.end; ++i) {
      if (owner[static_cast<size_t>(i)] >= 0)
        throw std::invalid_argument("control_durations: overlapping spans");
      owner[static_cast<size_t>(i)] = static_cast<int>(s);
    }
  }
  std::vector<T> out = d;
  for (int i = 0; i < k; ++i)
    if (owner[static_cast<size_t>(i)] >= 0)
      out[static_cast<size_t>(i)] =
          static_cast<T>(static_cast<double>(out[static_cast<size_t>(i)]) *
                         spans[static_cast<size_t>(owner[static_cast<size_t>(i)])].factor);
  return out;
}

/// Interleaved sine/cosine position embeddings, base 10000, dimension F.
template <class T>
Tensor<T> sinusoidal_embeddings(int frames, int dim) {
  Tensor<T> pe(Shape{frames, dim});
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < dim; ++i) {
      double freq = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(dim));
      double angle = t * freq;
      pe.v[static_cast<size_t>(t) * dim + i] =
          static_cast<T>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

/// Soft-DTW loss as a single graph node: forward runs the banded DP, the
/// adjoint distributes soft-min weights over the band (soft_dtw_grad).
template <class T>
int softdtw_node(Graph<T>& g, int pred, const Tensor<T>& target, const SoftDtwConfig& cfg) {
  auto [loss, band] = soft_dtw(target, g.value(pred), cfg);
  (void)band;
  return g.op("softdtw", Tensor<T>::scalar(loss), {pred}, [pred, target, cfg](Graph<T>& gr, int self) {
    T go = gr.grad(self).v[0];
    if (go == T(0)) return;
    Tensor<T> dg = soft_dtw_grad(target, gr.value(pred), cfg);
    auto& gp = gr.grad_acc(pred);
    for (size_t i = 0; i < dg.v.size(); ++i) gp.v[i] += go * dg.v[i];
  });
}

template <class T>
struct InferResult {
  Tensor<T> spectrogram;      // final block prediction, T' x F
  std::vector<T> durations;   // after any duration control
  Tensor<T> attention;        // W, T' x K
  int frames = 0;
};

struct EvalMetrics {
  double dur_abs_err = 0;      // mean |T - sum d| / K
  double dur_correlation = 0;  // Pearson r over pooled (predicted, true) pairs
  double dtw_per_frame = 0;    // mean final-block Soft-DTW per target frame
  double coverage = 0;         // tokens hit by per-frame argmax of W
  int utterances = 0;

  std::string csv_line() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%d", dur_abs_err, dur_correlation,
                  dtw_per_frame, coverage, utterances);
    return buf;
  }
};

template <class T>
class AcousticModel {
 public:
  explicit AcousticModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.seed, 0x696e6974ull));
    const int M = cfg_.embed_dim, F = cfg_.feature_dim, Z = cfg_.latent_dim;

    auto& emb = store_.create("encoder.embedding", Shape{cfg_.vocab_size, M});
    init_glorot_uniform(emb, cfg_.vocab_size, M, rng);
    for (int c = 1; c <= 2; ++c) {
      std::string p = "encoder.conv" + std::to_string(c);
      auto& k = store_.create(p + ".kernel", Shape{3, M, M});
      init_glorot_uniform(k, 3 * M, 3 * M, rng);
      store_.create(p + ".bias", Shape{M});
    }

    auto& wq = store_.create("posterior.query.w", Shape{M, M});
    init_glorot_uniform(wq, M, M, rng);
    auto& wk = store_.create("posterior.key.w", Shape{F, M});
    init_glorot_uniform(wk, F, M, rng);
    auto& wv = store_.create("posterior.value.w", Shape{F, M});
    init_glorot_uniform(wv, F, M, rng);
    auto& mu = store_.create("posterior.mean.w", Shape{M, Z});
    init_glorot_uniform(mu, M, Z, rng);
    store_.create("posterior.mean.b", Shape{Z});
    auto& lv = store_.create("posterior.logvar.w", Shape{M, Z});
    init_glorot_uniform(lv, M, Z, rng);
    store_.create("posterior.logvar.b", Shape{Z});

    register_duration_predictor(store_, M, Z, cfg_.duration_conv_width, rng);
    register_upsampler(store_, M, rng);

    const int w = cfg_.decoder_conv_width;
    for (int l = 0; l < cfg_.decoder_blocks; ++l) {
      std::string p = "decoder.block" + std::to_string(l);
      auto& gw = store_.create(p + ".glu.w", Shape{M, 2 * M});
      init_glorot_uniform(gw, M, 2 * M, rng);
      store_.create(p + ".glu.b", Shape{2 * M});
      store_.create(p + ".dw.kernel", Shape{w, M});  // zeros -> uniform tap weights
      auto& f1 = store_.create(p + ".ff1.w", Shape{M, M});
      init_glorot_uniform(f1, M, M, rng);
      store_.create(p + ".ff1.b", Shape{M});
      auto& f2 = store_.create(p + ".ff2.w", Shape{M, M});
      init_glorot_uniform(f2, M, M, rng);
      store_.create(p + ".ff2.b", Shape{M});
      auto& hw = store_.create(p + ".head.w", Shape{M, F});
      init_glorot_uniform(hw, M, F, rng);
      store_.create(p + ".head.b", Shape{F});
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  /// Embedding lookup plus two width-3 convolutions with Swish.
  int encode_tokens(Graph<T>& g, const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("encode_tokens: empty id sequence");
    int h = embedding(g, g.param(store_, "encoder.embedding"), ids);
    h = swish(g, conv1d(g, h, g.param(store_, "encoder.conv1.kernel"),
                        g.param(store_, "encoder.conv1.bias")));
    h = swish(g, conv1d(g, h, g.param(store_, "encoder.conv2.kernel"),
                        g.param(store_, "encoder.conv2.bias")));
    return h;
  }

  struct Latent {
    int mu = -1, logvar = -1, z = -1;  // graph nodes; mu/logvar = -1 at inference
  };

  /// Posterior: sinusoidal position embeddings on target frames, one
  /// dot-product cross-attention pooling (queries from H), linear mean and
  /// log-variance heads, reparameterized sample.
  Latent posterior_latent(Graph<T>& g, int h, const Tensor<T>& target, uint64_t eps_seed) {
    if (target.size() == 0) throw std::invalid_argument("posterior_latent: empty target");
    const int K = g.value(h).dim(0), M = cfg_.embed_dim, Z = cfg_.latent_dim;
    int frames = g.leaf(target, "target");
    int pe = g.leaf(sinusoidal_embeddings<T>(target.dim(0), cfg_.feature_dim), "posemb");
    int conditioned = add(g, frames, pe);
    int q = matmul(g, h, g.param(store_, "posterior.query.w"));
    int keys = matmul(g, conditioned, g.param(store_, "posterior.key.w"));
    int vals = matmul(g, conditioned, g.param(store_, "posterior.value.w"));
    int scores = scale(g, matmul(g, q, transpose(g, keys)), 1.0 / std::sqrt(static_cast<double>(M)));
    int attn = softmax(g, scores, 1);  // K x T, over frames
    int pooled = matmul(g, attn, vals);
    Latent lat;
    lat.mu = linear(g, pooled, g.param(store_, "posterior.mean.w"), g.param(store_, "posterior.mean.b"));
    lat.logvar =
        linear(g, pooled, g.param(store_, "posterior.logvar.w"), g.param(store_, "posterior.logvar.b"));
    Rng rng(eps_seed);
    Tensor<T> eps(Shape{K, Z});
    for (auto& x : eps.v) x = static_cast<T>(rng.normal());
    int noise = mul(g, exp_op(g, scale(g, lat.logvar, 0.5)), g.leaf(std::move(eps), "eps"));
    lat.z = add(g, lat.mu, noise);
    return lat;
  }

  /// Zero latent (prior mean), used at inference.
  Latent prior_latent(Graph<T>& g, int token_count) {
    Latent lat;
    lat.z = g.leaf(zeros<T>(Shape{token_count, cfg_.latent_dim}), "prior_z");
    return lat;
  }

  /// Sum over tokens and dims of (exp(lv) + mu^2 - 1 - lv)/2, averaged over
  /// tokens.
  int kl_divergence(Graph<T>& g, const Latent& lat) {
    int K = g.value(lat.mu).dim(0);
    int term = add(g, add(g, exp_op(g, lat.logvar), mul(g, lat.mu, lat.mu)),
                   affine(g, lat.logvar, -1.0, -1.0));
    return scale(g, sum(g, term), 0.5 / static_cast<double>(K));
  }

  /// Decoder stack; returns one prediction node per block, all T x F.
  std::vector<int> decode_iterative(Graph<T>& g, int o) {
    const int M = cfg_.embed_dim;
    std::vector<int> preds;
    int u = o;
    for (int l = 0; l < cfg_.decoder_blocks; ++l) {
      std::string p = "decoder.block" + std::to_string(l);
      int gates = linear(g, u, g.param(store_, p + ".glu.w"), g.param(store_, p + ".glu.b"));
      int glu = mul(g, slice_cols(g, gates, 0, M), sigmoid(g, slice_cols(g, gates, M, 2 * M)));
      int conv = depthwise_softmax_conv(g, glu, g.param(store_, p + ".dw.kernel"));
      int h1 = add(g, u, conv);
      int ff = linear(g, swish(g, linear(g, h1, g.param(store_, p + ".ff1.w"),
                                         g.param(store_, p + ".ff1.b"))),
                      g.param(store_, p + ".ff2.w"), g.param(store_, p + ".ff2.b"));
      u = add(g, h1, ff);
      preds.push_back(linear(g, u, g.param(store_, p + ".head.w"), g.param(store_, p + ".head.b")));
    }
    return preds;
  }

  struct ForwardNodes {
    int h = -1, v = -1, d = -1, s_grid = -1, e_grid = -1, w = -1, c = -1, o = -1;
    int dur_loss = -1, kl = -1, total = -1;
    std::vector<int> spec_losses;
    std::vector<int> preds;
    Latent latent;
  };

  /// Full training-mode forward for one utterance; `total` is the Eq.-7 root.
  ForwardNodes forward_train(Graph<T>& g, const std::vector<int>& ids, const Tensor<T>& target,
                             uint64_t eps_seed, double beta) {
    ForwardNodes fn;
    fn.h = encode_tokens(g, ids);
    fn.latent = posterior_latent(g, fn.h, target, eps_seed);
    std::tie(fn.v, fn.d) = predict_durations(g, store_, fn.h, fn.latent.z);
    const int t_target = target.dim(0);
    fn.dur_loss = duration_loss(g, fn.d, t_target);
    int t_frames = t_target;
    if (cfg_.train_length_predicted) {
      std::vector<T> dv = g.value(fn.d).v;
      t_frames = inferred_frame_count(dv);
    }
    auto [s, e] = token_boundaries(g, fn.d);
    std::tie(fn.s_grid, fn.e_grid) = boundary_grids(g, s, e, t_frames);
    int cells = upsampler_cells(g, store_, fn.s_grid, fn.e_grid, fn.v, NormMode::train,
                                cfg_.layer_norm);
    fn.w = attention_weights_from_cells(g, store_, cells, t_frames, static_cast<int>(ids.size()));
    fn.c = aux_context_from_cells(g, store_, cells);
    fn.o = upsample(g, fn.w, fn.v, fn.c, g.param(store_, "upsampler.proj_a"));
    fn.preds = decode_iterative(g, fn.o);
    for (int pred : fn.preds) fn.spec_losses.push_back(softdtw_node(g, pred, target, cfg_.dtw));
    int spec_sum = fn.spec_losses[0];
    for (size_t l = 1; l < fn.spec_losses.size(); ++l) spec_sum = add(g, spec_sum, fn.spec_losses[l]);
    int spec_term = scale(g, spec_sum, 1.0 / (static_cast<double>(cfg_.decoder_blocks) * t_target));
    fn.kl = kl_divergence(g, fn.latent);
    fn.total = add(g, add(g, spec_term, scale(g, fn.dur_loss, cfg_.lambda_dur)),
                   scale(g, fn.kl, beta));
    return fn;
  }

  LossBreakdown extract_breakdown(const Graph<T>& g, const ForwardNodes& fn, double beta,
                                  int t_target) const {
    LossBreakdown bd;
    for (int node : fn.spec_losses) bd.spec_losses.push_back(static_cast<double>(g.value(node).v[0]));
    bd.dur = static_cast<double>(g.value(fn.dur_loss).v[0]);
    bd.kl = fn.kl >= 0 ? static_cast<double>(g.value(fn.kl).v[0]) : 0.0;
    bd.beta = beta;
    bd.target_frames = t_target;
    bd.total = bd.recombine(cfg_.lambda_dur);
    return bd;
  }

  /// One optimizer step over a padded batch. Per-utterance graphs run on up
  /// to `threads` workers; gradient reduction and batch-norm folding happen
  /// in slot order, so results are bit-identical for any thread count.
  LossBreakdown train_step(const Batch& batch, int64_t step, int threads = 1) {
    if (batch.size < 1) throw std::invalid_argument("train_step: empty batch");
    const double beta = beta_schedule(step, cfg_.beta_start, cfg_.beta_end);

    struct SlotResult {
      std::map<std::string, Tensor<T>> grads;
      LossBreakdown bd;
      std::vector<typename Graph<T>::BnObservation> obs;
    };
    std::vector<SlotResult> results(static_cast<size_t>(batch.size));

    auto run_slot = [&](int b) {
      std::vector<int> ids = batch.ids_of(b);
      std::vector<float> fr = batch.frames_of(b);
      int t = static_cast<int>(fr.size()) / batch.feature_dim;
      Tensor<T> target(Shape{t, batch.feature_dim});
      for (size_t i = 0; i < fr.size(); ++i) target.v[i] = static_cast<T>(fr[i]);
      Graph<T> g;
      uint64_t eps_seed = mix_seed(mix_seed(cfg_.seed, static_cast<uint64_t>(step)),
                                   0xb000ull + static_cast<uint64_t>(b));
      ForwardNodes fn = forward_train(g, ids, target, eps_seed, beta);
      g.backward(fn.total);
      SlotResult& res = results[static_cast<size_t>(b)];
      g.collect_param_gradients(res.grads);
      res.bd = extract_breakdown(g, fn, beta, t);
      res.obs = std::move(g.bn_observations);
    };

    int workers = std::max(1, std::min(threads, batch.size));
    if (workers == 1) {
      for (int b = 0; b < batch.size; ++b) run_slot(b);
    } else {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      pool.reserve(static_cast<size_t>(workers));
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (int b = next.fetch_add(1); b < batch.size; b = next.fetch_add(1)) run_slot(b);
        });
      for (auto& th : pool) th.join();
    }

    store_.zero_grads();
    LossBreakdown mean;
    mean.spec_losses.assign(static_cast<size_t>(cfg_.decoder_blocks), 0.0);
    double sum_t = 0;
    for (int b = 0; b < batch.size; ++b) {
      SlotResult& res = results[static_cast<size_t>(b)];
      store_.add_gradients(res.grads);
      for (const auto& obs : res.obs) fold_bn_observation(store_, obs, cfg_.bn_momentum);
      for (size_t l = 0; l < res.bd.spec_losses.size(); ++l)
        mean.spec_losses[l] += res.bd.spec_losses[l] / batch.size;
      mean.dur += res.bd.dur / batch.size;
      mean.kl += res.bd.kl / batch.size;
      mean.total += res.bd.total / batch.size;
      sum_t += res.bd.target_frames;
    }
    mean.beta = beta;
    mean.target_frames = static_cast<int>(sum_t / batch.size + 0.5);
    store_.scale_gradients(static_cast<T>(1.0 / batch.size));
    store_.clip_gradients(cfg_.grad_clip);
    store_.adam_step(lr_schedule(step, cfg_.warmup_steps, cfg_.lr_dim), 0.9, 0.98, 1e-9, step);
    return mean;
  }

  /// Inference: zero latent, optional duration control, output length
  /// max(1, round(sum d)).
  InferResult<T> infer(const std::vector<int>& ids, const std::vector<DurationSpan>& spans = {}) {
    if (ids.empty()) throw std::invalid_argument("infer: empty input");
    Graph<T> g;
    int h = encode_tokens(g, ids);
    Latent lat = prior_latent(g, static_cast<int>(ids.size()));
    auto [v, d_node] = predict_durations(g, store_, h, lat.z);
    std::vector<T> d = g.value(d_node).v;
    if (!spans.empty()) d = control_durations(d, spans);
    int frames = inferred_frame_count(d);
    int d_ctl = g.leaf(Tensor<T>(Shape{static_cast<int>(d.size())}, d), "controlled_d");
    auto [s, e] = token_boundaries(g, d_ctl);
    auto [s_grid, e_grid] = boundary_grids(g, s, e, frames);
    int cells = upsampler_cells(g, store_, s_grid, e_grid, v, NormMode::infer, cfg_.layer_norm);
    int w = attention_weights_from_cells(g, store_, cells, frames, static_cast<int>(ids.size()));
    int c = aux_context_from_cells(g, store_, cells);
    int o = upsample(g, w, v, c, g.param(store_, "upsampler.proj_a"));
    std::vector<int> preds = decode_iterative(g, o);
    InferResult<T> out;
    out.spectrogram = g.value(preds.back());
    out.durations = std::move(d);
    out.attention = g.value(w);
    out.frames = frames;
    return out;
  }

  /// Inference-contract forward (z = 0) against a known target: grids built
  /// at the target length so the per-frame Soft-DTW is comparable with the
  /// training log. Used by evaluation.
  struct EvalForward {
    std::vector<T> durations;
    Tensor<T> attention;
    double final_dtw = 0;
  };
  EvalForward eval_forward(const std::vector<int>& ids, const Tensor<T>& target) {
    Graph<T> g;
    int h = encode_tokens(g, ids);
    Latent lat = prior_latent(g, static_cast<int>(ids.size()));
    auto [v, d_node] = predict_durations(g, store_, h, lat.z);
    auto [s, e] = token_boundaries(g, d_node);
    auto [s_grid, e_grid] = boundary_grids(g, s, e, target.dim(0));
    int cells = upsampler_cells(g, store_, s_grid, e_grid, v, NormMode::infer, cfg_.layer_norm);
    int w = attention_weights_from_cells(g, store_, cells, target.dim(0),
                                         static_cast<int>(ids.size()));
    int c = aux_context_from_cells(g, store_, cells);
    int o = upsample(g, w, v, c, g.param(store_, "upsampler.proj_a"));
    std::vector<int> preds = decode_iterative(g, o);
    EvalForward out;
    out.durations = g.value(d_node).v;
    out.attention = g.value(w);
    out.final_dtw = static_cast<double>(soft_dtw(target, g.value(preds.back()), cfg_.dtw).first);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParameterStore<T> store_;
};

}  // namespace duralign
