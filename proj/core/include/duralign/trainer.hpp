#pragma once

// Training loop with CSV loss logging, the held-out split convention, and the
// evaluation metrics reported by the CLI.

#include <ostream>
#include <span>

#include "duralign/model.hpp"

namespace duralign {

inline constexpr const char* kLossCsvHeader = "step,spec,dur,kl,beta,total";

/// Last 10% of the corpus (at least one utterance) is held out; training uses
/// the rest.
inline size_t held_out_begin(size_t corpus_size) {
  if (corpus_size < 2) return corpus_size;
  size_t held = std::max<size_t>(1, corpus_size / 10);
  return corpus_size - held;
}

struct TrainOptions {
  int64_t steps = 2000;
  int threads = 1;
  int log_every = 10;
};

/// Runs `steps` optimizer steps over the given training utterances, writing
/// one CSV line per `log_every` steps (plus the final partial step). The
/// `spec` column is the batch-mean final-block Soft-DTW per target frame.
template <class T>
LossBreakdown run_training(AcousticModel<T>& model, const std::vector<Utterance>& train_split,
                           const TrainOptions& opt, std::ostream& csv) {
  csv << kLossCsvHeader << "\n";
  LossBreakdown last;
  if (opt.steps == 0) return last;
  BatchIterator it(train_split, model.config().batch_size, model.config().seed);
  char line[256];
  for (int64_t step = 1; step <= opt.steps; ++step) {
    Batch batch = it.next();
    last = model.train_step(batch, step, opt.threads);
    if (step % opt.log_every == 0 || step == opt.steps) {
      std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g",
                    static_cast<long long>(step), last.final_spec_per_frame(), last.dur, last.kl,
                    last.beta, last.total);
      csv << line << "\n";
    }
  }
  return last;
}

/// Metrics over a corpus slice using the inference contract (z = 0): mean
/// |T - sum d| / K, Pearson correlation of pooled per-token durations,
/// final-block Soft-DTW per target frame, and the token-coverage rate of the
/// per-frame attention argmax.
template <class T>
EvalMetrics evaluate(AcousticModel<T>& model, std::span<const Utterance> slice) {
  EvalMetrics m;
  std::vector<double> pred_pool, true_pool;
  for (const Utterance& u : slice) {
    Tensor<T> target(Shape{u.frame_count(), u.feature_dim});
    for (size_t i = 0; i < u.frames.size(); ++i) target.v[i] = static_cast<T>(u.frames[i]);
    auto fwd = model.eval_forward(u.token_ids, target);
    const int k = u.token_count();
    double sum_d = 0;
    for (int i = 0; i < k; ++i) {
      double d = static_cast<double>(fwd.durations[static_cast<size_t>(i)]);
      sum_d += d;
      pred_pool.push_back(d);
      true_pool.push_back(static_cast<double>(u.durations[static_cast<size_t>(i)]));
    }
    m.dur_abs_err += std::abs(u.frame_count() - sum_d) / k;
    m.dtw_per_frame += fwd.final_dtw / u.frame_count();
    std::vector<char> hit(static_cast<size_t>(k), 0);
    const auto& w = fwd.attention;
    for (int t = 0; t < w.dim(0); ++t) {
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (w.v[static_cast<size_t>(t) * k + j] > w.v[static_cast<size_t>(t) * k + best]) best = j;
      hit[static_cast<size_t>(best)] = 1;
    }
    int covered = 0;
    for (char h : hit) covered += h;
    m.coverage += static_cast<double>(covered) / k;
    ++m.utterances;
  }
  if (m.utterances > 0) {
    m.dur_abs_err /= m.utterances;
    m.dtw_per_frame /= m.utterances;
    m.coverage /= m.utterances;
  }
  // Pearson r over all pooled (predicted, true) pairs
  size_t n = pred_pool.size();
  if (n > 1) {
    double mp = 0, mt = 0;
    for (size_t i = 0; i < n; ++i) {
      mp += pred_pool[i];
      mt += true_pool[i];
    }
    mp /= n;
    mt /= n;
    double cov = 0, vp = 0, vt = 0;
    for (size_t i = 0; i < n; ++i) {
      double a = pred_pool[i] - mp, b = true_pool[i] - mt;
      cov += a * b;
      vp += a * a;
      vt += b * b;
    }
    m.dur_correlation = (vp > 0 && vt > 0) ? cov / std::sqrt(vp * vt) : 0.0;
  }
  return m;
}

}  // namespace duralign
