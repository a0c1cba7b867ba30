// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass. Runs the full toy training, so expect a few minutes of wall time.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "duralign/checkpoint.hpp"
#include "duralign/gradcheck.hpp"
#include "duralign/trainer.hpp"
#include "oracle_helpers.hpp"

using namespace duralign;

namespace {

struct Criterion {
  int number;
  bool pass;
  std::string detail;
};

std::vector<Criterion> g_results;

void report(int number, bool pass, const std::string& detail) {
  g_results.push_back({number, pass, detail});
  std::printf("criterion %d: %s — %s\n", number, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const auto start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

Tensor<double> random_frames(Rng& rng, int t, int f) {
  Tensor<double> x(Shape{t, f});
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  return x;
}

std::pair<Tensor<double>, Tensor<double>> kink_safe_pair(Rng& rng, int tx, int ty, int f,
                                                         double min_gap = 1e-3) {
  while (true) {
    Tensor<double> x = random_frames(rng, tx, f);
    Tensor<double> y = random_frames(rng, ty, f);
    bool ok = true;
    for (int i = 0; i < tx && ok; ++i)
      for (int j = 0; j < ty && ok; ++j)
        for (int q = 0; q < f && ok; ++q)
          if (std::abs(x.v[static_cast<size_t>(i) * f + q] - y.v[static_cast<size_t>(j) * f + q]) <
              min_gap)
            ok = false;
    if (ok) return {std::move(x), std::move(y)};
  }
}

// ---------------------------------------------------------------------------

void criterion_1_and_2() {
  double start = now_seconds();
  Rng rng(2024);
  double worst_oracle = 0, worst_hard = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int tx = rng.uniform_int(1, 6);
    int ty = rng.uniform_int(1, 6);
    int f = rng.uniform_int(1, 3);
    Tensor<double> x = random_frames(rng, tx, f);
    Tensor<double> y = random_frames(rng, ty, f);
    SoftDtwConfig cfg;  // gamma 0.05, warp 128
    cfg.band_half_width = std::max(tx, ty);  // full band
    double banded = soft_dtw(x, y, cfg).first;
    worst_oracle = std::max(worst_oracle, std::abs(banded - soft_dtw_path_oracle(x, y, cfg)));
    SoftDtwConfig tiny = cfg;
    tiny.gamma = 1e-4;
    double hard = hard_dtw_oracle(x, y, cfg.warp, cfg.cost_indexing);
    worst_hard = std::max(worst_hard, std::abs(soft_dtw(x, y, tiny).first - hard));
  }
  double elapsed = now_seconds() - start;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "path-oracle max diff %.2e (tol 1e-10), %.1fs", worst_oracle,
                elapsed);
  report(1, worst_oracle <= 1e-10 && elapsed < 10.0, buf);
  std::snprintf(buf, sizeof(buf), "hard-limit max diff %.2e (tol 1e-2)", worst_hard);
  report(2, worst_hard <= 1e-2, buf);
}

void criterion_3() {
  double start = now_seconds();

  // soft_dtw_grad against central finite differences
  Rng rng(31337);
  double worst_dtw = 0;
  for (int trial = 0; trial < 6; ++trial) {
    int tx = rng.uniform_int(2, 5);
    int ty = rng.uniform_int(2, 5);
    auto [x, y] = kink_safe_pair(rng, tx, ty, 3);
    SoftDtwConfig cfg;
    cfg.band_half_width = std::max(tx, ty);
    Tensor<double> grad = soft_dtw_grad(x, y, cfg);
    const double h = 1e-5;
    for (size_t i = 0; i < y.v.size(); ++i) {
      double saved = y.v[i];
      y.v[i] = saved + h;
      double up = soft_dtw(x, y, cfg).first;
      y.v[i] = saved - h;
      double down = soft_dtw(x, y, cfg).first;
      y.v[i] = saved;
      double fd = (up - down) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(grad.v[i]), 1e-6});
      worst_dtw = std::max(worst_dtw, std::abs(fd - grad.v[i]) / denom);
    }
  }

  // the full boundary->grids->W,C->upsample path
  double worst_upsample = 0;
  {
    ParameterStore<double> store;
    Rng prng(404);
    register_upsampler(store, 6, prng);
    Tensor<double>& d = store.create("d", Shape{3});
    d.v = {2.1, 1.4, 2.6};
    Tensor<double>& v = store.create("v", Shape{3, 6});
    for (auto& x : v.v) x = prng.uniform(-1.0, 1.0);
    Tensor<double> probe = random_frames(prng, 6, 6);
    auto build = [&](Graph<double>& g) {
      auto [s, e] = token_boundaries(g, g.param(store, "d"));
      auto [sg, eg] = boundary_grids(g, s, e, 6);
      int vn = g.param(store, "v");
      int cells = upsampler_cells(g, store, sg, eg, vn, NormMode::train);
      int w = attention_weights_from_cells(g, store, cells, 6, 3);
      int c = aux_context_from_cells(g, store, cells);
      int o = upsample(g, w, vn, c, g.param(store, "upsampler.proj_a"));
      return sum(g, mul(g, o, g.leaf(probe)));
    };
    worst_upsample = check_gradients<double>(store, build, 1e-5).worst;
  }

  // micro-config end-to-end model
  double worst_model = 0;
  {
    ModelConfig cfg;
    cfg.vocab_size = 5;
    cfg.embed_dim = 6;
    cfg.feature_dim = 4;
    cfg.latent_dim = 2;
    cfg.decoder_blocks = 2;
    cfg.seed = 11;
    AcousticModel<double> model(cfg);
    Rng trng(505);
    std::vector<int> ids = {1, 3, 0};
    Tensor<double> target = random_frames(trng, 8, 4);
    auto build = [&](Graph<double>& g) {
      auto fn = model.forward_train(g, ids, target, 909, 0.5);
      return fn.total;
    };
    worst_model = check_gradients<double>(model.params(), build, 1e-5).worst;
  }

  double elapsed = now_seconds() - start;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "soft_dtw_grad %.2e (tol 1e-4), upsampling path %.2e (tol 1e-4), end-to-end %.2e "
                "(tol 1e-3), %.1fs (budget 60s)",
                worst_dtw, worst_upsample, worst_model, elapsed);
  report(3, worst_dtw <= 1e-4 && worst_upsample <= 1e-4 && worst_model <= 1e-3 && elapsed < 60.0,
         buf);
}

void criterion_4() {
  Rng rng(777);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    int tx = rng.uniform_int(2, 14);
    int ty = rng.uniform_int(2, 14);
    Tensor<double> x = random_frames(rng, tx, 3);
    Tensor<double> y = random_frames(rng, ty, 3);
    SoftDtwConfig a;
    a.band_half_width = std::max(tx, ty);
    SoftDtwConfig b;
    b.band_half_width = 5 * std::max(tx, ty);
    worst = std::max(worst, std::abs(soft_dtw(x, y, a).first - soft_dtw(x, y, b).first));
  }

  // performance budget: T = 2000, F = 80, band width 60, single-threaded
  Tensor<double> big_x(Shape{2000, 80}), big_y(Shape{2000, 80});
  Rng brng(778);
  for (auto& v : big_x.v) v = brng.uniform(-1, 1);
  for (auto& v : big_y.v) v = brng.uniform(-1, 1);
  SoftDtwConfig banded;  // half width 30 -> width 60
  auto t0 = std::chrono::steady_clock::now();
  double loss = soft_dtw(big_x, big_y, banded).first;
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "band-consistency max diff %.2e (tol 1e-12); T=2000 F=80 width 60 in %.3fs "
                "(budget 1s, loss %.1f)",
                worst, secs, loss);
  report(4, worst <= 1e-12 && secs <= 1.0 && std::isfinite(loss), buf);
}

void criterion_5() {
  Rng rng(888);
  bool ok = true;
  std::string why;

  // W row sums within 1e-6 of 1
  {
    ParameterStore<double> store;
    register_upsampler(store, 6, rng);
    Graph<double> g;
    Tensor<double> v = random_frames(rng, 4, 6);
    Tensor<double> sgrid = random_frames(rng, 9, 4);
    Tensor<double> egrid = random_frames(rng, 9, 4);
    int w = attention_weights(g, store, g.leaf(sgrid), g.leaf(egrid), g.leaf(v), NormMode::train);
    for (int t = 0; t < 9; ++t) {
      double sum = 0;
      for (int k = 0; k < 4; ++k) {
        double x = g.value(w).v[static_cast<size_t>(t) * 4 + k];
        if (x < 0) ok = false;
        sum += x;
      }
      if (std::abs(sum - 1.0) > 1e-6) ok = false;
    }
    if (!ok) why = "W rows not stochastic";
  }

  // S + E reconstructs d on every row
  if (ok) {
    Graph<double> g;
    Tensor<double> d(Shape{5});
    for (auto& x : d.v) x = rng.uniform(0.0, 5.0);
    int dn = g.leaf(d);
    auto [s, e] = token_boundaries(g, dn);
    auto [sg, eg] = boundary_grids(g, s, e, 8);
    for (int t = 0; t < 8 && ok; ++t)
      for (int k = 0; k < 5 && ok; ++k) {
        double total = g.value(sg).v[static_cast<size_t>(t) * 5 + k] +
                       g.value(eg).v[static_cast<size_t>(t) * 5 + k];
        if (std::abs(total - d.v[static_cast<size_t>(k)]) > 1e-12) {
          ok = false;
          why = "S + E does not reconstruct d";
        }
      }
  }

  // hard indicator W with C = 0 is the length regulator, bitwise
  if (ok) {
    std::vector<int> durations = {3, 1, 2};
    Tensor<double> v = random_frames(rng, 3, 6);
    Tensor<double> w(Shape{6, 3});
    int t = 0;
    for (int k = 0; k < 3; ++k)
      for (int r = 0; r < durations[static_cast<size_t>(k)]; ++r, ++t)
        w.v[static_cast<size_t>(t) * 3 + k] = 1.0;
    Graph<double> g;
    int o = upsample(g, g.leaf(w), g.leaf(v), g.leaf(zeros<double>(Shape{18, 2})),
                     g.leaf(zeros<double>(Shape{2, 6})));
    if (g.value(o).v != oracle::repeat_regulator(v, durations).v) {
      ok = false;
      why = "indicator attention differs from the length regulator";
    }
  }

  // Eq. 7 breakdown recombines within 1e-9
  if (ok) {
    ModelConfig cfg;
    cfg.vocab_size = 5;
    cfg.embed_dim = 6;
    cfg.feature_dim = 4;
    cfg.latent_dim = 2;
    cfg.decoder_blocks = 3;
    cfg.seed = 3;
    AcousticModel<double> model(cfg);
    Tensor<double> target = random_frames(rng, 12, 4);
    Graph<double> g;
    auto fn = model.forward_train(g, {1, 2, 3, 4}, target, 55, 0.7);
    LossBreakdown bd = model.extract_breakdown(g, fn, 0.7, 12);
    if (std::abs(bd.total - bd.recombine(cfg.lambda_dur)) > 1e-9 ||
        std::abs(static_cast<double>(g.value(fn.total).v[0]) - bd.total) > 1e-9) {
      ok = false;
      why = "loss breakdown does not recombine";
    }
  }

  report(5, ok, ok ? "row sums, grid identity, regulator equivalence, breakdown recombination" : why);
}

// toy-run artifacts shared by criteria 6-9
struct ToyRun {
  std::vector<Utterance> corpus;
  std::vector<Utterance> train_split;
  std::string csv;
  EvalMetrics metrics;
  double train_seconds = 0;
  bool trained = false;
};

ToyRun g_toy;

void criterion_6() {
  double start = now_seconds();
  SyntheticCorpusSpec spec;  // 200 utterances, vocab 20, durations 2-8, F=8
  g_toy.corpus = generate_corpus(spec);
  size_t split = held_out_begin(g_toy.corpus.size());
  g_toy.train_split.assign(g_toy.corpus.begin(), g_toy.corpus.begin() + static_cast<int64_t>(split));

  ModelConfig cfg;  // defaults: 2000 steps, batch 8, seeded
  AcousticModel<float> model(cfg);
  TrainOptions opt;
  opt.steps = 2000;
  std::ostringstream csv;
  run_training(model, g_toy.train_split, opt, csv);
  g_toy.csv = csv.str();
  g_toy.train_seconds = now_seconds() - start;

  save_checkpoint(model.params(), 2000, "acceptance_toy.ckpt");
  g_toy.metrics = evaluate(
      model, std::span<const Utterance>(g_toy.corpus.data() + split, g_toy.corpus.size() - split));
  g_toy.trained = true;

  // early/late averages from the loss CSV
  std::istringstream lines(g_toy.csv);
  std::string line;
  std::getline(lines, line);  // header
  double early_spec = 0, early_total = 0, late_total = 0;
  int early_n = 0, late_n = 0;
  while (std::getline(lines, line)) {
    long long step;
    double spec_v, dur, kl, beta, total;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf", &step, &spec_v, &dur, &kl, &beta,
                    &total) != 6)
      continue;
    if (step <= 100) {
      early_spec += spec_v;
      early_total += total;
      ++early_n;
    }
    if (step > 1900) {
      late_total += total;
      ++late_n;
    }
  }
  early_spec /= early_n;
  early_total /= early_n;
  late_total /= late_n;

  bool dur_ok = g_toy.metrics.dur_abs_err <= 1.0;
  bool corr_ok = g_toy.metrics.dur_correlation >= 0.8;
  bool spec_ok = g_toy.metrics.dtw_per_frame <= 0.5 * early_spec;
  bool loss_ok = late_total < early_total;
  bool time_ok = g_toy.train_seconds <= 600.0;
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "held-out |T-sum d|/K %.3f (tol 1.0), corr %.3f (tol 0.8), dtw/frame %.4f vs "
                "early %.4f (need <=50%%), total %.3f -> %.3f, coverage %.3f, %.0fs (budget 600s)",
                g_toy.metrics.dur_abs_err, g_toy.metrics.dur_correlation, g_toy.metrics.dtw_per_frame,
                early_spec, early_total, late_total, g_toy.metrics.coverage, g_toy.train_seconds);
  report(6, dur_ok && corr_ok && spec_ok && loss_ok && time_ok, buf);
}

void criterion_7() {
  if (!g_toy.trained) {
    report(7, false, "toy model unavailable");
    return;
  }
  // duration control at 64-bit so the closed forms are exact
  RawCheckpoint raw = load_checkpoint_raw("acceptance_toy.ckpt");
  ModelConfig cfg;
  AcousticModel<double> model(cfg);
  restore_checkpoint(model.params(), raw);

  std::vector<int> ids = g_toy.corpus.back().token_ids;
  auto base = model.infer(ids);
  double base_sum = 0;
  for (double d : base.durations) base_sum += d;

  bool ok = true;
  std::string why;
  for (double alpha : {0.75, 1.0, 1.25}) {
    auto scaled = model.infer(ids, {{0, static_cast<int>(ids.size()), alpha}});
    int expected = std::max(1, static_cast<int>(std::floor(alpha * base_sum + 0.5)));
    if (scaled.frames != expected) {
      ok = false;
      why = "global factor " + std::to_string(alpha) + ": got " + std::to_string(scaled.frames) +
            " frames, expected " + std::to_string(expected);
    }
  }

  int k = static_cast<int>(ids.size());
  int span_start = k - 2;
  for (double f : {0.5, 1.0, 1.5}) {
    auto spanned = model.infer(ids, {{span_start, k, f}});
    double span_sum = 0, total_before = 0, total_after = 0;
    for (int i = 0; i < k; ++i) {
      total_before += base.durations[static_cast<size_t>(i)];
      total_after += spanned.durations[static_cast<size_t>(i)];
      if (i >= span_start) span_sum += base.durations[static_cast<size_t>(i)];
      // untargeted tokens unchanged, bitwise
      if (i < span_start && spanned.durations[static_cast<size_t>(i)] != base.durations[static_cast<size_t>(i)]) {
        ok = false;
        why = "span scaling touched an untargeted token";
      }
    }
    if (std::abs((total_after - total_before) - (f - 1.0) * span_sum) > 1e-9) {
      ok = false;
      why = "span scaling moved the total by the wrong amount";
    }
  }
  report(7, ok, ok ? "global factors 0.75/1.0/1.25 and span factors 0.5/1.0/1.5 behave exactly" : why);
}

void criterion_8() {
  if (!g_toy.trained) {
    report(8, false, "toy model unavailable");
    return;
  }
  auto slurp = [](const char* path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };

  // checkpoint: save -> load -> save byte-identical (32-bit, lossless)
  RawCheckpoint raw = load_checkpoint_raw("acceptance_toy.ckpt");
  ModelConfig cfg;
  AcousticModel<float> reloaded(cfg);
  restore_checkpoint(reloaded.params(), raw);
  save_checkpoint(reloaded.params(), raw.step, "acceptance_toy2.ckpt");
  bool ckpt_ok = slurp("acceptance_toy.ckpt") == slurp("acceptance_toy2.ckpt");

  // corpus: save -> load -> save byte-identical
  save_corpus(g_toy.corpus, "acceptance_corpus.bin");
  auto loaded = load_corpus("acceptance_corpus.bin");
  save_corpus(loaded, "acceptance_corpus2.bin");
  bool corpus_ok = slurp("acceptance_corpus.bin") == slurp("acceptance_corpus2.bin");

  // a reloaded checkpoint reproduces the evaluation loss bit-for-bit
  size_t split = held_out_begin(g_toy.corpus.size());
  EvalMetrics again = evaluate(
      reloaded, std::span<const Utterance>(g_toy.corpus.data() + split, g_toy.corpus.size() - split));
  bool eval_ok = again.dtw_per_frame == g_toy.metrics.dtw_per_frame &&
                 again.dur_abs_err == g_toy.metrics.dur_abs_err &&
                 again.dur_correlation == g_toy.metrics.dur_correlation;

  std::remove("acceptance_toy2.ckpt");
  std::remove("acceptance_corpus.bin");
  std::remove("acceptance_corpus2.bin");
  char buf[160];
  std::snprintf(buf, sizeof(buf), "checkpoint bytes %s, corpus bytes %s, reloaded eval %s",
                ckpt_ok ? "identical" : "DIFFER", corpus_ok ? "identical" : "DIFFER",
                eval_ok ? "bit-identical" : "DIFFER");
  report(8, ckpt_ok && corpus_ok && eval_ok, buf);
}

void criterion_9() {
  auto run = [&](int threads) {
    ModelConfig cfg;
    AcousticModel<float> model(cfg);
    TrainOptions opt;
    opt.steps = 200;
    opt.threads = threads;
    std::ostringstream csv;
    run_training(model, g_toy.train_split, opt, csv);
    return csv.str();
  };
  std::string a = run(1);
  std::string b = run(1);
  std::string c = run(4);
  bool ok = a == b && a == c;
  report(9, ok, ok ? "200-step loss CSVs identical across reruns and with 4 worker threads"
                   : "loss CSVs differ");
}

}  // namespace

int main() {
  criterion_1_and_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  std::remove("acceptance_toy.ckpt");

  int failures = 0;
  for (const auto& c : g_results) failures += c.pass ? 0 : 1;
  std::printf("%zu criteria, %d failed\n", g_results.size(), failures);
  return failures == 0 ? 0 : 1;
}
