// duralign command-line tool: synthetic data generation, training, inference
// with duration control, gradient checks, Soft-DTW oracle checks, and
// evaluation. Exit codes: 0 success, 1 check failure, 2 config/input error,
// 3 I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "duralign/checkpoint.hpp"
#include "duralign/config.hpp"
#include "duralign/gradcheck.hpp"
#include "duralign/trainer.hpp"

using namespace duralign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct CommonArgs {
  std::string config_file;
  std::map<std::string, std::string> overrides;
  std::map<std::string, std::size_t> counts;  // CLI11 option presence
};

/// Registers --config plus one string option per known configuration key.
void add_config_options(CLI::App* cmd, CommonArgs& args, const char* config_flag = "--config") {
  cmd->add_option(config_flag, args.config_file, "key = value configuration file");
  for (const auto& key : config_keys()) {
    args.overrides[key.name] = {};
    cmd->add_option("--" + std::string(key.name), args.overrides[key.name], key.help);
  }
}

RunConfig resolve_config(const CLI::App* cmd, const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  for (const auto& key : config_keys()) {
    const auto* opt = cmd->get_option_no_throw("--" + std::string(key.name));
    if (opt && opt->count() > 0) cfg.set(key.name, args.overrides.at(key.name));
  }
  cfg.apply_env();
  cfg.echo(std::cout);
  return cfg;
}

std::vector<int> parse_token_list(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t pos = 0;
      int id = std::stoi(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      ids.push_back(id);
    } catch (const std::exception&) {
      throw ConfigError("bad token id: `" + item + "`");
    }
  }
  if (ids.empty()) throw ConfigError("empty token list");
  return ids;
}

DurationSpan parse_span(const std::string& text) {
  DurationSpan span;
  if (std::sscanf(text.c_str(), "%d:%d:%lf", &span.start, &span.end, &span.factor) != 3)
    throw ConfigError("bad span `" + text + "`; expected start:end:factor");
  return span;
}

/// Model dimensions recovered from checkpoint tensor shapes; the shapes fully
/// determine the architecture.
ModelConfig config_from_checkpoint(const RawCheckpoint& raw, const RunConfig& run_cfg) {
  ModelConfig cfg = run_cfg.model();
  const auto* emb = raw.find("encoder.embedding");
  if (!emb || emb->shape.size() != 2) throw ConfigError("checkpoint: missing encoder.embedding");
  cfg.vocab_size = emb->shape[0];
  cfg.embed_dim = emb->shape[1];
  const auto* head = raw.find("decoder.block0.head.w");
  if (!head || head->shape.size() != 2) throw ConfigError("checkpoint: missing decoder head");
  cfg.feature_dim = head->shape[1];
  const auto* mu = raw.find("posterior.mean.w");
  if (!mu || mu->shape.size() != 2) throw ConfigError("checkpoint: missing posterior head");
  cfg.latent_dim = mu->shape[1];
  const auto* dw = raw.find("decoder.block0.dw.kernel");
  if (!dw || dw->shape.size() != 2) throw ConfigError("checkpoint: missing decoder conv kernel");
  cfg.decoder_conv_width = dw->shape[0];
  const auto* dk = raw.find("duration.conv1.kernel");
  if (!dk || dk->shape.size() != 3) throw ConfigError("checkpoint: missing duration conv kernel");
  cfg.duration_conv_width = dk->shape[0];
  int blocks = 0;
  while (raw.find("decoder.block" + std::to_string(blocks) + ".head.w")) ++blocks;
  cfg.decoder_blocks = blocks;
  cfg.validate();
  return cfg;
}

template <class T>
void write_spectrogram_csv(const Tensor<T>& spec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  char buf[32];
  int tn = spec.dim(0), f = spec.dim(1);
  for (int t = 0; t < tn; ++t) {
    for (int q = 0; q < f; ++q) {
      std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(spec.v[static_cast<size_t>(t) * f + q]));
      if (q) os << ',';
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

template <class T>
void write_durations_csv(const std::vector<T>& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  char buf[32];
  for (T x : d) {
    std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(x));
    os << buf << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(const RunConfig& cfg, const std::string& out_path) {
  auto corpus = generate_corpus(cfg.corpus());
  save_corpus(corpus, out_path);
  std::cout << "wrote " << corpus.size() << " utterances to " << out_path << "\n";
  return kExitOk;
}

template <class T>
int cmd_train(const RunConfig& cfg, const std::string& data_path, const std::string& out_path,
              int64_t steps) {
  auto corpus = load_corpus(data_path);
  auto train_end = held_out_begin(corpus.size());
  std::vector<Utterance> train_split(corpus.begin(), corpus.begin() + static_cast<int64_t>(train_end));
  if (train_split.empty()) throw ConfigError("train: corpus has no training utterances");
  AcousticModel<T> model(cfg.model());
  std::ofstream csv(out_path + ".losses.csv");
  if (!csv) throw IoError("cannot open for writing: " + out_path + ".losses.csv");
  TrainOptions opt;
  opt.steps = steps;
  opt.threads = cfg.threads();
  run_training(model, train_split, opt, csv);
  if (!csv) throw IoError("write failed: " + out_path + ".losses.csv");
  save_checkpoint(model.params(), static_cast<uint64_t>(steps), out_path);
  std::cout << "trained " << steps << " steps on " << train_split.size() << " utterances; checkpoint "
            << out_path << "\n";
  return kExitOk;
}

int cmd_grad_check(const RunConfig& cfg, uint64_t seed) {
  // micro-config model, 64-bit, full training-mode forward as the root
  ModelConfig mc = cfg.model();
  mc.vocab_size = 5;
  mc.embed_dim = 6;
  mc.feature_dim = 4;
  mc.latent_dim = 2;
  mc.decoder_blocks = 2;
  mc.seed = seed;
  AcousticModel<double> model(mc);

  Rng rng(mix_seed(seed, 0x67636b00ull));
  std::vector<int> ids = {1, 3, 0};
  Tensor<double> target(Shape{8, mc.feature_dim});
  for (auto& x : target.v) x = rng.uniform(-1.0, 1.0);

  auto build = [&](Graph<double>& g) {
    auto fn = model.forward_train(g, ids, target, mix_seed(seed, 0xe5e5ull), 0.5);
    return fn.total;
  };
  auto report = check_gradients<double>(model.params(), build, 1e-5);
  report.print(std::cout);
  bool ok = report.all_below(1e-3);
  std::cout << (ok ? "gradient check passed" : "gradient check FAILED") << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_dtw_check(const RunConfig& cfg, int trials, int max_len, bool corrupt_warp) {
  SoftDtwConfig dtw = cfg.dtw();
  if (corrupt_warp) dtw.debug_vertical_warp_bias = 7.0;  // test hook
  Rng rng(mix_seed(static_cast<uint64_t>(cfg.get_int("seed")), 0xd7c4ull));
  int failures = 0;
  double worst_oracle = 0, worst_hard = 0, worst_band = 0, worst_grad = 0;
  for (int trial = 0; trial < trials; ++trial) {
    int tx = rng.uniform_int(1, max_len);
    int ty = rng.uniform_int(1, max_len);
    int f = rng.uniform_int(1, 3);

    // keep componentwise gaps away from L1 kinks so the FD check is valid
    Tensor<double> x, y;
    for (int attempt = 0;; ++attempt) {
      x = Tensor<double>(Shape{tx, f});
      y = Tensor<double>(Shape{ty, f});
      for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
      for (auto& v : y.v) v = rng.uniform(-1.0, 1.0);
      bool ok = true;
      for (int i = 0; i < tx && ok; ++i)
        for (int j = 0; j < ty && ok; ++j)
          for (int q = 0; q < f && ok; ++q)
            if (std::abs(x.v[static_cast<size_t>(i) * f + q] - y.v[static_cast<size_t>(j) * f + q]) < 1e-3)
              ok = false;
      if (ok || attempt > 500) break;
    }

    SoftDtwConfig full = dtw;
    full.band_half_width = std::max(tx, ty);

    double banded = soft_dtw(x, y, full).first;
    double oracle = soft_dtw_path_oracle(x, y, full);
    worst_oracle = std::max(worst_oracle, std::abs(banded - oracle));
    if (std::abs(banded - oracle) > 1e-10) ++failures;

    SoftDtwConfig tiny = full;
    tiny.gamma = 1e-4;
    double hard = hard_dtw_oracle(x, y, tiny.warp, tiny.cost_indexing);
    double soft_tiny = soft_dtw(x, y, tiny).first;
    worst_hard = std::max(worst_hard, std::abs(soft_tiny - hard));
    if (std::abs(soft_tiny - hard) > 1e-2) ++failures;

    SoftDtwConfig wide = full;
    wide.band_half_width = 10 * std::max(tx, ty);
    double wide_loss = soft_dtw(x, y, wide).first;
    worst_band = std::max(worst_band, std::abs(banded - wide_loss));
    if (std::abs(banded - wide_loss) > 1e-12) ++failures;

    Tensor<double> grad = soft_dtw_grad(x, y, full);
    const double h = 1e-5;
    for (size_t i = 0; i < y.v.size(); ++i) {
      double saved = y.v[i];
      y.v[i] = saved + h;
      double up = soft_dtw(x, y, full).first;
      y.v[i] = saved - h;
      double down = soft_dtw(x, y, full).first;
      y.v[i] = saved;
      double fd = (up - down) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(grad.v[i]), 1e-6});
      double rel = std::abs(fd - grad.v[i]) / denom;
      worst_grad = std::max(worst_grad, rel);
      if (rel > 1e-4) ++failures;
    }
  }
  std::printf("dtw-check: %d trials, max-len %d\n", trials, max_len);
  std::printf("  path-oracle max abs diff   %.3e (tol 1e-10)\n", worst_oracle);
  std::printf("  hard-limit max abs diff    %.3e (tol 1e-2)\n", worst_hard);
  std::printf("  band-consistency max diff  %.3e (tol 1e-12)\n", worst_band);
  std::printf("  gradient max rel err       %.3e (tol 1e-4)\n", worst_grad);
  std::printf("%s\n", failures == 0 ? "dtw-check passed" : "dtw-check FAILED");
  return failures == 0 ? kExitOk : kExitCheckFailed;
}

template <class T>
int cmd_infer(const RunConfig& cfg, const std::string& ckpt_path, const std::string& tokens,
              std::optional<double> scale, const std::vector<std::string>& span_texts,
              const std::string& dump_align, const std::string& out_prefix) {
  RawCheckpoint raw = load_checkpoint_raw(ckpt_path);
  AcousticModel<T> model(config_from_checkpoint(raw, cfg));
  restore_checkpoint(model.params(), raw);

  std::vector<int> ids = parse_token_list(tokens);
  std::vector<DurationSpan> spans;
  if (scale) spans.push_back({0, static_cast<int>(ids.size()), *scale});
  for (const auto& text : span_texts) spans.push_back(parse_span(text));

  auto result = model.infer(ids, spans);
  write_spectrogram_csv(result.spectrogram, out_prefix + ".spec.csv");
  write_durations_csv(result.durations, out_prefix + ".dur.csv");
  if (!dump_align.empty()) {
    write_attention_text(result.attention, dump_align + ".txt");
    write_attention_pgm(result.attention, dump_align + ".pgm");
  }
  std::cout << "frames " << result.frames << "\n";
  return kExitOk;
}

template <class T>
int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path) {
  RawCheckpoint raw = load_checkpoint_raw(ckpt_path);
  AcousticModel<T> model(config_from_checkpoint(raw, cfg));
  restore_checkpoint(model.params(), raw);
  auto corpus = load_corpus(data_path);
  size_t begin = held_out_begin(corpus.size());
  EvalMetrics metrics =
      evaluate(model, std::span<const Utterance>(corpus.data() + begin, corpus.size() - begin));
  std::cout << "dur_abs_err,dur_corr,dtw_per_frame,coverage,utterances\n";
  std::cout << metrics.csv_line() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable duration-alignment toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, grad_args, dtw_args, infer_args, eval_args;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  std::string gen_out;
  add_config_options(gen, gen_args, "--spec");
  gen->add_option("--out", gen_out, "output corpus path")->required();

  auto* train = app.add_subcommand("train", "train on a corpus");
  std::string train_data, train_out;
  int64_t train_steps = 2000;
  add_config_options(train, train_args);
  train->add_option("--data", train_data, "corpus path")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--steps", train_steps, "training steps");

  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient check (64-bit)");
  add_config_options(grad, grad_args);  // --seed arrives through the config keys

  auto* dtw = app.add_subcommand("dtw-check", "Soft-DTW oracle checks (64-bit)");
  int dtw_trials = 100, dtw_max_len = 6;
  bool dtw_corrupt = false;
  add_config_options(dtw, dtw_args);
  dtw->add_option("--trials", dtw_trials, "number of random pairs");
  dtw->add_option("--max-len", dtw_max_len, "maximum sequence length");
  dtw->add_flag("--corrupt-warp", dtw_corrupt)->group("");  // test hook, hidden

  auto* infer = app.add_subcommand("infer", "synthesize from a checkpoint");
  std::string infer_ckpt, infer_tokens, infer_dump, infer_out = "infer";
  double infer_scale = 1.0;
  bool infer_scale_given = false;
  std::vector<std::string> infer_spans;
  add_config_options(infer, infer_args);
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint path")->required();
  infer->add_option("--tokens", infer_tokens, "comma-separated token ids")->required();
  infer->add_option("--scale", infer_scale, "global duration scale factor")
      ->each([&](const std::string&) { infer_scale_given = true; });
  infer->add_option("--span", infer_spans, "per-span duration scale start:end:factor");
  infer->add_option("--dump-align", infer_dump, "write attention matrix (text + PGM) to this prefix");
  infer->add_option("--out", infer_out, "output file prefix");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  std::string eval_ckpt, eval_data;
  add_config_options(eval, eval_args);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "corpus path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(resolve_config(gen, gen_args), gen_out);
    }
    if (train->parsed()) {
      RunConfig cfg = resolve_config(train, train_args);
      return cfg.precision() == 64 ? cmd_train<double>(cfg, train_data, train_out, train_steps)
                                   : cmd_train<float>(cfg, train_data, train_out, train_steps);
    }
    if (grad->parsed()) {
      RunConfig cfg = resolve_config(grad, grad_args);
      return cmd_grad_check(cfg, static_cast<uint64_t>(cfg.get_int("seed")));
    }
    if (dtw->parsed()) {
      RunConfig cfg = resolve_config(dtw, dtw_args);
      return cmd_dtw_check(cfg, dtw_trials, dtw_max_len, dtw_corrupt);
    }
    if (infer->parsed()) {
      RunConfig cfg = resolve_config(infer, infer_args);
      std::optional<double> scale;
      if (infer_scale_given) scale = infer_scale;
      return cfg.precision() == 64
                 ? cmd_infer<double>(cfg, infer_ckpt, infer_tokens, scale, infer_spans, infer_dump,
                                     infer_out)
                 : cmd_infer<float>(cfg, infer_ckpt, infer_tokens, scale, infer_spans, infer_dump,
                                    infer_out);
    }
    if (eval->parsed()) {
      RunConfig cfg = resolve_config(eval, eval_args);
      return cfg.precision() == 64 ? cmd_eval<double>(cfg, eval_ckpt, eval_data)
                                   : cmd_eval<float>(cfg, eval_ckpt, eval_data);
    }
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitConfig;
}
