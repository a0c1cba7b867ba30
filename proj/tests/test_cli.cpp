// End-to-end checks of the command-line surface: exit codes, artifact files,
// and reproducibility. Each case shells out to the built binary.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "doctest.h"
#include "duralign/data.hpp"

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(DURALIGN_CLI_PATH) + " " + args + " > cli_stdout.txt 2> cli_stderr.txt";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("gen-data writes the configured number of records") {
  CHECK(run_cli("gen-data --out cli_corpus.bin --utterance_count 20 --seed 3") == 0);
  auto corpus = duralign::load_corpus("cli_corpus.bin");
  CHECK(corpus.size() == 20);
  // config echo precedes the run
  std::string out = slurp("cli_stdout.txt");
  CHECK(out.find("utterance_count = 20") != std::string::npos);
}

TEST_CASE("gen-data is byte-reproducible per seed") {
  CHECK(run_cli("gen-data --out cli_corpus_a.bin --utterance_count 10 --seed 5") == 0);
  CHECK(run_cli("gen-data --out cli_corpus_b.bin --utterance_count 10 --seed 5") == 0);
  CHECK(slurp("cli_corpus_a.bin") == slurp("cli_corpus_b.bin"));
  CHECK(run_cli("gen-data --out cli_corpus_c.bin --utterance_count 10 --seed 6") == 0);
  CHECK(slurp("cli_corpus_a.bin") != slurp("cli_corpus_c.bin"));
}

TEST_CASE("bad config keys and paths map to the exit-code contract") {
  {
    std::ofstream os("cli_bad.cfg");
    os << "warp_speed = 9\n";
  }
  CHECK(run_cli("gen-data --spec cli_bad.cfg --out cli_x.bin") == 2);
  CHECK(slurp("cli_stderr.txt").find("warp_speed") != std::string::npos);
  std::remove("cli_bad.cfg");

  CHECK(run_cli("gen-data --spec cli_nonexistent.cfg --out cli_x.bin") == 3);
  CHECK(run_cli("gen-data --out /nonexistent_dir/cli_x.bin --utterance_count 2") == 3);
  CHECK(run_cli("train --data cli_nonexistent.bin --out cli_ck.bin --steps 1") == 3);
  CHECK(run_cli("gen-data --out cli_x.bin --dur_min 0") == 2);
  std::remove("cli_x.bin");
}

TEST_CASE("train --steps 0 writes an empty loss body and a loadable checkpoint") {
  CHECK(run_cli("gen-data --out cli_train_corpus.bin --utterance_count 12 --tokens_max 5") == 0);
  CHECK(run_cli("train --data cli_train_corpus.bin --out cli_ck0.bin --steps 0") == 0);
  std::string csv = slurp("cli_ck0.bin.losses.csv");
  CHECK(csv == "step,spec,dur,kl,beta,total\n");
  CHECK(!slurp("cli_ck0.bin").empty());
}

TEST_CASE("short training run logs ceil(N/10) lines and infer round-trips") {
  CHECK(run_cli("gen-data --out cli_train_corpus.bin --utterance_count 12 --tokens_max 5 "
                "--feature_dim 4") == 0);
  CHECK(run_cli("train --data cli_train_corpus.bin --out cli_ck.bin --steps 25 --decoder_blocks 2 "
                "--embed_dim 8 --feature_dim 4 --batch_size 4 --warmup_steps 10 --beta_start 2 "
                "--beta_end 20") == 0);
  std::string csv = slurp("cli_ck.bin.losses.csv");
  CHECK(count_lines(csv) == 1 + 3);  // header + steps 10, 20, 25

  CHECK(run_cli("infer --checkpoint cli_ck.bin --tokens 1,2,3 --out cli_infer "
                "--dump-align cli_align") == 0);
  std::string out = slurp("cli_stdout.txt");
  CHECK(out.find("frames ") != std::string::npos);
  CHECK(!slurp("cli_infer.spec.csv").empty());
  CHECK(count_lines(slurp("cli_infer.dur.csv")) == 3);
  CHECK(slurp("cli_align.pgm").substr(0, 2) == "P5");
  CHECK(!slurp("cli_align.txt").empty());

  // --scale 1.0 matches the unscaled run exactly
  CHECK(run_cli("infer --checkpoint cli_ck.bin --tokens 1,2,3 --out cli_infer_s1 --scale 1.0") == 0);
  CHECK(slurp("cli_infer_s1.spec.csv") == slurp("cli_infer.spec.csv"));
  CHECK(slurp("cli_infer_s1.dur.csv") == slurp("cli_infer.dur.csv"));

  // bad token id
  CHECK(run_cli("infer --checkpoint cli_ck.bin --tokens 1,99") == 2);
  CHECK(run_cli("infer --checkpoint cli_ck.bin --tokens 1,x") == 2);
  // overlapping controls
  CHECK(run_cli("infer --checkpoint cli_ck.bin --tokens 1,2,3 --scale 0.8 --span 0:2:1.5") == 2);

  // eval prints one CSV data line after the header
  CHECK(run_cli("eval --checkpoint cli_ck.bin --data cli_train_corpus.bin") == 0);
  std::string eval_out = slurp("cli_stdout.txt");
  CHECK(eval_out.find("dur_abs_err,dur_corr,dtw_per_frame,coverage,utterances") != std::string::npos);
}

TEST_CASE("dtw-check passes honestly and fails when corrupted") {
  CHECK(run_cli("dtw-check --trials 8 --max-len 4") == 0);
  CHECK(run_cli("dtw-check --trials 8 --max-len 4 --corrupt-warp") == 1);
  CHECK(run_cli("dtw-check --trials 2 --max-len 1") == 0);  // single-cell case
}

TEST_CASE("unknown command-line keys are parse errors") {
  CHECK(run_cli("gen-data --out cli_x.bin --warp_speed 9") == 2);
  CHECK(run_cli("no-such-command") == 2);
  std::remove("cli_x.bin");
}
