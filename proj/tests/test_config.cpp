#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "duralign/config.hpp"

using namespace duralign;

TEST_CASE("defaults cover the documented values") {
  RunConfig cfg;
  CHECK(cfg.get_int("vocab_size") == 20);
  CHECK(cfg.get_int("embed_dim") == 32);
  CHECK(cfg.get_double("gamma") == doctest::Approx(0.05));
  CHECK(cfg.get_double("warp") == doctest::Approx(128.0));
  CHECK(cfg.get_int("band_half_width") == 30);
  CHECK(cfg.get_double("lambda_dur") == doctest::Approx(100.0));
  CHECK(cfg.get_int("utterance_count") == 200);
  CHECK(cfg.get_int("dur_min") == 2);
  CHECK(cfg.get_int("dur_max") == 8);
  CHECK(cfg.precision() == 32);
  ModelConfig m = cfg.model();
  CHECK(m.decoder_blocks == 6);
  CHECK(m.dtw.cost_indexing == CostIndexing::paper);
}

TEST_CASE("unknown keys are rejected by name") {
  RunConfig cfg;
  try {
    cfg.set("not_a_key", "1");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("not_a_key") != std::string::npos);
  }
}

TEST_CASE("config files parse key = value lines with comments") {
  {
    std::ofstream os("cfg_test.cfg");
    os << "# comment line\n";
    os << "gamma = 0.1\n";
    os << "\n";
    os << "vocab_size = 12  # trailing comment\n";
  }
  RunConfig cfg;
  cfg.load_file("cfg_test.cfg");
  CHECK(cfg.get_double("gamma") == doctest::Approx(0.1));
  CHECK(cfg.get_int("vocab_size") == 12);
  std::remove("cfg_test.cfg");
}

TEST_CASE("malformed files and values raise config errors") {
  {
    std::ofstream os("cfg_bad.cfg");
    os << "gamma 0.1\n";
  }
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.load_file("cfg_bad.cfg"), ConfigError);
  std::remove("cfg_bad.cfg");

  {
    std::ofstream os("cfg_badkey.cfg");
    os << "warp_speed = 9\n";
  }
  try {
    RunConfig c2;
    c2.load_file("cfg_badkey.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("warp_speed") != std::string::npos);
  }
  std::remove("cfg_badkey.cfg");

  RunConfig c3;
  c3.set("gamma", "fast");
  CHECK_THROWS_AS(c3.get_double("gamma"), ConfigError);
  c3.set("norm", "both");
  CHECK_THROWS_AS(c3.model(), ConfigError);
  CHECK_THROWS_AS(RunConfig().load_file("cfg_missing.cfg"), IoError);
}

TEST_CASE("echo lists every key in sorted order") {
  RunConfig cfg;
  std::ostringstream os;
  cfg.echo(os);
  std::istringstream is(os.str());
  std::string line, prev;
  size_t lines = 0;
  while (std::getline(is, line)) {
    ++lines;
    CHECK(line.find(" = ") != std::string::npos);
    if (!prev.empty()) CHECK(prev < line);
    prev = line;
  }
  CHECK(lines == config_keys().size());
}

TEST_CASE("derived configs reflect overrides") {
  RunConfig cfg;
  cfg.set("cost_indexing", "symmetric");
  cfg.set("norm", "layer");
  cfg.set("train_length", "predicted");
  cfg.set("crossfade", "0");
  ModelConfig m = cfg.model();
  CHECK(m.dtw.cost_indexing == CostIndexing::symmetric);
  CHECK(m.layer_norm);
  CHECK(m.train_length_predicted);
  CHECK_FALSE(cfg.corpus().crossfade);
}
