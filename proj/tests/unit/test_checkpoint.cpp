// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "microlab/checkpoint.hpp"
#include "microlab/csv.hpp"
#include "microlab/error.hpp"
#include "testing.hpp"

using namespace microlab;
using namespace microlab::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("microlab_test_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("checkpoint round-trips bitwise") {
  const ModelConfig cfg = small_config();
  Rng rng(1);
  const SegmentationNet net(cfg);
  ParameterSet p = net.build(rng);
  auto [images, masks] = random_batch(2, 16, rng);
  net.forward(p, images, Mode::train, rng);  // nontrivial running statistics
  const fs::path path = temp_file("ckpt.mlab");
  save_checkpoint(path, cfg, p);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.config == cfg);
  CHECK(ck.params.identical(p));
  const fs::path again = temp_file("ckpt2.mlab");
  save_checkpoint(again, ck.config, ck.params);
  CHECK(slurp(path) == slurp(again));
  fs::remove(again);

  SUBCASE("truncation is detected") {
    const std::string bytes = slurp(path);
    spit(path, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
  SUBCASE("trailing bytes are detected") {
    spit(path, slurp(path) + "x");
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
  SUBCASE("bad magic is detected") {
    std::string bytes = slurp(path);
    bytes[0] = 'X';
    spit(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
  SUBCASE("parameters inconsistent with the config are detected") {
    ModelConfig other = cfg;
    other.rsd_out_channels = 6;
    save_checkpoint(path, other, p);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.mlab")), DataError);
}

TEST_CASE("omega files round-trip and reject bad content") {
  UpdateHyperparams w;
  w.lr = 0.0123456789;
  w.steps = 17;
  w.inner_batch = 3;
  w.dropout_rate = 0.31;
  w.aug_rate = 0.77;
  w.mode_tag = OmegaTag::test;
  const fs::path path = temp_file("omega.txt");
  save_omega(path, w);
  CHECK(load_omega(path) == w);

  spit(path, slurp(path) + "extra=1\n");
  CHECK_THROWS_AS(load_omega(path), DataError);
  save_omega(path, w);
  std::string s = slurp(path);
  s.replace(s.find("steps=17"), 8, "steps=1.5");
  spit(path, s);
  CHECK_THROWS_AS(load_omega(path), DataError);
  spit(path, "lr=0.1\n");
  CHECK_THROWS_AS(load_omega(path), DataError);
  save_omega(path, w);
  s = slurp(path);
  s.replace(s.find("dropout_rate=0.31"), 17, "dropout_rate=1.00");
  spit(path, s);
  CHECK_THROWS_AS(load_omega(path), DataError);
  fs::remove(path);
}

TEST_CASE("csv writer and reader") {
  const fs::path path = temp_file("table.csv");
  {
    CsvWriter w(path, {"name", "k", "value"});
    w.row(std::string("a"), std::size_t{5}, 0.1);
    w.row(std::string("b"), std::size_t{7}, 1.0 / 3.0);
    CHECK_THROWS_AS(w.row(std::string("a,b"), 1, 0.0), ContractError);
    CHECK_THROWS_AS(w.write({"only one"}), ContractError);
  }
  const CsvTable t = read_csv(path);
  CHECK(t.header == std::vector<std::string>{"name", "k", "value"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "5");
  CHECK(std::stod(t.rows[1][2]) == 1.0 / 3.0);
  CHECK(format_double(0.1) == "0.10000000000000001");
  fs::remove(path);
}
