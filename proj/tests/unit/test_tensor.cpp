// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "microlab/error.hpp"
#include "microlab/params.hpp"
#include "microlab/parallel.hpp"
#include "testing.hpp"

using namespace microlab;
using namespace microlab::testing;

TEST_CASE("tensor construction and shape checks") {
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.sum() == 9.0);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractError);
  CHECK_THROWS_AS(t.reshaped({4}), ContractError);
  CHECK(t.reshaped({3, 2}).shape() == std::vector<std::size_t>{3, 2});
  CHECK_THROWS_AS(t.dim(2), ContractError);
}

TEST_CASE("tensor arithmetic") {
  Tensor a({3}, std::vector<double>{1, 2, 3});
  const Tensor b({3}, std::vector<double>{4, 5, 6});
  a.axpy(2.0, b);
  CHECK(a.storage() == std::vector<double>{9, 12, 15});
  CHECK((a - b).storage() == std::vector<double>{5, 7, 9});
  CHECK((a + b).storage() == std::vector<double>{13, 17, 21});
  a *= 0.5;
  CHECK(a[0] == 4.5);
  CHECK(b.squared_norm() == 77.0);
  CHECK_THROWS_AS(a += Tensor({2}), ContractError);
}

TEST_CASE("identical compares bits") {
  Tensor a({2}, std::vector<double>{0.0, 1.0});
  Tensor b({2}, std::vector<double>{-0.0, 1.0});
  CHECK_FALSE(a.identical(b));
  CHECK(a.identical(a));
  CHECK_FALSE(a.identical(Tensor({1, 2}, std::vector<double>{0.0, 1.0})));
  CHECK(a.all_finite());
  b[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(b.all_finite());
}

TEST_CASE("stack_batch and batch_item are inverse") {
  Rng rng(1);
  const Tensor x = random_tensor({1, 2, 2}, rng), y = random_tensor({1, 2, 2}, rng);
  const Tensor* items[] = {&x, &y};
  const Tensor s = stack_batch(items);
  CHECK(s.shape() == std::vector<std::size_t>{2, 1, 2, 2});
  CHECK(batch_item(s, 1).reshaped({1, 2, 2}).identical(y));
}

TEST_CASE("parameter set layout") {
  ParameterSet p;
  p.add_param("a", "a.w", Tensor({2}, 1.0));
  p.add_param("b", "b.w", Tensor({3}, 2.0));
  p.add_stat("a", "a.mean", Tensor({2}, 0.5));
  CHECK(p.num_params() == 5);
  CHECK(p.block_names() == std::vector<std::string>{"a", "b"});
  CHECK(p.squared_norm() == 14.0);
  CHECK_THROWS_AS(p.add_param("a", "a.w", Tensor({1})), ContractError);
  CHECK_THROWS_AS(p.param("missing"), ContractError);

  auto flat = p.flatten();
  CHECK(flat == std::vector<double>{1, 1, 2, 2, 2});
  for (auto& v : flat) v *= 3.0;
  ParameterSet q = p;
  q.unflatten(flat);
  CHECK(q.flatten_block("b") == std::vector<double>{6, 6, 6});
  CHECK(q.stat("a.mean")[0] == 0.5);
  CHECK(q.same_structure(p));
  CHECK_FALSE(q.identical(p));

  q.remove_block("b");
  CHECK_FALSE(q.same_structure(p));
  CHECK(q.block_names() == std::vector<std::string>{"a"});
}

TEST_CASE("sgd step with weight decay") {
  ParameterSet p;
  p.add_param("a", "w", Tensor({2}, std::vector<double>{1.0, -2.0}));
  GradMap g;
  g["w"] = Tensor({2}, std::vector<double>{0.5, 0.5});
  const ParameterSet q = sgd_step(p, g, 0.1, 0.25);
  // w - lr * (g + 2 * wd * w)
  CHECK(q.param("w")[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.5)));
  CHECK(q.param("w")[1] == doctest::Approx(-2.0 - 0.1 * (0.5 - 1.0)));
  CHECK(p.param("w")[0] == 1.0);
  sgd_step_inplace(p, g, 0.1, 0.25);
  CHECK(p.identical(q));
  GradMap bad;
  bad["w"] = Tensor({3});
  CHECK_THROWS_AS(sgd_step_inplace(p, bad, 0.1, 0.0), ContractError);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(r);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(uniform_index(r, 7) < 7);
  }
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  for (std::size_t threads : {1u, 3u}) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(10, threads,
                                 [](std::size_t i) {
                                   if (i == 7) throw DataError("boom");
                                 }),
                    DataError);
  }
}
