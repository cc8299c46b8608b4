#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "knlab/attribution.hpp"
#include "knlab/kernels.hpp"

using namespace knlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.d_mlp = 32;
  c.heads = 2;
  c.vocab = 20;
  c.max_seq = 12;
  return c;
}

const std::vector<int> kToks{3, 7, 1, 4, 4, 2};
constexpr int kTarget = 5;

// neuron with the largest suppression delta in a layer (the completeness
// oracle wants a delta comfortably above noise)
std::pair<NeuronRef, double> strongest_neuron(const Transformer& m, int layer, int y, EditScope scope) {
  const double clean = m.forward(kToks, kTarget).prob_of(y);
  NeuronRef best{layer, 0};
  double delta = 0.0;
  for (int i = 0; i < m.config().d_mlp; ++i) {
    auto f = m.forward_with_overrides(kToks, kTarget, EditSpec::suppress({{layer, i}}, scope));
    const double d = clean - f.prob_of(y);
    if (std::abs(d) > std::abs(delta)) {
      delta = d;
      best = {layer, i};
    }
  }
  return {best, delta};
}

}  // namespace

TEST_CASE("midpoint rule: exact on linear integrands, textbook error on quadratics") {
  for (int m : {1, 2, 7, 20}) {
    const double got = midpoint_mean(m, [](double g) { return -0.75 + 4.0 * g; });
    CHECK(got == doctest::Approx(-0.75 + 2.0).epsilon(1e-15));
  }
  for (int m : {1, 3, 10}) {
    const double got = midpoint_mean(m, [](double g) { return g * g; });
    CHECK(got == doctest::Approx(1.0 / 3.0 - 1.0 / (12.0 * m * m)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(midpoint_mean(0, [](double) { return 0.0; }), data_error);
}

TEST_CASE("completeness: alpha matches the two-forward oracle at m=300") {
  Transformer m(tiny_config(), 21);
  const int y = m.forward(kToks, kTarget).argmax();
  for (EditScope scope : {EditScope::all_tokens, EditScope::target_only}) {
    for (int layer : {0, 1}) {
      auto [n, delta] = strongest_neuron(m, layer, y, scope);
      REQUIRE(std::abs(delta) > 1e-5);
      auto map = attribute(m, kToks, kTarget, y, 300, scope);
      const double alpha = map.scores.at(n.layer, n.index);
      CHECK(std::abs(alpha - delta) <= 1e-3);
      CHECK(std::abs(alpha - delta) / std::abs(delta) <= 1e-3);
    }
  }
}

TEST_CASE("completeness error shrinks as the step count grows") {
  Transformer m(tiny_config(), 22);
  const int y = m.forward(kToks, kTarget).argmax();
  const double clean = m.forward(kToks, kTarget).prob_of(y);

  // the six strongest neurons across both layers
  std::vector<std::pair<double, NeuronRef>> ranked;
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < 32; ++i) {
      auto f = m.forward_with_overrides(kToks, kTarget, EditSpec::suppress({{l, i}}));
      ranked.push_back({std::abs(clean - f.prob_of(y)), {l, i}});
    }
  std::sort(ranked.rbegin(), ranked.rend());
  ranked.resize(6);

  std::map<int, double> mean_err;
  for (int steps : {10, 50, 300}) {
    auto map = attribute(m, kToks, kTarget, y, steps);
    double err = 0.0;
    for (const auto& [mag, n] : ranked) {
      (void)mag;
      auto f = m.forward_with_overrides(kToks, kTarget, EditSpec::suppress({n}));
      err += std::abs(map.scores.at(n.layer, n.index) - (clean - f.prob_of(y)));
    }
    mean_err[steps] = err / 6.0;
  }
  CHECK(mean_err[300] < mean_err[50]);
  CHECK(mean_err[50] < mean_err[10]);
}

TEST_CASE("a neuron with zero clean activation gets alpha exactly zero") {
  ModelConfig cfg = tiny_config();
  Transformer seed_model(cfg, 23);
  auto params = seed_model.params();
  Array& w_in = params.at("l0.mlp.w_in");  // (d_model, d_mlp)
  Array& b_in = params.at("l0.mlp.b_in");
  for (int r = 0; r < cfg.d_model; ++r) w_in.at(r, 5) = 0.0;
  b_in[5] = 0.0;
  Transformer m(cfg, std::move(params));
  auto f = m.forward(kToks, kTarget);
  for (int t = 0; t < static_cast<int>(kToks.size()); ++t) CHECK(f.mlp_acts[0].at(t, 5) == 0.0);
  auto map = attribute(m, kToks, kTarget, 0, 20);
  CHECK(map.scores.at(0, 5) == 0.0);
}

TEST_CASE("causal scoring: positions after the target contribute nothing") {
  Transformer m(tiny_config(), 24);
  const int k = 2;  // target in the middle of the sequence
  const int y = m.forward(kToks, k).argmax();

  const Graph& g = m.probs_graph(static_cast<int>(kToks.size()));
  const auto ctx = evaluate(g, m.probs_inputs(kToks, k, y));
  for (int l = 0; l < 2; ++l) {
    const Array grad = gradient(ctx, "p_y", {mlp_act_tap(l)}).at(mlp_act_tap(l));
    for (int t = k + 1; t < static_cast<int>(kToks.size()); ++t)
      for (int i = 0; i < 32; ++i) CHECK(grad.at(t, i) == 0.0);
  }

  // whole-map equality against the truncated prompt
  auto full = attribute(m, kToks, k, y, 10);
  auto cut = attribute(m, std::vector<int>(kToks.begin(), kToks.begin() + k + 1), k, y, 10);
  for (int64_t i = 0; i < full.scores.size(); ++i) CHECK(full.scores[i] == cut.scores[i]);
}

TEST_CASE("batch attribution is ordered and worker-count independent") {
  Transformer m(tiny_config(), 25);
  std::vector<AttributionQuery> qs;
  qs.push_back({kToks, 5, 3, 101});
  qs.push_back({{1, 2, 3}, 2, 7, 102});
  qs.push_back({{9, 9, 4, 1}, 3, 0, 103});

  kernels::set_max_jobs(1);
  auto serial = batch_attribute(m, qs, 8);
  kernels::set_max_jobs(3);
  auto wide = batch_attribute(m, qs, 8);
  kernels::set_max_jobs(0);
  REQUIRE(serial.size() == 3);
  for (size_t i = 0; i < qs.size(); ++i) {
    CHECK(serial[i].prompt_id == qs[i].prompt_id);
    CHECK(serial[i].y == qs[i].y);
    for (int64_t j = 0; j < serial[i].scores.size(); ++j)
      CHECK(serial[i].scores[j] == wide[i].scores[j]);
  }

  auto single = attribute(m, qs[1].tokens, qs[1].target_pos, qs[1].y, 8, EditScope::all_tokens,
                          qs[1].prompt_id);
  auto batch1 = batch_attribute(m, {qs[1]}, 8);
  for (int64_t j = 0; j < single.scores.size(); ++j) CHECK(single.scores[j] == batch1[0].scores[j]);

  CHECK_THROWS_AS(batch_attribute(m, {}, 8), data_error);
  std::vector<AttributionQuery> bad{{{1, 99}, 1, 0, 0}};
  CHECK_THROWS_WITH_AS(batch_attribute(m, bad, 8), doctest::Contains("prompt 0"), data_error);
}

TEST_CASE("mean map matches a scalar-loop oracle") {
  Transformer m(tiny_config(), 26);
  std::vector<AttributionQuery> qs;
  qs.push_back({kToks, 5, 3, 0});
  qs.push_back({{1, 2, 3}, 2, 7, 1});
  auto maps = batch_attribute(m, qs, 5);
  Array mean = mean_scores(maps);
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < 32; ++i) {
      double acc = 0.0;
      for (const auto& mp : maps) acc += mp.scores.at(l, i);
      CHECK(mean.at(l, i) == doctest::Approx(acc / 2.0).epsilon(1e-15));
    }
  CHECK_THROWS_AS(mean_scores({}), data_error);
}

TEST_CASE("non-finite activations are reported as numeric errors") {
  ModelConfig cfg = tiny_config();
  Transformer seed_model(cfg, 27);
  auto params = seed_model.params();
  params.at("wte").at(3, 0) = std::numeric_limits<double>::infinity();
  Transformer m(cfg, std::move(params));
  CHECK_THROWS_AS(attribute(m, kToks, kTarget, 0, 5), numeric_error);
}

TEST_CASE("attribution maps survive a JSONL round trip bit-exactly") {
  Transformer m(tiny_config(), 28);
  std::vector<AttributionQuery> qs;
  qs.push_back({kToks, 5, 3, 11});
  qs.push_back({{1, 2, 3}, 2, 7, 12});
  auto maps = batch_attribute(m, qs, 4);
  const std::string path = "attrib_maps.jsonl";
  write_attributions_jsonl(path, maps);
  auto back = read_attributions_jsonl(path);
  REQUIRE(back.size() == maps.size());
  for (size_t i = 0; i < maps.size(); ++i) {
    CHECK(back[i].prompt_id == maps[i].prompt_id);
    CHECK(back[i].y == maps[i].y);
    CHECK(back[i].m == maps[i].m);
    REQUIRE(back[i].scores.same_shape(maps[i].scores));
    for (int64_t j = 0; j < maps[i].scores.size(); ++j)
      CHECK(back[i].scores[j] == maps[i].scores[j]);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_attributions_jsonl("missing.jsonl"), io_error);
}

TEST_CASE("argument validation") {
  Transformer m(tiny_config(), 29);
  CHECK_THROWS_AS(attribute(m, kToks, kTarget, 0, 0), data_error);
  CHECK_THROWS_AS(attribute(m, kToks, kTarget, 99, 5), data_error);
  CHECK_THROWS_AS(attribute(m, kToks, 99, 0, 5), data_error);
}
