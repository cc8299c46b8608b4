#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "knlab/corpora.hpp"
#include "knlab/editing.hpp"
#include "knlab/kernels.hpp"
#include "knlab/rng.hpp"

#include "oracles.hpp"

using namespace knlab;

namespace {

ModelConfig tiny_config(const std::string& masking = "causal") {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.d_mlp = 32;
  c.heads = 2;
  c.vocab = 20;
  c.max_seq = 12;
  c.masking = masking;
  if (masking == "bidirectional") c.mask_token = 19;
  return c;
}

std::vector<Prompt> shared_blank_prompts() {
  // four six-token prompts reading out at position 5
  return {
      {{3, 7, 1, 4, 4, 2}, 5}, {{5, 2, 9, 1, 0, 8}, 5}, {{11, 3, 3, 6, 2, 1}, 5},
      {{2, 14, 7, 7, 5, 9}, 5},
  };
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool reports_bitwise_equal(const EffectReport& a, const EffectReport& b) {
  if (a.num_prompts != b.num_prompts || a.tokens.size() != b.tokens.size()) return false;
  for (size_t i = 0; i < a.tokens.size(); ++i) {
    const auto& x = a.tokens[i];
    const auto& y = b.tokens[i];
    if (x.token != y.token || x.pre_mean != y.pre_mean || x.post_mean != y.post_mean ||
        x.effect != y.effect || x.t != y.t || x.p != y.p || x.significant != y.significant)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("effect summary matches the hand-built pooled oracle") {
  const std::vector<double> pre{0.1, 0.2, 0.1, 0.2};
  const std::vector<double> post{0.4, 0.5, 0.4, 0.5};
  const TokenEffect e = effect_from_samples(7, pre, post);

  // closed-form pooled t for these groups: means .15/.45, each variance 0.01/3
  const double var = 0.01 / 3.0;
  const double t_ref = (0.45 - 0.15) / std::sqrt(var * (0.25 + 0.25));
  CHECK(e.token == 7);
  CHECK(e.pre_mean == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(e.post_mean == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(std::abs(e.t - t_ref) < 1e-9);
  CHECK(std::abs(e.p - oracles::t_two_sided_p_ref(t_ref, 6.0)) < 1e-9);
  CHECK(e.significant);

  // relative effect: (post - pre) / min(post, pre), clamp unused here
  CHECK(e.effect == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("swapping groups negates t, preserves p, mirrors the effect") {
  const std::vector<double> pre{0.1, 0.2, 0.1, 0.2};
  const std::vector<double> post{0.4, 0.5, 0.4, 0.5};
  const TokenEffect fwd = effect_from_samples(0, pre, post);
  const TokenEffect rev = effect_from_samples(0, post, pre);
  CHECK(std::abs(fwd.t + rev.t) < 1e-12);
  CHECK(std::abs(fwd.p - rev.p) < 1e-12);
  CHECK(rev.effect == doctest::Approx(-2.0).epsilon(1e-12));
  // sign invariant: effect sign equals sign of the mean difference
  CHECK((fwd.post_mean - fwd.pre_mean > 0) == (fwd.effect > 0));
  CHECK((rev.post_mean - rev.pre_mean < 0) == (rev.effect < 0));

  // Welch variant shares the symmetry
  const TokenEffect wf = effect_from_samples(0, pre, post, true);
  const TokenEffect wr = effect_from_samples(0, post, pre, true);
  CHECK(std::abs(wf.t + wr.t) < 1e-12);
  CHECK(std::abs(wf.p - wr.p) < 1e-12);
}

TEST_CASE("the denominator clamp keeps zero-probability groups finite") {
  const TokenEffect e = effect_from_samples(1, {0.0, 0.0}, {0.2, 0.2});
  CHECK(e.effect == doctest::Approx(0.2 / 1e-12).epsilon(1e-6));
  CHECK(std::isfinite(e.effect));
  // degenerate equal groups: no evidence, not significant
  const TokenEffect z = effect_from_samples(1, {0.3, 0.3}, {0.3, 0.3});
  CHECK(z.t == 0.0);
  CHECK(z.p == 1.0);
  CHECK_FALSE(z.significant);
  // single-sample groups carry no significance evidence
  const TokenEffect s = effect_from_samples(1, {0.1}, {0.9});
  CHECK(s.t == 0.0);
  CHECK(s.p == 1.0);
  CHECK_FALSE(s.significant);
  CHECK_THROWS_AS(effect_from_samples(1, {}, {0.1}), data_error);
}

TEST_CASE("a no-op edit leaves every probe untouched and non-significant") {
  Transformer m(tiny_config(), 11);
  const auto prompts = shared_blank_prompts();
  const std::vector<int> probes{2, 5, 9, 13};

  EditSpec noop;
  noop.edits.push_back({{0, 3}, EditAction::scale, 1.0, EditScope::all_tokens});
  noop.edits.push_back({{1, 17}, EditAction::scale, 1.0, EditScope::all_tokens});

  for (const EditSpec& spec : {noop, EditSpec{}}) {
    const EffectReport r = edit_effect(m, spec, prompts, probes);
    REQUIRE(r.tokens.size() == probes.size());
    CHECK(r.num_prompts == 4);
    for (const auto& e : r.tokens) {
      CHECK(e.pre_mean == e.post_mean);  // bitwise: scale by 1.0 changes nothing
      CHECK(e.effect == 0.0);
      CHECK(e.t == 0.0);
      CHECK(e.p == 1.0);
      CHECK_FALSE(e.significant);
    }
  }
}

TEST_CASE("suppression shifts probabilities with consistent signs") {
  Transformer m(tiny_config(), 11);
  const auto prompts = shared_blank_prompts();
  std::vector<int> probes;
  for (int t = 0; t < 20; ++t) probes.push_back(t);

  // suppress the whole first MLP layer: a large, definitely-nonzero edit
  std::vector<NeuronRef> all_layer0;
  for (int i = 0; i < 32; ++i) all_layer0.push_back({0, i});
  const EffectReport r = edit_effect(m, EditSpec::suppress(all_layer0), prompts, probes);

  int moved = 0;
  for (const auto& e : r.tokens) {
    CHECK(e.pre_mean >= 0.0);
    CHECK(e.pre_mean <= 1.0);
    CHECK(e.post_mean >= 0.0);
    CHECK(e.post_mean <= 1.0);
    CHECK(e.p >= 0.0);
    CHECK(e.p <= 1.0);
    CHECK(e.significant == (e.p < 0.05));
    if (e.post_mean != e.pre_mean) {
      ++moved;
      // sign invariants: effect and t both follow the mean difference
      CHECK((e.effect > 0.0) == (e.post_mean > e.pre_mean));
      CHECK((e.t > 0.0) == (e.post_mean > e.pre_mean));
    }
  }
  CHECK(moved > 10);

  // KN-set wrapper equals the same edit spelled as an EditSpec
  KNSet kn;
  kn.neurons.insert(all_layer0.begin(), all_layer0.end());
  CHECK(reports_bitwise_equal(suppression_effect(m, kn, prompts, probes), r));

  // Welch flag changes the test statistic machinery, never the means
  const EffectReport w = edit_effect(m, EditSpec::suppress(all_layer0), prompts, probes, true);
  for (size_t j = 0; j < r.tokens.size(); ++j) {
    CHECK(w.tokens[j].pre_mean == r.tokens[j].pre_mean);
    CHECK(w.tokens[j].post_mean == r.tokens[j].post_mean);
    CHECK(w.tokens[j].effect == r.tokens[j].effect);
  }
}

TEST_CASE("per-prompt parallelism does not change the report") {
  Transformer m(tiny_config("bidirectional"), 5);
  std::vector<Prompt> prompts;
  for (int s = 0; s < 6; ++s) prompts.push_back({{1, 2, static_cast<int>(3 + s), 19, 6}, 3});
  std::vector<NeuronRef> neurons{{0, 1}, {1, 5}, {1, 30}};
  const std::vector<int> probes{0, 4, 8, 12};

  kernels::set_max_jobs(1);
  const EffectReport serial = edit_effect(m, EditSpec::suppress(neurons), prompts, probes);
  kernels::set_max_jobs(3);
  const EffectReport parallel = edit_effect(m, EditSpec::suppress(neurons), prompts, probes);
  kernels::set_max_jobs(0);
  const EffectReport defaulted = edit_effect(m, EditSpec::suppress(neurons), prompts, probes);
  CHECK(reports_bitwise_equal(serial, parallel));
  CHECK(reports_bitwise_equal(serial, defaulted));
}

TEST_CASE("effect report CSV and SVG are exact and reproducible") {
  EffectReport r;
  r.num_prompts = 2;
  r.tokens.push_back({7, "these", 0.5, 0.25, -0.5, -2.0, 0.04, true});
  r.tokens.push_back({9, "", 0.125, 0.25, 1.0, 2.0, 0.2, false});

  const std::string csv_path = "effects_test.csv";
  write_effect_csv(csv_path, r);
  const std::string body = slurp(csv_path);
  CHECK(body ==
        "token,pre,post,effect,t,p,significant\n"
        "these,0.5,0.25,-0.5,-2,0.04,1\n"
        "9,0.125,0.25,1,2,0.2,0\n");
  write_effect_csv(csv_path, r);
  CHECK(slurp(csv_path) == body);  // byte-identical on repeat
  std::remove(csv_path.c_str());

  const std::string svg_path = "effects_test.svg";
  write_effect_svg(svg_path, r, "suppression effects");
  const std::string svg_body = slurp(svg_path);
  CHECK(svg_body.find("<svg") != std::string::npos);
  CHECK(svg_body.find("suppression effects") != std::string::npos);
  CHECK(svg_body.find("these") != std::string::npos);
  size_t bars = 0, at = 0;
  while ((at = svg_body.find("class=\"bar\"", at)) != std::string::npos) {
    ++bars;
    ++at;
  }
  CHECK(bars == r.tokens.size());
  write_effect_svg(svg_path, r, "suppression effects");
  CHECK(slurp(svg_path) == svg_body);
  std::remove(svg_path.c_str());
}

TEST_CASE("edit_effect validates its inputs") {
  Transformer m(tiny_config(), 3);
  const auto prompts = shared_blank_prompts();
  CHECK_THROWS_AS(edit_effect(m, EditSpec{}, {}, {1}), data_error);
  CHECK_THROWS_AS(edit_effect(m, EditSpec{}, prompts, {}), data_error);
  CHECK_THROWS_AS(edit_effect(m, EditSpec{}, prompts, {20}), data_error);
  CHECK_THROWS_AS(edit_effect(m, EditSpec{}, prompts, {-1}), data_error);
  auto mixed = prompts;
  mixed.push_back({{1, 2, 3}, 2});
  CHECK_THROWS_AS(edit_effect(m, EditSpec{}, mixed, {1}), data_error);
  // KN out of range surfaces as a data error
  KNSet bogus;
  bogus.neurons.insert({5, 0});
  CHECK_THROWS_AS(suppression_effect(m, bogus, prompts, {1}), data_error);
}

TEST_CASE("scripted reliability counts flips exactly") {
  // scripted scorer: pre-edit prefers t except on marked prompts, the edit
  // swaps those preferences on exactly half of the valid cases
  std::vector<ScriptedCase> cases;
  for (int i = 0; i < 10; ++i) cases.push_back({{{i}, 0}, 1, 2});
  // cases 0..2: pre-edit already prefers t*, must be excluded
  // cases 3..6: edit swaps (flip); cases 7..9: edit does nothing
  auto score = [](const Prompt& pr, int token, bool edited) {
    const int id = pr.tokens.front();
    const bool prefers_t_pre = id >= 3;
    const bool swaps = id >= 3 && id <= 6;
    bool prefers_t = edited ? (swaps ? !prefers_t_pre : prefers_t_pre) : prefers_t_pre;
    return (token == 1) == prefers_t ? 0.8 : 0.2;
  };
  const ReliabilityResult r = reliability(score, cases);
  CHECK(r.excluded == 3);
  CHECK(r.valid == 7);
  CHECK(r.flips == 4);
  CHECK(r.fraction == doctest::Approx(4.0 / 7.0).epsilon(1e-15));

  // independent recount oracle over the same scorer
  int flips = 0, valid = 0, excluded = 0;
  for (const auto& c : cases) {
    if (!(score(c.prompt, c.t, false) > score(c.prompt, c.t_star, false))) {
      ++excluded;
      continue;
    }
    ++valid;
    if (score(c.prompt, c.t_star, true) > score(c.prompt, c.t, true)) ++flips;
  }
  CHECK(flips == r.flips);
  CHECK(valid == r.valid);
  CHECK(excluded == r.excluded);

  // a scripted always-swap edit gives reliability exactly 1.0
  std::vector<ScriptedCase> all_valid;
  for (int i = 3; i <= 6; ++i) all_valid.push_back({{{i}, 0}, 1, 2});
  CHECK(reliability(score, all_valid).fraction == 1.0);

  CHECK_THROWS_AS(reliability(score, {}), data_error);
  CHECK_THROWS_AS(reliability(score, {{{{0}, 0}, 3, 3}}), data_error);
}

TEST_CASE("transformer reliability equals a forward-pass recount") {
  Transformer m(tiny_config(), 17);
  const auto prompts = shared_blank_prompts();
  std::vector<NeuronRef> all_neurons;
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < 32; ++i) all_neurons.push_back({l, i});

  std::vector<ReliabilityCase> cases;
  for (const auto& pr : prompts) {
    const auto f = m.forward(pr.tokens, pr.target_pos);
    const int top = f.argmax();
    // one case the model prefers pre-edit, one it does not (forced exclusion)
    cases.push_back({EditSpec::suppress(all_neurons), pr, top, (top + 1) % 20});
    int worst = 0;
    for (int t = 0; t < 20; ++t)
      if (f.probs[t] < f.probs[worst]) worst = t;
    cases.push_back({EditSpec::suppress(all_neurons), pr, worst, top});
  }
  const ReliabilityResult r = reliability(m, cases);
  CHECK(r.valid + r.excluded == static_cast<int>(cases.size()));
  CHECK(r.excluded >= 4);  // every worst-vs-top case is excluded

  int flips = 0, valid = 0, excluded = 0;
  for (const auto& c : cases) {
    const auto pre = m.forward(c.prompt.tokens, c.prompt.target_pos);
    if (!(pre.prob_of(c.t) > pre.prob_of(c.t_star))) {
      ++excluded;
      continue;
    }
    ++valid;
    const auto post = m.forward_with_overrides(c.prompt.tokens, c.prompt.target_pos, c.edit);
    if (post.prob_of(c.t_star) > post.prob_of(c.t)) ++flips;
  }
  CHECK(r.flips == flips);
  CHECK(r.valid == valid);
  CHECK(r.excluded == excluded);
  CHECK(r.fraction == (valid > 0 ? static_cast<double>(flips) / valid : 0.0));

  // determinism across worker counts
  kernels::set_max_jobs(1);
  const ReliabilityResult serial = reliability(m, cases);
  kernels::set_max_jobs(4);
  const ReliabilityResult parallel = reliability(m, cases);
  kernels::set_max_jobs(0);
  CHECK(serial.flips == parallel.flips);
  CHECK(serial.valid == parallel.valid);
  CHECK(serial.excluded == parallel.excluded);

  CHECK_THROWS_AS(reliability(m, {{EditSpec{}, prompts[0], 0, 25}}), data_error);
}

TEST_CASE("categorical accuracy: scripted, recount, and binomial checks") {
  AgreementSpec spec;
  spec.paradigms = {"det_noun"};
  spec.pairs_per_paradigm = 600;
  spec.train_sentences = 0;
  const Vocab vocab;
  const AgreementCorpus corpus = gen_agreement_corpus(vocab, spec, 404);
  REQUIRE(corpus.pairs.size() == 600);

  // scripted scorer that always prefers t
  auto always_t = [](const MinimalPair&) { return std::pair<double, double>{0.9, 0.1}; };
  CHECK(categorical_accuracy(always_t, corpus.pairs) == 1.0);

  // deterministic pseudo-random scorer vs hand recount
  auto hashy = [](const MinimalPair& pr) {
    const size_t h = std::hash<std::string>{}(pr.template_text + pr.t);
    const double p = static_cast<double>(h % 1000) / 1000.0;
    return std::pair<double, double>{p, 0.5};
  };
  int hits = 0;
  for (const auto& pr : corpus.pairs)
    if (hashy(pr).first > 0.5) ++hits;
  CHECK(categorical_accuracy(hashy, corpus.pairs) ==
        static_cast<double>(hits) / corpus.pairs.size());

  // untrained model scores near chance on balanced pairs (99% binomial CI)
  ModelConfig cfg = tiny_config("bidirectional");
  cfg.vocab = vocab.size();
  cfg.max_seq = 16;
  cfg.mask_token = vocab.mask_id();
  Transformer m(cfg, 29);
  const double acc = categorical_accuracy(m, vocab, corpus.pairs);
  const double margin = 2.576 * std::sqrt(0.25 / static_cast<double>(corpus.pairs.size()));
  CHECK(std::abs(acc - 0.5) <= margin);

  // model recount oracle with an edit applied
  std::vector<NeuronRef> neurons{{0, 0}, {0, 1}, {1, 2}};
  const EditSpec edit = EditSpec::suppress(neurons);
  std::vector<MinimalPair> subset(corpus.pairs.begin(), corpus.pairs.begin() + 40);
  int manual = 0;
  for (const auto& pr : subset) {
    const Prompt prompt = encode_prompt(vocab, pr.template_text, false);
    const auto f = m.forward_with_overrides(prompt.tokens, prompt.target_pos, edit);
    if (f.prob_of(vocab.id(pr.t)) > f.prob_of(vocab.id(pr.t_star))) ++manual;
  }
  CHECK(categorical_accuracy(m, vocab, subset, edit) ==
        static_cast<double>(manual) / subset.size());

  CHECK_THROWS_AS(categorical_accuracy(m, vocab, {}), data_error);
}
