#include "knlab/editing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "knlab/kernels.hpp"
#include "knlab/stats.hpp"
#include "knlab/svg.hpp"
#include "knlab/textfmt.hpp"

namespace knlab {

namespace {

// deterministic rethrow of the smallest-index failure from a parallel loop
void rethrow_collected(const std::vector<std::exception_ptr>& errs, const std::string& who) {
  for (size_t i = 0; i < errs.size(); ++i) {
    if (!errs[i]) continue;
    const std::string at = who + ": case " + std::to_string(i) + ": ";
    try {
      std::rethrow_exception(errs[i]);
    } catch (const numeric_error& e) {
      throw numeric_error(at + e.what());
    } catch (const io_error& e) {
      throw io_error(at + e.what());
    } catch (const std::exception& e) {
      throw data_error(at + e.what());
    }
  }
}

void check_probes(const std::vector<int>& probe_tokens, int vocab) {
  if (probe_tokens.empty()) throw data_error("edit_effect: no probe tokens");
  for (int tok : probe_tokens)
    if (tok < 0 || tok >= vocab)
      throw data_error("edit_effect: probe token " + std::to_string(tok) + " outside vocabulary");
}

}  // namespace

TokenEffect effect_from_samples(int token, const std::vector<double>& pre,
                                const std::vector<double>& post, bool welch) {
  if (pre.empty() || post.empty())
    throw data_error("effect_from_samples: empty sample group");
  TokenEffect e;
  e.token = token;
  e.pre_mean = mean(pre);
  e.post_mean = mean(post);
  e.effect =
      (e.post_mean - e.pre_mean) / std::max(std::min(e.post_mean, e.pre_mean), kEffectDenomFloor);
  if (pre.size() >= 2 && post.size() >= 2) {
    const TTestResult r = welch ? welch_t_test(post, pre) : pooled_t_test(post, pre);
    e.t = r.t;
    e.p = r.p;
  } else {
    // a single sample per group carries no significance evidence
    e.t = 0.0;
    e.p = 1.0;
  }
  e.significant = e.p < kSignificanceLevel;
  return e;
}

EffectReport edit_effect(const Transformer& model, const EditSpec& edit,
                         const std::vector<Prompt>& prompts, const std::vector<int>& probe_tokens,
                         bool welch) {
  if (prompts.empty()) throw data_error("edit_effect: empty prompt set");
  check_probes(probe_tokens, model.config().vocab);
  for (const auto& pr : prompts)
    if (pr.target_pos != prompts.front().target_pos)
      throw data_error("edit_effect: prompts do not share a blank position");
  edit.validate(model.config());

  const size_t n = prompts.size();
  const size_t k = probe_tokens.size();
  for (const auto& pr : prompts)
    if (!pr.tokens.empty() && static_cast<int>(pr.tokens.size()) <= model.config().max_seq)
      model.probs_graph(static_cast<int>(pr.tokens.size()));

  std::vector<double> pre(n * k, 0.0), post(n * k, 0.0);
  std::vector<std::exception_ptr> errs(n);
  kernels::parallel_for(static_cast<int>(n), [&](int i) {
    try {
      const auto& pr = prompts[static_cast<size_t>(i)];
      const auto clean = model.forward(pr.tokens, pr.target_pos);
      const auto edited = model.forward_with_overrides(pr.tokens, pr.target_pos, edit);
      for (size_t j = 0; j < k; ++j) {
        pre[static_cast<size_t>(i) * k + j] = clean.prob_of(probe_tokens[j]);
        post[static_cast<size_t>(i) * k + j] = edited.prob_of(probe_tokens[j]);
      }
    } catch (...) {
      errs[static_cast<size_t>(i)] = std::current_exception();
    }
  });
  rethrow_collected(errs, "edit_effect");

  EffectReport report;
  report.num_prompts = static_cast<int>(n);
  report.tokens.reserve(k);
  std::vector<double> a(n), b(n);
  for (size_t j = 0; j < k; ++j) {
    for (size_t i = 0; i < n; ++i) {
      a[i] = pre[i * k + j];
      b[i] = post[i * k + j];
    }
    report.tokens.push_back(effect_from_samples(probe_tokens[j], a, b, welch));
  }
  return report;
}

EffectReport suppression_effect(const Transformer& model, const KNSet& kn,
                                const std::vector<Prompt>& prompts,
                                const std::vector<int>& probe_tokens, bool welch) {
  const std::vector<NeuronRef> neurons(kn.neurons.begin(), kn.neurons.end());
  return edit_effect(model, EditSpec::suppress(neurons), prompts, probe_tokens, welch);
}

void write_effect_csv(const std::string& path, const EffectReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << "token,pre,post,effect,t,p,significant\n";
  for (const auto& e : report.tokens) {
    if (e.label.empty())
      out << e.token;
    else
      out << e.label;
    out << ',' << fmt_g(e.pre_mean) << ',' << fmt_g(e.post_mean) << ',' << fmt_g(e.effect) << ','
        << fmt_g(e.t) << ',' << fmt_g(e.p) << ',' << (e.significant ? 1 : 0) << '\n';
  }
}

void write_effect_svg(const std::string& path, const EffectReport& report,
                      const std::string& title) {
  std::vector<std::string> labels;
  std::vector<double> values;
  labels.reserve(report.tokens.size());
  values.reserve(report.tokens.size());
  for (const auto& e : report.tokens) {
    labels.push_back(e.label.empty() ? std::to_string(e.token) : e.label);
    values.push_back(e.effect);
  }
  svg::write_file(path, svg::bar_chart(labels, values, title));
}

// ------------------------------------------------------------- reliability

namespace {

ReliabilityResult count_flips(const std::vector<double>& pre_t, const std::vector<double>& pre_s,
                              const std::vector<double>& post_t,
                              const std::vector<double>& post_s) {
  ReliabilityResult r;
  for (size_t i = 0; i < pre_t.size(); ++i) {
    if (!(pre_t[i] > pre_s[i])) {
      ++r.excluded;  // model never preferred t; nothing to flip
      continue;
    }
    ++r.valid;
    if (post_s[i] > post_t[i]) ++r.flips;
  }
  r.fraction = r.valid > 0 ? static_cast<double>(r.flips) / static_cast<double>(r.valid) : 0.0;
  return r;
}

}  // namespace

ReliabilityResult reliability(const EditScorer& score, const std::vector<ScriptedCase>& cases) {
  if (!score) throw data_error("reliability: null scorer");
  if (cases.empty()) throw data_error("reliability: empty edit list");
  const size_t n = cases.size();
  std::vector<double> pre_t(n), pre_s(n), post_t(n), post_s(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& c = cases[i];
    if (c.t == c.t_star) throw data_error("reliability: t and t* coincide");
    pre_t[i] = score(c.prompt, c.t, false);
    pre_s[i] = score(c.prompt, c.t_star, false);
    post_t[i] = score(c.prompt, c.t, true);
    post_s[i] = score(c.prompt, c.t_star, true);
  }
  return count_flips(pre_t, pre_s, post_t, post_s);
}

ReliabilityResult reliability(const Transformer& model, const std::vector<ReliabilityCase>& cases) {
  if (cases.empty()) throw data_error("reliability: empty edit list");
  const int vocab = model.config().vocab;
  for (const auto& c : cases) {
    if (c.t == c.t_star) throw data_error("reliability: t and t* coincide");
    if (c.t < 0 || c.t >= vocab || c.t_star < 0 || c.t_star >= vocab)
      throw data_error("reliability: answer token outside vocabulary");
  }
  const size_t n = cases.size();
  for (const auto& c : cases)
    if (!c.prompt.tokens.empty() && static_cast<int>(c.prompt.tokens.size()) <= model.config().max_seq)
      model.probs_graph(static_cast<int>(c.prompt.tokens.size()));
  std::vector<double> pre_t(n), pre_s(n), post_t(n), post_s(n);
  std::vector<std::exception_ptr> errs(n);
  kernels::parallel_for(static_cast<int>(n), [&](int i) {
    try {
      const auto& c = cases[static_cast<size_t>(i)];
      const auto clean = model.forward(c.prompt.tokens, c.prompt.target_pos);
      const auto edited = model.forward_with_overrides(c.prompt.tokens, c.prompt.target_pos, c.edit);
      pre_t[static_cast<size_t>(i)] = clean.prob_of(c.t);
      pre_s[static_cast<size_t>(i)] = clean.prob_of(c.t_star);
      post_t[static_cast<size_t>(i)] = edited.prob_of(c.t);
      post_s[static_cast<size_t>(i)] = edited.prob_of(c.t_star);
    } catch (...) {
      errs[static_cast<size_t>(i)] = std::current_exception();
    }
  });
  rethrow_collected(errs, "reliability");
  return count_flips(pre_t, pre_s, post_t, post_s);
}

// ------------------------------------------------------ categorical accuracy

double categorical_accuracy(
    const std::function<std::pair<double, double>(const MinimalPair&)>& score,
    const std::vector<MinimalPair>& pairs) {
  if (!score) throw data_error("categorical_accuracy: null scorer");
  if (pairs.empty()) throw data_error("categorical_accuracy: empty pair list");
  int64_t hits = 0;
  for (const auto& pr : pairs) {
    const auto [p_t, p_star] = score(pr);
    if (p_t > p_star) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double categorical_accuracy(const Transformer& model, const Vocab& vocab,
                            const std::vector<MinimalPair>& pairs, const EditSpec& edit) {
  if (pairs.empty()) throw data_error("categorical_accuracy: empty pair list");
  edit.validate(model.config());
  const bool causal = model.config().causal();
  const bool edited = !edit.edits.empty();
  const size_t n = pairs.size();
  std::vector<double> p_t(n), p_star(n);
  std::vector<std::exception_ptr> errs(n);
  kernels::parallel_for(static_cast<int>(n), [&](int i) {
    try {
      const auto& pr = pairs[static_cast<size_t>(i)];
      const Prompt prompt = encode_prompt(vocab, pr.template_text, causal);
      const auto fwd = edited
                           ? model.forward_with_overrides(prompt.tokens, prompt.target_pos, edit)
                           : model.forward(prompt.tokens, prompt.target_pos);
      p_t[static_cast<size_t>(i)] = fwd.prob_of(vocab.id(pr.t));
      p_star[static_cast<size_t>(i)] = fwd.prob_of(vocab.id(pr.t_star));
    } catch (...) {
      errs[static_cast<size_t>(i)] = std::current_exception();
    }
  });
  rethrow_collected(errs, "categorical_accuracy");
  int64_t hits = 0;
  for (size_t i = 0; i < n; ++i)
    if (p_t[i] > p_star[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace knlab
