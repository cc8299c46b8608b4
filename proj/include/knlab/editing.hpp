#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "knlab/corpora.hpp"
#include "knlab/kn_search.hpp"
#include "knlab/model.hpp"

namespace knlab {

inline constexpr double kEffectDenomFloor = 1e-12;
inline constexpr double kSignificanceLevel = 0.05;

// effect of an activation edit on one probe token, aggregated over prompts
struct TokenEffect {
  int token = 0;
  std::string label;       // word form for reports; empty falls back to the id
  double pre_mean = 0.0;   // mean pre-edit probability
  double post_mean = 0.0;  // mean post-edit probability
  double effect = 0.0;     // (post - pre) / max(min(post, pre), 1e-12)
  double t = 0.0;          // pooled two-sample t, post vs pre (Welch on request)
  double p = 1.0;          // two-sided
  bool significant = false;  // p < 0.05
};

struct EffectReport {
  std::vector<TokenEffect> tokens;
  int num_prompts = 0;
};

// Summarise per-prompt probability samples for one token. With fewer than
// two samples per group there is no significance evidence: t=0, p=1.
TokenEffect effect_from_samples(int token, const std::vector<double>& pre,
                                const std::vector<double>& post, bool welch = false);

// Measure an arbitrary activation edit over prompts x probe tokens. All
// prompts must share the blank (target) position; per-prompt forward passes
// run in parallel and are reduced in input order.
EffectReport edit_effect(const Transformer& model, const EditSpec& edit,
                         const std::vector<Prompt>& prompts, const std::vector<int>& probe_tokens,
                         bool welch = false);

// convenience wrapper: suppress every neuron in a KN set
EffectReport suppression_effect(const Transformer& model, const KNSet& kn,
                                const std::vector<Prompt>& prompts,
                                const std::vector<int>& probe_tokens, bool welch = false);

// columns: token,pre,post,effect,t,p,significant
void write_effect_csv(const std::string& path, const EffectReport& report);
// bar chart of relative effects per probe token
void write_effect_svg(const std::string& path, const EffectReport& report,
                      const std::string& title);

// ------------------------------------------------------------- reliability

// score(prompt, token, edited) -> probability; lets mocks stand in for models
using EditScorer = std::function<double(const Prompt&, int token, bool edited)>;

struct ScriptedCase {
  Prompt prompt;
  int t = 0;       // current answer token
  int t_star = 0;  // desired post-edit answer token
};

struct ReliabilityCase {
  EditSpec edit;
  Prompt prompt;
  int t = 0;
  int t_star = 0;
};

struct ReliabilityResult {
  int flips = 0;          // post-edit p(t*) > p(t)
  int valid = 0;          // cases with pre-edit p(t) > p(t*)
  int excluded = 0;       // no pre-edit preference for t; reported, not scored
  double fraction = 0.0;  // flips / valid (0 when no case is valid)
};

ReliabilityResult reliability(const EditScorer& score, const std::vector<ScriptedCase>& cases);
ReliabilityResult reliability(const Transformer& model, const std::vector<ReliabilityCase>& cases);

// ------------------------------------------------------ categorical accuracy

// fraction of pairs whose blank strictly prefers t over t_star;
// score(pair) returns {p(t), p(t_star)}
double categorical_accuracy(
    const std::function<std::pair<double, double>(const MinimalPair&)>& score,
    const std::vector<MinimalPair>& pairs);

// model version; the optional edit is applied during scoring (post-edit runs)
double categorical_accuracy(const Transformer& model, const Vocab& vocab,
                            const std::vector<MinimalPair>& pairs, const EditSpec& edit = {});

}  // namespace knlab
