#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "knlab/attribution.hpp"
#include "knlab/corpora.hpp"
#include "knlab/kn_search.hpp"
#include "knlab/model.hpp"

namespace knlab {

// ------------------------------------------------------------- interfaces

// read-only view of a model that answers fill-in-the-blank prompts
class ScoringModel {
 public:
  virtual ~ScoringModel() = default;
  // probability of `answer` filling the blank of the prompt
  virtual double prob(const std::string& prompt_with_blank, const std::string& answer) const = 0;
  // word the model ranks first at the blank
  virtual std::string top_word(const std::string& prompt_with_blank) const = 0;
  virtual std::string id() const = 0;
};

struct EditRequest {
  std::string prompt;      // forward template instantiated with s, target blanked
  std::string target_old;  // t
  std::string target_new;  // t*
};

// produces an edited view over its base model; the base must stay untouched
class Editor {
 public:
  virtual ~Editor() = default;
  virtual std::unique_ptr<ScoringModel> apply(const EditRequest& req) const = 0;
  virtual std::string id() const = 0;
};

// --------------------------------------------------------- concrete models

// transformer + vocabulary, optionally viewed through an activation edit
class ToyModelScorer : public ScoringModel {
 public:
  ToyModelScorer(const Transformer& model, const Vocab& vocab, std::string id, EditSpec edit = {});
  double prob(const std::string& prompt_with_blank, const std::string& answer) const override;
  std::string top_word(const std::string& prompt_with_blank) const override;
  std::string id() const override { return id_; }

 private:
  const Transformer* model_;
  const Vocab* vocab_;
  std::string id_;
  EditSpec edit_;
};

// prompt -> answer distribution table; the mock model behind harness self-tests
class LookupScorer : public ScoringModel {
 public:
  using Table = std::map<std::string, std::map<std::string, double>>;
  LookupScorer(std::string id, Table table);
  double prob(const std::string& prompt_with_blank, const std::string& answer) const override;
  std::string top_word(const std::string& prompt_with_blank) const override;
  std::string id() const override { return id_; }
  const Table& table() const { return table_; }

 private:
  std::string id_;
  Table table_;
};

// --------------------------------------------------------- concrete editors

// suppresses the old target's knowledge neurons, found by attribution + search
class KnSuppressEditor : public Editor {
 public:
  KnSuppressEditor(const Transformer& model, const Vocab& vocab, int steps = 20,
                   SearchConfig search = {});
  std::unique_ptr<ScoringModel> apply(const EditRequest& req) const override;
  std::string id() const override { return "kn_suppress"; }

 protected:
  const Transformer* model_;
  const Vocab* vocab_;
  int steps_;
  SearchConfig search_;

  KNSet find_kn(const std::string& prompt, const std::string& target) const;
};

// suppresses the old target's neurons and scales up the new target's
class KnBoostEditor : public KnSuppressEditor {
 public:
  KnBoostEditor(const Transformer& model, const Vocab& vocab, double boost = 4.0, int steps = 20,
                SearchConfig search = {});
  std::unique_ptr<ScoringModel> apply(const EditRequest& req) const override;
  std::string id() const override { return "kn_boost"; }

 private:
  double boost_;
};

// rewrites a copy of a lookup table per request; behaviour is fully scripted
class ScriptedEditor : public Editor {
 public:
  using Rewrite = std::function<void(const EditRequest&, LookupScorer::Table&)>;
  ScriptedEditor(const LookupScorer& base, std::string id, Rewrite rewrite);
  std::unique_ptr<ScoringModel> apply(const EditRequest& req) const override;
  std::string id() const override { return id_; }

 private:
  const LookupScorer* base_;
  std::string id_;
  Rewrite rewrite_;
};

// ----------------------------------------------------------------- reports

struct MetricResult {
  std::string metric;
  double score = 0.0;  // num / den; 0 when den == 0
  int num = 0;
  int den = 0;
  int excluded = 0;
};

struct EvalReport {
  std::string model_id, editor_id, dataset_id;
  uint64_t seed = 0;
  std::vector<MetricResult> metrics;
};

inline constexpr int kReportSchemaVersion = 1;

// --------------------------------------------------------------- datasets

struct EditTask {
  FactTuple fact;
  std::string t_star;  // counterfactual target, resampled from the KB
};

// one edit task per fact; t* drawn uniformly from the other facts' targets
std::vector<EditTask> build_edit_tasks(const std::vector<FactTuple>& kb, uint64_t seed);

// -------------------------------------------------------------- evaluation

// reliability: flip rate on the edited template; generality: flip rate on
// held-out templates (single-template facts are excluded and counted);
// locality: fraction of unrelated prompts whose argmax survives each edit
EvalReport eval_reliability_generality_locality(const ScoringModel& base, const Editor& editor,
                                                const std::vector<EditTask>& kb,
                                                const std::vector<FactTuple>& unrelated,
                                                const std::string& dataset_id, uint64_t seed = 0);

// fraction of records where the inverse prompt prefers s over the pre-edit
// inverse answer after the edit; records the base already answers with s are
// degenerate: excluded and counted
EvalReport eval_symmetry(const ScoringModel& base, const Editor& editor,
                         const std::vector<SymmetryRecord>& records, const std::string& dataset_id,
                         uint64_t seed = 0);

// fraction of records whose synonym-template prompt prefers synonym(t*) over
// synonym(t) after the edit
EvalReport eval_synonym(const ScoringModel& base, const Editor& editor,
                        const std::vector<SynonymRecord>& records, const std::string& dataset_id,
                        uint64_t seed = 0);

// ----------------------------------------------------------------- emitters

// writes report.csv / report.json / report_<metric>.svg into out_dir
void emit_report(const std::vector<EvalReport>& reports, const std::string& out_dir,
                 const std::set<std::string>& formats = {"csv", "json"});
std::vector<EvalReport> read_report_json(const std::string& path);

}  // namespace knlab
