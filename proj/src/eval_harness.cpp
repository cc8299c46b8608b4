#include "knlab/eval_harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "knlab/rng.hpp"
#include "knlab/svg.hpp"
#include "knlab/textfmt.hpp"

namespace knlab {

// --------------------------------------------------------- concrete models

ToyModelScorer::ToyModelScorer(const Transformer& model, const Vocab& vocab, std::string id,
                               EditSpec edit)
    : model_(&model), vocab_(&vocab), id_(std::move(id)), edit_(std::move(edit)) {
  edit_.validate(model.config());
}

double ToyModelScorer::prob(const std::string& prompt_with_blank, const std::string& answer) const {
  const Prompt p = encode_prompt(*vocab_, prompt_with_blank, model_->config().causal());
  const auto f = edit_.edits.empty()
                     ? model_->forward(p.tokens, p.target_pos)
                     : model_->forward_with_overrides(p.tokens, p.target_pos, edit_);
  return f.prob_of(vocab_->id(answer));
}

std::string ToyModelScorer::top_word(const std::string& prompt_with_blank) const {
  const Prompt p = encode_prompt(*vocab_, prompt_with_blank, model_->config().causal());
  const auto f = edit_.edits.empty()
                     ? model_->forward(p.tokens, p.target_pos)
                     : model_->forward_with_overrides(p.tokens, p.target_pos, edit_);
  return vocab_->word(f.argmax());
}

LookupScorer::LookupScorer(std::string id, Table table)
    : id_(std::move(id)), table_(std::move(table)) {}

double LookupScorer::prob(const std::string& prompt_with_blank, const std::string& answer) const {
  const auto it = table_.find(prompt_with_blank);
  if (it == table_.end()) throw data_error("lookup model has no row for prompt: " + prompt_with_blank);
  const auto jt = it->second.find(answer);
  return jt == it->second.end() ? 0.0 : jt->second;
}

std::string LookupScorer::top_word(const std::string& prompt_with_blank) const {
  const auto it = table_.find(prompt_with_blank);
  if (it == table_.end()) throw data_error("lookup model has no row for prompt: " + prompt_with_blank);
  if (it->second.empty()) throw data_error("lookup model row is empty for prompt: " + prompt_with_blank);
  // ties resolve to the lexicographically smallest word (map order)
  const std::string* best = nullptr;
  double best_p = 0.0;
  for (const auto& [word, p] : it->second)
    if (!best || p > best_p) {
      best = &word;
      best_p = p;
    }
  return *best;
}

// --------------------------------------------------------- concrete editors

KnSuppressEditor::KnSuppressEditor(const Transformer& model, const Vocab& vocab, int steps,
                                   SearchConfig search)
    : model_(&model), vocab_(&vocab), steps_(steps), search_(search) {
  search_.validate();
  if (steps_ < 1) throw data_error("KnSuppressEditor: attribution steps must be positive");
}

KNSet KnSuppressEditor::find_kn(const std::string& prompt, const std::string& target) const {
  const Prompt p = encode_prompt(*vocab_, prompt, model_->config().causal());
  const AttributionMap map = attribute(*model_, p.tokens, p.target_pos, vocab_->id(target), steps_);
  return refine_threshold({map}, search_);
}

std::unique_ptr<ScoringModel> KnSuppressEditor::apply(const EditRequest& req) const {
  const KNSet kn = find_kn(req.prompt, req.target_old);
  const std::vector<NeuronRef> neurons(kn.neurons.begin(), kn.neurons.end());
  return std::make_unique<ToyModelScorer>(*model_, *vocab_, "toy+kn_suppress",
                                          EditSpec::suppress(neurons));
}

KnBoostEditor::KnBoostEditor(const Transformer& model, const Vocab& vocab, double boost, int steps,
                             SearchConfig search)
    : KnSuppressEditor(model, vocab, steps, search), boost_(boost) {
  if (!(boost_ > 0.0)) throw data_error("KnBoostEditor: boost factor must be positive");
}

std::unique_ptr<ScoringModel> KnBoostEditor::apply(const EditRequest& req) const {
  const KNSet old_kn = find_kn(req.prompt, req.target_old);
  const KNSet new_kn = find_kn(req.prompt, req.target_new);
  EditSpec spec;
  for (const NeuronRef& n : old_kn.neurons)
    if (!new_kn.neurons.count(n)) spec.edits.push_back({n, EditAction::set, 0.0});
  for (const NeuronRef& n : new_kn.neurons)
    spec.edits.push_back({n, EditAction::scale, boost_});
  return std::make_unique<ToyModelScorer>(*model_, *vocab_, "toy+kn_boost", spec);
}

ScriptedEditor::ScriptedEditor(const LookupScorer& base, std::string id, Rewrite rewrite)
    : base_(&base), id_(std::move(id)), rewrite_(std::move(rewrite)) {
  if (!rewrite_) throw data_error("ScriptedEditor: null rewrite");
}

std::unique_ptr<ScoringModel> ScriptedEditor::apply(const EditRequest& req) const {
  LookupScorer::Table table = base_->table();  // copy; the base stays untouched
  rewrite_(req, table);
  return std::make_unique<LookupScorer>(base_->id() + "+" + id_, std::move(table));
}

// --------------------------------------------------------------- datasets

std::vector<EditTask> build_edit_tasks(const std::vector<FactTuple>& kb, uint64_t seed) {
  if (kb.size() < 2) throw data_error("build_edit_tasks: need at least two facts");
  Rng rng(derive_seed(seed, 7));
  std::vector<EditTask> tasks;
  tasks.reserve(kb.size());
  for (const auto& f : kb) {
    std::set<std::string> pool;
    for (const auto& other : kb)
      if (other.t != f.t) pool.insert(other.t);
    if (pool.empty()) throw data_error("build_edit_tasks: no counterfactual target for " + f.s);
    const std::vector<std::string> candidates(pool.begin(), pool.end());
    tasks.push_back({f, candidates[static_cast<size_t>(
                            rng.uniform_int(static_cast<int>(candidates.size())))]});
  }
  return tasks;
}

// -------------------------------------------------------------- evaluation

namespace {

MetricResult finish(const std::string& name, int num, int den, int excluded) {
  MetricResult m;
  m.metric = name;
  m.num = num;
  m.den = den;
  m.excluded = excluded;
  m.score = den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  return m;
}

EditRequest request_for(const EditTask& task) {
  if (task.fact.templates.empty())
    throw data_error("eval: fact for " + task.fact.s + " has no templates");
  if (task.t_star == task.fact.t)
    throw data_error("eval: counterfactual target equals the old target for " + task.fact.s);
  return {substitute(task.fact.templates.front(), "[s]", task.fact.s), task.fact.t, task.t_star};
}

void check_base_unchanged(const ScoringModel& base, const std::string& prompt,
                          const std::string& answer, double before) {
  if (base.prob(prompt, answer) != before)
    throw data_error("eval: editor mutated the base model");
}

}  // namespace

EvalReport eval_reliability_generality_locality(const ScoringModel& base, const Editor& editor,
                                                const std::vector<EditTask>& kb,
                                                const std::vector<FactTuple>& unrelated,
                                                const std::string& dataset_id, uint64_t seed) {
  if (kb.empty()) throw data_error("eval: empty edit task list");
  if (unrelated.empty()) throw data_error("eval: locality needs unrelated facts");
  std::set<std::pair<std::string, std::string>> edited_keys;
  for (const auto& task : kb) edited_keys.insert({task.fact.s, task.fact.relation});
  for (const auto& u : unrelated) {
    if (edited_keys.count({u.s, u.relation}))
      throw data_error("eval: unrelated fact " + u.s + " overlaps the edited set");
    if (u.templates.empty()) throw data_error("eval: unrelated fact " + u.s + " has no templates");
  }

  // unrelated prompts and their pre-edit argmax, fixed for the whole run
  std::vector<std::string> loc_prompts;
  std::vector<std::string> loc_tops;
  for (const auto& u : unrelated) {
    loc_prompts.push_back(substitute(u.templates.front(), "[s]", u.s));
    loc_tops.push_back(base.top_word(loc_prompts.back()));
  }

  const EditRequest first_req = request_for(kb.front());
  const double baseline = base.prob(first_req.prompt, first_req.target_old);

  int rel_num = 0, rel_den = 0, rel_exc = 0;
  int gen_num = 0, gen_den = 0, gen_exc = 0;
  int loc_num = 0, loc_den = 0;
  for (const auto& task : kb) {
    const EditRequest req = request_for(task);
    const auto edited = editor.apply(req);

    if (base.prob(req.prompt, req.target_old) > base.prob(req.prompt, req.target_new)) {
      ++rel_den;
      if (edited->prob(req.prompt, req.target_new) > edited->prob(req.prompt, req.target_old))
        ++rel_num;
    } else {
      ++rel_exc;  // the base never preferred t here; nothing to flip
    }

    if (task.fact.templates.size() < 2) {
      ++gen_exc;  // generality undefined without a held-out template
    } else {
      for (size_t i = 1; i < task.fact.templates.size(); ++i) {
        const std::string held_out = substitute(task.fact.templates[i], "[s]", task.fact.s);
        if (base.prob(held_out, req.target_old) > base.prob(held_out, req.target_new)) {
          ++gen_den;
          if (edited->prob(held_out, req.target_new) > edited->prob(held_out, req.target_old))
            ++gen_num;
        } else {
          ++gen_exc;
        }
      }
    }

    for (size_t i = 0; i < loc_prompts.size(); ++i) {
      ++loc_den;
      if (edited->top_word(loc_prompts[i]) == loc_tops[i]) ++loc_num;
    }
  }
  check_base_unchanged(base, first_req.prompt, first_req.target_old, baseline);

  EvalReport report;
  report.model_id = base.id();
  report.editor_id = editor.id();
  report.dataset_id = dataset_id;
  report.seed = seed;
  report.metrics.push_back(finish("reliability", rel_num, rel_den, rel_exc));
  report.metrics.push_back(finish("generality", gen_num, gen_den, gen_exc));
  report.metrics.push_back(finish("locality", loc_num, loc_den, 0));
  return report;
}

EvalReport eval_symmetry(const ScoringModel& base, const Editor& editor,
                         const std::vector<SymmetryRecord>& records, const std::string& dataset_id,
                         uint64_t seed) {
  if (records.empty()) throw data_error("eval_symmetry: no records");
  const double baseline = base.prob(records.front().edit_prompt, records.front().edit_target_old);
  int num = 0, den = 0, exc = 0;
  for (const auto& r : records) {
    // degenerate: the base already answers the inverse prompt with s
    if (base.prob(r.eval_prompt, r.eval_expected) > base.prob(r.eval_prompt, r.eval_original)) {
      ++exc;
      continue;
    }
    const auto edited = editor.apply({r.edit_prompt, r.edit_target_old, r.edit_target_new});
    ++den;
    if (edited->prob(r.eval_prompt, r.eval_expected) > edited->prob(r.eval_prompt, r.eval_original))
      ++num;
  }
  check_base_unchanged(base, records.front().edit_prompt, records.front().edit_target_old, baseline);

  EvalReport report;
  report.model_id = base.id();
  report.editor_id = editor.id();
  report.dataset_id = dataset_id;
  report.seed = seed;
  report.metrics.push_back(finish("symmetry", num, den, exc));
  return report;
}

EvalReport eval_synonym(const ScoringModel& base, const Editor& editor,
                        const std::vector<SynonymRecord>& records, const std::string& dataset_id,
                        uint64_t seed) {
  if (records.empty()) throw data_error("eval_synonym: no records");
  const double baseline = base.prob(records.front().edit_prompt, records.front().edit_target_old);
  int num = 0, den = 0;
  for (const auto& r : records) {
    const auto edited = editor.apply({r.edit_prompt, r.edit_target_old, r.edit_target_new});
    ++den;
    if (edited->prob(r.eval_prompt, r.eval_expected) > edited->prob(r.eval_prompt, r.eval_original))
      ++num;
  }
  check_base_unchanged(base, records.front().edit_prompt, records.front().edit_target_old, baseline);

  EvalReport report;
  report.model_id = base.id();
  report.editor_id = editor.id();
  report.dataset_id = dataset_id;
  report.seed = seed;
  report.metrics.push_back(finish("synonym", num, den, 0));
  return report;
}

// ----------------------------------------------------------------- emitters

void emit_report(const std::vector<EvalReport>& reports, const std::string& out_dir,
                 const std::set<std::string>& formats) {
  for (const auto& f : formats)
    if (f != "csv" && f != "json" && f != "svg")
      throw data_error("emit_report: unknown format " + f);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create directory " + out_dir + ": " + ec.message());

  if (formats.count("csv")) {
    const std::string path = out_dir + "/report.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    out << "model_id,editor_id,dataset_id,metric,score,num,den,excluded\n";
    for (const auto& r : reports)
      for (const auto& m : r.metrics)
        out << r.model_id << ',' << r.editor_id << ',' << r.dataset_id << ',' << m.metric << ','
            << fmt_g(m.score) << ',' << m.num << ',' << m.den << ',' << m.excluded << '\n';
  }

  if (formats.count("json")) {
    nlohmann::json j;
    j["version"] = kReportSchemaVersion;
    j["reports"] = nlohmann::json::array();
    for (const auto& r : reports) {
      nlohmann::json jr;
      jr["model_id"] = r.model_id;
      jr["editor_id"] = r.editor_id;
      jr["dataset_id"] = r.dataset_id;
      jr["seed"] = r.seed;
      jr["metrics"] = nlohmann::json::array();
      for (const auto& m : r.metrics)
        jr["metrics"].push_back({{"metric", m.metric},
                                 {"score", m.score},
                                 {"num", m.num},
                                 {"den", m.den},
                                 {"excluded", m.excluded}});
      j["reports"].push_back(jr);
    }
    svg::write_file(out_dir + "/report.json", j.dump(2) + "\n");
  }

  if (formats.count("svg")) {
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<double>>> families;
    for (const auto& r : reports)
      for (const auto& m : r.metrics) {
        auto& fam = families[m.metric];
        fam.first.push_back(r.editor_id + ":" + r.dataset_id);
        fam.second.push_back(m.score);
      }
    for (const auto& [metric, fam] : families)
      svg::write_file(out_dir + "/report_" + metric + ".svg",
                      svg::bar_chart(fam.first, fam.second, metric));
  }
}

std::vector<EvalReport> read_report_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("bad report bundle " + path + ": " + e.what());
  }
  try {
    if (j.at("version").get<int>() != kReportSchemaVersion)
      throw data_error("unsupported report schema version in " + path);
    std::vector<EvalReport> reports;
    for (const auto& jr : j.at("reports")) {
      EvalReport r;
      r.model_id = jr.at("model_id").get<std::string>();
      r.editor_id = jr.at("editor_id").get<std::string>();
      r.dataset_id = jr.at("dataset_id").get<std::string>();
      r.seed = jr.at("seed").get<uint64_t>();
      for (const auto& jm : jr.at("metrics")) {
        MetricResult m;
        m.metric = jm.at("metric").get<std::string>();
        m.score = jm.at("score").get<double>();
        m.num = jm.at("num").get<int>();
        m.den = jm.at("den").get<int>();
        m.excluded = jm.at("excluded").get<int>();
        r.metrics.push_back(std::move(m));
      }
      reports.push_back(std::move(r));
    }
    return reports;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("bad report bundle " + path + ": " + e.what());
  }
}

}  // namespace knlab
