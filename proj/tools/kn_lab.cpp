// kn-lab: batch front door tying corpus generation, training, attribution,
// KN search, suppression editing, causal tracing, and edit evaluation into
// reproducible pipelines.
//
// Exit codes: 0 success, 1 usage error, 2 data/io error, 3 numeric failure.
// Every artifact directory receives run_config.json with the resolved
// parameters; timestamps live only in the run.log sidecar, so reruns with the
// same seed produce byte-identical artifacts regardless of --jobs.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "knlab/attribution.hpp"
#include "knlab/causal_trace.hpp"
#include "knlab/corpora.hpp"
#include "knlab/editing.hpp"
#include "knlab/errors.hpp"
#include "knlab/eval_harness.hpp"
#include "knlab/kernels.hpp"
#include "knlab/kn_search.hpp"
#include "knlab/model.hpp"
#include "knlab/rng.hpp"
#include "knlab/textfmt.hpp"
#include "knlab/train.hpp"

namespace {

using nlohmann::json;

// --config accepts a flat JSON object {"flag": value, ...} whose keys name
// long options of the invoked subcommand; explicit command-line flags win.
// Config files are processed by the root app after the command line, so the
// invoked subcommand is known by the time keys are routed.
class json_config : public CLI::Config {
 public:
  explicit json_config(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw CLI::FileError("config must be a flat JSON object of flag -> value");
    std::vector<std::string> parents;
    const auto parsed = root_->get_subcommands();
    if (!parsed.empty()) parents.push_back(parsed.front()->get_name());
    std::vector<CLI::ConfigItem> items;
    for (auto it = j.begin(); it != j.end(); ++it) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it.value().is_array())
        for (const auto& v : it.value()) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(it.value()));
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }

  const CLI::App* root_;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw knlab::io_error("cannot write " + path);
  out << body;
}

// output directory plus provenance: run_config.json (deterministic) and
// run.log (the only file that carries timestamps)
class run_dir {
 public:
  run_dir(std::string dir, const std::string& subcommand, json config) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw knlab::io_error("cannot create " + dir_ + ": " + ec.message());
    config["subcommand"] = subcommand;
    write_text(path("run_config.json"), config.dump(2) + "\n");
    log_.open(path("run.log"), std::ios::binary);
    if (!log_) throw knlab::io_error("cannot write " + path("run.log"));
    note(subcommand + " started");
  }
  std::string path(const std::string& leaf) const { return dir_ + "/" + leaf; }
  void note(const std::string& msg) { log_ << utc_now() << ' ' << msg << '\n'; }
  void finish() { note("finished"); }

 private:
  std::string dir_;
  std::ofstream log_;
};

struct common_opts {
  std::uint64_t seed = 0;
  int jobs = 0;  // 0 keeps the library default; never affects results
};

void add_common(CLI::App* sub, common_opts& c) {
  sub->add_option("--seed", c.seed, "seed for every random choice in this run");
  sub->add_option("--jobs", c.jobs, "worker cap (0 = library default); results do not depend on it")
      ->check(CLI::Range(0, 1024));
  sub->fallthrough();  // lets --config appear after the subcommand name
}

// ------------------------------------------------------------ shared helpers

void check_model_vocab(const knlab::Transformer& model, const knlab::Vocab& vocab) {
  if (model.config().vocab < vocab.size())
    throw knlab::data_error("checkpoint vocab " + std::to_string(model.config().vocab) +
                            " is smaller than the word inventory (" + std::to_string(vocab.size()) +
                            ")");
}

std::vector<knlab::MinimalPair> load_pairs(const std::string& path, const std::string& paradigm,
                                           const std::string& number_class, int limit) {
  auto pairs = knlab::read_minimal_pairs_jsonl(path);
  std::erase_if(pairs, [&](const knlab::MinimalPair& p) {
    return (!paradigm.empty() && p.paradigm != paradigm) ||
           (!number_class.empty() && p.number_class != number_class);
  });
  if (pairs.empty()) throw knlab::data_error("no minimal pairs left after filtering " + path);
  if (limit > 0 && static_cast<int>(pairs.size()) > limit) pairs.resize(limit);
  return pairs;
}

std::vector<knlab::FactTuple> with_relation(const std::vector<knlab::FactTuple>& kb,
                                            const std::string& relation) {
  std::vector<knlab::FactTuple> out;
  for (const auto& f : kb)
    if (relation.empty() || f.relation == relation) out.push_back(f);
  return out;
}

std::vector<knlab::FactTuple> load_facts(const std::string& path, const std::string& relation,
                                         int limit) {
  auto kb = with_relation(knlab::read_facts_jsonl(path), relation);
  if (kb.empty()) throw knlab::data_error("no facts with relation '" + relation + "' in " + path);
  if (limit > 0 && static_cast<int>(kb.size()) > limit) kb.resize(limit);
  return kb;
}

std::unique_ptr<knlab::Editor> make_editor(const std::string& kind, const knlab::Transformer& model,
                                           const knlab::Vocab& vocab, double boost, int steps,
                                           const knlab::SearchConfig& search) {
  if (kind == "kn_suppress")
    return std::make_unique<knlab::KnSuppressEditor>(model, vocab, steps, search);
  if (kind == "kn_boost")
    return std::make_unique<knlab::KnBoostEditor>(model, vocab, boost, steps, search);
  throw knlab::data_error("unknown editor: " + kind);
}

void print_report(const knlab::EvalReport& report) {
  for (const auto& m : report.metrics)
    std::cout << m.metric << " " << knlab::fmt_g(m.score) << " (" << m.num << "/" << m.den
              << ", excluded " << m.excluded << ")\n";
}

// ----------------------------------------------------------------- gen-corpus

struct gen_corpus_opts {
  common_opts common;
  std::string kind = "agreement";
  std::string out = "out/corpus";
  std::vector<std::string> paradigms{"det_noun"};
  int pairs = 1000;
  int train = 2000;
  int capital_pairs = 50;
  int field_facts = 50;
  int repeats = 8;
};

void run_gen_corpus(const gen_corpus_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  const knlab::Vocab vocab;
  json cfg{{"kind", o.kind}, {"out", o.out}, {"seed", o.common.seed}};
  if (o.kind == "agreement") {
    cfg["paradigms"] = o.paradigms;
    cfg["pairs"] = o.pairs;
    cfg["train"] = o.train;
    run_dir run(o.out, "gen-corpus", cfg);
    knlab::AgreementSpec spec;
    spec.paradigms = o.paradigms;
    spec.pairs_per_paradigm = o.pairs;
    spec.train_sentences = o.train;
    const auto corpus = knlab::gen_agreement_corpus(vocab, spec, o.common.seed);
    knlab::write_minimal_pairs_jsonl(run.path("pairs.jsonl"), corpus.pairs);
    knlab::write_lines(run.path("train.txt"), corpus.train);
    std::cout << "pairs.jsonl: " << corpus.pairs.size() << " pairs\n"
              << "train.txt: " << corpus.train.size() << " sentences\n";
    run.finish();
    return;
  }
  cfg["capital_pairs"] = o.capital_pairs;
  cfg["field_facts"] = o.field_facts;
  cfg["repeats"] = o.repeats;
  run_dir run(o.out, "gen-corpus", cfg);
  const knlab::FactSpec spec{o.capital_pairs, o.field_facts};
  const auto kb = knlab::gen_fact_kb(vocab, spec, o.common.seed);
  knlab::write_facts_jsonl(run.path("kb.jsonl"), kb);
  std::cout << "kb.jsonl: " << kb.size() << " facts\n";
  const auto capitals = with_relation(kb, "capital_of");
  if (capitals.size() >= 2) {
    const auto symmetry = knlab::build_symmetry_eval(capitals, knlab::derive_seed(o.common.seed, 1));
    knlab::write_edit_evals_jsonl(run.path("symmetry_eval.jsonl"), symmetry);
    std::cout << "symmetry_eval.jsonl: " << symmetry.size() << " records\n";
  }
  const auto fields = with_relation(kb, "field_of_work");
  if (!fields.empty()) {
    const auto synonym = knlab::build_synonym_eval(fields, knlab::field_synonyms(vocab),
                                                   knlab::derive_seed(o.common.seed, 2));
    knlab::write_edit_evals_jsonl(run.path("synonym_eval.jsonl"), synonym);
    std::cout << "synonym_eval.jsonl: " << synonym.size() << " records\n";
  }
  const auto train =
      knlab::fact_train_sentences(vocab, kb, o.repeats, knlab::derive_seed(o.common.seed, 3));
  knlab::write_lines(run.path("train.txt"), train);
  std::cout << "train.txt: " << train.size() << " sentences\n";
  run.finish();
}

// ---------------------------------------------------------------------- train

struct train_opts {
  common_opts common;
  std::string corpus;
  std::string out = "out/model";
  std::string masking = "bidirectional";
  int layers = 2;
  int d_model = 64;
  int d_mlp = 256;
  int heads = 4;
  int max_seq = 24;
  int steps = 800;
  int batch = 16;
  double lr = 3e-4;
  int log_every = 50;
};

void run_train(const train_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  const knlab::Vocab vocab;
  json cfg{{"corpus", o.corpus}, {"out", o.out},         {"seed", o.common.seed},
           {"masking", o.masking}, {"layers", o.layers},   {"d_model", o.d_model},
           {"d_mlp", o.d_mlp},     {"heads", o.heads},     {"max_seq", o.max_seq},
           {"steps", o.steps},     {"batch", o.batch},     {"lr", o.lr},
           {"log_every", o.log_every}};
  run_dir run(o.out, "train", cfg);

  knlab::ModelConfig mc;
  mc.layers = o.layers;
  mc.d_model = o.d_model;
  mc.d_mlp = o.d_mlp;
  mc.heads = o.heads;
  mc.vocab = vocab.size();
  mc.max_seq = o.max_seq;
  mc.masking = o.masking;
  if (!mc.causal()) mc.mask_token = vocab.mask_id();

  const auto corpus = knlab::encode_corpus(vocab, knlab::read_lines(o.corpus));
  knlab::Transformer model(mc, knlab::derive_seed(o.common.seed, 1));
  knlab::TrainSettings ts;
  ts.steps = o.steps;
  ts.batch = o.batch;
  ts.lr = o.lr;
  ts.log_every = o.log_every;
  ts.seed = knlab::derive_seed(o.common.seed, 2);
  const knlab::TrainStats stats = knlab::train(model, corpus, ts);

  knlab::save_checkpoint(model, run.path("model.ckpt"));
  std::string curve = "step,loss\n";
  for (const auto& [step, loss] : stats.loss_curve)
    curve += std::to_string(step) + "," + knlab::fmt_g(loss) + "\n";
  write_text(run.path("loss.csv"), curve);
  std::cout << "trained " << o.steps << " steps on " << corpus.size()
            << " sentences; final loss " << knlab::fmt_g(stats.final_loss) << "\n"
            << "checkpoint: model.ckpt\n";
  run.finish();
}

// ------------------------------------------------------------------ attribute

struct attribute_opts {
  common_opts common;
  std::string model;
  std::string pairs;
  std::string facts;
  std::string paradigm;
  std::string number_class;
  std::string relation;
  int steps = 20;
  std::string scope = "all";
  int limit = 0;
  std::string out = "out/attrib";
};

void run_attribute(const attribute_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  if (o.pairs.empty() == o.facts.empty())
    throw knlab::data_error("provide exactly one of --pairs or --facts");
  const knlab::Vocab vocab;
  const auto model = knlab::load_checkpoint(o.model);
  check_model_vocab(model, vocab);

  std::vector<knlab::AttributionQuery> queries;
  if (!o.pairs.empty()) {
    const auto pairs = load_pairs(o.pairs, o.paradigm, o.number_class, o.limit);
    for (size_t i = 0; i < pairs.size(); ++i) {
      const auto p = knlab::encode_prompt(vocab, pairs[i].template_text, model.config().causal());
      queries.push_back({p.tokens, p.target_pos, vocab.id(pairs[i].t), static_cast<int>(i)});
    }
  } else {
    const auto kb = load_facts(o.facts, o.relation, o.limit);
    for (size_t i = 0; i < kb.size(); ++i) {
      const auto text = knlab::substitute(kb[i].templates.front(), "[s]", kb[i].s);
      const auto p = knlab::encode_prompt(vocab, text, model.config().causal());
      queries.push_back({p.tokens, p.target_pos, vocab.id(kb[i].t), static_cast<int>(i)});
    }
  }

  json cfg{{"model", o.model},       {"pairs", o.pairs},     {"facts", o.facts},
           {"paradigm", o.paradigm}, {"class", o.number_class}, {"relation", o.relation},
           {"steps", o.steps},       {"scope", o.scope},     {"limit", o.limit},
           {"out", o.out},           {"seed", o.common.seed}};
  run_dir run(o.out, "attribute", cfg);
  const auto scope =
      o.scope == "target" ? knlab::EditScope::target_only : knlab::EditScope::all_tokens;
  const auto maps = knlab::batch_attribute(model, queries, o.steps, scope);
  knlab::write_attributions_jsonl(run.path("maps.jsonl"), maps);
  std::cout << "maps.jsonl: " << maps.size() << " attribution maps (m=" << o.steps << ")\n";
  run.finish();
}

// ------------------------------------------------------------------ kn-search

struct kn_search_opts {
  common_opts common;
  std::string maps;
  knlab::SearchConfig search;
  std::string out;  // optional artifact directory; JSON always goes to stdout
};

void run_kn_search(const kn_search_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  const auto maps = knlab::read_attributions_jsonl(o.maps);
  const auto kn = knlab::refine_threshold(maps, o.search);
  std::cout << knlab::kn_set_json_string(kn);
  if (!o.out.empty()) {
    json cfg{{"maps", o.maps},           {"pi", o.search.pi},   {"tau", o.search.tau0},
             {"step", o.search.step},    {"lo", o.search.lo},   {"hi", o.search.hi},
             {"max_iter", o.search.max_iterations}, {"out", o.out}, {"seed", o.common.seed}};
    run_dir run(o.out, "kn-search", cfg);
    knlab::write_kn_set_json(run.path("kn.json"), kn);
    run.finish();
  }
}

// ---------------------------------------------------------------- edit-effect

struct edit_effect_opts {
  common_opts common;
  std::string model;
  std::string kn;
  std::string pairs;
  std::string paradigm;
  std::string number_class;
  std::vector<std::string> probes;
  bool welch = false;
  int limit = 0;
  std::string out = "out/edit_effect";
};

void run_edit_effect(const edit_effect_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  const knlab::Vocab vocab;
  const auto model = knlab::load_checkpoint(o.model);
  check_model_vocab(model, vocab);
  const auto kn = knlab::read_kn_set_json(o.kn);
  const auto pairs = load_pairs(o.pairs, o.paradigm, o.number_class, o.limit);

  std::vector<knlab::Prompt> prompts;
  for (const auto& p : pairs)
    prompts.push_back(knlab::encode_prompt(vocab, p.template_text, model.config().causal()));

  std::vector<std::string> probe_words = o.probes;
  if (probe_words.empty()) {
    std::set<std::string> uniq;
    for (const auto& p : pairs) {
      uniq.insert(p.t);
      uniq.insert(p.t_star);
    }
    probe_words.assign(uniq.begin(), uniq.end());
  }
  std::vector<int> probe_tokens;
  for (const auto& w : probe_words) probe_tokens.push_back(vocab.id(w));

  json cfg{{"model", o.model},       {"kn", o.kn},           {"pairs", o.pairs},
           {"paradigm", o.paradigm}, {"class", o.number_class}, {"probes", probe_words},
           {"welch", o.welch},       {"limit", o.limit},     {"out", o.out},
           {"seed", o.common.seed}};
  run_dir run(o.out, "edit-effect", cfg);
  auto report = knlab::suppression_effect(model, kn, prompts, probe_tokens, o.welch);
  for (auto& t : report.tokens) t.label = vocab.word(t.token);
  knlab::write_effect_csv(run.path("effects.csv"), report);
  knlab::write_effect_svg(run.path("effects.svg"), report, "suppression effects");
  for (const auto& t : report.tokens)
    std::cout << t.label << " effect " << knlab::fmt_g(t.effect) << " p " << knlab::fmt_g(t.p)
              << (t.significant ? " *" : "") << "\n";
  run.finish();
}

// ---------------------------------------------------------------- reliability

struct reliability_opts {
  common_opts common;
  std::string model;
  std::string kb;
  std::string relation = "capital_of";
  std::string unrelated_relation = "field_of_work";
  std::string editor = "kn_boost";
  double boost = 4.0;
  int steps = 20;
  knlab::SearchConfig search;
  int limit = 0;
  std::string out = "out/reliability";
};

void run_reliability(const reliability_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  if (o.relation == o.unrelated_relation)
    throw knlab::data_error("--relation and --unrelated-relation must differ");
  const knlab::Vocab vocab;
  const auto model = knlab::load_checkpoint(o.model);
  check_model_vocab(model, vocab);
  const auto kb = load_facts(o.kb, o.relation, 0);
  auto tasks = knlab::build_edit_tasks(kb, knlab::derive_seed(o.common.seed, 11));
  if (o.limit > 0 && static_cast<int>(tasks.size()) > o.limit) tasks.resize(o.limit);
  const auto unrelated = load_facts(o.kb, o.unrelated_relation, 0);

  json cfg{{"model", o.model},   {"kb", o.kb},         {"relation", o.relation},
           {"unrelated_relation", o.unrelated_relation}, {"editor", o.editor},
           {"boost", o.boost},   {"steps", o.steps},   {"pi", o.search.pi},
           {"tau", o.search.tau0}, {"limit", o.limit}, {"out", o.out},
           {"seed", o.common.seed}};
  run_dir run(o.out, "reliability", cfg);
  const knlab::ToyModelScorer base(model, vocab, "toy");
  const auto editor = make_editor(o.editor, model, vocab, o.boost, o.steps, o.search);
  const auto report = knlab::eval_reliability_generality_locality(base, *editor, tasks, unrelated,
                                                                  o.relation, o.common.seed);
  knlab::emit_report({report}, o.out, {"csv", "json", "svg"});
  print_report(report);
  run.finish();
}

// ---------------------------------------------------------------------- trace

struct trace_opts {
  common_opts common;
  std::string model;
  std::string kb;
  std::string relation = "capital_of";
  double nu = 3.0;
  int window = 1;
  bool resample = false;
  int index = 0;
  bool average = false;
  int limit = 0;
  std::string out = "out/trace";
};

void run_trace(const trace_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  const knlab::Vocab vocab;
  const auto model = knlab::load_checkpoint(o.model);
  check_model_vocab(model, vocab);
  const auto kb = load_facts(o.kb, o.relation, o.average ? o.limit : 0);

  std::vector<knlab::TraceQuery> queries;
  for (const auto& f : kb) {
    const auto text = knlab::substitute(f.templates.front(), "[s]", f.s);
    knlab::TraceQuery q;
    q.prompt = knlab::encode_prompt(vocab, text, model.config().causal());
    const auto it = std::find(q.prompt.tokens.begin(), q.prompt.tokens.end(), vocab.id(f.s));
    if (it == q.prompt.tokens.end())
      throw knlab::data_error("subject '" + f.s + "' does not appear in its own prompt");
    q.subject_begin = static_cast<int>(it - q.prompt.tokens.begin());
    q.subject_end = q.subject_begin + 1;
    q.y = vocab.id(f.t);
    queries.push_back(std::move(q));
  }

  knlab::NoiseSpec noise;
  noise.nu = o.nu;
  noise.seed = knlab::derive_seed(o.common.seed, 21);
  noise.resample = o.resample;

  json cfg{{"model", o.model},   {"kb", o.kb},       {"relation", o.relation},
           {"nu", o.nu},         {"window", o.window}, {"resample", o.resample},
           {"index", o.index},   {"average", o.average}, {"limit", o.limit},
           {"out", o.out},       {"seed", o.common.seed}};
  run_dir run(o.out, "trace", cfg);
  if (o.average) {
    const auto grid = knlab::average_indirect_effect(model, queries, noise, o.window);
    knlab::write_trace_json(run.path("average_trace.json"), grid);
    knlab::write_trace_svg(run.path("average_trace"), grid);
    std::cout << "averaged " << grid.count << " prompts; p_clean_mean "
              << knlab::fmt_g(grid.p_clean_mean) << " p_corrupt_mean "
              << knlab::fmt_g(grid.p_corrupt_mean) << "\n";
  } else {
    if (o.index < 0 || o.index >= static_cast<int>(queries.size()))
      throw knlab::data_error("--index out of range: have " + std::to_string(queries.size()) +
                              " prompts");
    const auto& q = queries[o.index];
    const auto grid =
        knlab::trace(model, q.prompt, q.subject_begin, q.subject_end, q.y, noise, o.window);
    std::vector<std::string> labels;
    for (int tok : q.prompt.tokens) labels.push_back(vocab.word(tok));
    knlab::write_trace_json(run.path("trace.json"), grid);
    knlab::write_trace_svg(run.path("trace"), grid, labels);
    std::cout << "p_clean " << knlab::fmt_g(grid.p_clean) << " p_corrupt "
              << knlab::fmt_g(grid.p_corrupt) << "\n";
  }
  run.finish();
}

// ------------------------------------------------- eval-symmetry, eval-synonym

struct eval_records_opts {
  common_opts common;
  std::string model;
  std::string records;
  std::string editor = "kn_boost";
  double boost = 4.0;
  int steps = 20;
  knlab::SearchConfig search;
  int limit = 0;
  std::string dataset_id;
  std::string out;
};

void run_eval_records(const eval_records_opts& o, bool symmetry) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  const knlab::Vocab vocab;
  const auto model = knlab::load_checkpoint(o.model);
  check_model_vocab(model, vocab);
  auto records = knlab::read_edit_evals_jsonl(o.records);
  if (records.empty()) throw knlab::data_error("no records in " + o.records);
  if (o.limit > 0 && static_cast<int>(records.size()) > o.limit) records.resize(o.limit);
  const std::string dataset_id =
      o.dataset_id.empty() ? std::filesystem::path(o.records).stem().string() : o.dataset_id;

  json cfg{{"model", o.model}, {"records", o.records}, {"editor", o.editor},
           {"boost", o.boost}, {"steps", o.steps},     {"pi", o.search.pi},
           {"tau", o.search.tau0}, {"limit", o.limit}, {"dataset_id", dataset_id},
           {"out", o.out},     {"seed", o.common.seed}};
  run_dir run(o.out, symmetry ? "eval-symmetry" : "eval-synonym", cfg);
  const knlab::ToyModelScorer base(model, vocab, "toy");
  const auto editor = make_editor(o.editor, model, vocab, o.boost, o.steps, o.search);
  const auto report = symmetry
                          ? knlab::eval_symmetry(base, *editor, records, dataset_id, o.common.seed)
                          : knlab::eval_synonym(base, *editor, records, dataset_id, o.common.seed);
  knlab::emit_report({report}, o.out, {"csv", "json", "svg"});
  print_report(report);
  run.finish();
}

// --------------------------------------------------------------------- report

struct report_opts {
  common_opts common;
  std::vector<std::string> inputs;
  std::vector<std::string> formats{"csv", "json", "svg"};
  std::string out = "out/report";
};

void run_report(const report_opts& o) {
  knlab::kernels::set_max_jobs(o.common.jobs);
  std::vector<knlab::EvalReport> merged;
  for (const auto& path : o.inputs) {
    const auto bundle = knlab::read_report_json(path);
    merged.insert(merged.end(), bundle.begin(), bundle.end());
  }
  json cfg{{"inputs", o.inputs}, {"formats", o.formats}, {"out", o.out}, {"seed", o.common.seed}};
  run_dir run(o.out, "report", cfg);
  knlab::emit_report(merged, o.out, {o.formats.begin(), o.formats.end()});
  std::cout << "merged " << merged.size() << " reports from " << o.inputs.size() << " bundles\n";
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kn-lab: a desk-scale laboratory for knowledge-neuron experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kn-lab 1.0.0");
  app.set_config("--config", "", "flat JSON config for the invoked subcommand; explicit flags win");
  app.config_formatter(std::make_shared<json_config>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);  // typos in a config are usage errors

  gen_corpus_opts gc;
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  add_common(gen, gc.common);
  gen->add_option("--kind", gc.kind, "corpus kind")
      ->check(CLI::IsMember({"agreement", "facts"}));
  gen->add_option("--out", gc.out, "output directory");
  gen->add_option("--paradigms", gc.paradigms, "agreement paradigms")->delimiter(',');
  gen->add_option("--pairs", gc.pairs, "minimal pairs per paradigm");
  gen->add_option("--train", gc.train, "training sentences");
  gen->add_option("--capital-pairs", gc.capital_pairs, "capital_of facts");
  gen->add_option("--field-facts", gc.field_facts, "field_of_work facts");
  gen->add_option("--repeats", gc.repeats, "training repetitions per fact");
  gen->callback([&] { run_gen_corpus(gc); });

  train_opts tr;
  auto* train = app.add_subcommand("train", "train a toy transformer on a text corpus");
  add_common(train, tr.common);
  train->add_option("--corpus", tr.corpus, "train.txt path")->required();
  train->add_option("--out", tr.out, "output directory");
  train->add_option("--masking", tr.masking, "attention masking")
      ->check(CLI::IsMember({"causal", "bidirectional"}));
  train->add_option("--layers", tr.layers, "transformer layers");
  train->add_option("--d-model", tr.d_model, "model width");
  train->add_option("--d-mlp", tr.d_mlp, "MLP hidden width");
  train->add_option("--heads", tr.heads, "attention heads");
  train->add_option("--max-seq", tr.max_seq, "maximum sequence length");
  train->add_option("--steps", tr.steps, "optimizer steps");
  train->add_option("--batch", tr.batch, "batch size");
  train->add_option("--lr", tr.lr, "learning rate");
  train->add_option("--log-every", tr.log_every, "loss curve stride");
  train->callback([&] { run_train(tr); });

  attribute_opts at;
  auto* attr = app.add_subcommand("attribute", "integrated-gradients attribution maps");
  add_common(attr, at.common);
  attr->add_option("--model", at.model, "checkpoint path")->required();
  attr->add_option("--pairs", at.pairs, "minimal pairs jsonl (one of --pairs/--facts)");
  attr->add_option("--facts", at.facts, "fact kb jsonl (one of --pairs/--facts)");
  attr->add_option("--paradigm", at.paradigm, "pair paradigm filter");
  attr->add_option("--class", at.number_class, "pair number-class filter");
  attr->add_option("--relation", at.relation, "fact relation filter");
  attr->add_option("--steps,-m", at.steps, "Riemann steps m");
  attr->add_option("--scope", at.scope, "edit scope during the walk")
      ->check(CLI::IsMember({"all", "target"}));
  attr->add_option("--limit", at.limit, "cap the number of prompts (0 = all)");
  attr->add_option("--out", at.out, "output directory");
  attr->callback([&] { run_attribute(at); });

  kn_search_opts ks;
  auto* kn = app.add_subcommand("kn-search", "threshold-refined knowledge-neuron search");
  add_common(kn, ks.common);
  kn->add_option("--maps", ks.maps, "attribution maps jsonl")->required();
  kn->add_option("--pi", ks.search.pi, "per-prompt score-share threshold");
  kn->add_option("--tau", ks.search.tau0, "initial prompt-sharing threshold");
  kn->add_option("--step", ks.search.step, "threshold adjustment step");
  kn->add_option("--lo", ks.search.lo, "target |KN| lower bound");
  kn->add_option("--hi", ks.search.hi, "target |KN| upper bound");
  kn->add_option("--max-iter", ks.search.max_iterations, "iteration cap");
  kn->add_option("--out", ks.out, "optional output directory for kn.json");
  kn->callback([&] { run_kn_search(ks); });

  edit_effect_opts ee;
  auto* effect = app.add_subcommand("edit-effect", "suppress a KN set and measure probe shifts");
  add_common(effect, ee.common);
  effect->add_option("--model", ee.model, "checkpoint path")->required();
  effect->add_option("--kn", ee.kn, "KN set json")->required();
  effect->add_option("--pairs", ee.pairs, "minimal pairs jsonl")->required();
  effect->add_option("--paradigm", ee.paradigm, "pair paradigm filter");
  effect->add_option("--class", ee.number_class, "pair number-class filter");
  effect->add_option("--probes", ee.probes, "probe words (default: fillers in the pairs)")
      ->delimiter(',');
  effect->add_flag("--welch", ee.welch, "Welch t-test instead of pooled");
  effect->add_option("--limit", ee.limit, "cap the number of prompts (0 = all)");
  effect->add_option("--out", ee.out, "output directory");
  effect->callback([&] { run_edit_effect(ee); });

  reliability_opts re;
  auto* rel = app.add_subcommand("reliability", "reliability/generality/locality evaluation");
  add_common(rel, re.common);
  rel->add_option("--model", re.model, "checkpoint path")->required();
  rel->add_option("--kb", re.kb, "fact kb jsonl")->required();
  rel->add_option("--relation", re.relation, "relation to edit");
  rel->add_option("--unrelated-relation", re.unrelated_relation, "locality probe relation");
  rel->add_option("--editor", re.editor, "model editor")
      ->check(CLI::IsMember({"kn_suppress", "kn_boost"}));
  rel->add_option("--boost", re.boost, "activation scale for kn_boost");
  rel->add_option("--steps,-m", re.steps, "Riemann steps inside the editor");
  rel->add_option("--pi", re.search.pi, "KN search score share");
  rel->add_option("--tau", re.search.tau0, "KN search initial threshold");
  rel->add_option("--limit", re.limit, "cap the number of edit tasks (0 = all)");
  rel->add_option("--out", re.out, "output directory");
  rel->callback([&] { run_reliability(re); });

  trace_opts tc;
  auto* trace = app.add_subcommand("trace", "causal tracing over corrupted subjects");
  add_common(trace, tc.common);
  trace->add_option("--model", tc.model, "checkpoint path")->required();
  trace->add_option("--kb", tc.kb, "fact kb jsonl")->required();
  trace->add_option("--relation", tc.relation, "fact relation filter");
  trace->add_option("--nu", tc.nu, "noise scale in embedding std units");
  trace->add_option("--window", tc.window, "restoration window for mlp/attn");
  trace->add_flag("--resample", tc.resample, "fresh corruption noise per site");
  trace->add_option("--index", tc.index, "which fact to trace (single-prompt mode)");
  trace->add_flag("--average", tc.average, "average grids over the whole kb");
  trace->add_option("--limit", tc.limit, "cap the averaged prompts (0 = all)");
  trace->add_option("--out", tc.out, "output directory");
  trace->callback([&] { run_trace(tc); });

  eval_records_opts sym;
  sym.out = "out/eval_symmetry";
  auto* esym = app.add_subcommand("eval-symmetry", "bijective-relation symmetry evaluation");
  add_common(esym, sym.common);
  esym->add_option("--model", sym.model, "checkpoint path")->required();
  esym->add_option("--records", sym.records, "symmetry_eval.jsonl")->required();
  esym->add_option("--editor", sym.editor, "model editor")
      ->check(CLI::IsMember({"kn_suppress", "kn_boost"}));
  esym->add_option("--boost", sym.boost, "activation scale for kn_boost");
  esym->add_option("--steps,-m", sym.steps, "Riemann steps inside the editor");
  esym->add_option("--pi", sym.search.pi, "KN search score share");
  esym->add_option("--tau", sym.search.tau0, "KN search initial threshold");
  esym->add_option("--limit", sym.limit, "cap the number of records (0 = all)");
  esym->add_option("--dataset-id", sym.dataset_id, "report dataset id (default: file stem)");
  esym->add_option("--out", sym.out, "output directory");
  esym->callback([&] { run_eval_records(sym, true); });

  eval_records_opts syn;
  syn.out = "out/eval_synonym";
  auto* esyn = app.add_subcommand("eval-synonym", "synonymous-invariance evaluation");
  add_common(esyn, syn.common);
  esyn->add_option("--model", syn.model, "checkpoint path")->required();
  esyn->add_option("--records", syn.records, "synonym_eval.jsonl")->required();
  esyn->add_option("--editor", syn.editor, "model editor")
      ->check(CLI::IsMember({"kn_suppress", "kn_boost"}));
  esyn->add_option("--boost", syn.boost, "activation scale for kn_boost");
  esyn->add_option("--steps,-m", syn.steps, "Riemann steps inside the editor");
  esyn->add_option("--pi", syn.search.pi, "KN search score share");
  esyn->add_option("--tau", syn.search.tau0, "KN search initial threshold");
  esyn->add_option("--limit", syn.limit, "cap the number of records (0 = all)");
  esyn->add_option("--dataset-id", syn.dataset_id, "report dataset id (default: file stem)");
  esyn->add_option("--out", syn.out, "output directory");
  esyn->callback([&] { run_eval_records(syn, false); });

  report_opts rp;
  auto* rep = app.add_subcommand("report", "merge report bundles and re-emit");
  add_common(rep, rp.common);
  rep->add_option("inputs", rp.inputs, "report.json bundles")->required();
  rep->add_option("--formats", rp.formats, "output formats")->delimiter(',');
  rep->add_option("--out", rp.out, "output directory");
  rep->callback([&] { run_report(rp); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const knlab::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const knlab::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
