#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "knlab/corpora.hpp"
#include "knlab/stats.hpp"

using namespace knlab;

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

int one_slot_diff(const MinimalPair& p) {
  const auto a = words_of(fill_blank(p.template_text, p.t));
  const auto b = words_of(fill_blank(p.template_text, p.t_star));
  REQUIRE(a.size() == b.size());
  int diff = 0;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) ++diff;
  return diff;
}

std::string dump_pairs(const std::vector<MinimalPair>& pairs) {
  std::string out;
  for (const auto& p : pairs)
    out += p.template_text + '|' + p.s + '|' + p.t + '|' + p.t_star + '|' + p.number_class + '\n';
  return out;
}

}  // namespace

TEST_CASE("vocabulary is closed, deduplicated and reversible") {
  Vocab v;
  CHECK(v.size() >= 200);
  CHECK(v.size() <= 400);
  std::set<std::string> seen;
  for (int i = 0; i < v.size(); ++i) {
    CHECK(seen.insert(v.word(i)).second);
    CHECK(v.id(v.word(i)) == i);
  }
  CHECK(v.word(v.mask_id()) == "[mask]");
  CHECK_THROWS_AS(v.id("zzz_not_a_word"), data_error);
  CHECK_THROWS_AS(v.word(v.size()), data_error);
  const std::string sent = "carl cures those horses";
  CHECK(v.decode(v.encode(sent)) == sent);
  CHECK(v.persons().size() == 52);
  CHECK(v.countries().size() == 52);
  CHECK(v.capitals().size() == 52);
  CHECK(v.fields().size() == 52);
  CHECK(v.occupations().size() == 52);
}

TEST_CASE("det-noun corpus: counts, blank adjacency, single-slot difference") {
  Vocab v;
  AgreementSpec spec;
  spec.paradigms = {"det_noun"};
  spec.pairs_per_paradigm = 1000;
  spec.train_sentences = 50;
  auto c = gen_agreement_corpus(v, spec, 42);
  REQUIRE(c.pairs.size() == 1000);
  CHECK(c.train.size() == 50);
  for (const auto& p : c.pairs) {
    const auto w = words_of(p.template_text);
    int blank = -1;
    for (size_t i = 0; i < w.size(); ++i)
      if (w[i] == "___") {
        CHECK(blank == -1);
        blank = static_cast<int>(i);
      }
    REQUIRE(blank >= 0);
    // determiner blank sits immediately before its noun
    REQUIRE(blank + 1 < static_cast<int>(w.size()));
    CHECK(w[static_cast<size_t>(blank) + 1] == p.s);
    CHECK(one_slot_diff(p) == 1);
    CHECK(p.t != p.t_star);
    CHECK(p.phenomenon == "determiner_noun_agreement");
    const bool plural = p.number_class == "plural";
    const std::set<std::string> pl{"these", "those"}, sg{"this", "that"};
    CHECK((plural ? pl : sg).count(p.t) == 1);
    CHECK((plural ? sg : pl).count(p.t_star) == 1);
  }
}

TEST_CASE("every paradigm yields valid, single-difference pairs that tokenize") {
  Vocab v;
  AgreementSpec spec;
  spec.paradigms = {"det_noun", "det_noun_adj", "det_noun_irregular", "subject_verb", "anaphor_number"};
  spec.pairs_per_paradigm = 120;
  spec.train_sentences = 200;
  auto c = gen_agreement_corpus(v, spec, 7);
  REQUIRE(c.pairs.size() == 5 * 120);
  for (const auto& p : c.pairs) {
    CHECK(one_slot_diff(p) == 1);
    for (int tok : v.encode(fill_blank(p.template_text, p.t))) CHECK(tok < v.size());
    for (int tok : v.encode(fill_blank(p.template_text, p.t_star))) CHECK(tok < v.size());
    if (p.paradigm == "det_noun_irregular") {
      bool found = false;
      for (const auto& n : v.nouns())
        if (n.irregular && (p.s == n.singular || p.s == n.plural)) found = true;
      CHECK(found);
    }
  }
  for (const auto& s : c.train)
    for (int tok : v.encode(s)) CHECK(tok < v.size());

  AgreementSpec bad;
  bad.paradigms = {"verbify"};
  CHECK_THROWS_AS(gen_agreement_corpus(v, bad, 1), data_error);
}

TEST_CASE("agreement generation is deterministic per seed") {
  Vocab v;
  AgreementSpec spec;
  spec.paradigms = {"det_noun", "subject_verb"};
  spec.pairs_per_paradigm = 80;
  spec.train_sentences = 80;
  auto a = gen_agreement_corpus(v, spec, 9);
  auto b = gen_agreement_corpus(v, spec, 9);
  CHECK(dump_pairs(a.pairs) == dump_pairs(b.pairs));
  CHECK(a.train == b.train);
  auto cdiff = gen_agreement_corpus(v, spec, 10);
  CHECK(dump_pairs(a.pairs) != dump_pairs(cdiff.pairs));
}

TEST_CASE("unique (s,t) extraction matches a hash-set oracle") {
  Vocab v;
  AgreementSpec spec;
  spec.paradigms = {"det_noun"};
  spec.pairs_per_paradigm = 500;
  spec.train_sentences = 0;
  auto c = gen_agreement_corpus(v, spec, 3);
  std::set<std::pair<std::string, std::string>> tidy;
  std::unordered_set<std::string> oracle;
  for (const auto& p : c.pairs) {
    tidy.emplace(p.s, p.t);
    oracle.insert(p.s + "\x1f" + p.t);
  }
  CHECK(tidy.size() == oracle.size());
  CHECK(tidy.size() <= c.pairs.size());
  CHECK(tidy.size() > 10);  // 16 nouns x 2 dets per number class give plenty of pairs
}

TEST_CASE("fact KB: bijective capitals, N-1 fields, pool limits, determinism") {
  Vocab v;
  FactSpec spec;
  auto kb = gen_fact_kb(v, spec, 5);
  REQUIRE(kb.size() == 100);
  std::set<std::string> s_cap, t_cap;
  int caps = 0, flds = 0;
  for (const auto& f : kb) {
    REQUIRE(f.templates.size() >= 2);
    for (const auto& t : f.templates) {
      CHECK(t.find("[s]") != std::string::npos);
      CHECK(t.find("___") != std::string::npos);
    }
    if (f.relation == "capital_of") {
      ++caps;
      CHECK(s_cap.insert(f.s).second);
      CHECK(t_cap.insert(f.t).second);
    } else {
      REQUIRE(f.relation == "field_of_work");
      ++flds;
    }
  }
  CHECK(caps == 50);
  CHECK(flds == 50);

  // inverse lookup over the bijective part is a total function
  std::map<std::string, std::string> inv;
  for (const auto& f : kb)
    if (f.relation == "capital_of") CHECK(inv.emplace(f.t, f.s).second);
  CHECK(inv.size() == 50);

  auto syn = field_synonyms(v);
  for (const auto& f : kb)
    if (f.relation == "field_of_work") CHECK(syn.count(f.t) == 1);

  auto kb2 = gen_fact_kb(v, spec, 5);
  for (size_t i = 0; i < kb.size(); ++i) {
    CHECK(kb[i].s == kb2[i].s);
    CHECK(kb[i].t == kb2[i].t);
  }

  FactSpec big;
  big.capital_pairs = 53;
  CHECK_THROWS_AS(gen_fact_kb(v, big, 1), data_error);
  FactSpec big2;
  big2.field_facts = 60;
  CHECK_THROWS_AS(gen_fact_kb(v, big2, 1), data_error);
}

TEST_CASE("symmetry eval: forced two-entry case") {
  const auto& info = relation_info("capital_of");
  std::vector<FactTuple> kb{{"aland", "xton", "capital_of", info.forward_templates},
                            {"bland", "yton", "capital_of", info.forward_templates}};
  auto recs = build_symmetry_eval(kb, 1);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].edit_prompt == "the capital of aland is ___");
  CHECK(recs[0].edit_target_old == "xton");
  CHECK(recs[0].edit_target_new == "yton");  // only other target
  CHECK(recs[0].eval_prompt == "yton is the capital of ___");
  CHECK(recs[0].eval_expected == "aland");
  CHECK(recs[0].eval_original == "bland");
  CHECK(recs[1].edit_target_new == "xton");
  CHECK(recs[1].eval_expected == "bland");
  CHECK(recs[1].eval_original == "aland");

  CHECK_THROWS_AS(build_symmetry_eval({kb[0]}, 1), data_error);
  std::vector<FactTuple> dup{kb[0], kb[0]};
  CHECK_THROWS_AS(build_symmetry_eval(dup, 1), data_error);
  std::vector<FactTuple> n1{{"p", "f", "field_of_work", relation_info("field_of_work").forward_templates},
                            {"q", "g", "field_of_work", relation_info("field_of_work").forward_templates}};
  CHECK_THROWS_AS(build_symmetry_eval(n1, 1), data_error);
}

TEST_CASE("symmetry eval: one record per tuple and uniform counterfactual choice") {
  Vocab v;
  FactSpec spec;
  spec.capital_pairs = 6;
  spec.field_facts = 0;
  auto kb = gen_fact_kb(v, spec, 11);
  auto recs = build_symmetry_eval(kb, 2);
  CHECK(recs.size() == kb.size());
  for (size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].edit_target_new != kb[i].t);

  // t* for the first tuple across many seeds: uniform over the 5 other targets
  std::map<std::string, int> counts;
  const int trials = 4000;
  for (int seed = 0; seed < trials; ++seed)
    counts[build_symmetry_eval(kb, static_cast<uint64_t>(seed)).front().edit_target_new] += 1;
  REQUIRE(counts.size() == 5);
  std::vector<int64_t> obs;
  for (const auto& [t, n] : counts) {
    (void)t;
    obs.push_back(n);
  }
  CHECK(chi_squared_uniform_p(obs) > 0.01);
}

TEST_CASE("synonym eval: expected answers, resampling, discards") {
  Vocab v;
  auto syn = field_synonyms(v);
  const auto& info = relation_info("field_of_work");
  std::vector<FactTuple> kb{{"carl", "philosophy", "field_of_work", info.forward_templates},
                            {"anna", "linguistics", "field_of_work", info.forward_templates},
                            {"boris", "physics", "field_of_work", info.forward_templates}};
  auto recs = build_synonym_eval(kb, syn, 8);
  REQUIRE(recs.size() == 3);
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].edit_target_new != kb[i].t);
    CHECK(recs[i].eval_expected == syn.at(recs[i].edit_target_new));
    CHECK(recs[i].eval_original == syn.at(kb[i].t));
    CHECK(recs[i].eval_prompt == kb[i].s + " is a famous ___");
  }

  // a target without a synonym entry is discarded, shrinking the output
  std::map<std::string, std::string> partial{{"philosophy", "philosopher"}, {"physics", "physicist"}};
  auto fewer = build_synonym_eval(kb, partial, 8);
  CHECK(fewer.size() == 2);

  std::map<std::string, std::string> tiny{{"philosophy", "philosopher"}};
  CHECK_THROWS_AS(build_synonym_eval(kb, tiny, 8), data_error);
  std::map<std::string, std::string> disjoint{{"music", "musician"}, {"poetry", "poet"}};
  CHECK_THROWS_AS(build_synonym_eval({kb[0]}, std::map<std::string, std::string>{}, 8), data_error);
  // all tuples discarded
  std::vector<FactTuple> odd{{"carl", "botany", "field_of_work", info.forward_templates}};
  CHECK_THROWS_AS(build_synonym_eval(odd, disjoint, 8), data_error);
}

TEST_CASE("prompt encoding for causal and bidirectional scoring") {
  Vocab v;
  auto p = encode_prompt(v, "the capital of france is ___", true);
  CHECK(p.tokens == v.encode("the capital of france is"));
  CHECK(p.target_pos == 4);
  auto q = encode_prompt(v, "carl cures ___ horses", false);
  REQUIRE(q.tokens.size() == 4);
  CHECK(q.tokens[2] == v.mask_id());
  CHECK(q.target_pos == 2);
  CHECK(q.tokens[3] == v.id("horses"));

  CHECK_THROWS_AS(encode_prompt(v, "carl cures ___ horses", true), data_error);
  CHECK_THROWS_AS(encode_prompt(v, "no blank here", true), data_error);
  CHECK_THROWS_AS(encode_prompt(v, "___ ___", false), data_error);
  CHECK_THROWS_AS(encode_prompt(v, "___", true), data_error);
}

TEST_CASE("fact training sentences cover every template and shuffle deterministically") {
  Vocab v;
  FactSpec spec;
  spec.capital_pairs = 4;
  spec.field_facts = 3;
  auto kb = gen_fact_kb(v, spec, 13);
  auto sents = fact_train_sentences(v, kb, 2, 17);
  CHECK(sents.size() == 7 * 2 * 2);
  std::multiset<std::string> bag(sents.begin(), sents.end());
  for (const auto& f : kb)
    for (const auto& tmpl : f.templates)
      CHECK(bag.count(fill_blank(substitute(tmpl, "[s]", f.s), f.t)) == 2);
  auto again = fact_train_sentences(v, kb, 2, 17);
  CHECK(sents == again);
  CHECK_THROWS_AS(fact_train_sentences(v, kb, 0, 17), data_error);
}

TEST_CASE("JSONL round trips preserve every field with the exact schema") {
  Vocab v;
  AgreementSpec aspec;
  aspec.paradigms = {"det_noun", "anaphor_number"};
  aspec.pairs_per_paradigm = 20;
  aspec.train_sentences = 0;
  auto corpus = gen_agreement_corpus(v, aspec, 21);
  const std::string pp = "pairs.jsonl";
  write_minimal_pairs_jsonl(pp, corpus.pairs);
  auto pairs2 = read_minimal_pairs_jsonl(pp);
  REQUIRE(pairs2.size() == corpus.pairs.size());
  for (size_t i = 0; i < pairs2.size(); ++i) {
    CHECK(pairs2[i].template_text == corpus.pairs[i].template_text);
    CHECK(pairs2[i].s == corpus.pairs[i].s);
    CHECK(pairs2[i].t == corpus.pairs[i].t);
    CHECK(pairs2[i].t_star == corpus.pairs[i].t_star);
    CHECK(pairs2[i].phenomenon == corpus.pairs[i].phenomenon);
    CHECK(pairs2[i].paradigm == corpus.pairs[i].paradigm);
    CHECK(pairs2[i].number_class == corpus.pairs[i].number_class);
  }
  {
    std::ifstream in(pp);
    std::string line;
    REQUIRE(std::getline(in, line));
    auto j = nlohmann::json::parse(line);
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    CHECK(keys == std::set<std::string>{"template", "s", "t", "t_star", "phenomenon", "paradigm",
                                        "number_class"});
  }
  std::remove(pp.c_str());

  FactSpec fspec;
  fspec.capital_pairs = 5;
  fspec.field_facts = 5;
  auto kb = gen_fact_kb(v, fspec, 23);
  const std::string fp = "facts.jsonl";
  write_facts_jsonl(fp, kb);
  auto kb2 = read_facts_jsonl(fp);
  REQUIRE(kb2.size() == kb.size());
  for (size_t i = 0; i < kb.size(); ++i) {
    CHECK(kb2[i].s == kb[i].s);
    CHECK(kb2[i].t == kb[i].t);
    CHECK(kb2[i].relation == kb[i].relation);
    CHECK(kb2[i].templates == kb[i].templates);
  }
  std::remove(fp.c_str());

  auto caps = std::vector<FactTuple>(kb.begin(), kb.begin() + 5);
  auto sym = build_symmetry_eval(caps, 29);
  const std::string sp = "sym.jsonl";
  write_edit_evals_jsonl(sp, sym);
  auto sym2 = read_edit_evals_jsonl(sp);
  REQUIRE(sym2.size() == sym.size());
  for (size_t i = 0; i < sym.size(); ++i) {
    CHECK(sym2[i].edit_prompt == sym[i].edit_prompt);
    CHECK(sym2[i].edit_target_old == sym[i].edit_target_old);
    CHECK(sym2[i].edit_target_new == sym[i].edit_target_new);
    CHECK(sym2[i].eval_prompt == sym[i].eval_prompt);
    CHECK(sym2[i].eval_expected == sym[i].eval_expected);
    CHECK(sym2[i].eval_original == sym[i].eval_original);
  }
  {
    std::ifstream in(sp);
    std::string line;
    REQUIRE(std::getline(in, line));
    auto j = nlohmann::json::parse(line);
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    CHECK(keys == std::set<std::string>{"edit_prompt", "edit_target_old", "edit_target_new",
                                        "eval_prompt", "eval_expected", "eval_original"});
  }
  std::remove(sp.c_str());

  CHECK_THROWS_AS(read_minimal_pairs_jsonl("missing_file.jsonl"), io_error);
}
