#pragma once

// Synthetic corpora: agreement minimal pairs, fact knowledge bases, and the
// symmetry / synonym edit-evaluation sets, all over one fixed word inventory.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "knlab/errors.hpp"

namespace knlab {

struct NounEntry {
  std::string singular;
  std::string plural;
  bool irregular = false;
};

struct VerbEntry {
  std::string third_sg;  // "cures"
  std::string base;      // "cure"
};

// Fixed built-in word inventory. Word ids double as token ids, so a model
// trained on these corpora needs vocab >= Vocab::size().
class Vocab {
 public:
  Vocab();

  int size() const { return static_cast<int>(words_.size()); }
  int mask_id() const { return 0; }
  bool contains(const std::string& word) const { return ids_.count(word) != 0; }
  int id(const std::string& word) const;
  const std::string& word(int id) const;

  std::vector<int> encode(const std::string& text) const;  // whitespace tokens
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& persons() const { return persons_; }
  const std::vector<std::string>& countries() const { return countries_; }
  const std::vector<std::string>& capitals() const { return capitals_; }  // aligned with countries()
  const std::vector<std::string>& fields() const { return fields_; }
  const std::vector<std::string>& occupations() const { return occupations_; }  // aligned with fields()
  const std::vector<NounEntry>& nouns() const { return nouns_; }
  const std::vector<VerbEntry>& verbs() const { return verbs_; }
  const std::vector<std::string>& adjectives() const { return adjectives_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
  std::vector<std::string> persons_, countries_, capitals_, fields_, occupations_, adjectives_;
  std::vector<NounEntry> nouns_;
  std::vector<VerbEntry> verbs_;
};

// field -> occupation word ("philosophy" -> "philosopher")
std::map<std::string, std::string> field_synonyms(const Vocab& vocab);

struct MinimalPair {
  std::string template_text;  // contains exactly one "___"
  std::string s;              // conditioning noun
  std::string t;              // grammatical filler
  std::string t_star;         // ungrammatical filler
  std::string phenomenon;
  std::string paradigm;
  std::string number_class;  // "singular" | "plural"
};

struct FactTuple {
  std::string s;
  std::string t;
  std::string relation;
  std::vector<std::string> templates;  // each contains "[s]" and "___"
};

struct EditEvalRecord {
  std::string edit_prompt;  // forward prompt with the target blanked
  std::string edit_target_old;
  std::string edit_target_new;
  std::string eval_prompt;
  std::string eval_expected;
  std::string eval_original;
};
using SymmetryRecord = EditEvalRecord;
using SynonymRecord = EditEvalRecord;

struct AgreementSpec {
  std::vector<std::string> paradigms{"det_noun"};
  int pairs_per_paradigm = 1000;
  int train_sentences = 2000;
};

struct AgreementCorpus {
  std::vector<MinimalPair> pairs;
  std::vector<std::string> train;  // grammatical sentences
};

// Paradigms: det_noun, det_noun_adj, det_noun_irregular, subject_verb,
// anaphor_number. Deterministic for a fixed seed.
AgreementCorpus gen_agreement_corpus(const Vocab& vocab, const AgreementSpec& spec, uint64_t seed);

struct RelationInfo {
  std::string name;
  std::vector<std::string> forward_templates;  // "[s]" + "___"
  std::string inverse_template;                // "[t]" + "___", empty if none
  bool bijective = false;
};

const RelationInfo& relation_info(const std::string& name);  // capital_of | field_of_work

struct FactSpec {
  int capital_pairs = 50;
  int field_facts = 50;
};

// Returns capital_of tuples (bijective) followed by field_of_work tuples (N-1).
std::vector<FactTuple> gen_fact_kb(const Vocab& vocab, const FactSpec& spec, uint64_t seed);

std::vector<SymmetryRecord> build_symmetry_eval(const std::vector<FactTuple>& kb, uint64_t seed);
std::vector<SynonymRecord> build_synonym_eval(const std::vector<FactTuple>& kb,
                                              const std::map<std::string, std::string>& synonym_map,
                                              uint64_t seed);

// template helpers
std::string substitute(const std::string& tmpl, const std::string& slot, const std::string& word);
std::string fill_blank(const std::string& prompt, const std::string& word);

// A prompt ready for the model: token ids plus the position whose output
// distribution scores the blank. Causal prompts must end with the blank.
struct Prompt {
  std::vector<int> tokens;
  int target_pos = 0;
};
Prompt encode_prompt(const Vocab& vocab, const std::string& text_with_blank, bool causal);

// training-text helpers
std::vector<std::vector<int>> encode_corpus(const Vocab& vocab, const std::vector<std::string>& sentences);
std::vector<std::string> fact_train_sentences(const Vocab& vocab, const std::vector<FactTuple>& kb,
                                              int repeats, uint64_t seed);

// line-delimited JSON IO
void write_minimal_pairs_jsonl(const std::string& path, const std::vector<MinimalPair>& pairs);
std::vector<MinimalPair> read_minimal_pairs_jsonl(const std::string& path);
void write_facts_jsonl(const std::string& path, const std::vector<FactTuple>& kb);
std::vector<FactTuple> read_facts_jsonl(const std::string& path);
void write_edit_evals_jsonl(const std::string& path, const std::vector<EditEvalRecord>& recs);
std::vector<EditEvalRecord> read_edit_evals_jsonl(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::string& path);

}  // namespace knlab
