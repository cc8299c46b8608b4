#include "knlab/corpora.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "knlab/rng.hpp"

namespace knlab {

namespace {

const std::vector<std::string> kPersons = {
    "carl", "anna", "boris", "clara", "david", "elena", "felix", "greta", "henry", "irene", "jacob",
    "karen", "liam", "maria", "nora", "oscar", "paula", "quinn", "ralph", "stella", "tomas", "ursula",
    "victor", "wanda", "xavier", "yvonne", "zoe", "albert", "bella", "cedric", "diana", "edgar",
    "fiona", "hilda", "ivan", "julia", "kevin", "laura", "martin", "nina", "otto", "petra", "rudolf",
    "sandra", "tobias", "vera", "walter", "alice", "bruno", "celia", "dmitri", "emma"};

const std::vector<std::string> kCountries = {
    "france", "spain", "italy", "germany", "portugal", "austria", "greece", "norway", "sweden",
    "finland", "denmark", "ireland", "poland", "hungary", "romania", "bulgaria", "czechia",
    "slovakia", "slovenia", "croatia", "serbia", "albania", "latvia", "lithuania", "estonia",
    "iceland", "russia", "ukraine", "belarus", "moldova", "turkey", "georgia", "armenia",
    "azerbaijan", "kazakhstan", "japan", "china", "india", "nepal", "thailand", "vietnam", "laos",
    "mongolia", "egypt", "kenya", "nigeria", "ghana", "morocco", "tunisia", "libya", "algeria",
    "senegal"};

const std::vector<std::string> kCapitals = {
    "paris", "madrid", "rome", "berlin", "lisbon", "vienna", "athens", "oslo", "stockholm",
    "helsinki", "copenhagen", "dublin", "warsaw", "budapest", "bucharest", "sofia", "prague",
    "bratislava", "ljubljana", "zagreb", "belgrade", "tirana", "riga", "vilnius", "tallinn",
    "reykjavik", "moscow", "kyiv", "minsk", "chisinau", "ankara", "tbilisi", "yerevan", "baku",
    "astana", "tokyo", "beijing", "delhi", "kathmandu", "bangkok", "hanoi", "vientiane",
    "ulaanbaatar", "cairo", "nairobi", "abuja", "accra", "rabat", "tunis", "tripoli", "algiers",
    "dakar"};

const std::vector<std::string> kFields = {
    "philosophy", "linguistics", "physics", "chemistry", "biology", "astronomy", "geology",
    "mathematics", "economics", "psychology", "sociology", "anthropology", "archaeology", "history",
    "geography", "botany", "zoology", "ecology", "genetics", "law", "journalism", "architecture",
    "engineering", "music", "poetry", "sculpture", "painting", "photography", "theology",
    "statistics", "meteorology", "oceanography", "immunology", "neurology", "cardiology",
    "pharmacology", "virology", "pathology", "radiology", "oncology", "dermatology", "psychiatry",
    "dentistry", "agronomy", "astrophysics", "biochemistry", "philology", "entomology",
    "ornithology", "cartography", "criminology", "seismology"};

const std::vector<std::string> kOccupations = {
    "philosopher", "linguist", "physicist", "chemist", "biologist", "astronomer", "geologist",
    "mathematician", "economist", "psychologist", "sociologist", "anthropologist", "archaeologist",
    "historian", "geographer", "botanist", "zoologist", "ecologist", "geneticist", "lawyer",
    "journalist", "architect", "engineer", "musician", "poet", "sculptor", "painter",
    "photographer", "theologian", "statistician", "meteorologist", "oceanographer", "immunologist",
    "neurologist", "cardiologist", "pharmacologist", "virologist", "pathologist", "radiologist",
    "oncologist", "dermatologist", "psychiatrist", "dentist", "agronomist", "astrophysicist",
    "biochemist", "philologist", "entomologist", "ornithologist", "cartographer", "criminologist",
    "seismologist"};

const std::vector<NounEntry> kNouns = {
    {"cat", "cats", false},    {"dog", "dogs", false},     {"horse", "horses", false},
    {"bird", "birds", false},  {"book", "books", false},   {"tree", "trees", false},
    {"lamp", "lamps", false},  {"door", "doors", false},   {"boat", "boats", false},
    {"stone", "stones", false}, {"river", "rivers", false}, {"cloud", "clouds", false},
    {"mouse", "mice", true},   {"goose", "geese", true},   {"child", "children", true},
    {"foot", "feet", true}};

const std::vector<VerbEntry> kVerbs = {{"sleeps", "sleep"}, {"runs", "run"},   {"jumps", "jump"},
                                       {"sings", "sing"},   {"cures", "cure"}, {"sees", "see"},
                                       {"likes", "like"},   {"falls", "fall"}};

const std::vector<std::string> kAdjectives = {"brown", "small", "big",   "old",
                                              "young", "red",   "quiet", "happy"};

const std::vector<std::string> kDeterminers = {"this", "that", "these", "those", "the"};

const std::vector<std::string> kGlue = {"is",     "are",   "of",    "in",  "a",    "works", "studies",
                                        "capital", "field", "famous", "often", "saw", "city"};

constexpr const char* kBlank = "___";

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

Vocab::Vocab() {
  persons_ = kPersons;
  countries_ = kCountries;
  capitals_ = kCapitals;
  fields_ = kFields;
  occupations_ = kOccupations;
  nouns_ = kNouns;
  verbs_ = kVerbs;
  adjectives_ = kAdjectives;

  words_.push_back("[mask]");
  for (const auto& w : kDeterminers) words_.push_back(w);
  for (const auto& w : kGlue) words_.push_back(w);
  for (const auto& n : kNouns) {
    words_.push_back(n.singular);
    words_.push_back(n.plural);
  }
  for (const auto& v : kVerbs) {
    words_.push_back(v.third_sg);
    words_.push_back(v.base);
  }
  for (const auto& w : kAdjectives) words_.push_back(w);
  words_.push_back("itself");
  words_.push_back("themselves");
  for (const auto& w : kPersons) words_.push_back(w);
  for (const auto& w : kCountries) words_.push_back(w);
  for (const auto& w : kCapitals) words_.push_back(w);
  for (const auto& w : kFields) words_.push_back(w);
  for (const auto& w : kOccupations) words_.push_back(w);

  for (size_t i = 0; i < words_.size(); ++i) {
    auto [it, fresh] = ids_.emplace(words_[i], static_cast<int>(i));
    if (!fresh) throw data_error("vocab: duplicate word " + words_[i]);
  }
}

int Vocab::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw data_error("vocab: unknown word " + word);
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw data_error("vocab: id out of range " + std::to_string(id));
  return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int i : ids) words.push_back(word(i));
  return join_words(words);
}

std::map<std::string, std::string> field_synonyms(const Vocab& vocab) {
  std::map<std::string, std::string> m;
  for (size_t i = 0; i < vocab.fields().size(); ++i) m[vocab.fields()[i]] = vocab.occupations()[i];
  return m;
}

std::string substitute(const std::string& tmpl, const std::string& slot, const std::string& word) {
  const auto pos = tmpl.find(slot);
  if (pos == std::string::npos) throw data_error("template is missing slot " + slot);
  std::string out = tmpl;
  out.replace(pos, slot.size(), word);
  if (out.find(slot) != std::string::npos) throw data_error("template has repeated slot " + slot);
  return out;
}

std::string fill_blank(const std::string& prompt, const std::string& word) {
  return substitute(prompt, kBlank, word);
}

Prompt encode_prompt(const Vocab& vocab, const std::string& text_with_blank, bool causal) {
  const auto words = split_words(text_with_blank);
  int blank = -1;
  for (size_t i = 0; i < words.size(); ++i) {
    if (words[i] == kBlank) {
      if (blank >= 0) throw data_error("prompt has more than one blank: " + text_with_blank);
      blank = static_cast<int>(i);
    }
  }
  if (blank < 0) throw data_error("prompt has no blank: " + text_with_blank);
  Prompt p;
  if (causal) {
    if (blank != static_cast<int>(words.size()) - 1)
      throw data_error("causal prompts must end with the blank: " + text_with_blank);
    if (blank == 0) throw data_error("causal prompt has no context: " + text_with_blank);
    for (int i = 0; i < blank; ++i) p.tokens.push_back(vocab.id(words[static_cast<size_t>(i)]));
    p.target_pos = blank - 1;  // next-token slot that predicts the blank
  } else {
    for (size_t i = 0; i < words.size(); ++i)
      p.tokens.push_back(static_cast<int>(i) == blank ? vocab.mask_id()
                                                      : vocab.id(words[i]));
    p.target_pos = blank;
  }
  return p;
}

namespace {

struct PairDraw {
  MinimalPair pair;
  std::string grammatical;  // rendered sentence for the training stream
};

PairDraw draw_pair(const Vocab& vocab, const std::string& paradigm, Rng& rng) {
  PairDraw d;
  d.pair.paradigm = paradigm;
  const bool det = paradigm == "det_noun" || paradigm == "det_noun_adj" ||
                   paradigm == "det_noun_irregular";
  const NounEntry* noun = nullptr;
  if (paradigm == "det_noun_irregular") {
    std::vector<const NounEntry*> irr;
    for (const auto& n : vocab.nouns())
      if (n.irregular) irr.push_back(&n);
    noun = irr[static_cast<size_t>(rng.uniform_int(static_cast<int>(irr.size())))];
  } else {
    noun = &vocab.nouns()[static_cast<size_t>(rng.uniform_int(static_cast<int>(vocab.nouns().size())))];
  }
  const bool plural = rng.uniform_int(2) == 1;
  const std::string surface = plural ? noun->plural : noun->singular;
  d.pair.s = surface;
  d.pair.number_class = plural ? "plural" : "singular";

  if (det) {
    d.pair.phenomenon = "determiner_noun_agreement";
    const bool distal = rng.uniform_int(2) == 1;  // that/those vs this/these
    const std::string sg = distal ? "that" : "this";
    const std::string pl = distal ? "those" : "these";
    d.pair.t = plural ? pl : sg;
    d.pair.t_star = plural ? sg : pl;
    const auto& person = vocab.persons()[static_cast<size_t>(
        rng.uniform_int(static_cast<int>(vocab.persons().size())))];
    const auto& verb = vocab.verbs()[static_cast<size_t>(
        rng.uniform_int(static_cast<int>(vocab.verbs().size())))];
    std::string tail = surface;
    if (paradigm == "det_noun_adj") {
      const auto& adj = vocab.adjectives()[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(vocab.adjectives().size())))];
      tail = adj + " " + surface;
    }
    d.pair.template_text = person + " " + verb.third_sg + " " + kBlank + " " + tail;
  } else if (paradigm == "subject_verb") {
    d.pair.phenomenon = "subject_verb_agreement";
    const auto& verb = vocab.verbs()[static_cast<size_t>(
        rng.uniform_int(static_cast<int>(vocab.verbs().size())))];
    d.pair.t = plural ? verb.base : verb.third_sg;
    d.pair.t_star = plural ? verb.third_sg : verb.base;
    d.pair.template_text = std::string("the ") + surface + " often " + kBlank;
  } else if (paradigm == "anaphor_number") {
    d.pair.phenomenon = "anaphor_number_agreement";
    d.pair.t = plural ? "themselves" : "itself";
    d.pair.t_star = plural ? "itself" : "themselves";
    d.pair.template_text = std::string("the ") + surface + " saw " + kBlank;
  } else {
    throw data_error("unknown paradigm " + paradigm);
  }
  if (d.pair.t == d.pair.t_star) throw data_error("degenerate minimal pair for " + paradigm);
  d.grammatical = fill_blank(d.pair.template_text, d.pair.t);
  return d;
}

}  // namespace

AgreementCorpus gen_agreement_corpus(const Vocab& vocab, const AgreementSpec& spec, uint64_t seed) {
  if (spec.paradigms.empty()) throw data_error("agreement spec names no paradigms");
  if (spec.pairs_per_paradigm < 1) throw data_error("pairs_per_paradigm must be positive");
  if (spec.train_sentences < 0) throw data_error("train_sentences must be non-negative");
  AgreementCorpus out;
  Rng rng(derive_seed(seed, 1));
  for (const auto& paradigm : spec.paradigms)
    for (int k = 0; k < spec.pairs_per_paradigm; ++k)
      out.pairs.push_back(draw_pair(vocab, paradigm, rng).pair);
  Rng trng(derive_seed(seed, 2));
  for (int k = 0; k < spec.train_sentences; ++k) {
    const auto& paradigm =
        spec.paradigms[static_cast<size_t>(trng.uniform_int(static_cast<int>(spec.paradigms.size())))];
    out.train.push_back(draw_pair(vocab, paradigm, trng).grammatical);
  }
  return out;
}

const RelationInfo& relation_info(const std::string& name) {
  static const RelationInfo capital{
      "capital_of",
      {"the capital of [s] is ___", "the capital city of [s] is ___"},
      "[t] is the capital of ___",
      true};
  static const RelationInfo field{
      "field_of_work",
      {"[s] works in the field of ___", "[s] studies ___"},
      "",
      false};
  if (name == "capital_of") return capital;
  if (name == "field_of_work") return field;
  throw data_error("unknown relation " + name);
}

std::vector<FactTuple> gen_fact_kb(const Vocab& vocab, const FactSpec& spec, uint64_t seed) {
  if (spec.capital_pairs < 0 || spec.field_facts < 0) throw data_error("fact counts must be non-negative");
  if (spec.capital_pairs > static_cast<int>(vocab.countries().size()))
    throw data_error("requested capital pairs exceed the country pool");
  if (spec.field_facts > static_cast<int>(vocab.persons().size()))
    throw data_error("requested field facts exceed the person pool");

  std::vector<FactTuple> kb;
  Rng rng(derive_seed(seed, 3));
  std::vector<int> cidx(vocab.countries().size());
  for (size_t i = 0; i < cidx.size(); ++i) cidx[i] = static_cast<int>(i);
  rng.shuffle(cidx);
  const auto& cap_info = relation_info("capital_of");
  for (int k = 0; k < spec.capital_pairs; ++k) {
    const int i = cidx[static_cast<size_t>(k)];
    kb.push_back({vocab.countries()[static_cast<size_t>(i)], vocab.capitals()[static_cast<size_t>(i)],
                  cap_info.name, cap_info.forward_templates});
  }
  std::vector<int> pidx(vocab.persons().size());
  for (size_t i = 0; i < pidx.size(); ++i) pidx[i] = static_cast<int>(i);
  rng.shuffle(pidx);
  const auto& field_info = relation_info("field_of_work");
  for (int k = 0; k < spec.field_facts; ++k) {
    const auto& person = vocab.persons()[static_cast<size_t>(pidx[static_cast<size_t>(k)])];
    const auto& field = vocab.fields()[static_cast<size_t>(
        rng.uniform_int(static_cast<int>(vocab.fields().size())))];
    kb.push_back({person, field, field_info.name, field_info.forward_templates});
  }
  return kb;
}

std::vector<SymmetryRecord> build_symmetry_eval(const std::vector<FactTuple>& kb, uint64_t seed) {
  if (kb.size() < 2) throw data_error("symmetry eval needs a knowledge base with at least 2 tuples");
  const auto& info = relation_info(kb.front().relation);
  if (!info.bijective || info.inverse_template.empty())
    throw data_error("symmetry eval requires a bijective relation with an inverse template");
  std::map<std::string, std::string> inverse;  // t -> s
  for (const auto& f : kb) {
    if (f.relation != kb.front().relation) throw data_error("symmetry eval KB mixes relations");
    if (!inverse.emplace(f.t, f.s).second) throw data_error("relation is not bijective: repeated target " + f.t);
  }
  std::vector<std::string> targets;
  for (const auto& f : kb) targets.push_back(f.t);

  std::vector<SymmetryRecord> out;
  Rng rng(derive_seed(seed, 4));
  for (const auto& f : kb) {
    std::string t_star = f.t;
    while (t_star == f.t)
      t_star = targets[static_cast<size_t>(rng.uniform_int(static_cast<int>(targets.size())))];
    SymmetryRecord r;
    r.edit_prompt = substitute(f.templates.front(), "[s]", f.s);
    r.edit_target_old = f.t;
    r.edit_target_new = t_star;
    r.eval_prompt = substitute(info.inverse_template, "[t]", t_star);
    r.eval_expected = f.s;
    r.eval_original = inverse.at(t_star);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SynonymRecord> build_synonym_eval(const std::vector<FactTuple>& kb,
                                              const std::map<std::string, std::string>& synonym_map,
                                              uint64_t seed) {
  if (kb.empty()) throw data_error("synonym eval needs a non-empty knowledge base");
  if (synonym_map.size() < 2) throw data_error("synonym map needs at least 2 entries");
  std::vector<std::string> candidates;  // replacement targets with known synonyms
  for (const auto& [t, syn] : synonym_map) {
    (void)syn;
    candidates.push_back(t);
  }
  std::vector<SynonymRecord> out;
  Rng rng(derive_seed(seed, 5));
  for (const auto& f : kb) {
    auto orig = synonym_map.find(f.t);
    if (orig == synonym_map.end()) continue;  // discard ill-formed entries
    std::string t_star = f.t;
    while (t_star == f.t)
      t_star = candidates[static_cast<size_t>(rng.uniform_int(static_cast<int>(candidates.size())))];
    SynonymRecord r;
    r.edit_prompt = substitute(f.templates.front(), "[s]", f.s);
    r.edit_target_old = f.t;
    r.edit_target_new = t_star;
    r.eval_prompt = f.s + " is a famous ___";
    r.eval_expected = synonym_map.at(t_star);
    r.eval_original = orig->second;
    out.push_back(std::move(r));
  }
  if (out.empty()) throw data_error("synonym eval discarded every tuple: no synonym entries");
  return out;
}

std::vector<std::vector<int>> encode_corpus(const Vocab& vocab, const std::vector<std::string>& sentences) {
  std::vector<std::vector<int>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(vocab.encode(s));
  return out;
}

std::vector<std::string> fact_train_sentences(const Vocab& vocab, const std::vector<FactTuple>& kb,
                                              int repeats, uint64_t seed) {
  if (repeats < 1) throw data_error("fact_train_sentences: repeats must be positive");
  std::vector<std::string> out;
  for (const auto& f : kb)
    for (const auto& tmpl : f.templates)
      for (int r = 0; r < repeats; ++r)
        out.push_back(fill_blank(substitute(tmpl, "[s]", f.s), f.t));
  for (const auto& s : out) vocab.encode(s);  // fail fast on unknown words
  Rng rng(derive_seed(seed, 6));
  rng.shuffle(out);
  return out;
}

namespace {

nlohmann::json load_json_line(const std::string& line, const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw data_error("bad JSON record in " + path);
  return j;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  return in;
}

}  // namespace

void write_minimal_pairs_jsonl(const std::string& path, const std::vector<MinimalPair>& pairs) {
  auto out = open_out(path);
  for (const auto& p : pairs) {
    nlohmann::json j{{"template", p.template_text}, {"s", p.s},           {"t", p.t},
                     {"t_star", p.t_star},          {"phenomenon", p.phenomenon},
                     {"paradigm", p.paradigm},      {"number_class", p.number_class}};
    out << j.dump() << '\n';
  }
}

std::vector<MinimalPair> read_minimal_pairs_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<MinimalPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = load_json_line(line, path);
    MinimalPair p;
    p.template_text = j.at("template").get<std::string>();
    p.s = j.at("s").get<std::string>();
    p.t = j.at("t").get<std::string>();
    p.t_star = j.at("t_star").get<std::string>();
    p.phenomenon = j.at("phenomenon").get<std::string>();
    p.paradigm = j.at("paradigm").get<std::string>();
    p.number_class = j.at("number_class").get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

void write_facts_jsonl(const std::string& path, const std::vector<FactTuple>& kb) {
  auto out = open_out(path);
  for (const auto& f : kb) {
    nlohmann::json j{{"s", f.s}, {"t", f.t}, {"relation", f.relation}, {"templates", f.templates}};
    out << j.dump() << '\n';
  }
}

std::vector<FactTuple> read_facts_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<FactTuple> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = load_json_line(line, path);
    FactTuple f;
    f.s = j.at("s").get<std::string>();
    f.t = j.at("t").get<std::string>();
    f.relation = j.at("relation").get<std::string>();
    f.templates = j.at("templates").get<std::vector<std::string>>();
    out.push_back(std::move(f));
  }
  return out;
}

void write_edit_evals_jsonl(const std::string& path, const std::vector<EditEvalRecord>& recs) {
  auto out = open_out(path);
  for (const auto& r : recs) {
    nlohmann::json j{{"edit_prompt", r.edit_prompt},       {"edit_target_old", r.edit_target_old},
                     {"edit_target_new", r.edit_target_new}, {"eval_prompt", r.eval_prompt},
                     {"eval_expected", r.eval_expected},   {"eval_original", r.eval_original}};
    out << j.dump() << '\n';
  }
}

std::vector<EditEvalRecord> read_edit_evals_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<EditEvalRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = load_json_line(line, path);
    EditEvalRecord r;
    r.edit_prompt = j.at("edit_prompt").get<std::string>();
    r.edit_target_old = j.at("edit_target_old").get<std::string>();
    r.edit_target_new = j.at("edit_target_new").get<std::string>();
    r.eval_prompt = j.at("eval_prompt").get<std::string>();
    r.eval_expected = j.at("eval_expected").get<std::string>();
    r.eval_original = j.at("eval_original").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  auto out = open_out(path);
  for (const auto& l : lines) out << l << '\n';
}

std::vector<std::string> read_lines(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace knlab
