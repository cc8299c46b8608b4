#include "knlab/kn_search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "knlab/textfmt.hpp"

namespace knlab {

void SearchConfig::validate() const {
  if (!(pi > 0.0 && pi <= 1.0)) throw data_error("search config: pi must be in (0, 1]");
  if (!(tau0 > 0.0 && tau0 <= 1.0)) throw data_error("search config: tau0 must be in (0, 1]");
  if (!(step > 0.0)) throw data_error("search config: step must be positive");
  if (lo > hi || lo < 1) throw data_error("search config: bad target range");
  if (max_iterations < 1) throw data_error("search config: max_iterations must be positive");
}

namespace {

constexpr double kCountEps = 1e-9;  // tau * n sits on integer boundaries

// per-neuron count of prompts where the score reaches pi * prompt max
std::vector<int> hit_counts(const std::vector<AttributionMap>& maps, double pi) {
  if (maps.empty()) throw data_error("kn search: no attribution maps");
  const auto shape = maps.front().scores.shape();
  std::vector<int> hits(static_cast<size_t>(maps.front().scores.size()), 0);
  for (const auto& m : maps) {
    if (m.scores.shape() != shape) throw shape_error("kn search: attribution maps disagree on shape");
    double mx = 0.0;
    for (int64_t i = 0; i < m.scores.size(); ++i) mx = std::max(mx, std::abs(m.scores[i]));
    if (mx == 0.0) throw data_error("kn search: an attribution map is all zeros (no max score)");
    double top = m.scores[0];
    for (int64_t i = 1; i < m.scores.size(); ++i) top = std::max(top, m.scores[i]);
    const double cut = pi * top;
    for (int64_t i = 0; i < m.scores.size(); ++i)
      if (m.scores[i] >= cut) hits[static_cast<size_t>(i)] += 1;
  }
  return hits;
}

std::set<NeuronRef> set_from_hits(const std::vector<int>& hits, int d_mlp, double tau, int n_maps) {
  std::set<NeuronRef> out;
  const double need = tau * n_maps - kCountEps;
  for (size_t i = 0; i < hits.size(); ++i)
    if (hits[i] >= need)
      out.insert({static_cast<int>(i) / d_mlp, static_cast<int>(i) % d_mlp});
  return out;
}

}  // namespace

std::set<NeuronRef> qualifying_set(const std::vector<AttributionMap>& maps, double pi, double tau) {
  const int d_mlp = maps.empty() ? 0 : maps.front().scores.dim(1);
  return set_from_hits(hit_counts(maps, pi), d_mlp, tau, static_cast<int>(maps.size()));
}

KNSet refine_threshold(const std::vector<AttributionMap>& maps, const SearchConfig& cfg) {
  cfg.validate();
  const auto hits = hit_counts(maps, cfg.pi);
  const int d_mlp = maps.front().scores.dim(1);
  const int n = static_cast<int>(maps.size());

  struct Visit {
    double tau;
    std::set<NeuronRef> neurons;
  };
  std::vector<Visit> visited;
  auto seen = [&](double tau) {
    for (const auto& v : visited)
      if (std::abs(v.tau - tau) < 1e-12) return true;
    return false;
  };

  KNSet out;
  double tau = cfg.tau0;
  for (int it = 0; it <= cfg.max_iterations; ++it) {
    visited.push_back({tau, set_from_hits(hits, d_mlp, tau, n)});
    const auto& cur = visited.back();
    const int size = static_cast<int>(cur.neurons.size());
    if (it == 0) out.kn_at_tau0 = size;
    if (size >= cfg.lo && size <= cfg.hi) {
      out.neurons = cur.neurons;
      out.final_tau = cur.tau;
      out.iterations = it;
      return out;
    }
    if (it == cfg.max_iterations) break;
    const double next = size < cfg.lo ? tau - cfg.step : tau + cfg.step;
    if (next <= 0.0 || next > 1.0 + 1e-12 || seen(next)) break;  // range left or oscillation
    tau = next;
  }

  // no visited tau produced an in-range set: take the closest, preferring
  // smaller sets and then larger tau
  out.out_of_range = true;
  out.iterations = static_cast<int>(visited.size()) - 1;
  const Visit* best = nullptr;
  auto distance = [&](int size) {
    if (size < cfg.lo) return cfg.lo - size;
    if (size > cfg.hi) return size - cfg.hi;
    return 0;
  };
  for (const auto& v : visited) {
    if (!best) {
      best = &v;
      continue;
    }
    const int dv = distance(static_cast<int>(v.neurons.size()));
    const int db = distance(static_cast<int>(best->neurons.size()));
    if (dv < db ||
        (dv == db && (v.neurons.size() < best->neurons.size() ||
                      (v.neurons.size() == best->neurons.size() && v.tau > best->tau))))
      best = &v;
  }
  out.neurons = best->neurons;
  out.final_tau = best->tau;
  return out;
}

std::vector<FrequencyRow> kn_frequency_table(const std::map<std::string, std::vector<KNSet>>& groups) {
  if (groups.empty()) throw data_error("kn frequency table: no classes");
  std::map<NeuronRef, std::map<std::string, int>> counts;
  for (const auto& [label, sets] : groups) {
    if (sets.empty()) throw data_error("kn frequency table: class " + label + " has no searches");
    for (const auto& kn : sets)
      for (const auto& n : kn.neurons) counts[n][label] += 1;
  }
  std::vector<FrequencyRow> rows;
  for (const auto& [neuron, per_class] : counts) {
    FrequencyRow row;
    row.neuron = neuron;
    for (const auto& [label, sets] : groups) {
      const auto it = per_class.find(label);
      const double rate =
          it == per_class.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(sets.size());
      row.rates[label] = rate;
      row.max_rate = std::max(row.max_rate, rate);
    }
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const FrequencyRow& a, const FrequencyRow& b) {
    if (a.max_rate != b.max_rate) return a.max_rate > b.max_rate;
    return a.neuron < b.neuron;
  });
  return rows;
}

std::string kn_set_json_string(const KNSet& kn) {
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& n : kn.neurons) neurons.push_back({{"layer", n.layer}, {"index", n.index}});
  nlohmann::json j{{"neurons", neurons},
                   {"final_tau", kn.final_tau},
                   {"kn_at_tau0", kn.kn_at_tau0},
                   {"iterations", kn.iterations},
                   {"out_of_range", kn.out_of_range}};
  return j.dump(2) + '\n';
}

void write_kn_set_json(const std::string& path, const KNSet& kn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << kn_set_json_string(kn);
}

KNSet read_kn_set_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw data_error("bad KN set JSON in " + path);
  KNSet kn;
  for (const auto& n : j.at("neurons"))
    kn.neurons.insert({n.at("layer").get<int>(), n.at("index").get<int>()});
  kn.final_tau = j.at("final_tau").get<double>();
  kn.kn_at_tau0 = j.at("kn_at_tau0").get<int>();
  kn.iterations = j.at("iterations").get<int>();
  kn.out_of_range = j.at("out_of_range").get<bool>();
  return kn;
}

void write_frequency_csv(const std::string& path, const std::vector<FrequencyRow>& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << "layer,index";
  if (!table.empty())
    for (const auto& [label, rate] : table.front().rates) {
      (void)rate;
      out << ',' << label;
    }
  out << '\n';
  for (const auto& row : table) {
    out << row.neuron.layer << ',' << row.neuron.index;
    for (const auto& [label, rate] : row.rates) {
      (void)label;
      out << ',' << fmt_g(rate);
    }
    out << '\n';
  }
}

}  // namespace knlab
