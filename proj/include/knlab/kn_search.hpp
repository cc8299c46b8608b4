#pragma once

// Knowledge-neuron identification: a neuron qualifies at sharing threshold
// tau if its attribution score reaches pi times the per-prompt maximum in at
// least tau of the prompts; tau is refined in 0.05 steps until the surviving
// set has between 2 and 5 neurons.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "knlab/attribution.hpp"

namespace knlab {

struct SearchConfig {
  double pi = 0.20;    // fraction of the per-prompt max score
  double tau0 = 0.70;  // initial sharing threshold
  double step = 0.05;
  int lo = 2;          // target |KN| range
  int hi = 5;
  int max_iterations = 20;

  void validate() const;
};

struct KNSet {
  std::set<NeuronRef> neurons;
  double final_tau = 0.0;
  int kn_at_tau0 = 0;    // |KN| measured at the starting threshold
  int iterations = 0;    // threshold adjustments performed
  bool out_of_range = false;  // no tau reached [lo, hi]; closest size returned
};

// neurons whose score reaches pi * per-prompt-max in >= tau of the prompts
std::set<NeuronRef> qualifying_set(const std::vector<AttributionMap>& maps, double pi, double tau);

// Walks tau from tau0 (down when the set is too small, up when too large),
// never revisiting a value. If no visited tau lands in [lo, hi], returns the
// visited tau whose |KN| is closest to the range, preferring smaller |KN|
// and then larger tau on ties, with out_of_range set.
KNSet refine_threshold(const std::vector<AttributionMap>& maps, const SearchConfig& cfg = {});

struct FrequencyRow {
  NeuronRef neuron;
  std::map<std::string, double> rates;  // class label -> appearance rate
  double max_rate = 0.0;
};

// cell (neuron, class) = fraction of that class's searches containing the
// neuron; rows sorted by max rate descending (then by neuron)
std::vector<FrequencyRow> kn_frequency_table(const std::map<std::string, std::vector<KNSet>>& groups);

std::string kn_set_json_string(const KNSet& kn);
void write_kn_set_json(const std::string& path, const KNSet& kn);
KNSet read_kn_set_json(const std::string& path);
void write_frequency_csv(const std::string& path, const std::vector<FrequencyRow>& table);

}  // namespace knlab
