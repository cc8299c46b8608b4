#pragma once

// Localisation measures: the generalized n-sample similarity of attribution
// patterns (top singular value of the stacked unit patterns), |KN| and tau
// from the search, and per-layer KN histograms.

#include <string>
#include <vector>

#include "knlab/kn_search.hpp"

namespace knlab {

// Flattens each pattern to a vector s_i, normalizes to unit length, stacks
// the columns Y = [y_1 .. y_n] and returns (sigma_1^2 - 1) / (n - 1),
// clamped to [0, 1]. A single pattern is perfectly self-similar (1.0).
double r_squared(const std::vector<Array>& patterns);

// percentage of all identified neurons per layer; sums to 100 when any exist
std::vector<double> layer_distribution(const std::vector<KNSet>& kn_sets, int layers);

struct LocalisationRow {
  std::string label;  // paradigm or relation name
  int kn_count = 0;   // |KN| at the starting threshold
  double tau = 0.0;   // final threshold
  double r2 = 0.0;
};

LocalisationRow localisation_report(const std::string& label, const std::vector<AttributionMap>& maps,
                                    const KNSet& kn);

// CSV columns: paradigm_or_relation, kn_count, tau, r_squared
void write_localisation_csv(const std::string& path, const std::vector<LocalisationRow>& rows);

}  // namespace knlab
