#include "knlab/localisation_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "knlab/linalg.hpp"
#include "knlab/textfmt.hpp"

namespace knlab {

double r_squared(const std::vector<Array>& patterns) {
  if (patterns.empty()) throw data_error("r_squared: no patterns");
  const int n = static_cast<int>(patterns.size());
  const int64_t len = patterns.front().size();
  for (const auto& p : patterns)
    if (p.size() != len) throw shape_error("r_squared: patterns disagree on length");
  if (n == 1) {
    double norm2 = 0.0;
    for (int64_t i = 0; i < len; ++i) norm2 += patterns[0][i] * patterns[0][i];
    if (norm2 == 0.0) throw data_error("r_squared: zero-norm pattern");
    return 1.0;
  }

  Array Y({static_cast<int>(len), n});
  for (int c = 0; c < n; ++c) {
    const Array& p = patterns[static_cast<size_t>(c)];
    double norm2 = 0.0;
    for (int64_t i = 0; i < len; ++i) norm2 += p[i] * p[i];
    const double norm = std::sqrt(norm2);
    if (norm == 0.0 || !std::isfinite(norm)) throw data_error("r_squared: zero-norm pattern");
    for (int64_t i = 0; i < len; ++i) Y.at(static_cast<int>(i), c) = p[i] / norm;
  }
  const double s1 = top_singular_value(Y);
  const double r = (s1 * s1 - 1.0) / (n - 1.0);
  return std::clamp(r, 0.0, 1.0);
}

std::vector<double> layer_distribution(const std::vector<KNSet>& kn_sets, int layers) {
  if (kn_sets.empty()) throw data_error("layer_distribution: no KN sets");
  if (layers < 1) throw data_error("layer_distribution: layer count must be positive");
  std::vector<int64_t> counts(static_cast<size_t>(layers), 0);
  int64_t total = 0;
  for (const auto& kn : kn_sets)
    for (const auto& n : kn.neurons) {
      if (n.layer < 0 || n.layer >= layers)
        throw data_error("layer_distribution: neuron layer " + std::to_string(n.layer) +
                         " outside 0.." + std::to_string(layers - 1));
      counts[static_cast<size_t>(n.layer)] += 1;
      total += 1;
    }
  if (total == 0) throw data_error("layer_distribution: the KN sets are all empty");
  std::vector<double> out(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l)
    out[static_cast<size_t>(l)] = 100.0 * static_cast<double>(counts[static_cast<size_t>(l)]) /
                                  static_cast<double>(total);
  return out;
}

LocalisationRow localisation_report(const std::string& label, const std::vector<AttributionMap>& maps,
                                    const KNSet& kn) {
  std::vector<Array> patterns;
  patterns.reserve(maps.size());
  for (const auto& m : maps) patterns.push_back(m.scores);
  LocalisationRow row;
  row.label = label;
  row.kn_count = kn.kn_at_tau0;
  row.tau = kn.final_tau;
  row.r2 = r_squared(patterns);
  return row;
}

void write_localisation_csv(const std::string& path, const std::vector<LocalisationRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << "paradigm_or_relation,kn_count,tau,r_squared\n";
  for (const auto& r : rows)
    out << r.label << ',' << r.kn_count << ',' << fmt_g(r.tau) << ',' << fmt_g(r.r2) << '\n';
}

}  // namespace knlab
