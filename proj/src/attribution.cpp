#include "knlab/attribution.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "knlab/kernels.hpp"

namespace knlab {

double midpoint_mean(int m, const std::function<double(double)>& f) {
  if (m < 1) throw data_error("midpoint_mean: steps must be positive");
  double acc = 0.0;
  for (int k = 0; k < m; ++k) acc += f((k + 0.5) / m);
  return acc / m;
}

AttributionMap attribute(const Transformer& model, const std::vector<int>& tokens, int target_pos,
                         int y, int m, EditScope scope, int prompt_id) {
  if (m < 1) throw data_error("attribute: steps must be positive");
  const auto& cfg = model.config();
  const int T = static_cast<int>(tokens.size());
  const Graph& g = model.probs_graph(T);
  const EvalContext clean = evaluate(g, model.probs_inputs(tokens, target_pos, y));
  for (int64_t i = 0; i < clean.output("probs").size(); ++i)
    if (!std::isfinite(clean.output("probs")[i]))
      throw numeric_error("attribute: non-finite probability in the clean forward pass");

  AttributionMap out;
  out.prompt_id = prompt_id;
  out.y = y;
  out.m = m;
  out.scores = Array({cfg.layers, cfg.d_mlp});

  const int row_lo = scope == EditScope::target_only ? target_pos : 0;
  const int row_hi = scope == EditScope::target_only ? target_pos + 1 : T;

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string tap = mlp_act_tap(l);
    const Array& acts = clean.tap(tap);  // (T, d_mlp)
    for (int i = 0; i < cfg.d_mlp; ++i) {
      bool on_path = false;
      for (int r = row_lo; r < row_hi; ++r)
        if (acts.at(r, i) != 0.0) on_path = true;
      if (!on_path) continue;  // zero path length: alpha is exactly 0

      // mean over midpoints of dP(y)/d(activation), per scope row
      std::vector<double> grad_mean(static_cast<size_t>(row_hi - row_lo), 0.0);
      for (int k = 0; k < m; ++k) {
        const double gamma = (k + 0.5) / m;
        EditSpec step;
        step.edits.push_back({{l, i}, EditAction::scale, gamma, scope});
        const EvalContext ctx =
            evaluate_with_overrides(g, clean, model.edit_overrides(step, T, target_pos));
        const Array grad = gradient(ctx, "p_y", {tap}).at(tap);
        for (int r = row_lo; r < row_hi; ++r)
          grad_mean[static_cast<size_t>(r - row_lo)] += grad.at(r, i);
      }
      double alpha = 0.0;
      for (int r = row_lo; r < row_hi; ++r)
        alpha += acts.at(r, i) * (grad_mean[static_cast<size_t>(r - row_lo)] / m);
      if (!std::isfinite(alpha))
        throw numeric_error("attribute: non-finite gradient for neuron (" + std::to_string(l) +
                            ", " + std::to_string(i) + ")");
      out.scores.at(l, i) = alpha;
    }
  }
  return out;
}

std::vector<AttributionMap> batch_attribute(const Transformer& model,
                                            const std::vector<AttributionQuery>& queries, int m,
                                            EditScope scope) {
  if (queries.empty()) throw data_error("batch_attribute: no prompts");
  // warm the per-length graph cache before the parallel region
  for (const auto& q : queries)
    if (!q.tokens.empty() && static_cast<int>(q.tokens.size()) <= model.config().max_seq)
      model.probs_graph(static_cast<int>(q.tokens.size()));
  std::vector<AttributionMap> out(queries.size());
  std::vector<std::exception_ptr> errs(queries.size());
  kernels::parallel_for(static_cast<int>(queries.size()), [&](int i) {
    const auto& q = queries[static_cast<size_t>(i)];
    try {
      out[static_cast<size_t>(i)] = attribute(model, q.tokens, q.target_pos, q.y, m, scope, q.prompt_id);
    } catch (...) {
      errs[static_cast<size_t>(i)] = std::current_exception();
    }
  });
  for (size_t i = 0; i < errs.size(); ++i) {
    if (!errs[i]) continue;
    const std::string at = "batch_attribute: prompt " + std::to_string(i) + ": ";
    try {
      std::rethrow_exception(errs[i]);
    } catch (const numeric_error& e) {
      throw numeric_error(at + e.what());
    } catch (const io_error& e) {
      throw io_error(at + e.what());
    } catch (const std::exception& e) {
      throw data_error(at + e.what());
    }
  }
  return out;
}

Array mean_scores(const std::vector<AttributionMap>& maps) {
  if (maps.empty()) throw data_error("mean_scores: no attribution maps");
  Array mean(maps.front().scores.shape());
  for (const auto& m : maps) {
    if (!m.scores.same_shape(mean)) throw shape_error("mean_scores: maps disagree on shape");
    for (int64_t i = 0; i < mean.size(); ++i) mean[i] += m.scores[i];
  }
  for (int64_t i = 0; i < mean.size(); ++i) mean[i] /= static_cast<double>(maps.size());
  return mean;
}

void write_attributions_jsonl(const std::string& path, const std::vector<AttributionMap>& maps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  for (const auto& m : maps) {
    nlohmann::json rows = nlohmann::json::array();
    for (int l = 0; l < m.scores.dim(0); ++l) {
      nlohmann::json row = nlohmann::json::array();
      for (int i = 0; i < m.scores.dim(1); ++i) row.push_back(m.scores.at(l, i));
      rows.push_back(std::move(row));
    }
    nlohmann::json j{{"prompt_id", m.prompt_id}, {"y", m.y}, {"m", m.m}, {"scores", rows}};
    out << j.dump() << '\n';
  }
}

std::vector<AttributionMap> read_attributions_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  std::vector<AttributionMap> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw data_error("bad JSON record in " + path);
    AttributionMap m;
    m.prompt_id = j.at("prompt_id").get<int>();
    m.y = j.at("y").get<int>();
    m.m = j.at("m").get<int>();
    const auto& rows = j.at("scores");
    if (!rows.is_array() || rows.empty()) throw data_error("bad scores array in " + path);
    const int L = static_cast<int>(rows.size());
    const int D = static_cast<int>(rows.at(0).size());
    m.scores = Array({L, D});
    for (int l = 0; l < L; ++l) {
      if (static_cast<int>(rows.at(static_cast<size_t>(l)).size()) != D)
        throw data_error("ragged scores array in " + path);
      for (int i = 0; i < D; ++i)
        m.scores.at(l, i) = rows.at(static_cast<size_t>(l)).at(static_cast<size_t>(i)).get<double>();
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace knlab
