#include "knlab/causal_trace.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "knlab/kernels.hpp"
#include "knlab/rng.hpp"
#include "knlab/svg.hpp"

namespace knlab {

void NoiseSpec::validate() const {
  if (!(nu >= 0.0)) throw data_error("NoiseSpec: nu must be non-negative");
}

const Array& TraceGrid::component(int c) const {
  switch (c) {
    case 0: return hidden;
    case 1: return mlp;
    case 2: return attn;
  }
  throw data_error("TraceGrid: component index out of range");
}
Array& TraceGrid::component(int c) {
  return const_cast<Array&>(static_cast<const TraceGrid&>(*this).component(c));
}
const Array& AverageTraceGrid::component(int c) const {
  switch (c) {
    case 0: return hidden;
    case 1: return mlp;
    case 2: return attn;
  }
  throw data_error("AverageTraceGrid: component index out of range");
}
Array& AverageTraceGrid::component(int c) {
  return const_cast<Array&>(static_cast<const AverageTraceGrid&>(*this).component(c));
}

namespace {

std::string component_tap(int c, int layer) {
  switch (c) {
    case 0: return hidden_tap(layer);
    case 1: return mlp_out_tap(layer);
    case 2: return attn_out_tap(layer);
  }
  throw data_error("trace: component index out of range");
}

// corruption override: subject rows of the summed embedding get +noise
TapOverride corrupt_override(const Array& embed, int b, int e, double std_dev, Rng& rng) {
  const int T = embed.shape()[0];
  const int d = embed.shape()[1];
  TapOverride ov;
  ov.set_mask = Array({T, d});
  ov.set_value = embed;  // copy; untouched rows are masked out anyway
  for (int r = b; r < e; ++r)
    for (int c = 0; c < d; ++c) {
      ov.set_mask.at(r, c) = 1.0;
      ov.set_value.at(r, c) = embed.at(r, c) + std_dev * rng.gauss();
    }
  return ov;
}

double read_prob(const EvalContext& ctx, int y, const char* stage) {
  const double p = ctx.output("probs")[y];
  if (!std::isfinite(p))
    throw numeric_error(std::string("trace: non-finite probability in the ") + stage + " pass");
  return p;
}

}  // namespace

int trace_role(int token_index, int subject_begin, int subject_end, int num_tokens) {
  if (token_index == num_tokens - 1) return 3;  // last wins
  if (token_index >= subject_begin && token_index < subject_end) return 0;
  if (token_index == subject_end) return 1;
  return 2;  // further, including tokens before the subject
}

TraceGrid trace(const Transformer& model, const Prompt& prompt, int subject_begin, int subject_end,
                int y, const NoiseSpec& noise, int window) {
  noise.validate();
  model.check_sequence(prompt.tokens, prompt.target_pos);
  const int T = static_cast<int>(prompt.tokens.size());
  const int L = model.config().layers;
  if (subject_begin < 0 || subject_end > T || subject_begin >= subject_end)
    throw data_error("trace: subject span out of range");
  if (y < 0 || y >= model.config().vocab) throw data_error("trace: traced token outside vocabulary");
  if (window < 1) throw data_error("trace: window must be at least 1");

  const Graph& g = model.probs_graph(T);
  const EvalContext clean = evaluate(g, model.probs_inputs(prompt.tokens, prompt.target_pos, y));

  TraceGrid grid;
  grid.window = window;
  grid.p_clean = read_prob(clean, y, "clean");
  const Array embed = clean.tap(kEmbedTap);
  const double std_dev = noise.nu * model.embedding_std();

  Rng base_rng(derive_seed(noise.seed, 0));
  const TapOverride corrupt = corrupt_override(embed, subject_begin, subject_end, std_dev, base_rng);
  {
    Overrides ov;
    ov[kEmbedTap] = corrupt;
    grid.p_corrupt = read_prob(evaluate_with_overrides(g, clean, ov), y, "corrupted");
  }

  for (int c = 0; c < 3; ++c) grid.component(c) = Array({T, L});

  const int sites = T * L * 3;
  std::vector<std::exception_ptr> errs(static_cast<size_t>(sites));
  kernels::parallel_for(sites, [&](int s) {
    try {
      const int c = s % 3;
      const int l = (s / 3) % L;
      const int tok = s / (3 * L);
      Overrides ov;
      if (noise.resample) {
        Rng site_rng(derive_seed(noise.seed, static_cast<uint64_t>(s) + 1));
        ov[kEmbedTap] = corrupt_override(embed, subject_begin, subject_end, std_dev, site_rng);
      } else {
        ov[kEmbedTap] = corrupt;
      }
      // hidden states restore a single layer; mlp/attn honour the window
      const int w = c == 0 ? 1 : window;
      const int lo = std::max(0, l - (w - 1) / 2);
      const int hi = std::min(L - 1, l + w / 2);
      for (int lr = lo; lr <= hi; ++lr) {
        const std::string tap = component_tap(c, lr);
        TapOverride restore;
        restore.set_value = clean.tap(tap);
        restore.set_mask = Array(restore.set_value.shape());
        for (int col = 0; col < restore.set_mask.shape()[1]; ++col)
          restore.set_mask.at(tok, col) = 1.0;
        ov[tap] = std::move(restore);
      }
      const double p_restored =
          read_prob(evaluate_with_overrides(g, clean, ov), y, "restored");
      grid.component(c).at(tok, l) = p_restored - grid.p_corrupt;
    } catch (...) {
      errs[static_cast<size_t>(s)] = std::current_exception();
    }
  });
  for (size_t s = 0; s < errs.size(); ++s) {
    if (!errs[s]) continue;
    try {
      std::rethrow_exception(errs[s]);
    } catch (const numeric_error& e) {
      throw numeric_error("trace: site " + std::to_string(s) + ": " + e.what());
    } catch (const std::exception& e) {
      throw data_error("trace: site " + std::to_string(s) + ": " + e.what());
    }
  }
  return grid;
}

AverageTraceGrid average_indirect_effect(const Transformer& model,
                                         const std::vector<TraceQuery>& dataset,
                                         const NoiseSpec& noise, int window) {
  if (dataset.empty()) throw data_error("average_indirect_effect: empty dataset");
  const int L = model.config().layers;
  AverageTraceGrid avg;
  avg.window = window;
  avg.count = static_cast<int>(dataset.size());
  for (int c = 0; c < 3; ++c) avg.component(c) = Array({4, L});

  for (const auto& q : dataset) {
    const TraceGrid grid = trace(model, q.prompt, q.subject_begin, q.subject_end, q.y, noise, window);
    const int T = static_cast<int>(q.prompt.tokens.size());
    for (int tok = 0; tok < T; ++tok) {
      const int role = trace_role(tok, q.subject_begin, q.subject_end, T);
      ++avg.role_cells[static_cast<size_t>(role)];
      for (int c = 0; c < 3; ++c)
        for (int l = 0; l < L; ++l) avg.component(c).at(role, l) += grid.component(c).at(tok, l);
    }
    avg.p_clean_mean += grid.p_clean;
    avg.p_corrupt_mean += grid.p_corrupt;
  }
  for (int role = 0; role < 4; ++role) {
    const int64_t n = avg.role_cells[static_cast<size_t>(role)];
    if (n == 0) continue;  // role absent from every prompt: row stays zero
    for (int c = 0; c < 3; ++c)
      for (int l = 0; l < L; ++l) avg.component(c).at(role, l) /= static_cast<double>(n);
  }
  avg.p_clean_mean /= static_cast<double>(dataset.size());
  avg.p_corrupt_mean /= static_cast<double>(dataset.size());
  return avg;
}

namespace {

nlohmann::json grid_rows(const Array& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < a.shape()[0]; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < a.shape()[1]; ++c) row.push_back(a.at(r, c));
    rows.push_back(row);
  }
  return rows;
}

void dump_json(const std::string& path, const nlohmann::json& j) {
  std::string body = j.dump(2);
  body += '\n';
  svg::write_file(path, body);
}

}  // namespace

void write_trace_json(const std::string& path, const TraceGrid& grid) {
  nlohmann::json j;
  j["p_clean"] = grid.p_clean;
  j["p_corrupt"] = grid.p_corrupt;
  j["window"] = grid.window;
  j["tokens"] = grid.hidden.shape()[0];
  j["layers"] = grid.hidden.shape()[1];
  for (int c = 0; c < 3; ++c) j["components"][kTraceComponents[c]] = grid_rows(grid.component(c));
  dump_json(path, j);
}

void write_trace_json(const std::string& path, const AverageTraceGrid& grid) {
  nlohmann::json j;
  j["p_clean_mean"] = grid.p_clean_mean;
  j["p_corrupt_mean"] = grid.p_corrupt_mean;
  j["window"] = grid.window;
  j["count"] = grid.count;
  j["layers"] = grid.hidden.shape()[1];
  for (size_t r = 0; r < kTraceRoles.size(); ++r) {
    j["roles"].push_back(kTraceRoles[r]);
    j["role_cells"].push_back(grid.role_cells[r]);
  }
  for (int c = 0; c < 3; ++c) j["components"][kTraceComponents[c]] = grid_rows(grid.component(c));
  dump_json(path, j);
}

namespace {

std::vector<std::string> layer_labels(int L) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) out.push_back("L" + std::to_string(l));
  return out;
}

std::vector<std::vector<double>> to_grid(const Array& a) {
  std::vector<std::vector<double>> g(static_cast<size_t>(a.shape()[0]),
                                     std::vector<double>(static_cast<size_t>(a.shape()[1])));
  for (int r = 0; r < a.shape()[0]; ++r)
    for (int c = 0; c < a.shape()[1]; ++c) g[static_cast<size_t>(r)][static_cast<size_t>(c)] = a.at(r, c);
  return g;
}

}  // namespace

void write_trace_svg(const std::string& prefix, const TraceGrid& grid,
                     const std::vector<std::string>& token_labels) {
  if (static_cast<int>(token_labels.size()) != grid.hidden.shape()[0])
    throw data_error("write_trace_svg: one label per token required");
  const auto cols = layer_labels(grid.hidden.shape()[1]);
  for (int c = 0; c < 3; ++c) {
    const std::string name = std::string(kTraceComponents[c]);
    svg::write_file(prefix + "_" + name + ".svg",
                    svg::heatmap(to_grid(grid.component(c)), token_labels, cols,
                                 "indirect effect, " + name));
  }
}

void write_trace_svg(const std::string& prefix, const AverageTraceGrid& grid) {
  const auto cols = layer_labels(grid.hidden.shape()[1]);
  const std::vector<std::string> rows(kTraceRoles.begin(), kTraceRoles.end());
  for (int c = 0; c < 3; ++c) {
    const std::string name = std::string(kTraceComponents[c]);
    svg::write_file(prefix + "_" + name + ".svg",
                    svg::heatmap(to_grid(grid.component(c)), rows, cols,
                                 "average indirect effect, " + name));
  }
}

}  // namespace knlab
