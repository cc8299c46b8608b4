#pragma once

#include <array>
#include <string>
#include <vector>

#include "knlab/corpora.hpp"
#include "knlab/model.hpp"

namespace knlab {

struct NoiseSpec {
  double nu = 3.0;        // corruption std = nu * std of all input-embedding entries
  uint64_t seed = 0;
  bool resample = false;  // fresh corruption draw per restoration run; the
                          // reported p_corrupt is always the step-2 draw
  void validate() const;
};

inline constexpr std::array<const char*, 3> kTraceComponents{"hidden", "mlp", "attn"};

// indirect effect of restoring one site, over every (token, layer) site
struct TraceGrid {
  Array hidden, mlp, attn;  // each (tokens, layers)
  double p_clean = 0.0;
  double p_corrupt = 0.0;
  int window = 1;

  const Array& component(int c) const;
  Array& component(int c);
};

struct TraceQuery {
  Prompt prompt;
  int subject_begin = 0;  // token index range [begin, end)
  int subject_end = 0;
  int y = 0;  // token whose probability is traced
};

// Three steps: clean run recording all component outputs; corrupt the
// subject-token embeddings with Gaussian noise; re-run once per site with
// that component's output restored to its clean value over a layer window
// centred on the site (hidden states always use window 1). Entry (t, l) is
// p_restored - p_corrupt.
TraceGrid trace(const Transformer& model, const Prompt& prompt, int subject_begin, int subject_end,
                int y, const NoiseSpec& noise = {}, int window = 1);

// token roles used to align prompts of different lengths when averaging;
// the last token wins over other roles, pre-subject tokens count as further
inline const std::array<const char*, 4> kTraceRoles{"subject", "first_subsequent", "further",
                                                    "last"};
int trace_role(int token_index, int subject_begin, int subject_end, int num_tokens);

struct AverageTraceGrid {
  Array hidden, mlp, attn;               // (4 roles, layers)
  std::array<int64_t, 4> role_cells{};   // (prompt, token) rows behind each role
  double p_clean_mean = 0.0;
  double p_corrupt_mean = 0.0;
  int window = 1;
  int count = 0;  // prompts averaged

  const Array& component(int c) const;
  Array& component(int c);
};

AverageTraceGrid average_indirect_effect(const Transformer& model,
                                         const std::vector<TraceQuery>& dataset,
                                         const NoiseSpec& noise = {}, int window = 1);

void write_trace_json(const std::string& path, const TraceGrid& grid);
void write_trace_json(const std::string& path, const AverageTraceGrid& grid);

// one heatmap per component: <prefix>_hidden.svg, <prefix>_mlp.svg, <prefix>_attn.svg
void write_trace_svg(const std::string& prefix, const TraceGrid& grid,
                     const std::vector<std::string>& token_labels);
void write_trace_svg(const std::string& prefix, const AverageTraceGrid& grid);

}  // namespace knlab
