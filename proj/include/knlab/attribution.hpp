#pragma once

// Integrated-gradients attribution for MLP intermediate neurons: each
// neuron's activation is walked from 0 to its clean value while everything
// else stays clean, and the path integral of dP(y)/d(activation) is
// approximated with a midpoint Riemann sum.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "knlab/model.hpp"

namespace knlab {

struct AttributionMap {
  int prompt_id = 0;
  int y = 0;           // token whose probability is attributed
  int m = 0;           // Riemann steps
  Array scores;        // (layers, d_mlp)
};

struct AttributionQuery {
  std::vector<int> tokens;
  int target_pos = 0;
  int y = 0;
  int prompt_id = 0;
};

// mean of f over the midpoints (k+0.5)/m, k = 0..m-1; exact for f linear
double midpoint_mean(int m, const std::function<double(double)>& f);

AttributionMap attribute(const Transformer& model, const std::vector<int>& tokens, int target_pos,
                         int y, int m = 20, EditScope scope = EditScope::all_tokens,
                         int prompt_id = 0);

// one map per query, in input order, independent of the worker count
std::vector<AttributionMap> batch_attribute(const Transformer& model,
                                            const std::vector<AttributionQuery>& queries, int m = 20,
                                            EditScope scope = EditScope::all_tokens);

// elementwise mean over maps (all maps must share a shape)
Array mean_scores(const std::vector<AttributionMap>& maps);

void write_attributions_jsonl(const std::string& path, const std::vector<AttributionMap>& maps);
std::vector<AttributionMap> read_attributions_jsonl(const std::string& path);

}  // namespace knlab
