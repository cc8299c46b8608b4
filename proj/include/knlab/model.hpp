#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "knlab/graph.hpp"

namespace knlab {

struct ModelConfig {
  int layers = 2;
  int d_model = 64;
  int d_mlp = 256;
  int heads = 4;
  int vocab = 256;
  int max_seq = 24;
  std::string masking = "causal";  // "causal" | "bidirectional"
  std::string nonlinearity = "gelu";
  int mask_token = -1;  // required in bidirectional mode

  bool causal() const { return masking == "causal"; }
  void validate() const;
};

// a single hidden unit between the two MLP layers: (layer, index)
struct NeuronRef {
  int layer = 0;
  int index = 0;
  auto operator<=>(const NeuronRef&) const = default;
};

enum class EditAction { set, scale };
enum class EditScope { all_tokens, target_only };

struct NeuronEdit {
  NeuronRef neuron;
  EditAction action = EditAction::set;
  double value = 0.0;  // set value, or scale factor
  EditScope scope = EditScope::all_tokens;
};

// Non-destructive activation edit applied during a forward pass. The edit
// targets the post-nonlinearity MLP activations.
struct EditSpec {
  std::vector<NeuronEdit> edits;

  void validate(const ModelConfig& cfg) const;
  static EditSpec suppress(const std::vector<NeuronRef>& neurons,
                           EditScope scope = EditScope::all_tokens);
  static EditSpec amplify(const std::vector<NeuronRef>& neurons, double factor,
                          EditScope scope = EditScope::all_tokens);
};

// tap naming shared by attribution, editing and tracing
std::string mlp_act_tap(int layer);
std::string attn_out_tap(int layer);
std::string mlp_out_tap(int layer);
std::string hidden_tap(int layer);
inline const char* kEmbedTap = "embed_sum";

class Transformer {
 public:
  Transformer(ModelConfig cfg, uint64_t seed);  // fresh random init
  Transformer(ModelConfig cfg, std::map<std::string, Array> params);

  const ModelConfig& config() const { return cfg_; }
  const std::map<std::string, Array>& params() const { return params_; }
  std::map<std::string, Array>& mutable_params() { return params_; }

  struct Forward {
    Array probs;                  // (V,) distribution at the target position
    std::vector<Array> mlp_acts;  // per layer, (T, d_mlp), effective values
    double prob_of(int token) const { return probs[token]; }
    int argmax() const;
  };

  Forward forward(const std::vector<int>& tokens, int target_pos) const;
  Forward forward_with_overrides(const std::vector<int>& tokens, int target_pos,
                                 const EditSpec& edit) const;

  // --- lower-level pieces shared with attribution and causal tracing ---

  // graphs are built per sequence length, cached, and shared read-only
  const Graph& probs_graph(int T) const;
  const Graph& loss_graph(int T) const;

  // named inputs for a probs-graph evaluation (params + tokens + target);
  // y selects the scalar "p_y" read-out used by gradient consumers
  std::map<std::string, Array> probs_inputs(const std::vector<int>& tokens, int target_pos,
                                            int y = 0) const;
  // named inputs for a loss-graph evaluation
  std::map<std::string, Array> loss_inputs(const std::vector<int>& tokens,
                                           const std::vector<int>& targets,
                                           const std::vector<double>& mask) const;

  Overrides edit_overrides(const EditSpec& edit, int T, int target_pos) const;

  void check_sequence(const std::vector<int>& tokens, int target_pos) const;

  // std of all input-embedding entries (noise scale for causal tracing)
  double embedding_std() const;

 private:
  void build_layer(Graph& g, int layer, int& x, int T) const;
  Graph build_graph(int T, bool loss) const;

  ModelConfig cfg_;
  std::map<std::string, Array> params_;
  mutable std::map<std::pair<int, int>, Graph> graph_cache_;
  mutable std::mutex cache_mu_;
};

// ----------------------------------------------------------- checkpoints

// Binary checkpoint layout (all integers little-endian):
//   magic "KNLB" | u32 version | u32 json_len | config json (UTF-8)
//   u32 record_count | records | u64 FNV-1a checksum of all preceding bytes
// each record: u32 name_len | name | u32 ndim | u32 dims[] | f64 data (LE)
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Transformer& model, const std::string& path);
Transformer load_checkpoint(const std::string& path);

}  // namespace knlab
