#include "knlab/model.hpp"

#include <algorithm>
#include <cmath>

#include "knlab/rng.hpp"

namespace knlab {

void ModelConfig::validate() const {
  if (layers < 1) throw data_error("ModelConfig: layers must be >= 1");
  if (d_model < 1 || d_mlp < 1) throw data_error("ModelConfig: widths must be >= 1");
  if (heads < 1 || d_model % heads != 0)
    throw data_error("ModelConfig: heads must divide d_model");
  if (vocab < 2) throw data_error("ModelConfig: vocab must be >= 2");
  if (max_seq < 1) throw data_error("ModelConfig: max_seq must be >= 1");
  if (masking != "causal" && masking != "bidirectional")
    throw data_error("ModelConfig: masking must be causal or bidirectional");
  if (nonlinearity != "gelu")
    throw data_error("ModelConfig: unsupported nonlinearity " + nonlinearity);
  if (masking == "bidirectional" && (mask_token < 0 || mask_token >= vocab))
    throw data_error("ModelConfig: bidirectional masking requires a valid mask_token");
}

void EditSpec::validate(const ModelConfig& cfg) const {
  for (const auto& e : edits) {
    if (e.neuron.layer < 0 || e.neuron.layer >= cfg.layers || e.neuron.index < 0 ||
        e.neuron.index >= cfg.d_mlp)
      throw data_error("EditSpec: neuron (" + std::to_string(e.neuron.layer) + ", " +
                       std::to_string(e.neuron.index) + ") does not exist");
  }
  // the same neuron may not be edited twice at overlapping positions
  for (size_t i = 0; i < edits.size(); ++i)
    for (size_t j = i + 1; j < edits.size(); ++j)
      if (edits[i].neuron == edits[j].neuron)
        throw data_error("EditSpec: duplicate edit for neuron (" +
                         std::to_string(edits[i].neuron.layer) + ", " +
                         std::to_string(edits[i].neuron.index) + ")");
}

EditSpec EditSpec::suppress(const std::vector<NeuronRef>& neurons, EditScope scope) {
  EditSpec s;
  for (const auto& n : neurons) s.edits.push_back({n, EditAction::set, 0.0, scope});
  return s;
}

EditSpec EditSpec::amplify(const std::vector<NeuronRef>& neurons, double factor, EditScope scope) {
  EditSpec s;
  for (const auto& n : neurons) s.edits.push_back({n, EditAction::scale, factor, scope});
  return s;
}

std::string mlp_act_tap(int layer) { return "mlp_act_" + std::to_string(layer); }
std::string attn_out_tap(int layer) { return "attn_out_" + std::to_string(layer); }
std::string mlp_out_tap(int layer) { return "mlp_out_" + std::to_string(layer); }
std::string hidden_tap(int layer) { return "hidden_" + std::to_string(layer); }

namespace {

std::string lname(int l, const char* suffix) { return "l" + std::to_string(l) + "." + suffix; }

// parameter names and shapes, in the fixed order used for initialization
std::vector<std::pair<std::string, std::vector<int>>> param_spec(const ModelConfig& c) {
  std::vector<std::pair<std::string, std::vector<int>>> ps;
  ps.emplace_back("wte", std::vector<int>{c.vocab, c.d_model});
  ps.emplace_back("wpe", std::vector<int>{c.max_seq, c.d_model});
  for (int l = 0; l < c.layers; ++l) {
    ps.emplace_back(lname(l, "ln1.g"), std::vector<int>{c.d_model});
    ps.emplace_back(lname(l, "ln1.b"), std::vector<int>{c.d_model});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      ps.emplace_back(lname(l, w), std::vector<int>{c.d_model, c.d_model});
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      ps.emplace_back(lname(l, b), std::vector<int>{c.d_model});
    ps.emplace_back(lname(l, "ln2.g"), std::vector<int>{c.d_model});
    ps.emplace_back(lname(l, "ln2.b"), std::vector<int>{c.d_model});
    ps.emplace_back(lname(l, "mlp.w_in"), std::vector<int>{c.d_model, c.d_mlp});
    ps.emplace_back(lname(l, "mlp.b_in"), std::vector<int>{c.d_mlp});
    ps.emplace_back(lname(l, "mlp.w_out"), std::vector<int>{c.d_mlp, c.d_model});
    ps.emplace_back(lname(l, "mlp.b_out"), std::vector<int>{c.d_model});
  }
  ps.emplace_back("lnf.g", std::vector<int>{c.d_model});
  ps.emplace_back("lnf.b", std::vector<int>{c.d_model});
  ps.emplace_back("unemb.w", std::vector<int>{c.d_model, c.vocab});
  ps.emplace_back("unemb.b", std::vector<int>{c.vocab});
  return ps;
}

bool is_gain(const std::string& name) {
  return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}
bool is_bias(const std::string& name) {
  if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) return true;
  return name.find(".b_") != std::string::npos || name.find(".bq") != std::string::npos ||
         name.find(".bk") != std::string::npos || name.find(".bv") != std::string::npos ||
         name.find(".bo") != std::string::npos;
}

}  // namespace

Transformer::Transformer(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto spec = param_spec(cfg_);
  for (size_t i = 0; i < spec.size(); ++i) {
    const auto& [name, shape] = spec[i];
    Array a(shape);
    if (is_gain(name)) {
      for (int64_t k = 0; k < a.size(); ++k) a[k] = 1.0;
    } else if (!is_bias(name)) {
      Rng rng(derive_seed(seed, i));
      for (int64_t k = 0; k < a.size(); ++k) a[k] = 0.02 * rng.gauss();
    }
    params_.emplace(name, std::move(a));
  }
}

Transformer::Transformer(ModelConfig cfg, std::map<std::string, Array> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  for (const auto& [name, shape] : param_spec(cfg_)) {
    auto it = params_.find(name);
    if (it == params_.end()) throw data_error("Transformer: missing parameter " + name);
    if (it->second.shape() != shape)
      throw data_error("Transformer: parameter " + name + " has shape " +
                       shape_str(it->second.shape()) + ", expected " + shape_str(shape));
  }
  if (params_.size() != param_spec(cfg_).size())
    throw data_error("Transformer: unexpected extra parameters in checkpoint");
}

void Transformer::build_layer(Graph& g, int l, int& x, int T) const {
  auto in = [&](const char* s) { return g.input_id(lname(l, s)); };
  const int ln1 = g.layer_norm(x, in("ln1.g"), in("ln1.b"));
  const int q = g.add_row(g.matmul(ln1, in("attn.wq")), in("attn.bq"));
  const int k = g.add_row(g.matmul(ln1, in("attn.wk")), in("attn.bk"));
  const int v = g.add_row(g.matmul(ln1, in("attn.wv")), in("attn.bv"));
  const int att = g.self_attention(q, k, v, cfg_.heads, cfg_.causal());
  const int attn_out = g.add_row(g.matmul(att, in("attn.wo")), in("attn.bo"));
  g.mark_tap(attn_out, attn_out_tap(l));
  x = g.add(x, attn_out);
  const int ln2 = g.layer_norm(x, in("ln2.g"), in("ln2.b"));
  const int pre = g.add_row(g.matmul(ln2, in("mlp.w_in")), in("mlp.b_in"));
  const int act = g.gelu(pre);
  g.mark_tap(act, mlp_act_tap(l));
  const int mlp_out = g.add_row(g.matmul(act, in("mlp.w_out")), in("mlp.b_out"));
  g.mark_tap(mlp_out, mlp_out_tap(l));
  x = g.add(x, mlp_out);
  g.mark_tap(x, hidden_tap(l));
  (void)T;
}

Graph Transformer::build_graph(int T, bool loss) const {
  Graph g;
  for (const auto& [name, shape] : param_spec(cfg_)) g.input(name, shape);
  const int tokens = g.input("tokens", {T});
  int x = g.add(g.embed(g.input_id("wte"), tokens), g.slice_rows(g.input_id("wpe"), 0, T));
  g.mark_tap(x, kEmbedTap);
  for (int l = 0; l < cfg_.layers; ++l) build_layer(g, l, x, T);
  const int lnf = g.layer_norm(x, g.input_id("lnf.g"), g.input_id("lnf.b"));
  if (loss) {
    const int targets = g.input("targets", {T});
    const int mask = g.input("mask", {T});
    const int logits = g.add_row(g.matmul(lnf, g.input_id("unemb.w")), g.input_id("unemb.b"));
    g.mark_output(g.masked_ce(logits, targets, mask), "loss");
  } else {
    const int target = g.input("target", {});
    const int hrow = g.row_at(lnf, target);
    const int logits = g.add_row(g.matmul(hrow, g.input_id("unemb.w")), g.input_id("unemb.b"));
    const int probs = g.softmax(logits);
    g.mark_output(probs, "probs");
    // scalar read-out for gradient work (attribution, tracing)
    g.mark_output(g.pick(probs, g.input("y", {})), "p_y");
  }
  g.finalize();
  return g;
}

const Graph& Transformer::probs_graph(int T) const {
  std::lock_guard<std::mutex> lock(cache_mu_);
  auto key = std::make_pair(T, 0);
  auto it = graph_cache_.find(key);
  if (it == graph_cache_.end()) it = graph_cache_.emplace(key, build_graph(T, false)).first;
  return it->second;
}

const Graph& Transformer::loss_graph(int T) const {
  std::lock_guard<std::mutex> lock(cache_mu_);
  auto key = std::make_pair(T, 1);
  auto it = graph_cache_.find(key);
  if (it == graph_cache_.end()) it = graph_cache_.emplace(key, build_graph(T, true)).first;
  return it->second;
}

void Transformer::check_sequence(const std::vector<int>& tokens, int target_pos) const {
  const int T = static_cast<int>(tokens.size());
  if (T < 1) throw data_error("forward: empty token sequence");
  if (T > cfg_.max_seq)
    throw data_error("forward: sequence length " + std::to_string(T) + " exceeds max_seq " +
                     std::to_string(cfg_.max_seq));
  if (target_pos < 0 || target_pos >= T)
    throw data_error("forward: target position out of range");
  for (int t : tokens)
    if (t < 0 || t >= cfg_.vocab) throw data_error("forward: token id out of vocabulary");
  if (!cfg_.causal() && tokens[static_cast<size_t>(target_pos)] != cfg_.mask_token)
    throw data_error("forward: bidirectional target position must hold the mask token");
}

std::map<std::string, Array> Transformer::probs_inputs(const std::vector<int>& tokens,
                                                       int target_pos, int y) const {
  check_sequence(tokens, target_pos);
  if (y < 0 || y >= cfg_.vocab) throw data_error("forward: read-out token out of vocabulary");
  std::map<std::string, Array> in = params_;
  Array tok({static_cast<int>(tokens.size())});
  for (size_t i = 0; i < tokens.size(); ++i) tok[static_cast<int64_t>(i)] = tokens[i];
  in.emplace("tokens", std::move(tok));
  in.emplace("target", Array::scalar(static_cast<double>(target_pos)));
  in.emplace("y", Array::scalar(static_cast<double>(y)));
  return in;
}

std::map<std::string, Array> Transformer::loss_inputs(const std::vector<int>& tokens,
                                                      const std::vector<int>& targets,
                                                      const std::vector<double>& mask) const {
  const size_t T = tokens.size();
  if (T < 1) throw data_error("loss_inputs: empty token sequence");
  if (static_cast<int>(T) > cfg_.max_seq)
    throw data_error("loss_inputs: sequence exceeds max_seq");
  for (int t : tokens)
    if (t < 0 || t >= cfg_.vocab) throw data_error("loss_inputs: token id out of vocabulary");
  if (targets.size() != T || mask.size() != T)
    throw data_error("loss_inputs: targets/mask length mismatch");
  std::map<std::string, Array> in = params_;
  Array tok({static_cast<int>(T)}), tgt({static_cast<int>(T)}), msk({static_cast<int>(T)});
  for (size_t i = 0; i < T; ++i) {
    tok[static_cast<int64_t>(i)] = tokens[i];
    tgt[static_cast<int64_t>(i)] = targets[i];
    msk[static_cast<int64_t>(i)] = mask[i];
  }
  in.emplace("tokens", std::move(tok));
  in.emplace("targets", std::move(tgt));
  in.emplace("mask", std::move(msk));
  return in;
}

Overrides Transformer::edit_overrides(const EditSpec& edit, int T, int target_pos) const {
  edit.validate(cfg_);
  Overrides ov;
  for (const auto& e : edit.edits) {
    const std::string tap = mlp_act_tap(e.neuron.layer);
    TapOverride& o = ov[tap];  // created on first use
    if (e.action == EditAction::scale && o.scale.empty()) {
      o.scale = Array({T, cfg_.d_mlp});
      for (int64_t i = 0; i < o.scale.size(); ++i) o.scale[i] = 1.0;
    }
    if (e.action == EditAction::set && o.set_mask.empty()) {
      o.set_mask = Array({T, cfg_.d_mlp});
      o.set_value = Array({T, cfg_.d_mlp});
    }
    const int r0 = e.scope == EditScope::all_tokens ? 0 : target_pos;
    const int r1 = e.scope == EditScope::all_tokens ? T : target_pos + 1;
    for (int r = r0; r < r1; ++r) {
      if (e.action == EditAction::scale)
        o.scale.at(r, e.neuron.index) = e.value;
      else {
        o.set_mask.at(r, e.neuron.index) = 1.0;
        o.set_value.at(r, e.neuron.index) = e.value;
      }
    }
  }
  return ov;
}

namespace {

Transformer::Forward finish_forward(const ModelConfig& cfg, const EvalContext& ctx, int nlayers) {
  Transformer::Forward f;
  f.probs = ctx.output("probs");
  f.mlp_acts.reserve(static_cast<size_t>(nlayers));
  for (int l = 0; l < nlayers; ++l) f.mlp_acts.push_back(ctx.tap(mlp_act_tap(l)));
  (void)cfg;
  return f;
}

}  // namespace

int Transformer::Forward::argmax() const {
  int best = 0;
  for (int64_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  return best;
}

Transformer::Forward Transformer::forward(const std::vector<int>& tokens, int target_pos) const {
  check_sequence(tokens, target_pos);
  const auto& g = probs_graph(static_cast<int>(tokens.size()));
  const auto ctx = evaluate(g, probs_inputs(tokens, target_pos));
  return finish_forward(cfg_, ctx, cfg_.layers);
}

Transformer::Forward Transformer::forward_with_overrides(const std::vector<int>& tokens,
                                                         int target_pos,
                                                         const EditSpec& edit) const {
  check_sequence(tokens, target_pos);
  const int T = static_cast<int>(tokens.size());
  const auto& g = probs_graph(T);
  const auto base = evaluate(g, probs_inputs(tokens, target_pos));
  if (edit.edits.empty()) return finish_forward(cfg_, base, cfg_.layers);
  const auto ctx = evaluate_with_overrides(g, base, edit_overrides(edit, T, target_pos));
  return finish_forward(cfg_, ctx, cfg_.layers);
}

double Transformer::embedding_std() const {
  const Array& wte = params_.at("wte");
  double mu = 0.0;
  for (int64_t i = 0; i < wte.size(); ++i) mu += wte[i];
  mu /= static_cast<double>(wte.size());
  double var = 0.0;
  for (int64_t i = 0; i < wte.size(); ++i) var += (wte[i] - mu) * (wte[i] - mu);
  return std::sqrt(var / static_cast<double>(wte.size()));
}

}  // namespace knlab
