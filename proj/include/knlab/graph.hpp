#pragma once

#include <map>
#include <string>
#include <vector>

#include "knlab/array.hpp"

namespace knlab {

// Reverse-mode autodiff over a static acyclic graph. A graph is built once
// (node ids are creation order, so ids already form a topological order),
// finalized, and then shared read-only by any number of evaluations.
//
// Any node can be marked as a named tap. Taps serve two purposes:
//  - their values (and gradients with respect to them) are retrievable;
//  - an evaluation can override them, elementwise: the effective value is
//      v = computed * scale            (scale defaults to ones)
//      v = v*(1-mask) + set_value*mask (mask defaults to zeros)
//    and everything downstream consumes the effective value. Gradients
//    with respect to a tap are taken at the effective value.

enum class Op {
  input,
  embed,        // (table(V,d), ids(T)) -> (T,d); ids carry no gradient
  slice_rows,   // static row range
  matmul,
  add,
  sub,
  mul,          // elementwise
  add_row,      // (m,n) + (n,) broadcast over rows
  scale_const,  // x * c
  gelu,
  softmax,      // last axis
  layer_norm,   // (x(m,n), gain(n), bias(n)), eps 1e-5
  self_attention,  // (q,k,v all (T,d)); fused multi-head attention
  row_at,       // (x(m,n), idx scalar) -> (n,); idx carries no gradient
  pick,         // (x(n,), idx scalar) -> scalar
  log_elem,
  sum,          // -> scalar
  masked_ce,    // (logits(T,V), targets(T), mask(T)) -> scalar mean NLL
};

struct Node {
  Op op;
  std::vector<int> in;
  std::vector<int> shape;
  double cval = 0.0;   // scale_const
  int heads = 0;       // self_attention
  bool causal = false; // self_attention
  int begin = 0;       // slice_rows
  std::string label;   // input name (Op::input only)
};

struct TapOverride {
  Array scale;      // empty means no scaling
  Array set_mask;   // empty means no set
  Array set_value;
};
using Overrides = std::map<std::string, TapOverride>;

class Graph {
 public:
  int input(const std::string& name, std::vector<int> shape);
  int matmul(int a, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int add_row(int a, int bias);
  int scale_const(int a, double c);
  int gelu(int a);
  int softmax(int a);
  int layer_norm(int x, int gain, int bias);
  int embed(int table, int ids);
  int slice_rows(int a, int begin, int count);
  int self_attention(int q, int k, int v, int heads, bool causal);
  int row_at(int a, int idx);
  int pick(int a, int idx);
  int log_elem(int a);
  int sum(int a);
  int masked_ce(int logits, int targets, int mask);

  void mark_tap(int node, const std::string& name);
  void mark_output(int node, const std::string& name);

  // builds consumer lists; must be called once after construction
  void finalize();
  bool finalized() const { return finalized_; }

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const std::vector<int>& consumers(int id) const { return consumers_[static_cast<size_t>(id)]; }

  const std::map<std::string, int>& inputs() const { return inputs_; }
  const std::map<std::string, int>& taps() const { return taps_; }
  const std::map<std::string, int>& outputs() const { return outputs_; }

  int input_id(const std::string& name) const;
  int tap_id(const std::string& name) const;
  int output_id(const std::string& name) const;

  // nodes downstream of `from` (inclusive); used for override re-evaluation
  std::vector<uint8_t> descendants(const std::vector<int>& from) const;

 private:
  int push(Node n);
  const Node& ref(int id) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<int>> consumers_;
  std::map<std::string, int> inputs_, taps_, outputs_;
  bool finalized_ = false;
};

// Holds per-node values for one evaluation. A context created with
// overrides stores only the recomputed (dirty) nodes and reads everything
// else from its base context, which must outlive it.
class EvalContext {
 public:
  const Array& value(int node) const;
  const Array& output(const std::string& name) const;
  // post-override value of a tap
  const Array& tap(const std::string& name) const;

  const Graph& graph() const { return *g_; }

 private:
  friend EvalContext evaluate(const Graph&, const std::map<std::string, Array>&);
  friend EvalContext evaluate_with_overrides(const Graph&, const EvalContext&, const Overrides&);
  friend std::map<std::string, Array> gradient(const EvalContext&, const std::string&,
                                               const std::vector<std::string>&);

  const Graph* g_ = nullptr;
  const EvalContext* base_ = nullptr;
  std::vector<Array> vals_;
  std::map<int, Array> pre_override_;     // computed value of overridden nodes
  std::map<int, Array> aux_;              // op scratch kept for the backward pass
  std::vector<uint8_t> dirty_;            // only for override contexts
  std::map<int, TapOverride> overrides_;  // by node id
};

EvalContext evaluate(const Graph& g, const std::map<std::string, Array>& inputs);

// re-evaluate only the part of the graph affected by the overrides
EvalContext evaluate_with_overrides(const Graph& g, const EvalContext& base, const Overrides& ov);

// d(output)/d(wrt) for a scalar output; wrt entries name inputs or taps.
// Names the output does not depend on get zero arrays.
std::map<std::string, Array> gradient(const EvalContext& ctx, const std::string& scalar_output,
                                      const std::vector<std::string>& wrt);

}  // namespace knlab
