#include "knlab/graph.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include "knlab/kernels.hpp"

namespace knlab {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;

int64_t checked_round_index(double x, int limit, const char* what) {
  const auto i = static_cast<int64_t>(std::llround(x));
  if (i < 0 || i >= limit)
    throw data_error(std::string(what) + ": index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(limit) + ")");
  return i;
}

}  // namespace

int Graph::push(Node n) {
  if (finalized_) throw error("Graph: cannot extend a finalized graph");
  for (int in : n.in)
    if (in < 0 || in >= num_nodes()) throw error("Graph: input node id out of range");
  nodes_.push_back(std::move(n));
  return num_nodes() - 1;
}

const Node& Graph::ref(int id) const {
  if (id < 0 || id >= num_nodes()) throw error("Graph: node id out of range");
  return nodes_[static_cast<size_t>(id)];
}

int Graph::input(const std::string& name, std::vector<int> shape) {
  if (inputs_.count(name)) throw error("Graph: duplicate input name " + name);
  Node n;
  n.op = Op::input;
  n.shape = std::move(shape);
  n.label = name;
  const int id = push(std::move(n));
  inputs_[name] = id;
  return id;
}

int Graph::matmul(int a, int b) {
  const auto& sa = ref(a).shape;
  const auto& sb = ref(b).shape;
  if (sa.empty() || sa.size() > 2 || sb.empty() || sb.size() > 2)
    throw shape_error("matmul: operands must be vectors or matrices");
  const int ka = sa.back();
  const int kb = sb.size() == 2 ? sb[0] : sb[0];
  if (ka != kb)
    throw shape_error("matmul: inner dimensions disagree " + shape_str(sa) + " x " + shape_str(sb));
  Node n;
  n.op = Op::matmul;
  n.in = {a, b};
  if (sa.size() == 2 && sb.size() == 2)
    n.shape = {sa[0], sb[1]};
  else if (sa.size() == 1 && sb.size() == 2)
    n.shape = {sb[1]};
  else if (sa.size() == 2 && sb.size() == 1)
    n.shape = {sa[0]};
  else
    n.shape = {};
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  if (ref(a).shape != ref(b).shape) throw shape_error("add: shape mismatch");
  Node n;
  n.op = Op::add;
  n.in = {a, b};
  n.shape = ref(a).shape;
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  if (ref(a).shape != ref(b).shape) throw shape_error("sub: shape mismatch");
  Node n;
  n.op = Op::sub;
  n.in = {a, b};
  n.shape = ref(a).shape;
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  if (ref(a).shape != ref(b).shape) throw shape_error("mul: shape mismatch");
  Node n;
  n.op = Op::mul;
  n.in = {a, b};
  n.shape = ref(a).shape;
  return push(std::move(n));
}

int Graph::add_row(int a, int bias) {
  const auto& sa = ref(a).shape;
  const auto& sb = ref(bias).shape;
  if (sa.empty() || sb.size() != 1 || sb[0] != sa.back())
    throw shape_error("add_row: bias must match the last dimension");
  Node n;
  n.op = Op::add_row;
  n.in = {a, bias};
  n.shape = sa;
  return push(std::move(n));
}

int Graph::scale_const(int a, double c) {
  Node n;
  n.op = Op::scale_const;
  n.in = {a};
  n.shape = ref(a).shape;
  n.cval = c;
  return push(std::move(n));
}

int Graph::gelu(int a) {
  Node n;
  n.op = Op::gelu;
  n.in = {a};
  n.shape = ref(a).shape;
  return push(std::move(n));
}

int Graph::softmax(int a) {
  if (ref(a).shape.empty()) throw shape_error("softmax: scalar operand");
  Node n;
  n.op = Op::softmax;
  n.in = {a};
  n.shape = ref(a).shape;
  return push(std::move(n));
}

int Graph::layer_norm(int x, int gain, int bias) {
  const auto& sx = ref(x).shape;
  if (sx.empty()) throw shape_error("layer_norm: scalar operand");
  const int ncol = sx.back();
  if (ref(gain).shape != std::vector<int>{ncol} || ref(bias).shape != std::vector<int>{ncol})
    throw shape_error("layer_norm: gain/bias must be vectors of the feature size");
  Node n;
  n.op = Op::layer_norm;
  n.in = {x, gain, bias};
  n.shape = sx;
  return push(std::move(n));
}

int Graph::embed(int table, int ids) {
  const auto& st = ref(table).shape;
  const auto& si = ref(ids).shape;
  if (st.size() != 2 || si.size() != 1) throw shape_error("embed: expected table(V,d), ids(T)");
  Node n;
  n.op = Op::embed;
  n.in = {table, ids};
  n.shape = {si[0], st[1]};
  return push(std::move(n));
}

int Graph::slice_rows(int a, int begin, int count) {
  const auto& sa = ref(a).shape;
  if (sa.size() != 2 || begin < 0 || count < 0 || begin + count > sa[0])
    throw shape_error("slice_rows: bad range");
  Node n;
  n.op = Op::slice_rows;
  n.in = {a};
  n.shape = {count, sa[1]};
  n.begin = begin;
  return push(std::move(n));
}

int Graph::self_attention(int q, int k, int v, int heads, bool causal) {
  const auto& sq = ref(q).shape;
  if (sq.size() != 2 || ref(k).shape != sq || ref(v).shape != sq)
    throw shape_error("self_attention: q,k,v must share shape (T,d)");
  if (heads <= 0 || sq[1] % heads != 0)
    throw shape_error("self_attention: head count must divide the model width");
  Node n;
  n.op = Op::self_attention;
  n.in = {q, k, v};
  n.shape = sq;
  n.heads = heads;
  n.causal = causal;
  return push(std::move(n));
}

int Graph::row_at(int a, int idx) {
  const auto& sa = ref(a).shape;
  if (sa.size() != 2 || !ref(idx).shape.empty())
    throw shape_error("row_at: expected matrix and scalar index");
  Node n;
  n.op = Op::row_at;
  n.in = {a, idx};
  n.shape = {sa[1]};
  return push(std::move(n));
}

int Graph::pick(int a, int idx) {
  const auto& sa = ref(a).shape;
  if (sa.size() != 1 || !ref(idx).shape.empty())
    throw shape_error("pick: expected vector and scalar index");
  Node n;
  n.op = Op::pick;
  n.in = {a, idx};
  n.shape = {};
  return push(std::move(n));
}

int Graph::log_elem(int a) {
  Node n;
  n.op = Op::log_elem;
  n.in = {a};
  n.shape = ref(a).shape;
  return push(std::move(n));
}

int Graph::sum(int a) {
  Node n;
  n.op = Op::sum;
  n.in = {a};
  n.shape = {};
  return push(std::move(n));
}

int Graph::masked_ce(int logits, int targets, int mask) {
  const auto& sl = ref(logits).shape;
  if (sl.size() != 2) throw shape_error("masked_ce: logits must be (T,V)");
  const std::vector<int> st{sl[0]};
  if (ref(targets).shape != st || ref(mask).shape != st)
    throw shape_error("masked_ce: targets/mask must be (T,)");
  Node n;
  n.op = Op::masked_ce;
  n.in = {logits, targets, mask};
  n.shape = {};
  return push(std::move(n));
}

void Graph::mark_tap(int node, const std::string& name) {
  ref(node);
  if (taps_.count(name)) throw error("Graph: duplicate tap name " + name);
  taps_[name] = node;
}

void Graph::mark_output(int node, const std::string& name) {
  ref(node);
  if (outputs_.count(name)) throw error("Graph: duplicate output name " + name);
  outputs_[name] = node;
}

void Graph::finalize() {
  if (finalized_) return;
  consumers_.assign(nodes_.size(), {});
  for (int id = 0; id < num_nodes(); ++id)
    for (int in : nodes_[static_cast<size_t>(id)].in)
      consumers_[static_cast<size_t>(in)].push_back(id);
  finalized_ = true;
}

int Graph::input_id(const std::string& name) const {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw data_error("Graph: unknown input " + name);
  return it->second;
}

int Graph::tap_id(const std::string& name) const {
  auto it = taps_.find(name);
  if (it == taps_.end()) throw data_error("Graph: unknown tap " + name);
  return it->second;
}

int Graph::output_id(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw data_error("Graph: unknown output " + name);
  return it->second;
}

std::vector<uint8_t> Graph::descendants(const std::vector<int>& from) const {
  if (!finalized_) throw error("Graph: finalize() before use");
  std::vector<uint8_t> mark(nodes_.size(), 0);
  std::vector<int> stack;
  for (int id : from) {
    ref(id);
    if (!mark[static_cast<size_t>(id)]) {
      mark[static_cast<size_t>(id)] = 1;
      stack.push_back(id);
    }
  }
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int c : consumers_[static_cast<size_t>(id)])
      if (!mark[static_cast<size_t>(c)]) {
        mark[static_cast<size_t>(c)] = 1;
        stack.push_back(c);
      }
  }
  return mark;
}

// ---------------------------------------------------------------- forward

namespace {

using ValueFn = std::function<const Array&(int)>;

void softmax_rows(const double* x, double* y, int64_t rows, int n) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    double mx = xr[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    double s = 0.0;
    for (int c = 0; c < n; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      s += yr[c];
    }
    for (int c = 0; c < n; ++c) yr[c] /= s;
  }
}

Array compute_node(const Node& nd, int id, const ValueFn& val, std::map<int, Array>& aux) {
  switch (nd.op) {
    case Op::input:
      throw error("compute_node: input nodes have no computation");
    case Op::matmul: {
      const Array& a = val(nd.in[0]);
      const Array& b = val(nd.in[1]);
      const int m = a.ndim() == 2 ? a.dim(0) : 1;
      const int k = a.last_dim();
      const int n = b.ndim() == 2 ? b.dim(1) : 1;
      Array out(nd.shape);
      kernels::matmul(a.data(), b.data(), out.data(), m, k, n);
      return out;
    }
    case Op::add: {
      const Array& a = val(nd.in[0]);
      const Array& b = val(nd.in[1]);
      Array out(nd.shape);
      for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
      return out;
    }
    case Op::sub: {
      const Array& a = val(nd.in[0]);
      const Array& b = val(nd.in[1]);
      Array out(nd.shape);
      for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
      return out;
    }
    case Op::mul: {
      const Array& a = val(nd.in[0]);
      const Array& b = val(nd.in[1]);
      Array out(nd.shape);
      for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
      return out;
    }
    case Op::add_row: {
      const Array& a = val(nd.in[0]);
      const Array& bias = val(nd.in[1]);
      Array out(nd.shape);
      const int n = a.last_dim();
      const int64_t rows = a.fold_rows();
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + bias[c];
      return out;
    }
    case Op::scale_const: {
      const Array& a = val(nd.in[0]);
      Array out(nd.shape);
      for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] * nd.cval;
      return out;
    }
    case Op::gelu: {
      const Array& a = val(nd.in[0]);
      Array out(nd.shape);
      for (int64_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * M_SQRT1_2));
      return out;
    }
    case Op::softmax: {
      const Array& a = val(nd.in[0]);
      Array out(nd.shape);
      softmax_rows(a.data(), out.data(), a.fold_rows(), a.last_dim());
      return out;
    }
    case Op::layer_norm: {
      const Array& x = val(nd.in[0]);
      const Array& gain = val(nd.in[1]);
      const Array& bias = val(nd.in[2]);
      const int n = x.last_dim();
      const int64_t rows = x.fold_rows();
      Array out(nd.shape);
      Array stats({static_cast<int>(rows), 2});
      for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double mu = 0.0;
        for (int c = 0; c < n; ++c) mu += xr[c];
        mu /= n;
        double var = 0.0;
        for (int c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= n;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        stats.at(static_cast<int>(r), 0) = mu;
        stats.at(static_cast<int>(r), 1) = rstd;
        for (int c = 0; c < n; ++c)
          out[r * n + c] = (xr[c] - mu) * rstd * gain[c] + bias[c];
      }
      aux[id] = std::move(stats);
      return out;
    }
    case Op::embed: {
      const Array& table = val(nd.in[0]);
      const Array& ids = val(nd.in[1]);
      const int V = table.dim(0), d = table.dim(1);
      const int T = ids.dim(0);
      Array out(nd.shape);
      for (int t = 0; t < T; ++t) {
        const int64_t tok = checked_round_index(ids[t], V, "embed");
        std::memcpy(out.data() + static_cast<int64_t>(t) * d, table.data() + tok * d,
                    sizeof(double) * static_cast<size_t>(d));
      }
      return out;
    }
    case Op::slice_rows: {
      const Array& a = val(nd.in[0]);
      const int n = a.dim(1);
      Array out(nd.shape);
      std::memcpy(out.data(), a.data() + static_cast<int64_t>(nd.begin) * n,
                  sizeof(double) * static_cast<size_t>(out.size()));
      return out;
    }
    case Op::self_attention: {
      const Array& q = val(nd.in[0]);
      const Array& k = val(nd.in[1]);
      const Array& v = val(nd.in[2]);
      const int T = q.dim(0), d = q.dim(1);
      const int h = nd.heads, dh = d / nd.heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Array out(nd.shape);
      Array probs({h, T, T});
      for (int a = 0; a < h; ++a) {
        const int off = a * dh;
        for (int i = 0; i < T; ++i) {
          const int jmax = nd.causal ? i + 1 : T;
          double* prow = probs.data() + (static_cast<int64_t>(a) * T + i) * T;
          double mx = -1e300;
          for (int j = 0; j < jmax; ++j) {
            double s = 0.0;
            for (int c = 0; c < dh; ++c) s += q.at(i, off + c) * k.at(j, off + c);
            prow[j] = s * scale;
            mx = std::max(mx, prow[j]);
          }
          double z = 0.0;
          for (int j = 0; j < jmax; ++j) {
            prow[j] = std::exp(prow[j] - mx);
            z += prow[j];
          }
          for (int j = 0; j < jmax; ++j) prow[j] /= z;
          for (int c = 0; c < dh; ++c) {
            double s = 0.0;
            for (int j = 0; j < jmax; ++j) s += prow[j] * v.at(j, off + c);
            out.at(i, off + c) = s;
          }
        }
      }
      aux[id] = std::move(probs);
      return out;
    }
    case Op::row_at: {
      const Array& a = val(nd.in[0]);
      const int64_t r = checked_round_index(val(nd.in[1]).item(), a.dim(0), "row_at");
      const int n = a.dim(1);
      Array out(nd.shape);
      std::memcpy(out.data(), a.data() + r * n, sizeof(double) * static_cast<size_t>(n));
      return out;
    }
    case Op::pick: {
      const Array& a = val(nd.in[0]);
      const int64_t i = checked_round_index(val(nd.in[1]).item(), a.dim(0), "pick");
      return Array::scalar(a[i]);
    }
    case Op::log_elem: {
      const Array& a = val(nd.in[0]);
      Array out(nd.shape);
      for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(a[i]);
      return out;
    }
    case Op::sum: {
      const Array& a = val(nd.in[0]);
      double s = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) s += a[i];
      return Array::scalar(s);
    }
    case Op::masked_ce: {
      const Array& logits = val(nd.in[0]);
      const Array& targets = val(nd.in[1]);
      const Array& mask = val(nd.in[2]);
      const int T = logits.dim(0), V = logits.dim(1);
      double count = 0.0, loss = 0.0;
      for (int t = 0; t < T; ++t) {
        if (mask[t] == 0.0) continue;
        count += 1.0;
        const double* row = logits.data() + static_cast<int64_t>(t) * V;
        double mx = row[0];
        for (int c = 1; c < V; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < V; ++c) z += std::exp(row[c] - mx);
        const int64_t y = checked_round_index(targets[t], V, "masked_ce");
        loss += std::log(z) + mx - row[y];
      }
      if (count == 0.0) throw data_error("masked_ce: mask selects no positions");
      return Array::scalar(loss / count);
    }
  }
  throw error("compute_node: unhandled op");
}

// -------------------------------------------------------------- backward

struct Adjoints {
  std::vector<Array> a;
  const Graph* g;

  Array& get(int id) {
    Array& x = a[static_cast<size_t>(id)];
    if (x.empty()) x = Array(g->node(id).shape);
    return x;
  }
  bool has(int id) const { return !a[static_cast<size_t>(id)].empty(); }
};

void backward_node(const Node& nd, int id, const Array& own, const Array& gout, const ValueFn& val,
                   const std::function<const Array*(int)>& aux_of,
                   const std::vector<uint8_t>& need, Adjoints& adj) {
  auto want = [&](int slot) { return need[static_cast<size_t>(nd.in[slot])] != 0; };
  switch (nd.op) {
    case Op::input:
      return;
    case Op::matmul: {
      const Array& a = val(nd.in[0]);
      const Array& b = val(nd.in[1]);
      const int m = a.ndim() == 2 ? a.dim(0) : 1;
      const int k = a.last_dim();
      const int n = b.ndim() == 2 ? b.dim(1) : 1;
      if (want(0)) {
        Array da(a.shape());
        kernels::matmul_nt(gout.data(), b.data(), da.data(), m, n, k);
        Array& acc = adj.get(nd.in[0]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += da[i];
      }
      if (want(1)) {
        Array db(b.shape());
        kernels::matmul_tn(a.data(), gout.data(), db.data(), k, m, n);
        Array& acc = adj.get(nd.in[1]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += db[i];
      }
      return;
    }
    case Op::add: {
      for (int s = 0; s < 2; ++s)
        if (want(s)) {
          Array& acc = adj.get(nd.in[s]);
          for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i];
        }
      return;
    }
    case Op::sub: {
      if (want(0)) {
        Array& acc = adj.get(nd.in[0]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i];
      }
      if (want(1)) {
        Array& acc = adj.get(nd.in[1]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] -= gout[i];
      }
      return;
    }
    case Op::mul: {
      const Array& a = val(nd.in[0]);
      const Array& b = val(nd.in[1]);
      if (want(0)) {
        Array& acc = adj.get(nd.in[0]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i] * b[i];
      }
      if (want(1)) {
        Array& acc = adj.get(nd.in[1]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i] * a[i];
      }
      return;
    }
    case Op::add_row: {
      const int n = nd.shape.back();
      const int64_t rows = gout.size() / n;
      if (want(0)) {
        Array& acc = adj.get(nd.in[0]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i];
      }
      if (want(1)) {
        Array& acc = adj.get(nd.in[1]);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < n; ++c) acc[c] += gout[r * n + c];
      }
      return;
    }
    case Op::scale_const: {
      if (want(0)) {
        Array& acc = adj.get(nd.in[0]);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i] * nd.cval;
      }
      return;
    }
    case Op::gelu: {
      if (!want(0)) return;
      const Array& x = val(nd.in[0]);
      Array& acc = adj.get(nd.in[0]);
      for (int64_t i = 0; i < acc.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        acc[i] += gout[i] * (cdf + x[i] * pdf);
      }
      return;
    }
    case Op::softmax: {
      if (!want(0)) return;
      const int n = nd.shape.back();
      const int64_t rows = own.size() / n;
      Array& acc = adj.get(nd.in[0]);
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = own.data() + r * n;
        const double* gr = gout.data() + r * n;
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += gr[c] * y[c];
        for (int c = 0; c < n; ++c) acc[r * n + c] += y[c] * (gr[c] - dot);
      }
      return;
    }
    case Op::layer_norm: {
      const Array& x = val(nd.in[0]);
      const Array& gain = val(nd.in[1]);
      const Array* stats = aux_of(id);
      const int n = x.last_dim();
      const int64_t rows = x.fold_rows();
      const bool wx = want(0), wg = want(1), wb = want(2);
      Array* dx = wx ? &adj.get(nd.in[0]) : nullptr;
      Array* dg = wg ? &adj.get(nd.in[1]) : nullptr;
      Array* db = wb ? &adj.get(nd.in[2]) : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const double mu = stats->at(static_cast<int>(r), 0);
        const double rstd = stats->at(static_cast<int>(r), 1);
        const double* xr = x.data() + r * n;
        const double* gr = gout.data() + r * n;
        double sum1 = 0.0, sum2 = 0.0;
        for (int c = 0; c < n; ++c) {
          const double xhat = (xr[c] - mu) * rstd;
          const double dxhat = gr[c] * gain[c];
          sum1 += dxhat;
          sum2 += dxhat * xhat;
          if (wg) (*dg)[c] += gr[c] * xhat;
          if (wb) (*db)[c] += gr[c];
        }
        if (wx)
          for (int c = 0; c < n; ++c) {
            const double xhat = (xr[c] - mu) * rstd;
            const double dxhat = gr[c] * gain[c];
            (*dx)[r * n + c] += rstd * (dxhat - sum1 / n - xhat * sum2 / n);
          }
      }
      return;
    }
    case Op::embed: {
      if (!want(0)) return;
      const Array& table = val(nd.in[0]);
      const Array& ids = val(nd.in[1]);
      const int d = table.dim(1);
      Array& acc = adj.get(nd.in[0]);
      for (int t = 0; t < ids.dim(0); ++t) {
        const int64_t tok = checked_round_index(ids[t], table.dim(0), "embed");
        for (int c = 0; c < d; ++c) acc[tok * d + c] += gout[static_cast<int64_t>(t) * d + c];
      }
      return;
    }
    case Op::slice_rows: {
      if (!want(0)) return;
      const int n = nd.shape[1];
      Array& acc = adj.get(nd.in[0]);
      for (int64_t i = 0; i < gout.size(); ++i)
        acc[static_cast<int64_t>(nd.begin) * n + i] += gout[i];
      return;
    }
    case Op::self_attention: {
      const Array& q = val(nd.in[0]);
      const Array& k = val(nd.in[1]);
      const Array& v = val(nd.in[2]);
      const Array* probs = aux_of(id);
      const int T = q.dim(0), d = q.dim(1);
      const int h = nd.heads, dh = d / nd.heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      const bool wq = want(0), wk = want(1), wv = want(2);
      Array* dq = wq ? &adj.get(nd.in[0]) : nullptr;
      Array* dk = wk ? &adj.get(nd.in[1]) : nullptr;
      Array* dv = wv ? &adj.get(nd.in[2]) : nullptr;
      std::vector<double> ds(static_cast<size_t>(T));
      for (int a = 0; a < h; ++a) {
        const int off = a * dh;
        for (int i = 0; i < T; ++i) {
          const int jmax = nd.causal ? i + 1 : T;
          const double* prow = probs->data() + (static_cast<int64_t>(a) * T + i) * T;
          // dP[i,j] = <G_i, V_j>, then softmax vjp within the row
          double dot = 0.0;
          for (int j = 0; j < jmax; ++j) {
            double s = 0.0;
            for (int c = 0; c < dh; ++c) s += gout.at(i, off + c) * v.at(j, off + c);
            ds[static_cast<size_t>(j)] = s;
            dot += s * prow[j];
          }
          for (int j = 0; j < jmax; ++j) {
            const double dsij = prow[j] * (ds[static_cast<size_t>(j)] - dot) * scale;
            if (wq)
              for (int c = 0; c < dh; ++c) dq->at(i, off + c) += dsij * k.at(j, off + c);
            if (wk)
              for (int c = 0; c < dh; ++c) dk->at(j, off + c) += dsij * q.at(i, off + c);
          }
          if (wv)
            for (int j = 0; j < jmax; ++j)
              for (int c = 0; c < dh; ++c) dv->at(j, off + c) += prow[j] * gout.at(i, off + c);
        }
      }
      return;
    }
    case Op::row_at: {
      if (!want(0)) return;
      const Array& a = val(nd.in[0]);
      const int64_t r = checked_round_index(val(nd.in[1]).item(), a.dim(0), "row_at");
      const int n = a.dim(1);
      Array& acc = adj.get(nd.in[0]);
      for (int c = 0; c < n; ++c) acc[r * n + c] += gout[c];
      return;
    }
    case Op::pick: {
      if (!want(0)) return;
      const Array& a = val(nd.in[0]);
      const int64_t i = checked_round_index(val(nd.in[1]).item(), a.dim(0), "pick");
      adj.get(nd.in[0])[i] += gout.item();
      return;
    }
    case Op::log_elem: {
      if (!want(0)) return;
      const Array& x = val(nd.in[0]);
      Array& acc = adj.get(nd.in[0]);
      for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gout[i] / x[i];
      return;
    }
    case Op::sum: {
      if (!want(0)) return;
      Array& acc = adj.get(nd.in[0]);
      const double gval = gout.item();
      for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gval;
      return;
    }
    case Op::masked_ce: {
      if (!want(0)) return;
      const Array& logits = val(nd.in[0]);
      const Array& targets = val(nd.in[1]);
      const Array& mask = val(nd.in[2]);
      const int T = logits.dim(0), V = logits.dim(1);
      double count = 0.0;
      for (int t = 0; t < T; ++t) count += mask[t] != 0.0 ? 1.0 : 0.0;
      const double gval = gout.item() / count;
      Array& acc = adj.get(nd.in[0]);
      std::vector<double> p(static_cast<size_t>(V));
      for (int t = 0; t < T; ++t) {
        if (mask[t] == 0.0) continue;
        const double* row = logits.data() + static_cast<int64_t>(t) * V;
        softmax_rows(row, p.data(), 1, V);
        const int64_t y = checked_round_index(targets[t], V, "masked_ce");
        for (int c = 0; c < V; ++c)
          acc[static_cast<int64_t>(t) * V + c] += gval * (p[static_cast<size_t>(c)] - (c == y ? 1.0 : 0.0));
      }
      return;
    }
  }
  throw error("backward_node: unhandled op");
}

void apply_override(const TapOverride& ov, const std::vector<int>& shape, Array& v) {
  if (!ov.scale.empty()) {
    if (ov.scale.shape() != shape) throw shape_error("override: scale shape mismatch");
    for (int64_t i = 0; i < v.size(); ++i) v[i] *= ov.scale[i];
  }
  if (!ov.set_mask.empty()) {
    if (ov.set_mask.shape() != shape || ov.set_value.shape() != shape)
      throw shape_error("override: set shape mismatch");
    for (int64_t i = 0; i < v.size(); ++i)
      v[i] = v[i] * (1.0 - ov.set_mask[i]) + ov.set_value[i] * ov.set_mask[i];
  }
}

}  // namespace

// ------------------------------------------------------------ evaluation

const Array& EvalContext::value(int node) const {
  const Array& own = vals_[static_cast<size_t>(node)];
  if (!own.empty()) return own;
  if (base_) return base_->value(node);
  return own;
}

const Array& EvalContext::output(const std::string& name) const {
  return value(g_->output_id(name));
}

const Array& EvalContext::tap(const std::string& name) const { return value(g_->tap_id(name)); }

EvalContext evaluate(const Graph& g, const std::map<std::string, Array>& inputs) {
  if (!g.finalized()) throw error("evaluate: graph not finalized");
  EvalContext ctx;
  ctx.g_ = &g;
  ctx.vals_.resize(static_cast<size_t>(g.num_nodes()));
  for (const auto& [name, id] : g.inputs()) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw data_error("evaluate: missing input " + name);
    if (it->second.shape() != g.node(id).shape)
      throw shape_error("evaluate: input " + name + " has shape " +
                        shape_str(it->second.shape()) + ", expected " +
                        shape_str(g.node(id).shape));
    ctx.vals_[static_cast<size_t>(id)] = it->second;
  }
  auto val = [&ctx](int id) -> const Array& { return ctx.value(id); };
  for (int id = 0; id < g.num_nodes(); ++id) {
    const Node& nd = g.node(id);
    if (nd.op == Op::input) continue;
    ctx.vals_[static_cast<size_t>(id)] = compute_node(nd, id, val, ctx.aux_);
  }
  return ctx;
}

EvalContext evaluate_with_overrides(const Graph& g, const EvalContext& base, const Overrides& ov) {
  if (!g.finalized()) throw error("evaluate: graph not finalized");
  if (base.g_ != &g) throw error("evaluate_with_overrides: context belongs to another graph");
  EvalContext ctx;
  ctx.g_ = &g;
  ctx.base_ = &base;
  ctx.vals_.resize(static_cast<size_t>(g.num_nodes()));

  std::vector<int> roots;
  for (const auto& [name, spec] : ov) {
    const int id = g.tap_id(name);
    ctx.overrides_[id] = spec;
    roots.push_back(id);
  }
  ctx.dirty_ = g.descendants(roots);

  auto val = [&ctx](int id) -> const Array& { return ctx.value(id); };
  for (int id = 0; id < g.num_nodes(); ++id) {
    if (!ctx.dirty_[static_cast<size_t>(id)]) continue;
    const Node& nd = g.node(id);
    bool inputs_dirty = false;
    for (int in : nd.in) inputs_dirty = inputs_dirty || ctx.dirty_[static_cast<size_t>(in)];
    Array v;
    if (nd.op == Op::input || !inputs_dirty)
      v = base.value(id);  // upstream unchanged
    else
      v = compute_node(nd, id, val, ctx.aux_);
    auto ito = ctx.overrides_.find(id);
    if (ito != ctx.overrides_.end()) {
      ctx.pre_override_[id] = v;
      apply_override(ito->second, nd.shape, v);
    }
    ctx.vals_[static_cast<size_t>(id)] = std::move(v);
  }
  return ctx;
}

std::map<std::string, Array> gradient(const EvalContext& ctx, const std::string& scalar_output,
                                      const std::vector<std::string>& wrt) {
  const Graph& g = *ctx.g_;
  const int out = g.output_id(scalar_output);
  if (Array::count_elems(g.node(out).shape) != 1)
    throw shape_error("gradient: output " + scalar_output + " is not a scalar");

  // resolve wrt names; inputs win over taps when a name denotes both
  std::vector<int> wrt_ids;
  for (const auto& name : wrt) {
    if (g.inputs().count(name))
      wrt_ids.push_back(g.inputs().at(name));
    else if (g.taps().count(name))
      wrt_ids.push_back(g.taps().at(name));
    else
      throw data_error("gradient: unknown input or tap " + name);
  }

  // adjoints are needed only between the output and the wrt nodes
  std::vector<uint8_t> reach = g.descendants(wrt_ids);
  std::vector<uint8_t> anc(static_cast<size_t>(g.num_nodes()), 0);
  {
    std::vector<int> stack{out};
    anc[static_cast<size_t>(out)] = 1;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int in : g.node(id).in)
        if (!anc[static_cast<size_t>(in)]) {
          anc[static_cast<size_t>(in)] = 1;
          stack.push_back(in);
        }
    }
  }
  std::vector<uint8_t> need(static_cast<size_t>(g.num_nodes()), 0);
  for (int i = 0; i < g.num_nodes(); ++i)
    need[static_cast<size_t>(i)] = reach[static_cast<size_t>(i)] && anc[static_cast<size_t>(i)];

  Adjoints adj;
  adj.g = &g;
  adj.a.resize(static_cast<size_t>(g.num_nodes()));

  auto val = [&ctx](int id) -> const Array& { return ctx.value(id); };
  auto aux_of = [&ctx](int id) -> const Array* {
    const EvalContext* c = &ctx;
    while (c) {
      auto it = c->aux_.find(id);
      if (it != c->aux_.end()) return &it->second;
      c = c->base_;
    }
    throw error("gradient: missing op scratch");
  };

  if (need[static_cast<size_t>(out)]) {
    adj.get(out)[0] = 1.0;
    for (int id = out; id >= 0; --id) {
      if (!need[static_cast<size_t>(id)] || !adj.has(id)) continue;
      const Node& nd = g.node(id);
      Array gown = adj.a[static_cast<size_t>(id)];

      // undo the tap override transform before stepping through the op
      const Array* own = &ctx.value(id);
      auto ito = ctx.overrides_.find(id);
      if (ito != ctx.overrides_.end()) {
        const TapOverride& o = ito->second;
        if (!o.set_mask.empty())
          for (int64_t i = 0; i < gown.size(); ++i) gown[i] *= 1.0 - o.set_mask[i];
        if (!o.scale.empty())
          for (int64_t i = 0; i < gown.size(); ++i) gown[i] *= o.scale[i];
        own = &ctx.pre_override_.at(id);
      }
      backward_node(nd, id, *own, gown, val, aux_of, need, adj);
    }
  }

  std::map<std::string, Array> result;
  for (size_t i = 0; i < wrt.size(); ++i) {
    const int id = wrt_ids[i];
    if (adj.has(id))
      result[wrt[i]] = adj.a[static_cast<size_t>(id)];
    else
      result[wrt[i]] = Array(g.node(id).shape);
  }
  return result;
}

}  // namespace knlab
