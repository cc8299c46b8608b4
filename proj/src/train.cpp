#include "knlab/train.hpp"

#include <cmath>

#include "knlab/kernels.hpp"
#include "knlab/rng.hpp"

namespace knlab {

namespace {

struct Sample {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<double> mask;
};

// next-token targets for causal models, one hidden position for MLM
Sample make_sample(const ModelConfig& cfg, const std::vector<int>& sent, Rng& rng) {
  Sample s;
  s.tokens = sent;
  const size_t T = sent.size();
  s.targets.assign(T, 0);
  s.mask.assign(T, 0.0);
  if (cfg.causal()) {
    for (size_t t = 0; t + 1 < T; ++t) {
      s.targets[t] = sent[t + 1];
      s.mask[t] = 1.0;
    }
  } else {
    const size_t p = static_cast<size_t>(rng.uniform_int(static_cast<int>(T)));
    s.targets[p] = sent[p];
    s.tokens[p] = cfg.mask_token;
    s.mask[p] = 1.0;
  }
  return s;
}

}  // namespace

TrainStats train(Transformer& model, const std::vector<std::vector<int>>& corpus,
                 const TrainSettings& st) {
  if (corpus.empty()) throw data_error("train: empty corpus");
  if (st.steps < 1 || st.batch < 1) throw data_error("train: steps and batch must be positive");
  const ModelConfig& cfg = model.config();
  for (const auto& sent : corpus) {
    if (sent.size() < 2) throw data_error("train: sentences need at least two tokens");
    if (static_cast<int>(sent.size()) > cfg.max_seq)
      throw data_error("train: sentence exceeds max_seq");
    for (int t : sent)
      if (t < 0 || t >= cfg.vocab) throw data_error("train: token id out of vocabulary");
  }

  // Adam state, iterated in parameter-name order everywhere
  std::map<std::string, Array> m1, m2;
  for (const auto& [name, a] : model.params()) {
    m1.emplace(name, Array(a.shape()));
    m2.emplace(name, Array(a.shape()));
  }
  const std::vector<std::string> wrt = [&] {
    std::vector<std::string> w;
    for (const auto& [name, a] : model.params()) w.push_back(name);
    return w;
  }();

  Rng rng(derive_seed(st.seed, 0));
  TrainStats stats;
  for (int step = 0; step < st.steps; ++step) {
    // sampling happens up front so batch contents never depend on workers
    std::vector<Sample> batch;
    batch.reserve(static_cast<size_t>(st.batch));
    for (int b = 0; b < st.batch; ++b)
      batch.push_back(
          make_sample(cfg, corpus[static_cast<size_t>(rng.uniform_int(static_cast<int>(corpus.size())))], rng));

    std::vector<double> losses(static_cast<size_t>(st.batch));
    std::vector<std::map<std::string, Array>> grads(static_cast<size_t>(st.batch));
    kernels::parallel_for(st.batch, [&](int b) {
      const Sample& s = batch[static_cast<size_t>(b)];
      const auto& g = model.loss_graph(static_cast<int>(s.tokens.size()));
      const auto ctx = evaluate(g, model.loss_inputs(s.tokens, s.targets, s.mask));
      losses[static_cast<size_t>(b)] = ctx.output("loss").item();
      grads[static_cast<size_t>(b)] = gradient(ctx, "loss", wrt);
    });

    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= st.batch;
    if (!std::isfinite(loss))
      throw numeric_error("train: loss diverged at step " + std::to_string(step));

    // fixed-order reduction and update
    const double t = step + 1;
    const double bc1 = 1.0 - std::pow(st.beta1, t);
    const double bc2 = 1.0 - std::pow(st.beta2, t);
    for (const auto& name : wrt) {
      Array& p = model.mutable_params().at(name);
      Array& v1 = m1.at(name);
      Array& v2 = m2.at(name);
      Array gsum(p.shape());
      for (int b = 0; b < st.batch; ++b) {
        const Array& gb = grads[static_cast<size_t>(b)].at(name);
        for (int64_t i = 0; i < gsum.size(); ++i) gsum[i] += gb[i];
      }
      for (int64_t i = 0; i < p.size(); ++i) {
        const double g = gsum[i] / st.batch;
        v1[i] = st.beta1 * v1[i] + (1.0 - st.beta1) * g;
        v2[i] = st.beta2 * v2[i] + (1.0 - st.beta2) * g * g;
        p[i] -= st.lr * (v1[i] / bc1) / (std::sqrt(v2[i] / bc2) + st.adam_eps);
      }
    }

    if (step % st.log_every == 0 || step == st.steps - 1)
      stats.loss_curve.emplace_back(step, loss);
    stats.final_loss = loss;
  }
  return stats;
}

}  // namespace knlab
