#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "knlab/localisation_metrics.hpp"
#include "knlab/rng.hpp"
#include "oracles.hpp"

using namespace knlab;

namespace {

Array random_pattern(Rng& rng, int len) {
  Array p({len});
  for (int64_t i = 0; i < p.size(); ++i) p[i] = rng.gauss();
  return p;
}

double norm_of(const Array& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

double dot_normed(const Array& a, const Array& b) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / (norm_of(a) * norm_of(b));
}

// independent R^2: largest eigenvalue of the Gram matrix of unit columns
double r2_gram_oracle(const std::vector<Array>& patterns) {
  const int n = static_cast<int>(patterns.size());
  std::vector<double> gram(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      gram[static_cast<size_t>(i) * n + j] = dot_normed(patterns[static_cast<size_t>(i)],
                                                        patterns[static_cast<size_t>(j)]);
  auto eig = oracles::jacobi_eigenvalues(gram, n);
  return (eig.back() - 1.0) / (n - 1.0);
}

// apply one Givens rotation in the (a,b) plane to every pattern
void rotate_all(std::vector<Array>& patterns, int a, int b, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  for (auto& p : patterns) {
    const double va = p[a], vb = p[b];
    p[a] = c * va - s * vb;
    p[b] = s * va + c * vb;
  }
}

}  // namespace

TEST_CASE("parallel patterns score 1, orthogonal patterns score 0") {
  Rng rng(51);
  Array base = random_pattern(rng, 24);
  std::vector<Array> parallel;
  for (int i = 0; i < 5; ++i) {
    Array p = base;
    const double scale = 0.25 + rng.uniform() * 4.0;
    for (int64_t k = 0; k < p.size(); ++k) p[k] *= scale;
    parallel.push_back(std::move(p));
  }
  CHECK(r_squared(parallel) == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<Array> ortho;
  for (int i = 0; i < 4; ++i) {
    Array e({10});
    e[i * 2] = 1.0;
    ortho.push_back(std::move(e));
  }
  CHECK(r_squared(ortho) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
}

TEST_CASE("two patterns: similarity equals |cos theta| (Gram eigenvalue oracle)") {
  Rng rng(52);
  Array u = random_pattern(rng, 16);
  // w orthogonal to u by Gram-Schmidt
  Array w = random_pattern(rng, 16);
  const double uw = [&] {
    double s = 0.0;
    for (int i = 0; i < 16; ++i) s += u[i] * w[i];
    return s;
  }();
  const double uu = norm_of(u) * norm_of(u);
  for (int i = 0; i < 16; ++i) w[i] -= uw / uu * u[i];

  const double c = std::sqrt(2.0) / 2.0;
  Array v({16});
  for (int i = 0; i < 16; ++i) v[i] = c * u[i] / norm_of(u) + std::sqrt(1 - c * c) * w[i] / norm_of(w);
  CHECK(r_squared({u, v}) == doctest::Approx(c).epsilon(1e-9));

  // sign-flipped second pattern: cos = -c, similarity still |c|
  Array vneg = v;
  for (int i = 0; i < 16; ++i) vneg[i] = -vneg[i];
  CHECK(r_squared({u, vneg}) == doctest::Approx(c).epsilon(1e-9));

  for (int trial = 0; trial < 10; ++trial) {
    Array a = random_pattern(rng, 12), b = random_pattern(rng, 12);
    CHECK(r_squared({a, b}) == doctest::Approx(std::abs(dot_normed(a, b))).epsilon(1e-9));
  }
}

TEST_CASE("general n agrees with a Jacobi eigensolver on the Gram matrix") {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + rng.uniform_int(6);
    const int len = 8 + rng.uniform_int(20);
    std::vector<Array> patterns;
    for (int i = 0; i < n; ++i) patterns.push_back(random_pattern(rng, len));
    const double got = r_squared(patterns);
    CHECK(got == doctest::Approx(r2_gram_oracle(patterns)).epsilon(1e-9));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("similarity is invariant to order, positive scale, sign and rotation") {
  Rng rng(54);
  std::vector<Array> patterns;
  for (int i = 0; i < 5; ++i) patterns.push_back(random_pattern(rng, 18));
  const double base = r_squared(patterns);

  auto shuffled = patterns;
  std::swap(shuffled[0], shuffled[3]);
  std::swap(shuffled[1], shuffled[4]);
  CHECK(r_squared(shuffled) == doctest::Approx(base).epsilon(1e-10));

  auto scaled = patterns;
  for (size_t i = 0; i < scaled.size(); ++i)
    for (int64_t k = 0; k < scaled[i].size(); ++k) scaled[i][k] *= 0.1 + 3.0 * static_cast<double>(i + 1);
  CHECK(r_squared(scaled) == doctest::Approx(base).epsilon(1e-10));

  auto flipped = patterns;
  for (int64_t k = 0; k < flipped[2].size(); ++k) flipped[2][k] = -flipped[2][k];
  for (int64_t k = 0; k < flipped[4].size(); ++k) flipped[4][k] = -flipped[4][k];
  CHECK(r_squared(flipped) == doctest::Approx(base).epsilon(1e-10));

  auto rotated = patterns;
  for (int r = 0; r < 40; ++r) {
    const int a = rng.uniform_int(18);
    int b = rng.uniform_int(18);
    if (a == b) b = (b + 1) % 18;
    rotate_all(rotated, a, b, rng.uniform() * 6.28);
  }
  CHECK(r_squared(rotated) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("single pattern convention and error cases") {
  Rng rng(55);
  CHECK(r_squared({random_pattern(rng, 7)}) == 1.0);
  CHECK_THROWS_AS(r_squared({}), data_error);
  CHECK_THROWS_AS(r_squared({Array({4})}), data_error);  // zero norm
  std::vector<Array> mixed{random_pattern(rng, 4), random_pattern(rng, 5)};
  CHECK_THROWS_AS(r_squared(mixed), shape_error);
  std::vector<Array> with_zero{random_pattern(rng, 4), Array({4})};
  CHECK_THROWS_AS(r_squared(with_zero), data_error);
}

TEST_CASE("layer distribution percentages match a recount") {
  auto kn = [](std::set<NeuronRef> s) {
    KNSet k;
    k.neurons = std::move(s);
    return k;
  };
  auto h = layer_distribution({kn({{3, 0}, {3, 7}}), kn({{3, 2}})}, 4);
  CHECK(h == std::vector<double>{0, 0, 0, 100});
  h = layer_distribution({kn({{0, 1}, {1, 1}})}, 2);
  CHECK(h == std::vector<double>{50, 50});

  Rng rng(56);
  std::vector<KNSet> sets;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 10; ++i) {
    KNSet k;
    const int m = 1 + rng.uniform_int(4);
    for (int j = 0; j < m; ++j) {
      const int layer = rng.uniform_int(3);
      if (k.neurons.insert({layer, rng.uniform_int(50)}).second) counts[static_cast<size_t>(layer)] += 1;
    }
    sets.push_back(std::move(k));
  }
  auto got = layer_distribution(sets, 3);
  const double total = counts[0] + counts[1] + counts[2];
  double sum = 0.0;
  for (int l = 0; l < 3; ++l) {
    CHECK(got[static_cast<size_t>(l)] ==
          doctest::Approx(100.0 * counts[static_cast<size_t>(l)] / total).epsilon(1e-12));
    sum += got[static_cast<size_t>(l)];
  }
  CHECK(sum == doctest::Approx(100.0).epsilon(1e-9));

  CHECK_THROWS_AS(layer_distribution({}, 2), data_error);
  CHECK_THROWS_AS(layer_distribution({kn({})}, 2), data_error);
  CHECK_THROWS_AS(layer_distribution({kn({{5, 0}})}, 2), data_error);
}

TEST_CASE("report row equals independent recomputation and serializes to CSV") {
  // identical attribution patterns: perfectly localised
  AttributionMap m;
  m.scores = Array({2, 6});
  m.scores.at(0, 2) = 3.0;
  m.scores.at(1, 4) = 1.0;
  std::vector<AttributionMap> maps{m, m, m};
  auto kn = refine_threshold(maps);
  auto row = localisation_report("det_noun", maps, kn);
  CHECK(row.r2 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(row.kn_count == static_cast<int>(kn.neurons.size()));
  CHECK(row.tau == kn.final_tau);

  std::vector<Array> patterns{m.scores, m.scores, m.scores};
  CHECK(row.r2 == r_squared(patterns));

  const std::string path = "loc.csv";
  write_localisation_csv(path, {row});
  std::ifstream in(path);
  std::string header, line;
  REQUIRE(std::getline(in, header));
  REQUIRE(std::getline(in, line));
  CHECK(header == "paradigm_or_relation,kn_count,tau,r_squared");
  CHECK(line == "det_noun,2,0.7,1");
  std::remove(path.c_str());
}
