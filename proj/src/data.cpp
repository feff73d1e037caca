#include "gtnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <random>
#include <set>

#include "gtnn/error.hpp"
#include "gtnn/graphon.hpp"

namespace gtnn {

namespace {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t bound) {
  return std::min(bound - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(bound)));
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

SymOperator circulant_shift(int n, double p, int l) {
  if (n < 2 || l < 1 || l >= n) throw PreconditionError("circulant shift needs 1 <= l < n");
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("circulant shift needs 0 <= p <= 1");
  Matrix s = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    s(i, i) += p;
    s(i, (i + l) % n) += (1.0 - p) / 2.0;
    s(i, (i - l + n) % n) += (1.0 - p) / 2.0;
  }
  return SymOperator(s);
}

NCPoly circulant_generator() {
  return NCPoly(2, {{Word{2, 1}, 0.76}, {Word{1, 2}, 0.33}, {Word{1, 1, 1}, 0.3}});
}

SynthData synth_circulant_dataset(const SynthConfig& c) {
  if (c.sigma < 0.0) throw PreconditionError("noise level must be nonnegative");
  if (c.n_train < 0 || c.n_test < 0) throw PreconditionError("sample counts must be nonnegative");
  OperatorTuple tuple({circulant_shift(c.n, c.p, c.l1), circulant_shift(c.n, c.p, c.l2)});
  const NCPoly gen = circulant_generator();
  const Matrix h = poly_operator(gen, tuple);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto draw = [&]() {
    Matrix x(c.n, 1), e(c.n, 1);
    for (int i = 0; i < c.n; ++i) x(i, 0) = unit_uniform(rng);
    for (int i = 0; i < c.n; ++i) e(i, 0) = noise(rng);
    Matrix y = h * x + c.sigma * e;
    return Sample{MultiSignal(std::move(x), 1.0), MultiSignal(std::move(y), 1.0), std::nullopt};
  };
  SynthData out{{}, tuple};
  for (int s = 0; s < c.n_train; ++s) out.data.train.push_back(draw());
  for (int s = 0; s < c.n_test; ++s) out.data.test.push_back(draw());
  return out;
}

DownsampledData downsample_experiment(std::span<const SymOperator> graphs, const SampleSet& train, int m) {
  if (graphs.empty()) throw ShapeError("downsampling needs at least one graph");
  const int n = graphs.front().dim();
  if (m < 1 || m > n) throw PreconditionError("downsampling needs 1 <= m <= n");
  const int grid[] = {m, n};
  common_grid(grid);
  std::vector<SymOperator> ops;
  std::vector<double> dist;
  for (const auto& g : graphs) {
    if (g.dim() != n) throw ShapeError("graphs must share a size");
    const PiecewiseGraphon w = induced_graphon(g);
    const SymOperator t = template_graph(w, m);
    dist.push_back(op_dist(w, induced_graphon(t)));
    ops.emplace_back(t.matrix() * (static_cast<double>(n) / m));
  }
  DownsampledData out{m, OperatorTuple(std::move(ops)), {}, std::move(dist)};
  const Matrix p = m == n ? Matrix::Identity(n, n) : averaging_matrix(m, n);
  for (const auto& s : train) {
    if (s.input.dim() != n) throw ShapeError("sample length does not match the graphs");
    if (s.mask) throw PreconditionError("downsampling does not support masked samples");
    out.train.push_back({MultiSignal(p * s.input.values(), s.input.measure_weight()),
                         MultiSignal(p * s.target.values(), s.target.measure_weight()), std::nullopt});
  }
  return out;
}

RatingsTable::RatingsTable(std::vector<Rating> records) : records_(std::move(records)) {
  std::set<std::pair<int, int>> seen;
  std::set<int> users, items;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.rating < 1 || r.rating > 5) throw DataError("rating outside 1..5", i + 1);
    if (!seen.emplace(r.user, r.item).second)
      throw DataError("duplicate rating for user " + std::to_string(r.user) + " and item " + std::to_string(r.item), i + 1);
    users.insert(r.user);
    items.insert(r.item);
  }
  user_ids_.assign(users.begin(), users.end());
  item_ids_.assign(items.begin(), items.end());
  for (std::size_t i = 0; i < user_ids_.size(); ++i) user_index_[user_ids_[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < item_ids_.size(); ++i) item_index_[item_ids_[i]] = static_cast<int>(i);
}

RatingsTable parse_movielens(std::istream& in) {
  std::vector<Rating> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::int64_t fields[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int f = 0; f < 4; ++f) {
      auto [next, ec] = std::from_chars(p, end, fields[f]);
      if (ec != std::errc() || next == p) throw DataError("expected four tab-separated integers", lineno);
      p = next;
      if (f < 3) {
        if (p == end || *p != '\t') throw DataError("expected four tab-separated integers", lineno);
        ++p;
      }
    }
    if (p != end) throw DataError("trailing characters after four fields", lineno);
    for (int f = 0; f < 3; ++f)
      if (fields[f] < std::numeric_limits<int>::min() || fields[f] > std::numeric_limits<int>::max())
        throw DataError("field out of range", lineno);
    records.push_back({static_cast<int>(fields[0]), static_cast<int>(fields[1]), static_cast<int>(fields[2]), fields[3]});
  }
  // Every line holds one record, so record positions are line numbers.
  return RatingsTable(std::move(records));
}

RatingsTable load_movielens(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings file " + path.string());
  return parse_movielens(in);
}

CenteredRatings center_ratings(const RatingsTable& t) {
  CenteredRatings out;
  out.users = t.users();
  out.items = t.items();
  std::vector<double> sums(static_cast<std::size_t>(t.users()), 0.0);
  std::vector<int> counts(static_cast<std::size_t>(t.users()), 0);
  for (const auto& r : t.records()) {
    const auto u = static_cast<std::size_t>(t.user_index(r.user));
    sums[u] += r.rating;
    ++counts[u];
  }
  for (std::size_t u = 0; u < sums.size(); ++u) out.user_means.push_back(sums[u] / counts[u]);
  for (const auto& r : t.records()) {
    const int u = t.user_index(r.user);
    out.entries.push_back({u, t.item_index(r.item), r.rating - out.user_means[static_cast<std::size_t>(u)]});
  }
  return out;
}

CorrelationGraph correlation_graph(const RatingsTable& t, int knn, int min_overlap) {
  if (knn < 1) throw PreconditionError("knn must be >= 1");
  if (min_overlap < 2) throw PreconditionError("min_overlap must be >= 2");
  const int nu = t.users();
  if (nu == 0) throw PreconditionError("correlation graph needs at least one user");
  Matrix r = Matrix::Zero(nu, t.items());
  Matrix mask = Matrix::Zero(nu, t.items());
  for (const auto& rec : t.records()) {
    const int u = t.user_index(rec.user), i = t.item_index(rec.item);
    r(u, i) = rec.rating;
    mask(u, i) = 1.0;
  }
  // All sums run over co-rated items; ratings are small integers so they are exact.
  const Matrix count = mask * mask.transpose();
  const Matrix sx = r * mask.transpose();
  const Matrix sxx = r.cwiseProduct(r) * mask.transpose();
  const Matrix sxy = r * r.transpose();
  Matrix corr = Matrix::Zero(nu, nu);
  for (int u = 0; u < nu; ++u)
    for (int v = 0; v < nu; ++v) {
      if (u == v || count(u, v) < min_overlap) continue;
      const double n = count(u, v);
      const double vu = n * sxx(u, v) - sx(u, v) * sx(u, v);
      const double vv = n * sxx(v, u) - sx(v, u) * sx(v, u);
      if (vu <= 0.0 || vv <= 0.0) continue;
      const double c = (n * sxy(u, v) - sx(u, v) * sx(v, u)) / std::sqrt(vu * vv);
      if (c > 0.0) corr(u, v) = std::min(c, 1.0);
    }
  std::vector<std::vector<char>> top(static_cast<std::size_t>(nu), std::vector<char>(static_cast<std::size_t>(nu), 0));
  for (int u = 0; u < nu; ++u) {
    std::vector<int> cand;
    for (int v = 0; v < nu; ++v)
      if (corr(u, v) > 0.0) cand.push_back(v);
    const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(knn));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), [&](int a, int b) {
      return corr(u, a) != corr(u, b) ? corr(u, a) > corr(u, b) : a < b;
    });
    for (std::size_t i = 0; i < keep; ++i) top[static_cast<std::size_t>(u)][static_cast<std::size_t>(cand[i])] = 1;
  }
  Matrix s = Matrix::Zero(nu, nu);
  for (int u = 0; u < nu; ++u)
    for (int v = u + 1; v < nu; ++v)
      if (top[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] && top[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)])
        s(u, v) = s(v, u) = 0.5 * (corr(u, v) + corr(v, u));
  CorrelationGraph out{normalize_nonexpansive(SymOperator(s)), 0};
  for (int u = 0; u < nu; ++u)
    if (s.row(u).isZero(0.0)) ++out.isolated;
  return out;
}

MovieSamples movie_samples(const CenteredRatings& dev, const MovieSampleConfig& c) {
  if (!(c.observed_fraction > 0.0 && c.observed_fraction < 1.0))
    throw PreconditionError("observed fraction must lie in (0, 1)");
  if (!(c.train_fraction >= 0.0 && c.train_fraction <= 1.0)) throw PreconditionError("train fraction must lie in [0, 1]");
  std::vector<std::vector<std::pair<int, double>>> by_item(static_cast<std::size_t>(dev.items));
  for (const auto& e : dev.entries) by_item[static_cast<std::size_t>(e.item)].emplace_back(e.user, e.value);
  std::mt19937_64 rng(c.seed);
  MovieSamples out;
  std::vector<std::pair<int, Sample>> samples;
  for (int item = 0; item < dev.items; ++item) {
    auto obs = by_item[static_cast<std::size_t>(item)];
    if (obs.size() < 2) {
      ++out.dropped;
      continue;
    }
    std::sort(obs.begin(), obs.end());
    shuffle(obs, rng);
    const auto r = obs.size();
    const auto kept = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(c.observed_fraction * static_cast<double>(r))), 1, r);
    Matrix x = Matrix::Zero(dev.users, 1), y = Matrix::Zero(dev.users, 1), mask = Matrix::Zero(dev.users, 1);
    for (std::size_t i = 0; i < r; ++i) {
      const auto [u, v] = obs[i];
      y(u, 0) = v;
      if (i < kept) x(u, 0) = v;
      else mask(u, 0) = 1.0;
    }
    samples.emplace_back(item, Sample{MultiSignal(std::move(x), 1.0), MultiSignal(std::move(y), 1.0), std::move(mask)});
  }
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(c.train_fraction * static_cast<double>(order.size())));
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& [item, s] = samples[order[k]];
    if (k < n_train) {
      out.train_items.push_back(item);
      out.data.train.push_back(std::move(s));
    } else {
      out.test_items.push_back(item);
      out.data.test.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace gtnn
