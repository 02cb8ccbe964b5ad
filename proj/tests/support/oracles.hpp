#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Everything here is written with plain loops over std::vector so it shares
// no code path with the library under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "twins/co_retrieval.hpp"
#include "twins/data.hpp"
#include "twins/model.hpp"
#include "twins/rng.hpp"
#include "twins/tensor.hpp"

namespace twins::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Vec to_vec(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat to_mat(const ad::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.data()[r * t.cols() + c];
  return m;
}

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- finite differences ----------------------------------------------------

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Scalar-valued function of several tensors. Called once with tracked
/// inputs and many times with untracked ones.
using ScalarFn = std::function<ad::Tensor(const std::vector<ad::Tensor>&)>;

/// Tape gradient of `f` at `inputs` against central differences.
inline GradCheck check_gradients(const ScalarFn& f, const std::vector<ad::Tensor>& inputs, double step = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Tensor> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  ad::Tensor root = f(vars);
  // An output that no input reaches has zero gradient everywhere.
  if (root.tracked()) tape.backward(root);

  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<ad::Tensor> shifted = inputs;
        Vec v = to_vec(inputs[k]);
        v[i] += delta;
        shifted[k] = ad::Tensor(inputs[k].shape(), std::move(v));
        return f(shifted).item();
      };
      const double numeric = (probe(step) - probe(-step)) / (2.0 * step);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric));
      ++out.checked;
    }
  }
  return out;
}

/// Reduces a tensor to a scalar through a fixed random projection.
inline ad::Tensor project(const ad::Tensor& t, const Vec& weights) {
  return ad::sum(ad::mul(ad::reshape(t, {t.size()}), ad::Tensor::vector(weights)));
}

// ---- softmax and attention ---------------------------------------------------

inline Vec softmax(const Vec& logits) {
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l);
  Vec out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp(logits[i] - mx);
  for (auto& o : out) o /= z;
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Double loop over every (user item, anchor item) pair, full logit
/// including the terms shared by all pairs.
inline Vec item_aspect(const Vec& e_u, const Mat& hu, const Vec& e_a, const Mat& ha, const Vec& w, double b,
                       bool literal = false) {
  const std::size_t d = e_u.size();
  if (hu.empty() || ha.empty()) return Vec(d, 0.0);
  Vec logits;
  for (const auto& x : hu) {
    for (const auto& y : ha) {
      double l = b;
      for (std::size_t k = 0; k < d; ++k) {
        l += w[k] * e_u[k] + w[d + k] * x[k] + w[2 * d + k] * e_a[k] + w[3 * d + k] * y[k];
      }
      logits.push_back(l);
    }
  }
  const Vec alpha = softmax(logits);
  Vec out(d, 0.0);
  std::size_t p = 0;
  for (const auto& x : hu) {
    for (const auto& y : ha) {
      for (std::size_t k = 0; k < d; ++k) out[k] += alpha[p] * (literal ? y[k] : x[k]) * y[k];
      ++p;
    }
  }
  return out;
}

inline Vec anchor_aspect(const Vec& e_u, const Mat& browsed, const Vec& e_t, const Vec& w, double b) {
  const std::size_t d = e_u.size();
  if (browsed.empty()) return Vec(d, 0.0);
  Vec logits;
  for (const auto& e : browsed) {
    double l = b;
    for (std::size_t k = 0; k < d; ++k) l += w[k] * e_u[k] + w[d + k] * e[k] + w[2 * d + k] * e_t[k];
    logits.push_back(l);
  }
  const Vec alpha = softmax(logits);
  Vec out(d, 0.0);
  for (std::size_t n = 0; n < browsed.size(); ++n)
    for (std::size_t k = 0; k < d; ++k) out[k] += alpha[n] * browsed[n][k] * e_t[k];
  return out;
}

// ---- encoders ----------------------------------------------------------------

inline Vec pnn(const Mat& table, const std::vector<FeatureId>& features) {
  const std::size_t d = table.front().size();
  Vec e(d, 0.0);
  for (auto f : features)
    for (std::size_t k = 0; k < d; ++k) e[k] += table[f][k];
  for (std::size_t a = 0; a < features.size(); ++a)
    for (std::size_t b = a + 1; b < features.size(); ++b)
      for (std::size_t k = 0; k < d; ++k) e[k] += table[features[a]][k] * table[features[b]][k];
  return e;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One scalar at a time; gates in row blocks i, f, o, g.
inline Mat lstm(const Mat& inputs, const Mat& W, const Mat& U, const Vec& bias) {
  const std::size_t d = U.front().size();
  Vec h(d, 0.0), c(d, 0.0);
  Mat out;
  for (const auto& x : inputs) {
    Vec pre(4 * d);
    for (std::size_t r = 0; r < 4 * d; ++r) {
      double s = bias[r];
      for (std::size_t j = 0; j < x.size(); ++j) s += W[r][j] * x[j];
      for (std::size_t j = 0; j < d; ++j) s += U[r][j] * h[j];
      pre[r] = s;
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double i = sigmoid(pre[k]);
      const double f = sigmoid(pre[d + k]);
      const double o = sigmoid(pre[2 * d + k]);
      const double g = std::tanh(pre[3 * d + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
    out.push_back(h);
  }
  return out;
}

// ---- co-retrieval ------------------------------------------------------------

struct NaiveRetrieval {
  std::vector<Index> user_items;
  std::vector<Index> anchor_items;
  std::vector<FeatureId> common;
  /// Matches before truncation, history order.
  std::vector<Index> user_matches;
  std::vector<Index> anchor_matches;
};

/// Scans the full history, keeps common-category items, then applies the
/// truncation rule by sorting on (depth within category, recency).
inline std::vector<Index> naive_side(const Catalog& catalog, const std::vector<Index>& history,
                                     const std::set<FeatureId>& common, std::size_t cap,
                                     std::vector<Index>& matches) {
  struct Match {
    std::size_t depth;
    std::size_t position;
    Index item;
  };
  std::map<FeatureId, std::size_t> seen;
  std::vector<Match> all;
  for (std::size_t pos = history.size(); pos-- > 0;) {
    const auto cat = catalog.item(history[pos]).category();
    if (!common.count(cat)) continue;
    all.push_back({seen[cat]++, pos, history[pos]});
  }
  for (std::size_t pos = 0; pos < history.size(); ++pos)
    if (common.count(catalog.item(history[pos]).category())) matches.push_back(history[pos]);
  std::sort(all.begin(), all.end(), [](const Match& a, const Match& b) {
    return a.depth != b.depth ? a.depth < b.depth : a.position > b.position;
  });
  if (all.size() > cap) all.resize(cap);
  std::sort(all.begin(), all.end(), [](const Match& a, const Match& b) { return a.position > b.position; });
  std::vector<Index> out;
  for (const auto& m : all) out.push_back(m.item);
  return out;
}

inline NaiveRetrieval naive_co_retrieve(const Catalog& catalog, Index user, Index anchor, std::size_t cap) {
  const auto& hu = catalog.user(user).browsed_items;
  const auto& ha = catalog.anchor(anchor).broadcast_items;
  std::set<FeatureId> cu, ca, common;
  for (auto i : hu) cu.insert(catalog.item(i).category());
  for (auto i : ha) ca.insert(catalog.item(i).category());
  std::set_intersection(cu.begin(), cu.end(), ca.begin(), ca.end(), std::inserter(common, common.end()));
  NaiveRetrieval r;
  r.common.assign(common.begin(), common.end());
  r.user_items = naive_side(catalog, hu, common, cap, r.user_matches);
  r.anchor_items = naive_side(catalog, ha, common, cap, r.anchor_matches);
  return r;
}

// ---- metrics -----------------------------------------------------------------

/// Every positive against every negative; ties count one half.
inline double pairwise_auc(const Vec& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// ---- whole model ---------------------------------------------------------------

/// Straight-line eval-mode recomputation of the model output for one pair.
inline double reference_forward(const Catalog& catalog, const ModelParams& p, const TrainConfig& config,
                                Index user, Index anchor) {
  const Mat tu = to_mat(p.pnn.user), ta = to_mat(p.pnn.anchor), ti = to_mat(p.pnn.item);
  const Mat W = to_mat(p.lstm.input_weights), U = to_mat(p.lstm.recurrent_weights);
  const Vec bias = to_vec(p.lstm.bias);
  const Vec wi = to_vec(p.attention.item_weights), wa = to_vec(p.attention.anchor_weights);
  const double bi = p.attention.item_bias[0], ba = p.attention.anchor_bias[0];
  const std::size_t d = p.dim();

  const auto& u = catalog.user(user);
  const auto& a = catalog.anchor(anchor);
  const Vec eu = pnn(tu, u.features);
  const Vec ea = pnn(ta, a.features);

  auto encode = [&](const std::vector<Index>& items) {
    Mat xs;
    for (auto i : items) xs.push_back(pnn(ti, catalog.item(i).features));
    return lstm(xs, W, U, bias);
  };
  Mat hu = encode(u.browsed_items);
  Mat ha = encode(a.broadcast_items);

  if (config.variant == Variant::with_co_retrieval) {
    const auto r = naive_co_retrieve(catalog, user, anchor, config.co_retrieval_k);
    auto keep = [&](const Mat& states, const std::vector<Index>& history, const std::vector<Index>& kept) {
      // Kept items as history positions, matched newest first, emitted oldest first.
      std::vector<std::size_t> positions;
      std::vector<bool> used(history.size(), false);
      for (auto item : kept) {
        for (std::size_t pos = history.size(); pos-- > 0;) {
          if (!used[pos] && history[pos] == item) {
            used[pos] = true;
            positions.push_back(pos);
            break;
          }
        }
      }
      std::sort(positions.begin(), positions.end());
      Mat out;
      for (auto pos : positions) out.push_back(states[pos]);
      return out;
    };
    hu = keep(hu, u.browsed_items, r.user_items);
    ha = keep(ha, a.broadcast_items, r.anchor_items);
    if (hu.empty() || ha.empty()) hu.clear(), ha.clear();
  }

  Vec x;
  for (std::size_t k = 0; k < d; ++k) x.push_back(eu[k] * ea[k]);
  const Vec yi = config.variant == Variant::no_item_aspect
                     ? Vec(d, 0.0)
                     : item_aspect(eu, hu, ea, ha, wi, bi, config.literal_product);
  Mat browsed;
  for (auto n : u.browsed_anchors) browsed.push_back(pnn(ta, catalog.anchor(n).features));
  const Vec ya = config.variant == Variant::no_anchor_aspect ? Vec(d, 0.0) : anchor_aspect(eu, browsed, ea, wa, ba);
  x.insert(x.end(), yi.begin(), yi.end());
  x.insert(x.end(), ya.begin(), ya.end());

  const Mat W1 = to_mat(p.mlp_hidden_weights);
  const Vec b1 = to_vec(p.mlp_hidden_bias);
  const Vec W2 = to_vec(p.mlp_output_weights);
  double logit = p.mlp_output_bias[0];
  for (std::size_t r = 0; r < d; ++r) {
    double h = b1[r];
    for (std::size_t c = 0; c < 3 * d; ++c) h += W1[r][c] * x[c];
    logit += W2[r] * std::max(0.0, h);
  }
  return sigmoid(logit);
}

/// Small catalog with histories of at most `max_history` items.
inline SyntheticData micro_data(std::uint64_t seed, std::size_t max_history = 3, std::size_t pairs = 8) {
  SyntheticSpec spec;
  spec.num_users = 5;
  spec.num_anchors = 4;
  spec.num_items = 12;
  spec.num_categories = 3;
  spec.num_pairs = pairs;
  spec.history_len_range = {0, max_history};
  spec.browsed_anchor_range = {0, 3};
  spec.signal_strength = 0.8;
  spec.seed = seed;
  return generate_synthetic(spec);
}

}  // namespace twins::oracle
