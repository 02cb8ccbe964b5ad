#include "twins/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace twins {

namespace {

double dot_n(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

void require_vector(const char* op, const ad::Tensor& t, std::size_t d) {
  if (t.rank() != 1 || t.size() != d) {
    throw ShapeError(std::string(op) + ": expected a vector of length " + std::to_string(d) + ", got " +
                     ad::to_string(t.shape()));
  }
}

/// Max-subtracted softmax in place.
void softmax_inplace(std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += (l = std::exp(l - mx));
  for (auto& l : logits) l /= z;
}

}  // namespace

ad::Tensor embed_similarity(const ad::Tensor& e_u, const ad::Tensor& e_a) {
  if (e_u.rank() != 1 || e_u.shape() != e_a.shape()) {
    throw ShapeError("embed_similarity: length mismatch " + ad::to_string(e_u.shape()) + " vs " +
                     ad::to_string(e_a.shape()));
  }
  return ad::mul(e_u, e_a);
}

SvdppWeights SvdppWeights::normalized(std::size_t m, std::size_t n) {
  return {std::vector<double>(m, m ? 1.0 / std::sqrt(double(m)) : 0.0),
          std::vector<double>(n, n ? 1.0 / std::sqrt(double(n)) : 0.0)};
}

SvdppWeights SvdppWeights::classical(std::size_t m, std::size_t n) {
  return {std::vector<double>(m, m ? 1.0 / std::sqrt(double(m)) : 0.0), std::vector<double>(n, 0.0)};
}

namespace {

ad::Tensor enrich(const ad::Tensor& base, const EncodedSequence& states, const std::vector<double>& w,
                  const char* side) {
  if (states.empty()) return base;
  if (w.size() != states.length()) {
    throw ShapeError(std::string("svdpp_similarity: ") + side + " weights have " + std::to_string(w.size()) +
                     " entries for " + std::to_string(states.length()) + " states");
  }
  const std::size_t d = base.size();
  auto lambda = ad::Tensor::matrix(1, w.size(), w);
  return ad::add(base, ad::reshape(ad::matmul(lambda, *states.states), {d}));
}

}  // namespace

ad::Tensor svdpp_similarity(const ad::Tensor& e_u, const EncodedSequence& user_states, const ad::Tensor& e_a,
                            const EncodedSequence& anchor_states, const SvdppWeights& weights) {
  if (e_u.rank() != 1 || e_u.shape() != e_a.shape()) {
    throw ShapeError("svdpp_similarity: shape mismatch " + ad::to_string(e_u.shape()) + " vs " +
                     ad::to_string(e_a.shape()));
  }
  for (const auto* s : {&user_states, &anchor_states}) {
    if (!s->empty() && s->states->cols() != e_u.size()) {
      throw ShapeError("svdpp_similarity: states " + ad::to_string(s->states->shape()) +
                       " do not match embedding " + ad::to_string(e_u.shape()));
    }
  }
  return ad::dot(enrich(e_u, user_states, weights.user, "user"),
                 enrich(e_a, anchor_states, weights.anchor, "anchor"));
}

// Item aspect.
//
// With a shared weight vector the logit of pair (q, r) splits into
// c + s_user[q] + s_anchor[r], where c (the e_u, e_a and bias terms) is common
// to every pair and cancels in the softmax, so it is left out. Every pair's
// weight and product is still evaluated individually.
ad::Tensor item_aspect_interaction(const ad::Tensor& e_u, const EncodedSequence& user_states,
                                   const ad::Tensor& e_a, const EncodedSequence& anchor_states,
                                   const AttentionParams& params, const ItemAspectOptions& options) {
  const std::size_t d = e_u.size();
  require_vector("item_aspect_interaction", e_u, d);
  require_vector("item_aspect_interaction", e_a, d);
  require_vector("item_aspect_interaction", params.item_weights, 4 * d);
  require_vector("item_aspect_interaction", params.item_bias, 1);
  if (user_states.empty() || anchor_states.empty()) return ad::Tensor::zeros({d});
  const ad::Tensor& Hu = *user_states.states;
  const ad::Tensor& Ha = *anchor_states.states;
  if (Hu.cols() != d || Ha.cols() != d) {
    throw ShapeError("item_aspect_interaction: states " + ad::to_string(Hu.shape()) + " / " +
                     ad::to_string(Ha.shape()) + " do not match embedding length " + std::to_string(d));
  }
  const std::size_t M = Hu.rows(), N = Ha.rows();
  const bool literal = options.product == PairProduct::anchor_anchor;
  const double* w = params.item_weights.data().data();
  const double* hu = Hu.data().data();
  const double* ha = Ha.data().data();

  std::vector<double> su(M), sa(N);
  for (std::size_t q = 0; q < M; ++q) su[q] = dot_n(w + d, hu + q * d, d);
  for (std::size_t r = 0; r < N; ++r) sa[r] = dot_n(w + 3 * d, ha + r * d, d);

  // The joint softmax over su[q] + sa[r] is the product of the per-side
  // softmaxes.
  softmax_inplace(su);
  softmax_inplace(sa);
  auto alpha = std::make_shared<std::vector<double>>(M * N);
  for (std::size_t q = 0; q < M; ++q)
    for (std::size_t r = 0; r < N; ++r) (*alpha)[q * N + r] = su[q] * sa[r];
  if (options.stats) options.stats->item_pairs += M * N;

  std::vector<double> y(d, 0.0);
  for (std::size_t q = 0; q < M; ++q) {
    const double* left = literal ? nullptr : hu + q * d;
    for (std::size_t r = 0; r < N; ++r) {
      const double a = (*alpha)[q * N + r];
      const double* right = ha + r * d;
      const double* l = literal ? right : left;
      for (std::size_t k = 0; k < d; ++k) y[k] += a * l[k] * right[k];
    }
  }
  ad::Tensor out = ad::Tensor::vector(std::move(y));

  const auto& w_t = params.item_weights;
  ad::Tape* tape = ad::common_tape({&Hu, &Ha, &w_t});
  if (!tape) return out;
  return tape->record(
      "item_aspect_interaction", std::move(out), {&Hu, &Ha, &w_t},
      [Hu, Ha, w_t, alpha, M, N, d, literal](std::span<const double> g, ad::Tape& tp) {
        const double* w = w_t.data().data();
        const double* hu = Hu.data().data();
        const double* ha = Ha.data().data();
        const auto& A = *alpha;

        // d alpha_qr = g . product_qr ; d logit = alpha (d alpha - sum alpha d alpha)
        std::vector<double> dlogit(M * N);
        double mean = 0.0;
        for (std::size_t q = 0; q < M; ++q) {
          for (std::size_t r = 0; r < N; ++r) {
            const double* right = ha + r * d;
            const double* left = literal ? right : hu + q * d;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += g[k] * left[k] * right[k];
            dlogit[q * N + r] = s;
            mean += A[q * N + r] * s;
          }
        }
        std::vector<double> row_sum(M, 0.0), col_sum(N, 0.0);
        for (std::size_t q = 0; q < M; ++q)
          for (std::size_t r = 0; r < N; ++r) {
            double& dl = dlogit[q * N + r];
            dl = A[q * N + r] * (dl - mean);
            row_sum[q] += dl;
            col_sum[r] += dl;
          }

        if (auto gHu = tp.grad_buffer(Hu); !gHu.empty()) {
          for (std::size_t q = 0; q < M; ++q) {
            double* gq = &gHu[q * d];
            if (!literal) {
              for (std::size_t r = 0; r < N; ++r) {
                const double a = A[q * N + r];
                const double* right = ha + r * d;
                for (std::size_t k = 0; k < d; ++k) gq[k] += a * g[k] * right[k];
              }
            }
            for (std::size_t k = 0; k < d; ++k) gq[k] += w[d + k] * row_sum[q];
          }
        }
        if (auto gHa = tp.grad_buffer(Ha); !gHa.empty()) {
          for (std::size_t r = 0; r < N; ++r) {
            double* gr = &gHa[r * d];
            const double* right = ha + r * d;
            for (std::size_t q = 0; q < M; ++q) {
              const double a = A[q * N + r];
              if (literal) {
                for (std::size_t k = 0; k < d; ++k) gr[k] += 2.0 * a * g[k] * right[k];
              } else {
                const double* left = hu + q * d;
                for (std::size_t k = 0; k < d; ++k) gr[k] += a * g[k] * left[k];
              }
            }
            for (std::size_t k = 0; k < d; ++k) gr[k] += w[3 * d + k] * col_sum[r];
          }
        }
        if (auto gw = tp.grad_buffer(w_t); !gw.empty()) {
          for (std::size_t q = 0; q < M; ++q)
            for (std::size_t k = 0; k < d; ++k) gw[d + k] += row_sum[q] * hu[q * d + k];
          for (std::size_t r = 0; r < N; ++r)
            for (std::size_t k = 0; k < d; ++k) gw[3 * d + k] += col_sum[r] * ha[r * d + k];
        }
      });
}

ad::Tensor anchor_aspect_interaction(const ad::Tensor& e_u, std::span<const ad::Tensor> browsed,
                                     const ad::Tensor& e_target, const AttentionParams& params,
                                     InteractionStats* stats) {
  if (browsed.empty()) {
    require_vector("anchor_aspect_interaction", e_target, e_u.size());
    return ad::Tensor::zeros({e_u.size()});
  }
  return anchor_aspect_interaction(e_u, ad::stack(browsed), e_target, params, stats);
}

ad::Tensor anchor_aspect_interaction(const ad::Tensor& e_u, const ad::Tensor& browsed, const ad::Tensor& e_target,
                                     const AttentionParams& params, InteractionStats* stats) {
  const std::size_t d = e_u.size();
  require_vector("anchor_aspect_interaction", e_u, d);
  require_vector("anchor_aspect_interaction", e_target, d);
  require_vector("anchor_aspect_interaction", params.anchor_weights, 3 * d);
  require_vector("anchor_aspect_interaction", params.anchor_bias, 1);
  if (browsed.rank() != 2 || browsed.cols() != d) {
    throw ShapeError("anchor_aspect_interaction: browsed anchors " + ad::to_string(browsed.shape()) +
                     " do not match embedding length " + std::to_string(d));
  }
  const std::size_t K = browsed.rows();
  const double* w = params.anchor_weights.data().data();
  const double* E = browsed.data().data();
  const double* et = e_target.data().data();

  // Only the browsed-anchor term varies across the softmax.
  auto alpha = std::make_shared<std::vector<double>>(K);
  for (std::size_t k = 0; k < K; ++k) (*alpha)[k] = dot_n(w + d, E + k * d, d);
  softmax_inplace(*alpha);
  if (stats) stats->anchor_terms += K;

  std::vector<double> y(d, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < d; ++j) y[j] += (*alpha)[k] * E[k * d + j] * et[j];
  ad::Tensor out = ad::Tensor::vector(std::move(y));

  const auto& w_t = params.anchor_weights;
  ad::Tape* tape = ad::common_tape({&browsed, &e_target, &w_t});
  if (!tape) return out;
  return tape->record(
      "anchor_aspect_interaction", std::move(out), {&browsed, &e_target, &w_t},
      [browsed, e_target, w_t, alpha, K, d](std::span<const double> g, ad::Tape& tp) {
        const double* w = w_t.data().data();
        const double* E = browsed.data().data();
        const double* et = e_target.data().data();
        const auto& A = *alpha;
        std::vector<double> dl(K);
        double mean = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += g[j] * E[k * d + j] * et[j];
          dl[k] = s;
          mean += A[k] * s;
        }
        for (std::size_t k = 0; k < K; ++k) dl[k] = A[k] * (dl[k] - mean);
        if (auto gE = tp.grad_buffer(browsed); !gE.empty()) {
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < d; ++j) gE[k * d + j] += A[k] * g[j] * et[j] + w[d + j] * dl[k];
        }
        if (auto gt = tp.grad_buffer(e_target); !gt.empty()) {
          for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += A[k] * E[k * d + j];
            gt[j] += g[j] * s;
          }
        }
        if (auto gw = tp.grad_buffer(w_t); !gw.empty()) {
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < d; ++j) gw[d + j] += dl[k] * E[k * d + j];
        }
      });
}

}  // namespace twins
