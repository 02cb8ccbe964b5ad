#pragma once

// Cross-side interaction heads: embedding similarity, the SVD++-style
// baseline, item-aspect bi-attention and anchor-aspect attention.

#include <cstdint>
#include <span>
#include <vector>

#include "twins/encoders.hpp"
#include "twins/tensor.hpp"

namespace twins {

/// One shared weight/bias per aspect.
struct AttentionParams {
  ad::Tensor item_weights;    // [4d] over [e_u, h_user, e_a, h_anchor]
  ad::Tensor item_bias;       // [1]
  ad::Tensor anchor_weights;  // [3d] over [e_u, e_browsed, e_target]
  ad::Tensor anchor_bias;     // [1]
};

/// Counts attention terms evaluated; the item-aspect count is the pair budget.
struct InteractionStats {
  std::uint64_t item_pairs = 0;
  std::uint64_t anchor_terms = 0;
};

/// Which elementwise product each attended item pair contributes.
enum class PairProduct {
  user_anchor,    // h_user (.) h_anchor
  anchor_anchor,  // h_anchor (.) h_anchor, the product as literally printed
};

/// y_e = e_u (.) e_a.
ad::Tensor embed_similarity(const ad::Tensor& e_u, const ad::Tensor& e_a);

/// Per-history-entry scalar weights for the SVD++ head.
struct SvdppWeights {
  std::vector<double> user;    // lambda, one per user-side state
  std::vector<double> anchor;  // beta, one per anchor-side state

  /// lambda = 1/sqrt(M), beta = 1/sqrt(N) (zero-length sides get no weights).
  static SvdppWeights normalized(std::size_t m, std::size_t n);
  /// Classical SVD++: lambda = 1/sqrt(M), beta = 0.
  static SvdppWeights classical(std::size_t m, std::size_t n);
};

/// (e_u + sum lambda h_user)^T (e_a + sum beta h_anchor) -> [1].
ad::Tensor svdpp_similarity(const ad::Tensor& e_u, const EncodedSequence& user_states,
                            const ad::Tensor& e_a, const EncodedSequence& anchor_states,
                            const SvdppWeights& weights);

struct ItemAspectOptions {
  PairProduct product = PairProduct::user_anchor;
  InteractionStats* stats = nullptr;
};

/// Bi-attention over every (user item, anchor item) pair. Logits are
/// w^T [e_u, h_q', e_a, h_q''] + b, normalised by one softmax across all
/// M*N pairs; the output is the alpha-weighted sum of pair products.
/// Either side empty -> zero vector.
ad::Tensor item_aspect_interaction(const ad::Tensor& e_u, const EncodedSequence& user_states,
                                   const ad::Tensor& e_a, const EncodedSequence& anchor_states,
                                   const AttentionParams& params, const ItemAspectOptions& options = {});

/// Attention over the user's browsed anchors against the target anchor.
/// `browsed` is [K, d]; an empty list yields the zero vector.
ad::Tensor anchor_aspect_interaction(const ad::Tensor& e_u, std::span<const ad::Tensor> browsed,
                                     const ad::Tensor& e_target, const AttentionParams& params,
                                     InteractionStats* stats = nullptr);
ad::Tensor anchor_aspect_interaction(const ad::Tensor& e_u, const ad::Tensor& browsed,
                                     const ad::Tensor& e_target, const AttentionParams& params,
                                     InteractionStats* stats = nullptr);

}  // namespace twins
