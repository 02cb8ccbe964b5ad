#pragma once

// Static-feature product encoder and the recurrent item-sequence encoder.

#include <optional>
#include <span>
#include <vector>

#include "twins/data.hpp"
#include "twins/tensor.hpp"

namespace twins {

/// One active input field of an object: its feature id and value x^j.
/// Categorical features are one-hot, so `value` is 1 unless real-valued.
struct ActiveField {
  FeatureId field = 0;
  double value = 1.0;
};

std::vector<ActiveField> one_hot(std::span<const FeatureId> features);

/// Per-kind field embedding tables, each [V_kind, d].
struct PnnEncoderParams {
  ad::Tensor user;
  ad::Tensor anchor;
  ad::Tensor item;

  const ad::Tensor& table(ObjectKind kind) const;
};

/// e = sum_j x_j v_j + sum_{j'<j''} (v_j' . v_j'') x_j' x_j''
///
/// Fields are canonicalised by (field, value) before summation, so the result
/// does not depend on the order they are listed in. All-inactive input yields
/// the zero vector. Throws ShapeError when a field is outside the table.
ad::Tensor pnn_encode(const ad::Tensor& table, std::span<const ActiveField> fields);
ad::Tensor pnn_encode(ObjectKind kind, std::span<const ActiveField> fields,
                      const PnnEncoderParams& params);

/// Gate blocks are stacked row-wise in the order input, forget, output,
/// candidate.
struct LstmParams {
  ad::Tensor input_weights;      // [4d, d_in]
  ad::Tensor recurrent_weights;  // [4d, d]
  ad::Tensor bias;               // [4d]

  std::size_t hidden_size() const { return recurrent_weights.cols(); }
};

/// Hidden state at every position of an item sequence, oldest first.
struct EncodedSequence {
  std::optional<ad::Tensor> states;  // [T, d]; absent for an empty sequence

  std::size_t length() const { return states ? states->rows() : 0; }
  bool empty() const { return !states; }
};

/// Runs the LSTM over [T, d_in] inputs from a zero initial state and returns
/// every hidden state as a [T, d] matrix. Recorded as a single tape node
/// with an analytic backward pass through time.
ad::Tensor lstm_sequence(const ad::Tensor& inputs, const LstmParams& params);

EncodedSequence encode_sequence(std::span<const ad::Tensor> item_embeddings, const LstmParams& params);

}  // namespace twins
