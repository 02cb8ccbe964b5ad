#pragma once

// Dense 64-bit tensors with a reverse-mode tape.
//
// A Tensor is an immutable value (shape + shared contiguous data). When it was
// produced on a Tape it also carries a node handle, and every op applied to it
// records a backward closure on that same Tape. Ops on untracked tensors only
// compute values, so inference and finite-difference probes run tape-free.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twins/error.hpp"

namespace twins::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

class Tensor {
 public:
  /// Scalar zero, shape [1].
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }
  bool is_scalar() const { return size() == 1; }

  std::span<const double> data() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;
  std::span<const double> row(std::size_t r) const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  /// Same value, no tape handle.
  Tensor detached() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Append-only record of one forward pass. Single-threaded; one per pass.
class Tape {
 public:
  /// Receives the gradient flowing into a node's output.
  using BackwardFn = std::function<void(std::span<const double> out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a gradient-tracked leaf holding `value`.
  Tensor variable(const Tensor& value);

  /// Reverse sweep from a scalar root produced on this tape. May run once.
  void backward(const Tensor& root);

  /// Accumulated gradient for a tracked tensor; zeros if it received none.
  std::vector<double> grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }

  /// Records an op output. `inputs` must already live on this tape (or be
  /// untracked); they are stored so the topological order can be asserted.
  Tensor record(const char* kind, Tensor output, std::initializer_list<const Tensor*> inputs,
                BackwardFn backward);
  Tensor record(const char* kind, Tensor output, std::span<const Tensor> inputs,
                BackwardFn backward);

  /// Gradient accumulator for `t`, allocated on first use. Only valid while
  /// backward() is running.
  std::span<double> grad_buffer(const Tensor& t);

 private:
  struct Node {
    const char* kind;
    std::size_t numel;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
  };

  Tensor attach(Tensor output, const char* kind, std::vector<std::size_t> inputs,
                BackwardFn backward);

  std::vector<Node> nodes_;
  bool swept_ = false;
};

/// The common tape of the given tensors, or nullptr if none is tracked.
/// Throws if tensors from two different tapes are mixed.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);
Tape* common_tape(std::span<const Tensor> inputs);

// Op kinds. Shape rules are stated per op; violations throw ShapeError naming
// the op and the offending shapes.

/// Same shapes.
Tensor add(const Tensor& a, const Tensor& b);
/// Same shapes; elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
/// Multiplies by a constant.
Tensor scale(const Tensor& a, double factor);
/// [m,k] x [k,n] -> [m,n]; [m,k] x [k] -> [m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same data under a new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);
/// Rank-1 inputs joined end to end.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// n rank-1 inputs of equal length d -> [n,d].
Tensor stack(std::span<const Tensor> rows);
/// Selected rows of a [m,d] matrix -> [k,d]; k >= 1, indices < m.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
/// Sum of all entries -> [1].
Tensor sum(const Tensor& a);
/// Rank-1 inputs of equal length -> [1].
Tensor dot(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
/// Rank-1 input; max-subtracted for stability.
Tensor softmax(const Tensor& a);
/// Row `index` of a [V,d] table -> [d].
Tensor embedding_lookup(const Tensor& table, std::size_t index);
/// Elementwise product with a fixed mask (entries 0 or 1/keep).
Tensor dropout_mask_apply(const Tensor& a, std::span<const double> mask);
/// Summed binary log loss of rank-1 predictions against {0,1} labels.
/// Predictions are clamped to [kProbClamp, 1 - kProbClamp] first.
Tensor log_loss(const Tensor& predictions, std::span<const double> labels);

inline constexpr double kProbClamp = 1e-7;

/// Inverted-dropout mask: each entry is 0 with probability 1 - keep,
/// otherwise 1 / keep.
template <typename Rng>
std::vector<double> make_dropout_mask(std::size_t n, double keep, Rng& rng) {
  std::vector<double> mask(n);
  for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace twins::ad
