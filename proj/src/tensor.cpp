#include "twins/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace twins::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

[[noreturn]] void shape_error(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank1(const char* op, const Tensor& a) {
  if (a.rank() != 1) shape_error(op, "expected a vector, got " + to_string(a.shape()));
}

template <typename F>
Tensor unary_map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<const std::vector<double>>(std::move(data))) {
  if (shape_.empty()) throw ShapeError("tensor: empty shape");
  for (auto s : shape_) {
    if (s == 0) throw ShapeError("tensor: zero extent in " + to_string(shape_));
  }
  if (numel(shape_) != data_->size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " holds " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_->size()));
  }
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor " + to_string(shape_) + " is not a scalar");
  return (*data_)[0];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(*data_).subspan(r * c, c);
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  return t;
}

// ---- Tape ------------------------------------------------------------------

Tape* common_tape(std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.tracked()) continue;
    if (tape && tape != t.tape()) throw Error("tensors from different tapes mixed in one op");
    tape = t.tape();
  }
  return tape;
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const auto* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw Error("tensors from different tapes mixed in one op");
    tape = t->tape();
  }
  return tape;
}

Tensor Tape::attach(Tensor output, const char* kind, std::vector<std::size_t> inputs,
                    BackwardFn backward) {
  if (swept_) throw Error(std::string(kind) + ": tape already consumed by backward()");
  output.tape_ = this;
  output.node_ = nodes_.size();
  nodes_.push_back(Node{kind, output.size(), std::move(inputs), std::move(backward), {}});
  return output;
}

Tensor Tape::variable(const Tensor& value) {
  return attach(value.detached(), "variable", {}, nullptr);
}

Tensor Tape::record(const char* kind, Tensor output, std::initializer_list<const Tensor*> inputs,
                    BackwardFn backward) {
  std::vector<std::size_t> ids;
  for (const auto* t : inputs) {
    if (t->tracked()) ids.push_back(t->node());
  }
  if (ids.empty()) return output.detached();
  return attach(std::move(output), kind, std::move(ids), std::move(backward));
}

Tensor Tape::record(const char* kind, Tensor output, std::span<const Tensor> inputs,
                    BackwardFn backward) {
  std::vector<std::size_t> ids;
  for (const auto& t : inputs) {
    if (t.tracked()) ids.push_back(t.node());
  }
  if (ids.empty()) return output.detached();
  return attach(std::move(output), kind, std::move(ids), std::move(backward));
}

std::span<double> Tape::grad_buffer(const Tensor& t) {
  if (!t.tracked() || t.tape() != this) return {};
  auto& node = nodes_[t.node()];
  if (node.grad.empty()) node.grad.assign(node.numel, 0.0);
  return node.grad;
}

void Tape::backward(const Tensor& root) {
  if (!root.tracked() || root.tape() != this) throw Error("backward: root is not on this tape");
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + to_string(root.shape()));
  }
  if (swept_) throw Error("backward: tape already consumed");
  grad_buffer(root)[0] += 1.0;
  for (std::size_t i = root.node() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node.grad, *this);
  }
  swept_ = true;
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (!t.tracked() || t.tape() != this) throw Error("grad: tensor is not tracked on this tape");
  const auto& node = nodes_[t.node()];
  if (node.grad.empty()) return std::vector<double>(node.numel, 0.0);
  return node.grad;
}

// ---- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y(a.shape(), std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (!tape) return y;
  return tape->record("add", std::move(y), {&a, &b}, [a, b](std::span<const double> g, Tape& t) {
    for (const Tensor* x : {&a, &b}) {
      auto gx = t.grad_buffer(*x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("multiply_elementwise", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y(a.shape(), std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (!tape) return y;
  return tape->record("multiply_elementwise", std::move(y), {&a, &b},
                      [a, b](std::span<const double> g, Tape& t) {
                        // a and b may be the same node; both contributions add up.
                        if (auto ga = t.grad_buffer(a); !ga.empty()) {
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b[i];
                        }
                        if (auto gb = t.grad_buffer(b); !gb.empty()) {
                          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a[i];
                        }
                      });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor y = unary_map(a, [factor](double x) { return x * factor; });
  if (!a.tracked()) return y;
  return a.tape()->record("scale", std::move(y), {&a}, [a, factor](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() > 2 || a.shape()[1] != b.shape()[0]) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  }
  Shape shape = b.rank() == 2 ? Shape{m, n} : Shape{m};
  Tensor y(std::move(shape), std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (!tape) return y;
  return tape->record("matmul", std::move(y), {&a, &b},
                      [a, b, m, k, n](std::span<const double> g, Tape& t) {
                        auto A = a.data();
                        auto B = b.data();
                        if (auto ga = t.grad_buffer(a); !ga.empty()) {
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t p = 0; p < k; ++p) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                              ga[i * k + p] += s;
                            }
                        }
                        if (auto gb = t.grad_buffer(b); !gb.empty()) {
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t p = 0; p < k; ++p) {
                              const double aip = A[i * k + p];
                              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  Tensor y(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (!a.tracked()) return y;
  return a.tape()->record("reshape", std::move(y), {&a}, [a](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) shape_error("concat", "no inputs");
  std::vector<double> out;
  for (const auto& p : parts) {
    require_rank1("concat", p);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Tensor y = Tensor::vector(std::move(out));
  Tape* tape = common_tape(parts);
  if (!tape) return y;
  std::vector<Tensor> saved(parts.begin(), parts.end());
  return tape->record("concat", std::move(y), parts, [saved](std::span<const double> g, Tape& t) {
    std::size_t offset = 0;
    for (const auto& p : saved) {
      if (auto gp = t.grad_buffer(p); !gp.empty()) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.size();
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor stack(std::span<const Tensor> rows) {
  if (rows.empty()) shape_error("stack", "no inputs");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const auto& r : rows) {
    require_rank1("stack", r);
    if (r.size() != d) shape_error("stack", rows.front().shape(), r.shape());
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  Tensor y = Tensor::matrix(rows.size(), d, std::move(out));
  Tape* tape = common_tape(rows);
  if (!tape) return y;
  std::vector<Tensor> saved(rows.begin(), rows.end());
  return tape->record("stack", std::move(y), rows, [saved, d](std::span<const double> g, Tape& t) {
    for (std::size_t r = 0; r < saved.size(); ++r) {
      if (auto gr = t.grad_buffer(saved[r]); !gr.empty()) {
        for (std::size_t i = 0; i < d; ++i) gr[i] += g[r * d + i];
      }
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  if (a.rank() != 2) shape_error("gather_rows", "expected a matrix, got " + to_string(a.shape()));
  if (indices.empty()) shape_error("gather_rows", "no rows selected");
  const std::size_t d = a.cols();
  std::vector<double> out;
  out.reserve(indices.size() * d);
  for (auto r : indices) {
    if (r >= a.rows()) {
      shape_error("gather_rows", "row " + std::to_string(r) + " out of range for " + to_string(a.shape()));
    }
    auto src = a.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  Tensor y = Tensor::matrix(indices.size(), d, std::move(out));
  if (!a.tracked()) return y;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape()->record("gather_rows", std::move(y), {&a}, [a, idx, d](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t i = 0; i < d; ++i) ga[idx[k] * d + i] += g[k * d + i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  Tensor y = Tensor::scalar(s);
  if (!a.tracked()) return y;
  return a.tape()->record("sum", std::move(y), {&a}, [a](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (auto& x : ga) x += g[0];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  Tensor y = Tensor::scalar(s);
  Tape* tape = common_tape({&a, &b});
  if (!tape) return y;
  return tape->record("dot", std::move(y), {&a, &b}, [a, b](std::span<const double> g, Tape& t) {
    if (auto ga = t.grad_buffer(a); !ga.empty()) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * b[i];
    }
    if (auto gb = t.grad_buffer(b); !gb.empty()) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * a[i];
    }
  });
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  Tensor y = unary_map(a, stable_sigmoid);
  if (!a.tracked()) return y;
  return a.tape()->record("sigmoid", y, {&a}, [a, y](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor tanh(const Tensor& a) {
  Tensor y = unary_map(a, [](double x) { return std::tanh(x); });
  if (!a.tracked()) return y;
  return a.tape()->record("tanh", y, {&a}, [a, y](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor relu(const Tensor& a) {
  Tensor y = unary_map(a, [](double x) { return x > 0.0 ? x : 0.0; });
  if (!a.tracked()) return y;
  return a.tape()->record("relu", std::move(y), {&a}, [a](std::span<const double> g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
  });
}

Tensor softmax(const Tensor& a) {
  require_rank1("softmax", a);
  const double mx = *std::max_element(a.data().begin(), a.data().end());
  std::vector<double> out(a.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) z += (out[i] = std::exp(a[i] - mx));
  for (auto& v : out) v /= z;
  Tensor y = Tensor::vector(std::move(out));
  if (!a.tracked()) return y;
  return a.tape()->record("softmax", y, {&a}, [a, y](std::span<const double> g, Tape& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += y[i] * (g[i] - s);
  });
}

Tensor embedding_lookup(const Tensor& table, std::size_t index) {
  if (table.rank() != 2) {
    shape_error("embedding_lookup", "expected a [V,d] table, got " + to_string(table.shape()));
  }
  if (index >= table.rows()) {
    shape_error("embedding_lookup",
                "index " + std::to_string(index) + " out of range for " + to_string(table.shape()));
  }
  auto r = table.row(index);
  Tensor y = Tensor::vector(std::vector<double>(r.begin(), r.end()));
  if (!table.tracked()) return y;
  const std::size_t d = table.cols();
  return table.tape()->record("embedding_lookup", std::move(y), {&table},
                              [table, index, d](std::span<const double> g, Tape& t) {
                                auto gt = t.grad_buffer(table).subspan(index * d, d);
                                for (std::size_t i = 0; i < d; ++i) gt[i] += g[i];
                              });
}

Tensor dropout_mask_apply(const Tensor& a, std::span<const double> mask) {
  if (mask.size() != a.size()) shape_error("dropout_mask_apply", a.shape(), Shape{mask.size()});
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  Tensor y(a.shape(), std::move(out));
  if (!a.tracked()) return y;
  std::vector<double> m(mask.begin(), mask.end());
  return a.tape()->record("dropout_mask_apply", std::move(y), {&a},
                          [a, m = std::move(m)](std::span<const double> g, Tape& t) {
                            auto ga = t.grad_buffer(a);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * m[i];
                          });
}

Tensor log_loss(const Tensor& predictions, std::span<const double> labels) {
  require_rank1("log_loss", predictions);
  if (labels.size() != predictions.size()) {
    shape_error("log_loss", predictions.shape(), Shape{labels.size()});
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(predictions[i], kProbClamp, 1.0 - kProbClamp);
    loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  Tensor y = Tensor::scalar(loss);
  if (!predictions.tracked()) return y;
  std::vector<double> lab(labels.begin(), labels.end());
  return predictions.tape()->record(
      "log_loss", std::move(y), {&predictions},
      [predictions, lab = std::move(lab)](std::span<const double> g, Tape& t) {
        auto gp = t.grad_buffer(predictions);
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double p = predictions[i];
          if (p < kProbClamp || p > 1.0 - kProbClamp) continue;  // clamped: flat
          gp[i] += g[0] * (-lab[i] / p + (1.0 - lab[i]) / (1.0 - p));
        }
      });
}

}  // namespace twins::ad
