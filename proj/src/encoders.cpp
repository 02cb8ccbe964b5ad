#include "twins/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace twins {

std::vector<ActiveField> one_hot(std::span<const FeatureId> features) {
  std::vector<ActiveField> out;
  out.reserve(features.size());
  for (auto f : features) out.push_back({f, 1.0});
  return out;
}

const ad::Tensor& PnnEncoderParams::table(ObjectKind kind) const {
  switch (kind) {
    case ObjectKind::user: return user;
    case ObjectKind::anchor: return anchor;
    case ObjectKind::item: return item;
  }
  return item;
}

ad::Tensor pnn_encode(const ad::Tensor& table, std::span<const ActiveField> fields) {
  if (table.rank() != 2) throw ShapeError("pnn_encode: table must be [V,d], got " + ad::to_string(table.shape()));
  std::vector<ActiveField> active;
  for (const auto& f : fields) {
    if (f.field >= table.rows()) {
      throw ShapeError("pnn_encode: field " + std::to_string(f.field) + " out of range for table " +
                       ad::to_string(table.shape()));
    }
    if (f.value != 0.0) active.push_back(f);
  }
  if (active.empty()) return ad::Tensor::zeros({table.cols()});
  std::sort(active.begin(), active.end(), [](const ActiveField& a, const ActiveField& b) {
    return a.field != b.field ? a.field < b.field : a.value < b.value;
  });

  std::vector<ad::Tensor> v;
  v.reserve(active.size());
  for (const auto& f : active) v.push_back(ad::embedding_lookup(table, f.field));

  auto weighted = [](const ad::Tensor& t, double w) { return w == 1.0 ? t : ad::scale(t, w); };

  ad::Tensor e = weighted(v[0], active[0].value);
  for (std::size_t j = 1; j < v.size(); ++j) e = ad::add(e, weighted(v[j], active[j].value));
  for (std::size_t a = 0; a < v.size(); ++a) {
    for (std::size_t b = a + 1; b < v.size(); ++b) {
      e = ad::add(e, weighted(ad::mul(v[a], v[b]), active[a].value * active[b].value));
    }
  }
  return e;
}

ad::Tensor pnn_encode(ObjectKind kind, std::span<const ActiveField> fields, const PnnEncoderParams& params) {
  return pnn_encode(params.table(kind), fields);
}

namespace {

double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

ad::Tensor lstm_sequence(const ad::Tensor& inputs, const LstmParams& params) {
  const auto& W = params.input_weights;
  const auto& U = params.recurrent_weights;
  const auto& b = params.bias;
  const std::size_t d = U.cols();
  if (U.rank() != 2 || U.rows() != 4 * d) {
    throw ShapeError("lstm_sequence: recurrent weights must be [4d,d], got " + ad::to_string(U.shape()));
  }
  if (inputs.rank() != 2 || W.rank() != 2 || W.rows() != 4 * d || W.cols() != inputs.cols()) {
    throw ShapeError("lstm_sequence: shape mismatch " + ad::to_string(inputs.shape()) + " vs " +
                     ad::to_string(W.shape()));
  }
  if (b.rank() != 1 || b.size() != 4 * d) {
    throw ShapeError("lstm_sequence: bias must be [4d], got " + ad::to_string(b.shape()));
  }
  const std::size_t T = inputs.rows();
  const std::size_t n_in = inputs.cols();
  const auto X = inputs.data();
  const auto Wd = W.data();
  const auto Ud = U.data();
  const auto bd = b.data();

  // Per step: gates (i, f, o, g) and cell state, needed by the backward pass.
  auto gates = std::make_shared<std::vector<double>>(T * 4 * d);
  auto cells = std::make_shared<std::vector<double>>(T * d);
  std::vector<double> h(T * d);
  std::vector<double> z(4 * d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < 4 * d; ++r) {
      double s = bd[r];
      const double* wr = &Wd[r * n_in];
      const double* xt = &X[t * n_in];
      for (std::size_t k = 0; k < n_in; ++k) s += wr[k] * xt[k];
      if (t > 0) {
        const double* ur = &Ud[r * d];
        const double* hp = &h[(t - 1) * d];
        for (std::size_t k = 0; k < d; ++k) s += ur[k] * hp[k];
      }
      z[r] = s;
    }
    double* gt = &(*gates)[t * 4 * d];
    for (std::size_t k = 0; k < d; ++k) {
      const double ig = sigm(z[k]);
      const double fg = sigm(z[d + k]);
      const double og = sigm(z[2 * d + k]);
      const double cand = std::tanh(z[3 * d + k]);
      const double c_prev = t > 0 ? (*cells)[(t - 1) * d + k] : 0.0;
      const double c = fg * c_prev + ig * cand;
      gt[k] = ig;
      gt[d + k] = fg;
      gt[2 * d + k] = og;
      gt[3 * d + k] = cand;
      (*cells)[t * d + k] = c;
      h[t * d + k] = og * std::tanh(c);
    }
  }
  ad::Tensor out = ad::Tensor::matrix(T, d, std::move(h));

  ad::Tape* tape = ad::common_tape({&inputs, &W, &U, &b});
  if (!tape) return out;
  return tape->record(
      "lstm_sequence", out, {&inputs, &W, &U, &b},
      [inputs, W, U, b, out, gates, cells, T, d, n_in](std::span<const double> G, ad::Tape& tp) {
        auto gX = tp.grad_buffer(inputs);
        auto gW = tp.grad_buffer(W);
        auto gU = tp.grad_buffer(U);
        auto gb = tp.grad_buffer(b);
        const auto X = inputs.data();
        const auto Wd = W.data();
        const auto Ud = U.data();
        const auto H = out.data();
        std::vector<double> dh_next(d, 0.0), dc_next(d, 0.0), dz(4 * d);
        for (std::size_t t = T; t-- > 0;) {
          const double* gt = &(*gates)[t * 4 * d];
          for (std::size_t k = 0; k < d; ++k) {
            const double ig = gt[k], fg = gt[d + k], og = gt[2 * d + k], cand = gt[3 * d + k];
            const double c = (*cells)[t * d + k];
            const double c_prev = t > 0 ? (*cells)[(t - 1) * d + k] : 0.0;
            const double tc = std::tanh(c);
            const double dh = G[t * d + k] + dh_next[k];
            const double dc = dh * og * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * cand * ig * (1.0 - ig);
            dz[d + k] = dc * c_prev * fg * (1.0 - fg);
            dz[2 * d + k] = dh * tc * og * (1.0 - og);
            dz[3 * d + k] = dc * ig * (1.0 - cand * cand);
            dc_next[k] = dc * fg;
          }
          if (!gb.empty()) {
            for (std::size_t r = 0; r < 4 * d; ++r) gb[r] += dz[r];
          }
          if (!gW.empty()) {
            for (std::size_t r = 0; r < 4 * d; ++r)
              for (std::size_t k = 0; k < n_in; ++k) gW[r * n_in + k] += dz[r] * X[t * n_in + k];
          }
          if (!gX.empty()) {
            for (std::size_t r = 0; r < 4 * d; ++r)
              for (std::size_t k = 0; k < n_in; ++k) gX[t * n_in + k] += Wd[r * n_in + k] * dz[r];
          }
          std::fill(dh_next.begin(), dh_next.end(), 0.0);
          if (t > 0) {
            for (std::size_t r = 0; r < 4 * d; ++r) {
              const double* ur = &Ud[r * d];
              const double* hp = &H[(t - 1) * d];
              for (std::size_t k = 0; k < d; ++k) {
                if (!gU.empty()) gU[r * d + k] += dz[r] * hp[k];
                dh_next[k] += ur[k] * dz[r];
              }
            }
          }
        }
      });
}

EncodedSequence encode_sequence(std::span<const ad::Tensor> item_embeddings, const LstmParams& params) {
  if (item_embeddings.empty()) return {};
  return {lstm_sequence(ad::stack(item_embeddings), params)};
}

}  // namespace twins
