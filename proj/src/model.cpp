#include "twins/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "twins/error.hpp"
#include "twins/metrics.hpp"

namespace twins {

using json = nlohmann::ordered_json;

// ---- config ----------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_item_aspect: return "no-item";
    case Variant::no_anchor_aspect: return "no-anchor";
    case Variant::with_co_retrieval: return "co-retrieval";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "full") return Variant::full;
  if (text == "no-item" || text == "no_item_aspect") return Variant::no_item_aspect;
  if (text == "no-anchor" || text == "no_anchor_aspect") return Variant::no_anchor_aspect;
  if (text == "co-retrieval" || text == "with_co_retrieval") return Variant::with_co_retrieval;
  throw InputError("unknown variant '" + std::string(text) + "' (full|no-item|no-anchor|co-retrieval)");
}

std::string to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw InputError("unknown optimizer '" + std::string(text) + "' (sgd|adam)");
}

void TrainConfig::validate() const {
  if (!(lr_start >= 0.0) || !(lr_end >= 0.0) || !std::isfinite(lr_start) || !std::isfinite(lr_end))
    throw InputError("learning rates must be finite and non-negative");
  if (lr_end > lr_start) throw InputError("lr_end must not exceed lr_start");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must lie in [0, 1)");
  if (dim == 0) throw InputError("dim must be positive");
  if (batch_size == 0) throw InputError("batch_size must be positive");
  if (co_retrieval_k == 0) throw InputError("co_retrieval_k must be positive");
  if (!(l2_weight >= 0.0) || !std::isfinite(l2_weight)) throw InputError("l2_weight must be finite and >= 0");
  if (!(clip_norm > 0.0)) throw InputError("clip_norm must be positive");
  if (threads == 0) throw InputError("threads must be positive");
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  if (config.epochs <= 1 || config.lr_start == 0.0) return config.lr_start;
  if (config.lr_end == 0.0) return epoch + 1 == config.epochs ? 0.0 : config.lr_start;
  const double ratio = std::pow(config.lr_end / config.lr_start, 1.0 / static_cast<double>(config.epochs - 1));
  return config.lr_start * std::pow(ratio, static_cast<double>(epoch));
}

// ---- parameters ------------------------------------------------------------

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor(std::move(shape), std::move(v));
}

}  // namespace

ModelParams ModelParams::init(const Catalog& catalog, std::size_t dim, std::uint64_t seed) {
  return init(catalog.vocab_size(ObjectKind::user), catalog.vocab_size(ObjectKind::anchor),
              catalog.vocab_size(ObjectKind::item), dim, seed);
}

ModelParams ModelParams::init(std::size_t user_vocab, std::size_t anchor_vocab, std::size_t item_vocab,
                              std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw InputError("dim must be positive");
  const std::size_t d = dim;
  ModelParams p;
  p.pnn.user = ad::Tensor::zeros({std::max<std::size_t>(user_vocab, 1), d});
  p.pnn.anchor = ad::Tensor::zeros({std::max<std::size_t>(anchor_vocab, 1), d});
  p.pnn.item = ad::Tensor::zeros({std::max<std::size_t>(item_vocab, 1), d});
  p.lstm.input_weights = ad::Tensor::zeros({4 * d, d});
  p.lstm.recurrent_weights = ad::Tensor::zeros({4 * d, d});
  p.lstm.bias = ad::Tensor::zeros({4 * d});
  p.attention.item_weights = ad::Tensor::zeros({4 * d});
  p.attention.item_bias = ad::Tensor::zeros({1});
  p.attention.anchor_weights = ad::Tensor::zeros({3 * d});
  p.attention.anchor_bias = ad::Tensor::zeros({1});
  p.mlp_hidden_weights = ad::Tensor::zeros({d, 3 * d});
  p.mlp_hidden_bias = ad::Tensor::zeros({d});
  p.mlp_output_weights = ad::Tensor::zeros({1, d});
  p.mlp_output_bias = ad::Tensor::zeros({1});

  Rng rng(stream_seed(seed, "init"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& [name, t] : p.named()) *t = uniform_tensor(t->shape(), bound, rng);
  return p;
}

std::vector<std::pair<std::string, ad::Tensor*>> ModelParams::named() {
  return {{"pnn.user", &pnn.user},
          {"pnn.anchor", &pnn.anchor},
          {"pnn.item", &pnn.item},
          {"lstm.input_weights", &lstm.input_weights},
          {"lstm.recurrent_weights", &lstm.recurrent_weights},
          {"lstm.bias", &lstm.bias},
          {"attention.item_weights", &attention.item_weights},
          {"attention.item_bias", &attention.item_bias},
          {"attention.anchor_weights", &attention.anchor_weights},
          {"attention.anchor_bias", &attention.anchor_bias},
          {"mlp.hidden_weights", &mlp_hidden_weights},
          {"mlp.hidden_bias", &mlp_hidden_bias},
          {"mlp.output_weights", &mlp_output_weights},
          {"mlp.output_bias", &mlp_output_bias}};
}

std::vector<std::pair<std::string, const ad::Tensor*>> ModelParams::named() const {
  auto mut = const_cast<ModelParams*>(this)->named();
  std::vector<std::pair<std::string, const ad::Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(std::move(n), t);
  return out;
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (const auto& [_, t] : named())
    for (double x : t->data()) s += x * x;
  return s;
}

bool ModelParams::operator==(const ModelParams& other) const {
  auto a = named();
  auto b = other.named();
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].second->shape() != b[k].second->shape()) return false;
    if (!std::equal(a[k].second->data().begin(), a[k].second->data().end(), b[k].second->data().begin()))
      return false;
  }
  return true;
}

RetrievalIndices RetrievalIndices::build(const Catalog& catalog) {
  return {KkvIndex::build(catalog, IndexSide::user), KkvIndex::build(catalog, IndexSide::anchor)};
}

// ---- forward ---------------------------------------------------------------

ForwardContext::ForwardContext(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                               ad::Tape* tape, const RetrievalIndices* indices)
    : catalog_(catalog), config_(config), indices_(indices), params_(params) {
  if (config.variant == Variant::with_co_retrieval && !indices) {
    throw InputError("co-retrieval variant needs retrieval indices");
  }
  if (tape) {
    for (auto& [_, t] : params_.named()) *t = tape->variable(*t);
  }
}

const ad::Tensor& ForwardContext::user_embedding(Index u) {
  if (auto it = user_emb_.find(u); it != user_emb_.end()) return it->second;
  auto fields = one_hot(catalog_.user(u).features);
  return user_emb_.emplace(u, pnn_encode(params_.pnn.user, fields)).first->second;
}

const ad::Tensor& ForwardContext::anchor_embedding(Index a) {
  if (auto it = anchor_emb_.find(a); it != anchor_emb_.end()) return it->second;
  auto fields = one_hot(catalog_.anchor(a).features);
  return anchor_emb_.emplace(a, pnn_encode(params_.pnn.anchor, fields)).first->second;
}

const ad::Tensor& ForwardContext::item_embedding(Index i) {
  if (auto it = item_emb_.find(i); it != item_emb_.end()) return it->second;
  auto fields = one_hot(catalog_.item(i).features);
  return item_emb_.emplace(i, pnn_encode(params_.pnn.item, fields)).first->second;
}

EncodedSequence ForwardContext::encode_items(std::span<const Index> items) {
  std::vector<ad::Tensor> embeddings;
  embeddings.reserve(items.size());
  for (auto i : items) embeddings.push_back(item_embedding(i));
  return encode_sequence(embeddings, params_.lstm);
}

const EncodedSequence& ForwardContext::user_states(Index u) {
  if (auto it = user_seq_.find(u); it != user_seq_.end()) return it->second;
  return user_seq_.emplace(u, encode_items(catalog_.user(u).browsed_items)).first->second;
}

const EncodedSequence& ForwardContext::anchor_states(Index a) {
  if (auto it = anchor_seq_.find(a); it != anchor_seq_.end()) return it->second;
  return anchor_seq_.emplace(a, encode_items(catalog_.anchor(a).broadcast_items)).first->second;
}

namespace {

/// Rows at the given history positions, in chronological order.
EncodedSequence select_states(const EncodedSequence& full, std::vector<std::uint32_t> positions) {
  std::sort(positions.begin(), positions.end());
  std::vector<std::size_t> rows(positions.begin(), positions.end());
  return {ad::gather_rows(*full.states, rows)};
}

}  // namespace

PairOutputs ForwardContext::forward(Index user, Index anchor, Mode mode, std::uint64_t dropout_seed) {
  const std::size_t d = params_.dim();
  const ad::Tensor e_u = user_embedding(user);
  const ad::Tensor e_a = anchor_embedding(anchor);

  PairOutputs out;
  out.y_e = embed_similarity(e_u, e_a);

  if (config_.variant == Variant::no_item_aspect) {
    out.y_i = ad::Tensor::zeros({d});
  } else {
    const EncodedSequence& us = user_states(user);
    const EncodedSequence& as = anchor_states(anchor);
    const ItemAspectOptions options{
        config_.literal_product ? PairProduct::anchor_anchor : PairProduct::user_anchor, &stats_};
    const auto t0 = std::chrono::steady_clock::now();
    if (config_.variant == Variant::with_co_retrieval) {
      auto retrieved = co_retrieve(indices_->user, indices_->anchor, user, anchor, config_.co_retrieval_k);
      if (retrieved.user_items.empty() || retrieved.anchor_items.empty()) {
        out.y_i = ad::Tensor::zeros({d});
      } else {
        out.y_i = item_aspect_interaction(e_u, select_states(us, retrieved.user_positions), e_a,
                                          select_states(as, retrieved.anchor_positions), params_.attention,
                                          options);
      }
      out.retrieved = std::move(retrieved);
    } else {
      out.y_i = item_aspect_interaction(e_u, us, e_a, as, params_.attention, options);
    }
    item_seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  if (config_.variant == Variant::no_anchor_aspect) {
    out.y_a = ad::Tensor::zeros({d});
  } else {
    const auto& browsed_ids = catalog_.user(user).browsed_anchors;
    std::vector<ad::Tensor> browsed;
    browsed.reserve(browsed_ids.size());
    for (auto n : browsed_ids) browsed.push_back(anchor_embedding(n));
    out.y_a = anchor_aspect_interaction(e_u, browsed, e_a, params_.attention, &stats_);
  }

  ad::Tensor x = ad::concat({out.y_e, out.y_i, out.y_a});
  if (mode == Mode::train && config_.dropout > 0.0) {
    Rng rng(dropout_seed);
    x = ad::dropout_mask_apply(x, ad::make_dropout_mask(x.size(), 1.0 - config_.dropout, rng));
  }
  ad::Tensor h = ad::relu(ad::add(ad::matmul(params_.mlp_hidden_weights, x), params_.mlp_hidden_bias));
  ad::Tensor logit = ad::add(ad::matmul(params_.mlp_output_weights, h), params_.mlp_output_bias);
  out.probability = ad::sigmoid(logit);
  return out;
}

double forward_pair(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                    ObjectId user_id, ObjectId anchor_id, Mode mode, const RetrievalIndices* indices) {
  const Index u = catalog.index_of(ObjectKind::user, user_id);
  const Index a = catalog.index_of(ObjectKind::anchor, anchor_id);
  std::optional<RetrievalIndices> local;
  if (config.variant == Variant::with_co_retrieval && !indices) {
    local = RetrievalIndices::build(catalog);
    indices = &*local;
  }
  ForwardContext ctx(catalog, params, config, nullptr, indices);
  return ctx.forward(u, a, mode).probability.item();
}

PredictionRun predict(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                      std::span<const LabeledPair> pairs, const RetrievalIndices* indices) {
  std::optional<RetrievalIndices> local;
  if (config.variant == Variant::with_co_retrieval && !indices) {
    local = RetrievalIndices::build(catalog);
    indices = &*local;
  }
  ForwardContext ctx(catalog, params, config, nullptr, indices);
  PredictionRun run;
  run.scores.reserve(pairs.size());
  for (const auto& p : pairs) run.scores.push_back(ctx.forward(p.user, p.anchor, Mode::eval).probability.item());
  run.stats = ctx.stats();
  run.item_interaction_seconds = ctx.item_interaction_seconds();
  return run;
}

double batch_loss(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("batch_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) return 0.0;
  return ad::log_loss(ad::Tensor::vector({predictions.begin(), predictions.end()}), labels).item();
}

// ---- gradients -------------------------------------------------------------

namespace {

std::uint64_t pair_dropout_seed(const TrainConfig& config, std::uint64_t stream, std::size_t pair) {
  return stream_seed(config.seed, "dropout", stream, pair);
}

BatchGradients chunk_gradients(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                               std::span<const LabeledPair> chunk, Mode mode, std::uint64_t dropout_stream,
                               std::size_t offset, const RetrievalIndices* indices) {
  ad::Tape tape;
  ForwardContext ctx(catalog, params, config, &tape, indices);
  std::vector<ad::Tensor> preds;
  std::vector<double> labels;
  preds.reserve(chunk.size());
  labels.reserve(chunk.size());
  for (std::size_t k = 0; k < chunk.size(); ++k) {
    const auto& p = chunk[k];
    preds.push_back(
        ctx.forward(p.user, p.anchor, mode, pair_dropout_seed(config, dropout_stream, offset + k)).probability);
    labels.push_back(static_cast<double>(p.label));
  }
  ad::Tensor loss = ad::log_loss(ad::concat(preds), labels);
  tape.backward(loss);

  BatchGradients out;
  out.loss = loss.item();
  for (const auto& [_, t] : ctx.leaves().named()) out.grads.push_back(tape.grad(*t));
  return out;
}

}  // namespace

BatchGradients batch_gradients(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                               std::span<const LabeledPair> batch, Mode mode, std::uint64_t dropout_stream,
                               const RetrievalIndices* indices) {
  if (batch.empty()) throw InputError("batch_gradients: empty batch");
  const std::size_t workers = std::min(config.threads, batch.size());
  if (workers <= 1) return chunk_gradients(catalog, params, config, batch, mode, dropout_stream, 0, indices);

  // Contiguous chunks; results are summed in chunk order.
  std::vector<BatchGradients> parts(workers);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  const std::size_t per = (batch.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(batch.size(), w * per);
    const std::size_t end = std::min(batch.size(), begin + per);
    pool.emplace_back([&, w, begin, end] {
      if (begin == end) return;
      try {
        parts[w] = chunk_gradients(catalog, params, config, batch.subspan(begin, end - begin), mode,
                                   dropout_stream, begin, indices);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchGradients total;
  for (auto& part : parts) {
    if (part.grads.empty()) continue;
    if (total.grads.empty()) {
      total = std::move(part);
      continue;
    }
    total.loss += part.loss;
    for (std::size_t k = 0; k < total.grads.size(); ++k)
      for (std::size_t i = 0; i < total.grads[k].size(); ++i) total.grads[k][i] += part.grads[k][i];
  }
  return total;
}

double batch_data_loss(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                       std::span<const LabeledPair> batch, Mode mode, std::uint64_t dropout_stream,
                       const RetrievalIndices* indices) {
  ForwardContext ctx(catalog, params, config, nullptr, indices);
  std::vector<double> preds, labels;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& p = batch[k];
    preds.push_back(
        ctx.forward(p.user, p.anchor, mode, pair_dropout_seed(config, dropout_stream, k)).probability.item());
    labels.push_back(static_cast<double>(p.label));
  }
  return batch_loss(preds, labels);
}

// ---- training --------------------------------------------------------------

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const ModelParams& params) : config_(config) {
    if (config.optimizer == OptimizerKind::adam) {
      for (const auto& [_, t] : params.named()) {
        m_.emplace_back(t->size(), 0.0);
        v_.emplace_back(t->size(), 0.0);
      }
    }
  }

  void step(ModelParams& params, const std::vector<std::vector<double>>& grads, double lr) {
    ++t_;
    auto named = params.named();
    for (std::size_t k = 0; k < named.size(); ++k) {
      ad::Tensor& param = *named[k].second;
      std::vector<double> next(param.data().begin(), param.data().end());
      const auto& g = grads[k];
      if (config_.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lr * g[i];
      } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < next.size(); ++i) {
          m[i] = b1 * m[i] + (1.0 - b1) * g[i];
          v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
          next[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
      }
      param = ad::Tensor(param.shape(), std::move(next));
    }
  }

 private:
  const TrainConfig& config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace

TrainResult train(const Catalog& catalog, const std::vector<LabeledPair>& train_pairs,
                  const std::vector<LabeledPair>& validation_pairs, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  return train(catalog, train_pairs, validation_pairs, config, ModelParams::init(catalog, config.dim, config.seed),
               on_epoch);
}

TrainResult train(const Catalog& catalog, const std::vector<LabeledPair>& train_pairs,
                  const std::vector<LabeledPair>& validation_pairs, const TrainConfig& config, ModelParams initial,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_pairs.empty()) throw InputError("train: empty training split");
  if (initial.dim() != config.dim) {
    throw InputError("train: initial parameters have dim " + std::to_string(initial.dim()) + ", config says " +
                     std::to_string(config.dim));
  }

  TrainResult result{std::move(initial), {}};
  ModelParams& params = result.params;
  std::optional<RetrievalIndices> indices;
  if (config.variant == Variant::with_co_retrieval) indices = RetrievalIndices::build(catalog);
  const RetrievalIndices* idx = indices ? &*indices : nullptr;
  Optimizer optimizer(config, params);

  std::vector<int> val_labels;
  for (const auto& p : validation_pairs) val_labels.push_back(p.label);

  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = learning_rate(config, epoch);
    std::vector<LabeledPair> order = train_pairs;
    Rng shuffle_rng(stream_seed(config.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index, ++step) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::span<const LabeledPair> batch(order.data() + begin, end - begin);
      BatchGradients bg = batch_gradients(catalog, params, config, batch, Mode::train, step, idx);
      if (!std::isfinite(bg.loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      loss_sum += bg.loss;

      auto named = params.named();
      double norm2 = 0.0;
      for (std::size_t k = 0; k < named.size(); ++k) {
        auto& g = bg.grads[k];
        const auto theta = named[k].second->data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += 2.0 * config.l2_weight * theta[i];
          norm2 += g[i] * g[i];
        }
      }
      if (!std::isfinite(norm2)) {
        throw NumericError("training diverged: non-finite gradient at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      const double norm = std::sqrt(norm2);
      if (norm > config.clip_norm) {
        const double s = config.clip_norm / norm;
        for (auto& g : bg.grads)
          for (auto& x : g) x *= s;
      }
      optimizer.step(params, bg.grads, lr);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    if (!validation_pairs.empty()) {
      const auto run = predict(catalog, params, config, validation_pairs, idx);
      m.val_auc = compute_auc(run.scores, val_labels);
      m.val_acc = compute_acc(run.scores, val_labels);
      m.val_logloss = compute_logloss(run.scores, val_labels);
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "twins-checkpoint";

json config_json(const TrainConfig& c) {
  json j;
  j["variant"] = to_string(c.variant);
  j["lr_start"] = c.lr_start;
  j["lr_end"] = c.lr_end;
  j["batch_size"] = c.batch_size;
  j["l2_weight"] = c.l2_weight;
  j["dropout"] = c.dropout;
  j["dim"] = c.dim;
  j["co_retrieval_k"] = c.co_retrieval_k;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["literal_product"] = c.literal_product;
  j["optimizer"] = to_string(c.optimizer);
  j["clip_norm"] = c.clip_norm;
  j["threads"] = c.threads;
  return j;
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.lr_start = j.at("lr_start").get<double>();
  c.lr_end = j.at("lr_end").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.l2_weight = j.at("l2_weight").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.dim = j.at("dim").get<std::size_t>();
  c.co_retrieval_k = j.at("co_retrieval_k").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.literal_product = j.at("literal_product").get<bool>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.clip_norm = j.at("clip_norm").get<double>();
  c.threads = j.at("threads").get<std::size_t>();
  return c;
}

void put_f64(std::ostream& out, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return config_json(config).dump(); }

TrainConfig config_from_json(const std::string& json_text) {
  try {
    return config_from(json::parse(json_text));
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

void save_checkpoint(std::ostream& out, const ModelParams& params, const TrainConfig& config) {
  json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  header["config"] = config_json(config);
  json tensors = json::array();
  for (const auto& [name, t] : params.named()) {
    json e;
    e["name"] = name;
    e["shape"] = t->shape();
    tensors.push_back(e);
  }
  header["tensors"] = tensors;
  out << header.dump() << '\n';
  for (const auto& [_, t] : params.named())
    for (double x : t->data()) put_f64(out, x);
  if (!out) throw FormatError("checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const TrainConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  save_checkpoint(out, params, config);
}

Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception&) {
    throw FormatError("checkpoint: header is not valid JSON");
  }
  if (!header.is_object() || header.value("format", "") != kCheckpointFormat) {
    throw FormatError("checkpoint: not a twins checkpoint");
  }
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " does not match supported version " +
                      std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  try {
    ck.config = config_from(header.at("config"));
    ck.config.validate();
    ck.params = ModelParams::init(1, 1, 1, ck.config.dim, 0);
    auto named = ck.params.named();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size()) throw FormatError("checkpoint: unexpected tensor count");
    for (std::size_t k = 0; k < named.size(); ++k) {
      const auto name = tensors[k].at("name").get<std::string>();
      if (name != named[k].first) {
        throw FormatError("checkpoint: expected tensor " + named[k].first + ", found " + name);
      }
      auto shape = tensors[k].at("shape").get<ad::Shape>();
      const std::size_t n = ad::numel(shape);
      std::vector<double> data(n);
      for (auto& x : data) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint: truncated tensor data in " + name);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= std::uint64_t{b[i]} << (8 * i);
        std::memcpy(&x, &bits, 8);
      }
      *named[k].second = ad::Tensor(std::move(shape), std::move(data));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace twins
