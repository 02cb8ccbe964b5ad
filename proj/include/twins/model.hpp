#pragma once

// End-to-end two-side model: forward pass, log loss, mini-batch training with
// a geometric learning-rate schedule, and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twins/co_retrieval.hpp"
#include "twins/data.hpp"
#include "twins/encoders.hpp"
#include "twins/interaction.hpp"
#include "twins/rng.hpp"
#include "twins/tensor.hpp"

namespace twins {

enum class Variant { full, no_item_aspect, no_anchor_aspect, with_co_retrieval };
enum class OptimizerKind { sgd, adam };
enum class Mode { train, eval };

/// CLI spelling: full, no-item, no-anchor, co-retrieval.
std::string to_string(Variant v);
Variant parse_variant(std::string_view text);
std::string to_string(OptimizerKind o);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  Variant variant = Variant::full;
  double lr_start = 1e-2;
  double lr_end = 1e-6;
  std::size_t batch_size = 2000;
  double l2_weight = 4e-4;
  double dropout = 0.5;
  std::size_t dim = 64;
  std::size_t co_retrieval_k = 10;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Item-aspect pairs contribute h_anchor (.) h_anchor instead of
  /// h_user (.) h_anchor.
  bool literal_product = false;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double clip_norm = 10.0;
  /// Per-batch gradient workers; 1 keeps runs bitwise reproducible across
  /// machines.
  std::size_t threads = 1;

  /// Throws InputError on an inconsistent configuration.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Learning rate of a 0-based epoch: geometric from lr_start to lr_end over
/// config.epochs epochs.
double learning_rate(const TrainConfig& config, std::size_t epoch);

struct ModelParams {
  PnnEncoderParams pnn;
  LstmParams lstm;
  AttentionParams attention;
  ad::Tensor mlp_hidden_weights;  // [d, 3d]
  ad::Tensor mlp_hidden_bias;     // [d]
  ad::Tensor mlp_output_weights;  // [1, d]
  ad::Tensor mlp_output_bias;     // [1]

  /// Uniform(-1/sqrt(d), 1/sqrt(d)) for every tensor.
  static ModelParams init(const Catalog& catalog, std::size_t dim, std::uint64_t seed);
  static ModelParams init(std::size_t user_vocab, std::size_t anchor_vocab, std::size_t item_vocab,
                          std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return mlp_hidden_bias.size(); }

  /// Every trainable tensor with its stable name, in checkpoint order.
  std::vector<std::pair<std::string, ad::Tensor*>> named();
  std::vector<std::pair<std::string, const ad::Tensor*>> named() const;

  double squared_norm() const;
  bool operator==(const ModelParams& other) const;
};

/// Offline-built user and anchor KKV indices.
struct RetrievalIndices {
  KkvIndex user;
  KkvIndex anchor;

  static RetrievalIndices build(const Catalog& catalog);
};

/// Everything computed for one pair, kept for inspection.
struct PairOutputs {
  ad::Tensor probability;  // [1]
  ad::Tensor y_e, y_i, y_a;
  std::optional<RetrievedHistories> retrieved;
};

/// Evaluates the model for many pairs sharing one tape (or none). Encodings
/// of users, anchors, items and sequences are computed once per context.
class ForwardContext {
 public:
  /// With a tape, every parameter is registered as a tracked leaf; see
  /// leaves(). `indices` is required for the co-retrieval variant.
  ForwardContext(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                 ad::Tape* tape = nullptr, const RetrievalIndices* indices = nullptr);

  /// `dropout_seed` feeds the dropout mask in train mode.
  PairOutputs forward(Index user, Index anchor, Mode mode, std::uint64_t dropout_seed = 0);

  const ModelParams& leaves() const { return params_; }
  const InteractionStats& stats() const { return stats_; }
  /// Wall time spent in the item-aspect interaction (retrieval included).
  double item_interaction_seconds() const { return item_seconds_; }

 private:
  const ad::Tensor& user_embedding(Index u);
  const ad::Tensor& anchor_embedding(Index a);
  const ad::Tensor& item_embedding(Index i);
  const EncodedSequence& user_states(Index u);
  const EncodedSequence& anchor_states(Index a);
  EncodedSequence encode_items(std::span<const Index> items);

  const Catalog& catalog_;
  const TrainConfig& config_;
  const RetrievalIndices* indices_;
  ModelParams params_;
  std::unordered_map<Index, ad::Tensor> user_emb_, anchor_emb_, item_emb_;
  std::unordered_map<Index, EncodedSequence> user_seq_, anchor_seq_;
  InteractionStats stats_;
  double item_seconds_ = 0.0;
};

/// Probability for one pair by external ids. InputError on unknown ids.
double forward_pair(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                    ObjectId user_id, ObjectId anchor_id, Mode mode = Mode::eval,
                    const RetrievalIndices* indices = nullptr);

/// Eval-mode probabilities for every pair, in order.
struct PredictionRun {
  std::vector<double> scores;
  InteractionStats stats;
  double item_interaction_seconds = 0.0;
};
PredictionRun predict(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                      std::span<const LabeledPair> pairs, const RetrievalIndices* indices = nullptr);

/// Summed log loss -sum(y log p + (1-y) log(1-p)), p clamped to
/// [1e-7, 1-1e-7]. ShapeError when the lengths differ.
double batch_loss(std::span<const double> predictions, std::span<const double> labels);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  /// Mean per-sample data log loss over the epoch's batches.
  double train_loss = 0.0;
  std::optional<double> val_auc;
  std::optional<double> val_acc;
  std::optional<double> val_logloss;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> log;
};

/// Called after each epoch; used for progress output.
using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training. Throws NumericError naming the epoch and batch if the
/// loss or gradient becomes non-finite.
TrainResult train(const Catalog& catalog, const std::vector<LabeledPair>& train_pairs,
                  const std::vector<LabeledPair>& validation_pairs, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
TrainResult train(const Catalog& catalog, const std::vector<LabeledPair>& train_pairs,
                  const std::vector<LabeledPair>& validation_pairs, const TrainConfig& config,
                  ModelParams initial, const EpochCallback& on_epoch = {});

/// Data loss of a batch and its gradient for every parameter (named order),
/// without regularisation. Exposed for gradient checks.
struct BatchGradients {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};
BatchGradients batch_gradients(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                               std::span<const LabeledPair> batch, Mode mode, std::uint64_t dropout_stream,
                               const RetrievalIndices* indices = nullptr);
/// Same loss value computed tape-free.
double batch_data_loss(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                       std::span<const LabeledPair> batch, Mode mode, std::uint64_t dropout_stream,
                       const RetrievalIndices* indices = nullptr);

// ---- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// First line: JSON header {format, version, config, tensors:[{name, shape}]};
/// then every tensor as raw little-endian float64, in header order.
void save_checkpoint(std::ostream& out, const ModelParams& params, const TrainConfig& config);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const TrainConfig& config);

struct Checkpoint {
  ModelParams params;
  TrainConfig config;
};
/// FormatError on truncation, corruption or a version mismatch.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Header-only view of the config serialisation, shared with the CLI.
std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& json_text);

}  // namespace twins
