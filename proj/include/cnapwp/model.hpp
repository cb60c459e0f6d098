#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cnapwp/preprocessing.hpp"
#include "cnapwp/tensor.hpp"

namespace cnapwp {

/// How prompt rows enter an attention layer.
enum class PromptMode {
  /// Rows are prepended to keys and values only; output length is unchanged.
  Prefix,
  /// Rows are prepended as extra input tokens; their outputs are dropped.
  Prompt,
};

struct ModelConfig {
  std::size_t max_len = 8;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double dropout = 0.1;
  /// Rows per prompt block (L_p).
  std::size_t prompt_len = 5;
  /// Layers receiving the G-Prompt / the E-Prompt (0-based).
  std::vector<std::size_t> g_layers{0};
  std::vector<std::size_t> e_layers{1};
  PromptMode mode = PromptMode::Prefix;
  /// Multiplier on the Xavier limit of backbone weights (layer 0 is
  /// additionally scaled by sqrt(width) since its inputs are one-hot).
  double init_gain = 2.0;
  /// Half-width of the uniform init of G-Prompt / E-Prompt entries.
  double g_init = 0.1;
  double e_init = 0.1;
  std::uint64_t seed = 1;
};

/// Key/value prefix rows for one layer, each [prompt_len x width].
struct PromptBlock {
  Parameter key;
  Parameter value;
};

/// Shared prompt: one block per entry of ModelConfig::g_layers.
struct GPrompt {
  std::vector<PromptBlock> blocks;
};

/// Expert prompts of one task: a task block and one block per bucket, each
/// with one entry per ModelConfig::e_layers.
struct EPromptSet {
  int task_id = 0;
  std::vector<PromptBlock> task;
  std::vector<std::vector<PromptBlock>> buckets;

  std::vector<PromptBlock>& bucket(int id) { return buckets.at(static_cast<std::size_t>(id - 1)); }
  const std::vector<PromptBlock>& bucket(int id) const {
    return buckets.at(static_cast<std::size_t>(id - 1));
  }
};

/// Prompts used by one forward pass. Null pointers disable that prompt.
struct PromptContext {
  GPrompt* g = nullptr;
  EPromptSet* e = nullptr;
  int bucket = 1;
};

struct AttentionLayer {
  Parameter weight;  // [width x 3*width]
  Parameter bias;    // [1 x 3*width]
};

/// Stacked linear + multi-head self-attention layers, a square dense layer
/// over the flattened sequence, and the classifier.
struct Backbone {
  std::size_t width = 0;  // token width d, a multiple of heads and >= |V|+1
  std::size_t vocab = 0;  // classifier outputs |V|
  /// 1/sqrt(head width) at initialization; kept when the width grows so
  /// that existing outputs do not move.
  double attention_scale = 1.0;
  std::vector<AttentionLayer> layers;
  Parameter dense_w;       // [T*d x T*d]
  Parameter dense_b;       // [1 x T*d]
  Parameter classifier_w;  // [T*d x |V|]
  Parameter classifier_b;  // [1 x |V|]

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct LayerCache {
  Matrix input;  // rows = queries (prompt rows included in Prompt mode)
  Matrix q;
  Matrix k;      // prompt rows first
  Matrix v;
  std::vector<Matrix> attention;  // per head [queries x keys]
  Matrix mask;                    // dropout scale per output entry, empty in eval
  std::size_t prompt_rows = 0;
  std::size_t output_rows = 0;
  std::vector<PromptBlock*> blocks;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix flat;    // [1 x T*d]
  Matrix hidden;  // dense output [1 x T*d]
  std::vector<double> probabilities;
  bool train_mode = false;
};

/// Width d for a vocabulary of `vocab` activities: |V|+1 rounded up to a
/// multiple of `heads`.
std::size_t token_width(std::size_t vocab, std::size_t heads);

/// keys' = [prompt_k ; keys], values' = [prompt_v ; values].
std::pair<Matrix, Matrix> attach_prefix(const Matrix& prompt_k, const Matrix& prompt_v,
                                        const Matrix& keys, const Matrix& values);

double cross_entropy(std::span<const double> probabilities, int target);

/// Index of the most probable class as a 1-based activity index (lowest
/// index wins ties); 0 for an empty distribution.
int argmax_activity(std::span<const double> probabilities);

class Model {
public:
  Model(const ModelConfig& config, std::size_t vocab);

  const ModelConfig& config() const noexcept { return config_; }
  Backbone& backbone() noexcept { return backbone_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  std::size_t width() const noexcept { return backbone_.width; }
  std::size_t vocab() const noexcept { return backbone_.vocab; }

  /// Fresh backbone from the configured seed (bit-identical each call).
  void reinitialize();

  /// Probabilities over |V| activities. Attention output length equals the
  /// prefix length in every layer.
  std::vector<double> forward(const EncodedSample& sample, const PromptContext& prompts,
                              bool train_mode, ForwardCache* cache = nullptr);

  /// Accumulates d(loss_scale * CE)/d(param) into every trainable parameter
  /// reached by the cached forward pass, prompts included.
  void backward(const ForwardCache& cache, int target, double loss_scale = 1.0);

  /// Zero-extends the classifier (and the token width if needed) of the
  /// backbone and of every given prompt so that outputs for existing
  /// classes are unchanged.
  void grow_vocabulary(std::size_t new_vocab, GPrompt* g, std::span<EPromptSet*> eprompts);

  GPrompt init_gprompt() const;
  EPromptSet init_eprompts(int task_id, std::size_t bucket_count) const;

  /// Sequence of per-layer attention output lengths of the last forward.
  static std::vector<std::size_t> output_lengths(const ForwardCache& cache);

private:
  Matrix layer_forward(std::size_t l, const Matrix& x, const PromptContext& prompts,
                       bool train_mode, LayerCache& lc);
  PromptBlock make_block(std::mt19937_64& rng, double range) const;
  std::vector<PromptBlock*> blocks_for_layer(std::size_t l, const PromptContext& prompts) const;

  ModelConfig config_;
  Backbone backbone_;
  std::mt19937_64 dropout_rng_;
};

/// value <- value - lr * grad for trainable parameters, then zero grads.
void sgd_step(std::span<Parameter* const> params, double lr);

/// Every parameter of a prompt set / G-Prompt.
std::vector<Parameter*> prompt_parameters(GPrompt& g);
std::vector<Parameter*> prompt_parameters(EPromptSet& e);

struct TrainItem {
  const EncodedSample* sample;
  EPromptSet* eprompt;  // may be null
};

/// Batches of one bucket.
struct TrainGroup {
  int bucket;
  std::vector<std::vector<TrainItem>> batches;
};

/// For each epoch, bucket group and batch: forward with (G, the sample's
/// task E-Prompt, that bucket's E-Prompt), mean cross-entropy, backward,
/// SGD step. Returns the mean loss of the final epoch (0 for no data).
double train_window(Model& model, GPrompt* g, std::span<const TrainGroup> groups,
                    std::size_t epochs, double lr);

/// Checkpoint with magic "CNAPWP1": named tensors with shape headers and
/// hex-float payloads.
void save_checkpoint(std::ostream& out, const Model& model, const GPrompt* g,
                     const std::map<int, EPromptSet>& eprompts);

struct Checkpoint {
  std::size_t width = 0;
  std::size_t vocab = 0;
  std::map<std::string, Matrix> tensors;
};
Checkpoint load_checkpoint(std::istream& in);

}  // namespace cnapwp
