#pragma once

// Example preparation, the training loop, evaluation metrics, model
// checkpoints and the gradient-check entry point.

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "structkit/corpus.hpp"
#include "structkit/model.hpp"
#include "structkit/run_config.hpp"

namespace structkit::pipeline {

/// Vocabulary over the tokens of both sides of every record.
minilang::Vocabulary build_vocabulary(const std::vector<DatasetRecord>& records, std::size_t max_size = 512);

/// Encoder input and target labels for one record. Program sides carry full
/// structure; spec strings go through text mode. Dae records are corrupted
/// with the per-example generator of `index`.
model::Example prepare_example(const DatasetRecord& record, const minilang::Vocabulary& vocab, const RunConfig& cfg,
                               std::size_t index);
std::vector<model::Example> prepare_examples(const std::vector<DatasetRecord>& records,
                                             const minilang::Vocabulary& vocab, const RunConfig& cfg);

struct StepLog {
  int step = 0;
  model::LossBreakdown loss;  // batch means
};

class Trainer {
 public:
  Trainer(RunConfig cfg, minilang::Vocabulary vocab, std::vector<model::Example> examples);

  /// One optimizer step over the next batch. Throws NonFiniteLoss.
  StepLog step();

  int steps_done() const { return steps_done_; }
  const RunConfig& config() const { return cfg_; }
  const minilang::Vocabulary& vocab() const { return vocab_; }
  const model::StructModel& model() const { return model_; }
  model::StructModel& model() { return model_; }
  const std::vector<model::Example>& examples() const { return examples_; }

 private:
  std::size_t next_index();

  RunConfig cfg_;
  minilang::Vocabulary vocab_;
  std::vector<model::Example> examples_;
  model::StructModel model_;
  numkit::AdamW optim_;
  std::mt19937_64 order_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int steps_done_ = 0;
};

inline constexpr const char* kMetricsHeader = "step,lm_loss,app_loss,dfp_loss,total";

struct TrainOptions {
  std::string checkpoint_path;               // empty = no checkpoints
  std::string metrics_path;                  // empty = no CSV
  std::vector<model::Example> holdout;       // best exact match is kept at <checkpoint>.best
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::vector<StepLog> log;
  int best_step = -1;
  double best_exact_match = -1.0;
};

TrainResult train(Trainer& trainer, const TrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Checkpoints

void save_model(const std::string& path, const RunConfig& cfg, const minilang::Vocabulary& vocab,
                const model::StructModel& model, int step);

struct LoadedModel {
  RunConfig config;
  minilang::Vocabulary vocab;
  model::StructModel model;
  int step = 0;
};

LoadedModel load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Metrics

/// Average precision with tied scores grouped into one threshold:
/// sum over thresholds of (recall gain) * precision. 0 when there are no positives.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct AuxMetrics {
  double app_accuracy = 0.0;
  double dfp_average_precision = 0.0;
  double prevalence = 0.0;
  std::size_t app_terms = 0;
  std::size_t pairs = 0;
  std::size_t positives = 0;
};

/// Teacher-forced APP accuracy over (position, ancestor) terms and DFP AP over
/// all ordered pairs pooled across examples. Examples without structure are skipped.
AuxMetrics evaluate_auxiliary(const model::StructModel& model, std::span<const model::Example> examples);

struct GenerationMetrics {
  double token_accuracy = 0.0;     // teacher-forced argmax, <eos> position included
  double sequence_accuracy = 0.0;  // teacher-forced, whole sequence right
  double exact_match = 0.0;        // decoded tokens == target tokens
  double parse_rate = 0.0;         // decoded text accepted by the parser
  std::size_t examples = 0;
};

struct GenerationOutput {
  std::vector<int> tokens;
  std::string text;
  bool parses = false;
};

GenerationMetrics evaluate_generation(const model::StructModel& model, const minilang::Vocabulary& vocab,
                                      std::span<const model::Example> examples, const model::DecodeOptions& opts,
                                      std::vector<GenerationOutput>* outputs = nullptr);

std::string tokens_to_text(const minilang::Vocabulary& vocab, std::span<const int> ids);

// ---------------------------------------------------------------------------
// Gradient check

/// Named parameter group of a parameter ("E_type", "phi", "attention", ...).
std::string param_group(const std::string& name);

struct GroupError {
  std::string group;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

struct ModelGradCheck {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
};

/// Compares backprop against central differences for every parameter. The
/// optional hook sees the parameters after backprop and before comparison.
/// Throws GradCheckFailure naming the worst parameter when over tolerance.
ModelGradCheck gradcheck_model(model::StructModel& model, const model::Example& example,
                               const model::LossWeights& weights, const numkit::GradCheckOptions& opts,
                               const std::function<void(numkit::ParamStore&)>& after_backward = {});

/// The structured program used by the gradcheck command.
inline constexpr const char* kGradCheckProgram =
    "a = 1; b = a + 2; if (a < b) { c = b * a; } else { c = 3; } while (c < 9) { c = c + b; } return c;";

/// The shipped gradcheck model: d = 16, two heads, one layer on each side.
RunConfig gradcheck_config();

/// Tiny model (d <= 16, one layer each side) on kGradCheckProgram.
ModelGradCheck run_gradcheck(const RunConfig& cfg, const numkit::GradCheckOptions& opts);

}  // namespace structkit::pipeline
