#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "radep/errors.hpp"

namespace radep {

using Vector = std::vector<double>;

struct LabeledExample {
  Vector x;
  int y = 0;
};

/// Training example with a full target distribution. Soft-label extraction
/// trains substitutes on these; a one-hot target reproduces LabeledExample.
struct SoftExample {
  Vector x;
  Vector target;
};

using Split = std::vector<LabeledExample>;

struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  Split train;
  Split validation;
  Split test;
};

/// Dense layer, weights stored row-major as [out][in].
struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vector weights;
  Vector bias;

  double& w(std::size_t o, std::size_t i) { return weights[o * in + i]; }
  double w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }

  bool operator==(const Layer&) const = default;
};

/// Feedforward classifier: ReLU hidden layers, softmax head. layer_dims
/// lists the input dimension first and the class count last; two entries
/// give a plain linear (multinomial logistic) model.
class Model {
 public:
  Model() = default;
  /// Zero-initialized parameters.
  explicit Model(std::vector<std::size_t> layer_dims, double dropout_rate = 0.0);

  /// He-uniform weights, zero biases.
  static Model initialized(std::vector<std::size_t> layer_dims,
                           double dropout_rate, std::uint64_t seed);

  std::size_t input_dim() const { return dims_.front(); }
  std::size_t num_classes() const { return dims_.back(); }
  const std::vector<std::size_t>& layer_dims() const { return dims_; }
  double dropout_rate() const { return dropout_rate_; }
  void set_dropout_rate(double rate);

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  Vector logits(std::span<const double> x) const;
  Vector forward(std::span<const double> x) const;
  int predict(std::span<const double> x) const;

  bool operator==(const Model&) const = default;

 private:
  std::vector<std::size_t> dims_{1, 1};
  double dropout_rate_ = 0.0;
  std::vector<Layer> layers_;
};

Vector softmax(std::span<const double> logits);
int argmax(std::span<const double> values);

/// Probability floor applied before every logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

double loss(const Model& model, std::span<const double> x, int y);
/// Cross-entropy against a target distribution.
double soft_loss(const Model& model, std::span<const double> x,
                 std::span<const double> target);

Vector grad_input(const Model& model, std::span<const double> x, int y);

/// Parameter gradient laid out like Model::layers().
std::vector<Layer> grad_parameters(const Model& model,
                                   std::span<const double> x,
                                   std::span<const double> target);

/// Row k holds d logit_k / d x.
std::vector<Vector> logit_jacobian(const Model& model,
                                   std::span<const double> x);

struct TrainOptions {
  int epochs = 10;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  /// Entry 0 is the loss before training; entry e the mean loss after epoch e.
  Vector loss_trace;
};

/// Minibatch SGD on cross-entropy with a persistent shuffling stream, so
/// that running n epochs in k calls equals one call with n epochs.
class SgdTrainer {
 public:
  SgdTrainer(Model model, double learning_rate, std::size_t batch_size,
             std::uint64_t seed);

  /// Runs one epoch; returns the mean minibatch loss observed.
  double run_epoch(std::span<const SoftExample> samples);

  const Model& model() const { return model_; }
  Model release() { return std::move(model_); }

 private:
  Model model_;
  double learning_rate_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
};

std::vector<SoftExample> one_hot(const Split& examples, std::size_t classes);
double mean_loss(const Model& model, std::span<const SoftExample> samples);

TrainResult train(Model model, const Split& examples, const TrainOptions& options);
TrainResult train_soft(Model model, std::span<const SoftExample> samples,
                       const TrainOptions& options);

struct McPrediction {
  Vector mean;
  double sigma = 0.0;
};

/// Stochastic inference with dropout active on every hidden layer. sigma is
/// the across-class mean of the per-class population standard deviation.
McPrediction mc_dropout_predict(const Model& model, std::span<const double> x,
                                std::size_t n_samples, std::uint64_t seed);

/// Single dropout-on forward pass driven by an explicit mask seed.
Vector forward_dropout(const Model& model, std::span<const double> x,
                       std::uint64_t seed);

// Model file: "RADEPMDL" magic, u32 version, u32 layer count, u64 dims,
// f64 dropout, then per layer row-major weights followed by biases.
// Little-endian, IEEE-754 binary64.
inline constexpr std::uint32_t kModelFormatVersion = 1;

void write_model(std::ostream& out, const Model& model);
Model read_model(std::istream& in);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

void validate_example(const LabeledExample& example, std::size_t dim,
                      std::size_t classes);

struct BlobSpec {
  std::size_t dim = 2;
  std::size_t classes = 2;
  double spread = 0.1;
  double center_low = 0.25;
  double center_high = 0.75;
  std::uint64_t seed = 0;
};

/// Class centers drawn uniformly in [center_low, center_high]^dim.
std::vector<Vector> blob_centers(const BlobSpec& spec);
/// Balanced Gaussian draws around the centers, clipped to [0,1].
Split sample_blobs(std::span<const Vector> centers, double spread,
                   std::size_t count, std::uint64_t seed);
Split make_blobs(const BlobSpec& spec, std::size_t count);
/// Two interleaved half circles in the first two coordinates, uniform noise
/// in the remaining ones; rescaled into [0,1].
Split make_moons(std::size_t count, std::size_t dim, double noise,
                 std::uint64_t seed);

/// CSV rows: dim feature columns then an integer label.
Split read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const Split& examples);

}  // namespace radep
