#include "radep/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "radep/rng.hpp"

namespace radep {

static_assert(std::endian::native == std::endian::little,
              "model file I/O assumes a little-endian host");

namespace {

struct Trace {
  // activations[0] is the input; activations[l] the (masked) output of
  // hidden layer l. pre[l] is the pre-activation of layer l.
  std::vector<Vector> activations;
  std::vector<Vector> pre;
  std::vector<Vector> masks;
};

void check_dim(const Model& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw InputError("input has dimension " + std::to_string(x.size()) +
                     ", model expects " + std::to_string(model.input_dim()));
  }
}

void check_label(const Model& model, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes()) {
    throw InputError("class index " + std::to_string(y) + " outside [0, " +
                     std::to_string(model.num_classes()) + ")");
  }
}

void affine(const Layer& layer, std::span<const double> in, Vector& out) {
  out.assign(layer.out, 0.0);
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double* row = layer.weights.data() + o * layer.in;
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

// Dropout masks are drawn only when rng is non-null.
Trace run_forward(const Model& model, std::span<const double> x,
                  std::mt19937_64* rng) {
  const auto& layers = model.layers();
  Trace t;
  t.activations.reserve(layers.size());
  t.pre.resize(layers.size());
  t.masks.resize(layers.size());
  t.activations.emplace_back(x.begin(), x.end());
  const double p = model.dropout_rate();
  std::bernoulli_distribution keep(1.0 - p);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    affine(layers[l], t.activations.back(), t.pre[l]);
    if (l + 1 == layers.size()) break;
    Vector a(t.pre[l].size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::max(0.0, t.pre[l][i]);
    if (rng != nullptr && p > 0.0) {
      auto& mask = t.masks[l];
      mask.resize(a.size());
      const double scale = 1.0 / (1.0 - p);
      for (std::size_t i = 0; i < a.size(); ++i) {
        mask[i] = keep(*rng) ? scale : 0.0;
        a[i] *= mask[i];
      }
    }
    t.activations.push_back(std::move(a));
  }
  return t;
}

// Backpropagates d(objective)/d(logits). Fills parameter gradients when
// param_grad is non-null and returns d(objective)/d(input).
Vector run_backward(const Model& model, const Trace& t, Vector delta,
                    std::vector<Layer>* param_grad) {
  const auto& layers = model.layers();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    const Vector& input = t.activations[l];
    if (param_grad != nullptr) {
      Layer& g = (*param_grad)[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        g.bias[o] += delta[o];
        double* row = g.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) row[i] += delta[o] * input[i];
      }
    }
    Vector upstream(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* row = layer.weights.data() + o * layer.in;
      const double d = delta[o];
      if (d == 0.0) continue;
      for (std::size_t i = 0; i < layer.in; ++i) upstream[i] += row[i] * d;
    }
    if (l == 0) return upstream;
    const Vector& pre = t.pre[l - 1];
    const Vector& mask = t.masks[l - 1];
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      if (pre[i] <= 0.0) {
        upstream[i] = 0.0;
      } else if (!mask.empty()) {
        upstream[i] *= mask[i];
      }
    }
    delta = std::move(upstream);
  }
  return {};
}

std::vector<Layer> zero_like(const Model& model) {
  std::vector<Layer> g = model.layers();
  for (auto& layer : g) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return g;
}

double cross_entropy(std::span<const double> probs,
                     std::span<const double> target) {
  double total = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (target[k] != 0.0) {
      total -= target[k] * std::log(std::max(probs[k], kProbabilityFloor));
    }
  }
  return total;
}

}  // namespace

Model::Model(std::vector<std::size_t> layer_dims, double dropout_rate)
    : dims_(std::move(layer_dims)) {
  if (dims_.size() < 2) throw InputError("layer_dims needs at least input and output");
  for (std::size_t d : dims_) {
    if (d == 0) throw InputError("layer_dims entries must be positive");
  }
  set_dropout_rate(dropout_rate);
  layers_.reserve(dims_.size() - 1);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    Layer layer;
    layer.in = dims_[l];
    layer.out = dims_[l + 1];
    layer.weights.assign(layer.in * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    layers_.push_back(std::move(layer));
  }
}

Model Model::initialized(std::vector<std::size_t> layer_dims, double dropout_rate,
                         std::uint64_t seed) {
  Model model(std::move(layer_dims), dropout_rate);
  std::mt19937_64 rng(seed);
  for (auto& layer : model.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weights) w = dist(rng);
  }
  return model;
}

void Model::set_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InputError("dropout_rate must lie in [0,1)");
  dropout_rate_ = rate;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

Vector Model::logits(std::span<const double> x) const {
  check_dim(*this, x);
  Vector cur(x.begin(), x.end());
  Vector next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    affine(layers_[l], cur, next);
    if (l + 1 < layers_.size()) {
      for (double& v : next) v = std::max(0.0, v);
    }
    std::swap(cur, next);
  }
  return cur;
}

Vector Model::forward(std::span<const double> x) const { return softmax(logits(x)); }

int Model::predict(std::span<const double> x) const { return argmax(logits(x)); }

Vector softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - top);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

double loss(const Model& model, std::span<const double> x, int y) {
  check_label(model, y);
  const Vector p = model.forward(x);
  return -std::log(std::max(p[static_cast<std::size_t>(y)], kProbabilityFloor));
}

double soft_loss(const Model& model, std::span<const double> x,
                 std::span<const double> target) {
  if (target.size() != model.num_classes()) throw InputError("target has wrong length");
  return cross_entropy(model.forward(x), target);
}

Vector grad_input(const Model& model, std::span<const double> x, int y) {
  check_dim(model, x);
  check_label(model, y);
  Trace t = run_forward(model, x, nullptr);
  Vector delta = softmax(t.pre.back());
  delta[static_cast<std::size_t>(y)] -= 1.0;
  return run_backward(model, t, std::move(delta), nullptr);
}

std::vector<Layer> grad_parameters(const Model& model, std::span<const double> x,
                                   std::span<const double> target) {
  check_dim(model, x);
  if (target.size() != model.num_classes()) throw InputError("target has wrong length");
  Trace t = run_forward(model, x, nullptr);
  Vector delta = softmax(t.pre.back());
  for (std::size_t k = 0; k < delta.size(); ++k) delta[k] -= target[k];
  auto g = zero_like(model);
  run_backward(model, t, std::move(delta), &g);
  return g;
}

std::vector<Vector> logit_jacobian(const Model& model, std::span<const double> x) {
  check_dim(model, x);
  const Trace t = run_forward(model, x, nullptr);
  std::vector<Vector> rows;
  rows.reserve(model.num_classes());
  for (std::size_t k = 0; k < model.num_classes(); ++k) {
    Vector e(model.num_classes(), 0.0);
    e[k] = 1.0;
    rows.push_back(run_backward(model, t, std::move(e), nullptr));
  }
  return rows;
}

SgdTrainer::SgdTrainer(Model model, double learning_rate, std::size_t batch_size,
                       std::uint64_t seed)
    : model_(std::move(model)),
      learning_rate_(learning_rate),
      batch_size_(batch_size),
      rng_(seed) {
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
  if (batch_size == 0) throw InputError("batch_size must be positive");
}

double SgdTrainer::run_epoch(std::span<const SoftExample> samples) {
  if (samples.empty()) throw InputError("cannot train on an empty set");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);

  const bool stochastic = model_.dropout_rate() > 0.0;
  auto grad = zero_like(model_);
  double epoch_loss = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const std::size_t stop = std::min(order.size(), start + batch_size_);
    for (auto& layer : grad) {
      std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
      std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    for (std::size_t b = start; b < stop; ++b) {
      const SoftExample& s = samples[order[b]];
      check_dim(model_, s.x);
      Trace t = run_forward(model_, s.x, stochastic ? &rng_ : nullptr);
      Vector delta = softmax(t.pre.back());
      epoch_loss += cross_entropy(delta, s.target);
      for (std::size_t k = 0; k < delta.size(); ++k) delta[k] -= s.target[k];
      run_backward(model_, t, std::move(delta), &grad);
    }
    const double step = learning_rate_ / static_cast<double>(stop - start);
    auto& layers = model_.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = 0; i < layers[l].weights.size(); ++i) {
        layers[l].weights[i] -= step * grad[l].weights[i];
      }
      for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
        layers[l].bias[i] -= step * grad[l].bias[i];
      }
    }
  }
  return epoch_loss / static_cast<double>(samples.size());
}

std::vector<SoftExample> one_hot(const Split& examples, std::size_t classes) {
  std::vector<SoftExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    if (e.y < 0 || static_cast<std::size_t>(e.y) >= classes) {
      throw InputError("class index outside [0, K)");
    }
    SoftExample s{e.x, Vector(classes, 0.0)};
    s.target[static_cast<std::size_t>(e.y)] = 1.0;
    out.push_back(std::move(s));
  }
  return out;
}

double mean_loss(const Model& model, std::span<const SoftExample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += cross_entropy(model.forward(s.x), s.target);
  return total / static_cast<double>(samples.size());
}

TrainResult train_soft(Model model, std::span<const SoftExample> samples,
                       const TrainOptions& options) {
  if (samples.empty()) throw InputError("training split is empty");
  if (options.epochs < 0) throw InputError("epochs must be nonnegative");
  TrainResult result;
  result.loss_trace.push_back(mean_loss(model, samples));
  if (options.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  SgdTrainer trainer(std::move(model), options.learning_rate, options.batch_size,
                     options.seed);
  for (int e = 0; e < options.epochs; ++e) {
    trainer.run_epoch(samples);
    result.loss_trace.push_back(mean_loss(trainer.model(), samples));
  }
  result.model = trainer.release();
  return result;
}

TrainResult train(Model model, const Split& examples, const TrainOptions& options) {
  if (examples.empty()) throw InputError("training split is empty");
  const auto samples = one_hot(examples, model.num_classes());
  return train_soft(std::move(model), samples, options);
}

Vector forward_dropout(const Model& model, std::span<const double> x,
                       std::uint64_t seed) {
  check_dim(model, x);
  std::mt19937_64 rng(seed);
  const Trace t = run_forward(model, x, &rng);
  return softmax(t.pre.back());
}

McPrediction mc_dropout_predict(const Model& model, std::span<const double> x,
                                std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw InputError("mc_dropout_predict needs at least 2 samples");
  if (model.dropout_rate() == 0.0) return {model.forward(x), 0.0};

  const std::size_t k = model.num_classes();
  std::vector<Vector> draws;
  draws.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    draws.push_back(forward_dropout(model, x, derive_seed(seed, i)));
  }
  const double n = static_cast<double>(n_samples);
  McPrediction out;
  out.mean.assign(k, 0.0);
  for (const auto& d : draws) {
    for (std::size_t c = 0; c < k; ++c) out.mean[c] += d[c];
  }
  for (double& v : out.mean) v /= n;
  double sigma_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double ss = 0.0;
    for (const auto& d : draws) ss += (d[c] - out.mean[c]) * (d[c] - out.mean[c]);
    sigma_sum += std::sqrt(ss / n);
  }
  out.sigma = sigma_sum / static_cast<double>(k);
  const double total = std::accumulate(out.mean.begin(), out.mean.end(), 0.0);
  for (double& v : out.mean) v /= total;
  return out;
}

namespace {

constexpr char kModelMagic[8] = {'R', 'A', 'D', 'E', 'P', 'M', 'D', 'L'};

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError("model file truncated");
  }
  return value;
}

}  // namespace

void write_model(std::ostream& out, const Model& model) {
  out.write(kModelMagic, sizeof(kModelMagic));
  put(out, kModelFormatVersion);
  put(out, static_cast<std::uint32_t>(model.layer_dims().size()));
  for (std::size_t d : model.layer_dims()) put(out, static_cast<std::uint64_t>(d));
  put(out, model.dropout_rate());
  for (const auto& layer : model.layers()) {
    out.write(reinterpret_cast<const char*>(layer.weights.data()),
              static_cast<std::streamsize>(layer.weights.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(layer.bias.data()),
              static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
  }
  if (!out) throw FormatError("failed writing model");
}

Model read_model(std::istream& in) {
  char magic[sizeof(kModelMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      !std::equal(std::begin(magic), std::end(magic), std::begin(kModelMagic))) {
    throw FormatError("not a model file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in);
  if (count < 2 || count > 64) throw FormatError("implausible layer count");
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto d = get<std::uint64_t>(in);
    if (d == 0 || d > (1u << 24)) throw FormatError("implausible layer width");
    dims.push_back(static_cast<std::size_t>(d));
  }
  const auto dropout = get<double>(in);
  Model model(std::move(dims));
  try {
    model.set_dropout_rate(dropout);
  } catch (const InputError&) {
    throw FormatError("dropout rate out of range");
  }
  for (auto& layer : model.layers()) {
    for (double& w : layer.weights) w = get<double>(in);
    for (double& b : layer.bias) b = get<double>(in);
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_model(out, model);
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path.string());
  return read_model(in);
}

void validate_example(const LabeledExample& example, std::size_t dim,
                      std::size_t classes) {
  if (example.x.size() != dim) throw InputError("example has wrong dimension");
  if (example.y < 0 || static_cast<std::size_t>(example.y) >= classes) {
    throw InputError("example label outside [0, K)");
  }
  for (double v : example.x) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("feature outside [0,1]");
  }
}

std::vector<Vector> blob_centers(const BlobSpec& spec) {
  if (spec.dim == 0 || spec.classes == 0) throw InputError("blob spec needs dim, classes > 0");
  std::mt19937_64 rng(derive_seed(spec.seed, 0xb10b));
  std::uniform_real_distribution<double> u(spec.center_low, spec.center_high);
  std::vector<Vector> centers(spec.classes, Vector(spec.dim));
  for (auto& c : centers) {
    for (double& v : c) v = u(rng);
  }
  return centers;
}

Split sample_blobs(std::span<const Vector> centers, double spread,
                   std::size_t count, std::uint64_t seed) {
  if (centers.empty()) throw InputError("no blob centers");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  Split out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % centers.size();
    LabeledExample e{Vector(centers[c].size()), static_cast<int>(c)};
    for (std::size_t d = 0; d < e.x.size(); ++d) {
      e.x[d] = std::clamp(centers[c][d] + noise(rng), 0.0, 1.0);
    }
    out.push_back(std::move(e));
  }
  return out;
}

Split make_blobs(const BlobSpec& spec, std::size_t count) {
  const auto centers = blob_centers(spec);
  return sample_blobs(centers, spec.spread, count, derive_seed(spec.seed, count));
}

Split make_moons(std::size_t count, std::size_t dim, double noise,
                 std::uint64_t seed) {
  if (dim < 2) throw InputError("moons need at least two dimensions");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, noise);
  Split out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = angle(rng);
    double a = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double b = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    a += jitter(rng);
    b += jitter(rng);
    LabeledExample e{Vector(dim), label};
    e.x[0] = std::clamp((a + 1.5) / 4.0, 0.0, 1.0);
    e.x[1] = std::clamp((b + 1.0) / 2.5, 0.0, 1.0);
    for (std::size_t d = 2; d < dim; ++d) e.x[d] = unit(rng);
    out.push_back(std::move(e));
  }
  return out;
}

Split read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  Split out;
  std::string line;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> fields;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t end = line.find(',', pos);
      if (end == std::string::npos) end = line.size();
      std::string_view cell(line.data() + pos, end - pos);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.remove_suffix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": non-numeric field");
      }
      fields.push_back(v);
      pos = end + 1;
    }
    if (fields.size() < 2) throw FormatError("CSV row needs features and a label");
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": inconsistent column count");
    }
    const double label = fields.back();
    if (label != std::floor(label) || label < 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    fields.pop_back();
    out.push_back({std::move(fields), static_cast<int>(label)});
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const Split& examples) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  char buf[32];
  for (const auto& e : examples) {
    for (double v : e.x) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out.write(buf, ptr - buf);
      out.put(',');
    }
    out << e.y << '\n';
  }
}

}  // namespace radep
