#include "maskbench/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "maskbench/error.hpp"
#include "maskbench/parallel.hpp"
#include "maskbench/pit.hpp"
#include "maskbench/random.hpp"

namespace maskbench {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double relu(double x) { return x > 0.0 ? x : 0.0; }

double signed_log1p(double x) { return std::copysign(std::log1p(std::abs(x)), x); }

std::vector<std::size_t> layer_fan_ins(const EstimatorConfig& c) {
  std::vector<std::size_t> dims = {c.window_dim()};
  dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  return dims;
}

// Per-layer activations kept for backprop.
struct Trace {
  MatrixXd fused;    // D x T, after the input transform
  MatrixXd raw;      // D x T, before the input transform
  MatrixXd window;   // (2c+1)D x T
  std::vector<MatrixXd> pre;   // pre-activations for every layer incl. output
  std::vector<MatrixXd> post;  // relu(pre)
};

MatrixXd gather_context(const MatrixXd& fused, std::size_t context) {
  const auto d = fused.rows();
  const auto t_count = fused.cols();
  const auto c = static_cast<Eigen::Index>(context);
  MatrixXd window((2 * c + 1) * d, t_count);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (Eigen::Index o = -c; o <= c; ++o) {
      const Eigen::Index src = std::clamp<Eigen::Index>(t + o, 0, t_count - 1);
      window.block((o + c) * d, t, d, 1) = fused.col(src);
    }
  }
  return window;
}

MatrixXd apply_transform(const MatrixXd& raw, InputTransform transform) {
  if (transform == InputTransform::none) return raw;
  return raw.unaryExpr([](double x) { return signed_log1p(x); });
}

Trace run_forward(const EstimatorParams& params, const MatrixXd& raw_fused) {
  const auto& cfg = params.config;
  require(raw_fused.rows() == static_cast<Eigen::Index>(cfg.input_dim) && raw_fused.cols() >= 1,
          ErrorKind::shape,
          "forward: fused features have " + std::to_string(raw_fused.rows()) +
              " dims, config expects " + std::to_string(cfg.input_dim));
  Trace tr;
  tr.raw = raw_fused;
  tr.fused = apply_transform(raw_fused, cfg.input_transform);
  tr.window = gather_context(tr.fused, cfg.context);
  const MatrixXd* input = &tr.window;
  for (const auto& layer : params.layers) {
    tr.pre.push_back((layer.weight * *input).colwise() + layer.bias);
    tr.post.push_back(tr.pre.back().unaryExpr([](double x) { return relu(x); }));
    input = &tr.post.back();
  }
  return tr;
}

MaskSet to_mask_set(const MatrixXd& output, const EstimatorConfig& cfg) {
  const auto frames = static_cast<std::size_t>(output.cols());
  MaskSet masks(cfg.sources, frames, cfg.bins);
  for (std::size_t s = 0; s < cfg.sources; ++s)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t f = 0; f < cfg.bins; ++f)
        masks.at(s, t, f) = output(static_cast<Eigen::Index>(s * cfg.bins + f),
                                   static_cast<Eigen::Index>(t));
  return masks;
}

std::vector<double> effective_weights(const EstimatorParams& params) {
  if (params.config.fixed_layer) {
    std::vector<double> w(params.config.layers, 0.0);
    w[*params.config.fixed_layer] = 1.0;
    return w;
  }
  return params.fusion.weights();
}

MatrixXd fuse_with(const FeatureStack& stack, const std::vector<double>& weights) {
  require(weights.size() == stack.layers, ErrorKind::shape,
          "fuse: stack has " + std::to_string(stack.layers) + " layers, fusion has " +
              std::to_string(weights.size()));
  MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(stack.dims),
                                static_cast<Eigen::Index>(stack.frames));
  for (std::size_t k = 0; k < stack.layers; ++k) {
    if (weights[k] == 0.0) continue;
    for (std::size_t t = 0; t < stack.frames; ++t) {
      const float* row = stack.frame(k, t);
      for (std::size_t d = 0; d < stack.dims; ++d)
        out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t)) += weights[k] * row[d];
    }
  }
  return out;
}

}  // namespace

std::vector<double> FusionWeights::weights() const {
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += w[i] = std::exp(logits[i] - top);
  for (double& v : w) v /= sum;
  return w;
}

void EstimatorConfig::validate() const {
  require(layers >= 1 && input_dim >= 1 && sources >= 1 && bins >= 1, ErrorKind::config,
          "estimator config needs K, D, S, F >= 1");
  for (std::size_t h : hidden_dims)
    require(h >= 1, ErrorKind::config, "hidden dims must be >= 1");
  require(!fixed_layer || *fixed_layer < layers, ErrorKind::config,
          "fixed_layer is out of range");
  require(chunk_frames >= 1, ErrorKind::config, "chunk_frames must be >= 1");
  require(mask_ceiling > 0.0, ErrorKind::config, "mask_ceiling must be positive");
  stft.validate();
  require(stft.bins() == bins, ErrorKind::config,
          "estimator bins do not match the STFT grid (" + std::to_string(bins) + " vs " +
              std::to_string(stft.bins()) + ")");
}

ParamTensors ParamTensors::zeros_like(const EstimatorConfig& config) {
  ParamTensors out;
  out.fusion.assign(config.layers, 0.0);
  const auto fan_in = layer_fan_ins(config);
  std::vector<std::size_t> fan_out(config.hidden_dims);
  fan_out.push_back(config.output_dim());
  for (std::size_t l = 0; l < fan_out.size(); ++l) {
    out.layers.push_back({MatrixXd::Zero(static_cast<Eigen::Index>(fan_out[l]),
                                         static_cast<Eigen::Index>(fan_in[l])),
                          VectorXd::Zero(static_cast<Eigen::Index>(fan_out[l]))});
  }
  return out;
}

ParamTensors& ParamTensors::operator+=(const ParamTensors& other) {
  for (std::size_t i = 0; i < fusion.size(); ++i) fusion[i] += other.fusion[i];
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

ParamTensors& ParamTensors::operator*=(double scale) {
  for (double& v : fusion) v *= scale;
  for (auto& layer : layers) {
    layer.weight *= scale;
    layer.bias *= scale;
  }
  return *this;
}

bool EstimatorParams::all_finite() const {
  for (double v : fusion.logits)
    if (!std::isfinite(v)) return false;
  for (const auto& layer : layers)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

EstimatorParams init_params(const EstimatorConfig& config) {
  config.validate();
  EstimatorParams params;
  params.config = config;
  params.fusion.logits.assign(config.layers, 0.0);
  params.adam_m = ParamTensors::zeros_like(config);
  params.adam_v = ParamTensors::zeros_like(config);
  params.layers = ParamTensors::zeros_like(config).layers;
  Rng rng(config.seed);
  for (auto& layer : params.layers) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    // Filled row by row so the draw order does not depend on Eigen's storage order.
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        layer.weight(r, c) = rng.uniform(-limit, limit);
  }
  return params;
}

MatrixXd fuse(const FeatureStack& stack, const FusionWeights& fusion) {
  return fuse_with(stack, fusion.weights());
}

MatrixXd fuse_input(const EstimatorParams& params, const FeatureStack& stack) {
  return fuse_with(stack, effective_weights(params));
}

MaskSet forward(const EstimatorParams& params, const MatrixXd& fused) {
  const Trace tr = run_forward(params, fused);
  return to_mask_set(tr.post.back(), params.config);
}

MaskSet predict(const EstimatorParams& params, const FeatureStack& stack) {
  return forward(params, fuse_input(params, stack));
}

LossAndGrad loss_and_grad(const EstimatorParams& params, const FeatureStack& stack,
                          const MaskSet& target) {
  const auto& cfg = params.config;
  const std::vector<double> weights = effective_weights(params);
  const Trace tr = run_forward(params, fuse_with(stack, weights));
  require(tr.post.back().allFinite(), ErrorKind::divergence, "non-finite estimator output");
  const MaskSet predicted = to_mask_set(tr.post.back(), cfg);
  require(target.sources == cfg.sources && target.frames == predicted.frames &&
              target.bins == cfg.bins,
          ErrorKind::shape, "loss_and_grad: target shape does not match the prediction");

  PitLoss pit = pit_mask_loss(predicted, target);
  LossAndGrad out;
  out.loss = pit.loss;
  out.permutation = pit.permutation;
  out.gradients = ParamTensors::zeros_like(cfg);

  // d loss / d output, laid out like the output matrix (S*F x T).
  const auto frames = static_cast<Eigen::Index>(predicted.frames);
  const double scale = 2.0 / static_cast<double>(cfg.sources * predicted.plane());
  MatrixXd grad(static_cast<Eigen::Index>(cfg.output_dim()), frames);
  for (std::size_t s = 0; s < cfg.sources; ++s)
    for (Eigen::Index t = 0; t < frames; ++t)
      for (std::size_t f = 0; f < cfg.bins; ++f) {
        const auto ut = static_cast<std::size_t>(t);
        grad(static_cast<Eigen::Index>(s * cfg.bins + f), t) =
            scale * (predicted.at(s, ut, f) - target.at(pit.permutation[s], ut, f));
      }

  // With one layer or a frozen choice the fusion gradient is identically zero, so the
  // (large) input-side product of the first layer is skipped.
  const bool fusion_trainable = !cfg.fixed_layer && cfg.layers > 1;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    grad = grad.cwiseProduct(tr.pre[l].unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; }));
    const MatrixXd& input = l == 0 ? tr.window : tr.post[l - 1];
    out.gradients.layers[l].weight.noalias() = grad * input.transpose();
    out.gradients.layers[l].bias = grad.rowwise().sum();
    if (l > 0 || fusion_trainable) grad = params.layers[l].weight.transpose() * grad;
  }

  if (!fusion_trainable) return out;

  // Scatter the context-window gradient back onto fused frames.
  const auto d = static_cast<Eigen::Index>(cfg.input_dim);
  const auto c = static_cast<Eigen::Index>(cfg.context);
  MatrixXd grad_fused = MatrixXd::Zero(d, frames);
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index o = -c; o <= c; ++o)
      grad_fused.col(std::clamp<Eigen::Index>(t + o, 0, frames - 1)) +=
          grad.block((o + c) * d, t, d, 1);
  if (cfg.input_transform == InputTransform::log1p)
    grad_fused = grad_fused.cwiseQuotient(tr.raw.unaryExpr([](double x) { return 1.0 + std::abs(x); }));

  // d loss / d w_k, then through the softmax.
  std::vector<double> grad_w(stack.layers, 0.0);
  for (std::size_t k = 0; k < stack.layers; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t < stack.frames; ++t) {
      const float* row = stack.frame(k, t);
      for (std::size_t j = 0; j < stack.dims; ++j)
        acc += grad_fused(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) * row[j];
    }
    grad_w[k] = acc;
  }
  double mean = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) mean += weights[k] * grad_w[k];
  for (std::size_t k = 0; k < weights.size(); ++k)
    out.gradients.fusion[k] = weights[k] * (grad_w[k] - mean);
  return out;
}

namespace {

struct Chunk {
  std::size_t example;
  std::size_t begin;
  std::size_t frames;
};

FeatureStack slice_frames(const FeatureStack& stack, std::size_t begin, std::size_t count) {
  if (begin == 0 && count == stack.frames) return stack;
  FeatureStack out(stack.layers, count, stack.dims, stack.stride_samples, stack.sample_rate);
  out.layer_names = stack.layer_names;
  for (std::size_t k = 0; k < stack.layers; ++k)
    std::copy_n(stack.frame(k, begin), count * stack.dims, &out.at(k, 0, 0));
  return out;
}

MaskSet slice_frames(const MaskSet& masks, std::size_t begin, std::size_t count) {
  if (begin == 0 && count == masks.frames) return masks;
  MaskSet out(masks.sources, count, masks.bins);
  for (std::size_t s = 0; s < masks.sources; ++s)
    std::copy_n(&masks.values[(s * masks.frames + begin) * masks.bins], count * masks.bins,
                &out.at(s, 0, 0));
  return out;
}

// Index into the epoch-by-epoch shuffled chunk stream; stateless so resumes line up.
std::size_t chunk_at(std::uint64_t position, std::size_t chunk_count, std::uint64_t seed,
                     std::vector<std::size_t>& order, std::uint64_t& cached_epoch) {
  const std::uint64_t epoch = position / chunk_count;
  if (order.size() != chunk_count || epoch != cached_epoch) {
    order.resize(chunk_count);
    for (std::size_t i = 0; i < chunk_count; ++i) order[i] = i;
    Rng rng(derive_seed(seed, epoch));
    for (std::size_t i = chunk_count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    cached_epoch = epoch;
  }
  return order[position % chunk_count];
}

void adam_update(double* param, const double* grad, double* m, double* v, Eigen::Index n,
                 const TrainOptions& opt, double correction1, double correction2) {
  Eigen::Map<Eigen::ArrayXd> p(param, n), mm(m, n), vv(v, n);
  const Eigen::Map<const Eigen::ArrayXd> g(grad, n);
  mm = opt.beta1 * mm + (1.0 - opt.beta1) * g;
  vv = opt.beta2 * vv + (1.0 - opt.beta2) * g * g;
  p -= opt.learning_rate * (mm / correction1) / ((vv / correction2).sqrt() + opt.epsilon);
}

void adam_step(EstimatorParams& params, const ParamTensors& grads, const TrainOptions& opt) {
  params.step += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(params.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(params.step));
  if (!params.config.fixed_layer) {
    adam_update(params.fusion.logits.data(), grads.fusion.data(), params.adam_m.fusion.data(),
                params.adam_v.fusion.data(), static_cast<Eigen::Index>(grads.fusion.size()), opt,
                c1, c2);
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    auto& m = params.adam_m.layers[l];
    auto& v = params.adam_v.layers[l];
    const auto& g = grads.layers[l];
    adam_update(layer.weight.data(), g.weight.data(), m.weight.data(), v.weight.data(),
                layer.weight.size(), opt, c1, c2);
    adam_update(layer.bias.data(), g.bias.data(), m.bias.data(), v.bias.data(), layer.bias.size(),
                opt, c1, c2);
  }
}

}  // namespace

TrainResult train(const std::vector<TrainingExample>& data, const EstimatorParams& initial,
                  const TrainOptions& options) {
  require(!data.empty(), ErrorKind::config, "train: empty training set");
  require(options.batch_size >= 1, ErrorKind::config, "train: batch_size must be >= 1");
  require(options.learning_rate > 0.0, ErrorKind::config, "train: learning rate must be positive");
  const auto& cfg = initial.config;
  cfg.validate();

  std::vector<Chunk> chunks;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    require(ex.features.frames == ex.target.frames, ErrorKind::shape,
            "train: features and target of '" + ex.id + "' have different frame counts");
    require(ex.features.layers == cfg.layers && ex.features.dims == cfg.input_dim,
            ErrorKind::shape, "train: features of '" + ex.id + "' do not match the config");
    for (std::size_t b = 0; b < ex.target.frames; b += cfg.chunk_frames)
      chunks.push_back({i, b, std::min(cfg.chunk_frames, ex.target.frames - b)});
  }
  std::vector<FeatureStack> chunk_features(chunks.size());
  std::vector<MaskSet> chunk_targets(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& ch = chunks[i];
    chunk_features[i] = slice_frames(data[ch.example].features, ch.begin, ch.frames);
    chunk_targets[i] = slice_frames(data[ch.example].target, ch.begin, ch.frames);
  }

  TrainResult result;
  EstimatorParams params = initial;
  std::vector<std::size_t> order;
  std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();

  const auto evaluate_dev = [&](TrainLogEntry& entry) {
    if (!options.dev_metric) return;
    const double metric = options.dev_metric(params);
    entry.dev_metric = metric;
    if (!result.best_dev_metric || metric > *result.best_dev_metric) {
      result.best_dev_metric = metric;
      result.best = params;
      result.best_step = params.step;
    }
  };

  for (std::size_t s = 0; s < options.steps; ++s) {
    std::vector<std::size_t> batch(options.batch_size);
    for (std::size_t b = 0; b < options.batch_size; ++b)
      batch[b] = chunk_at(params.step * options.batch_size + b, chunks.size(), cfg.seed, order,
                          cached_epoch);

    std::vector<LossAndGrad> parts(batch.size());
    parallel_for(batch.size(), options.workers, [&](std::size_t b) {
      parts[b] = loss_and_grad(params, chunk_features[batch[b]], chunk_targets[batch[b]]);
    });
    ParamTensors total = ParamTensors::zeros_like(cfg);
    double loss = 0.0;
    for (const auto& part : parts) {
      total += part.gradients;
      loss += part.loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    total *= inv;
    loss *= inv;
    if (!std::isfinite(loss))
      throw Error(ErrorKind::divergence, "non-finite training loss at step " +
                                             std::to_string(params.step + 1));
    adam_step(params, total, options);
    if (!params.all_finite())
      throw Error(ErrorKind::divergence,
                  "non-finite parameters after step " + std::to_string(params.step));

    TrainLogEntry entry{params.step, loss, std::nullopt};
    const bool last = s + 1 == options.steps;
    if (last || (options.dev_every > 0 && params.step % options.dev_every == 0))
      evaluate_dev(entry);
    result.log.push_back(entry);
  }

  result.last = params;
  if (!result.best_dev_metric) {
    result.best = params;
    result.best_step = params.step;
  }
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string());
  out.precision(9);
  out << "step,train_loss,dev_metric\n";
  for (const auto& e : log) {
    out << e.step << ',' << e.train_loss << ',';
    if (e.dev_metric) out << *e.dev_metric;
    out << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i32(std::int32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void bytes_raw(const char* p, std::size_t n) { raw(p, n); }
  void tensor(const double* data, std::size_t rows, std::size_t cols) {
    u32(static_cast<std::uint32_t>(rows));
    u32(static_cast<std::uint32_t>(cols));
    for (std::size_t i = 0; i < rows * cols; ++i) f32(static_cast<float>(data[i]));
  }
  const std::string& bytes() const { return bytes_; }

 private:
  // Little-endian host assumed (x86-64 / aarch64).
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  void tensor(double* data, std::size_t rows, std::size_t cols, const char* what) {
    const std::uint32_t r = u32(), c = u32();
    require(r == rows && c == cols, ErrorKind::corruption,
            std::string("checkpoint tensor ") + what + " has unexpected shape");
    for (std::size_t i = 0; i < rows * cols; ++i) data[i] = get<float>();
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  template <typename T>
  T get() {
    require(pos_ + sizeof(T) <= bytes_.size(), ErrorKind::corruption, "checkpoint truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

// Weight matrices are written row-major regardless of Eigen's storage order.
void write_tensors(Writer& w, const std::vector<double>& fusion,
                   const std::vector<DenseLayer>& layers) {
  w.tensor(fusion.data(), 1, fusion.size());
  for (const auto& layer : layers) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weight;
    w.tensor(rm.data(), static_cast<std::size_t>(rm.rows()), static_cast<std::size_t>(rm.cols()));
    w.tensor(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()), 1);
  }
}

void read_tensors(Reader& r, std::vector<double>& fusion, std::vector<DenseLayer>& layers) {
  r.tensor(fusion.data(), 1, fusion.size(), "fusion");
  for (auto& layer : layers) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(layer.weight.rows(),
                                                                              layer.weight.cols());
    r.tensor(rm.data(), static_cast<std::size_t>(rm.rows()), static_cast<std::size_t>(rm.cols()),
             "weight");
    layer.weight = rm;
    r.tensor(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()), 1, "bias");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EstimatorParams& params) {
  const auto& c = params.config;
  c.validate();
  Writer w;
  w.bytes_raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.context));
  w.u32(static_cast<std::uint32_t>(c.hidden_dims.size()));
  for (std::size_t h : c.hidden_dims) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(c.layers));
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.sources));
  w.u32(static_cast<std::uint32_t>(c.bins));
  w.u64(c.seed);
  w.i32(c.fixed_layer ? static_cast<std::int32_t>(*c.fixed_layer) : -1);
  w.u32(static_cast<std::uint32_t>(c.input_transform));
  w.u32(static_cast<std::uint32_t>(c.chunk_frames));
  w.f64(c.mask_ceiling);
  w.u32(static_cast<std::uint32_t>(c.stft.frame_size));
  w.u32(static_cast<std::uint32_t>(c.stft.hop));
  w.u32(static_cast<std::uint32_t>(c.stft.fft_size));
  w.u32(static_cast<std::uint32_t>(c.stft.window));
  w.u64(params.step);
  write_tensors(w, params.fusion.logits, params.layers);
  write_tensors(w, params.adam_m.fusion, params.adam_m.layers);
  write_tensors(w, params.adam_v.fusion, params.adam_v.layers);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path.string());
}

EstimatorParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 8 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0,
          ErrorKind::format, path.string() + ": not a checkpoint");
  Reader r(std::move(bytes));
  r.u32();  // magic
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::format,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));

  EstimatorConfig c;
  c.context = r.u32();
  const std::uint32_t hidden = r.u32();
  require(hidden < 64, ErrorKind::corruption, "implausible hidden layer count");
  c.hidden_dims.resize(hidden);
  for (auto& h : c.hidden_dims) h = r.u32();
  c.layers = r.u32();
  c.input_dim = r.u32();
  c.sources = r.u32();
  c.bins = r.u32();
  c.seed = r.u64();
  const std::int32_t fixed = r.i32();
  if (fixed >= 0) c.fixed_layer = static_cast<std::size_t>(fixed);
  const std::uint32_t transform = r.u32();
  require(transform <= static_cast<std::uint32_t>(InputTransform::log1p), ErrorKind::corruption,
          "unknown input transform");
  c.input_transform = static_cast<InputTransform>(transform);
  c.chunk_frames = r.u32();
  c.mask_ceiling = r.f64();
  c.stft.frame_size = r.u32();
  c.stft.hop = r.u32();
  c.stft.fft_size = r.u32();
  const std::uint32_t window = r.u32();
  require(window <= static_cast<std::uint32_t>(WindowKind::rect), ErrorKind::corruption,
          "unknown window kind");
  c.stft.window = static_cast<WindowKind>(window);
  c.validate();

  EstimatorParams params;
  params.config = c;
  params.step = r.u64();
  params.fusion.logits.assign(c.layers, 0.0);
  params.layers = ParamTensors::zeros_like(c).layers;
  params.adam_m = ParamTensors::zeros_like(c);
  params.adam_v = ParamTensors::zeros_like(c);
  read_tensors(r, params.fusion.logits, params.layers);
  read_tensors(r, params.adam_m.fusion, params.adam_m.layers);
  read_tensors(r, params.adam_v.fusion, params.adam_v.layers);
  require(r.done(), ErrorKind::corruption, path.string() + ": trailing bytes in checkpoint");
  require(params.all_finite(), ErrorKind::data, path.string() + ": non-finite parameters");
  return params;
}

}  // namespace maskbench
