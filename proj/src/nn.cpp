#include "optb/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "optb/rng.hpp"

namespace optb::nn {

namespace {

// a (m,k) times b^T where b is (n,k) -> (m,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  Tensor c = Tensor::zeros({m, n});
  std::span<const float> av = a.values();
  std::span<const float> bv = b.values();
  std::span<float> cv = c.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const float* arow = av.data() + i * k;
      const float* brow = bv.data() + j * k;
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      cv[i * n + j] = acc;
    }
  }
  return c;
}

// a^T times b where a is (r,m), b is (r,n) -> (m,n)
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.extent(0), m = a.extent(1), n = b.extent(1);
  Tensor c = Tensor::zeros({m, n});
  std::span<const float> av = a.values();
  std::span<const float> bv = b.values();
  std::span<float> cv = c.values();
  for (std::size_t p = 0; p < r; ++p) {
    const float* arow = av.data() + p * m;
    const float* brow = bv.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float api = arow[i];
      float* crow = cv.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
  return c;
}

const DenseLayer* as_dense(const Layer& layer) { return std::get_if<DenseLayer>(&layer); }

std::string layer_tag(std::size_t i) { return "layer " + std::to_string(i); }

}  // namespace

bool Network::starts_with_decode() const {
  return !layers.empty() && std::holds_alternative<DecodeLayer>(layers.front());
}

Network Network::make(std::span<const LayerSpec> specs, Precision precision,
                      std::uint64_t seed) {
  Network net;
  net.precision = precision;
  Rng rng(seed);

  std::size_t features = 0;  // 0 = unknown so far
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (std::holds_alternative<DecodeSpec>(specs[i])) {
      if (i != 0) throw Error("decode layer must be layer 0, got index " + std::to_string(i));
      const auto& d = std::get<DecodeSpec>(specs[i]);
      net.layers.push_back(DecodeLayer{d.mode, d.n_images, d.scale});
      continue;
    }
    if (std::holds_alternative<ActivationSpec>(specs[i])) {
      net.layers.push_back(ActivationLayer{std::get<ActivationSpec>(specs[i]).kind});
      continue;
    }
    const auto& d = std::get<DenseSpec>(specs[i]);
    if (d.in == 0 || d.out == 0) throw ShapeError(layer_tag(i) + ": dense extents must be positive");
    if (features != 0 && features != d.in) {
      throw ShapeError(layer_tag(i) + ": dense expects " + std::to_string(d.in) +
                       " inputs but the previous layer produces " + std::to_string(features));
    }
    features = d.out;

    DenseLayer layer;
    layer.in = d.in;
    layer.out = d.out;
    const float limit = std::sqrt(6.0f / static_cast<float>(d.in + d.out));
    Tensor weight = Tensor::zeros({d.in, d.out});
    for (float& w : weight.values()) w = rng.next_uniform(-limit, limit);
    Tensor bias = Tensor::zeros({1, d.out});
    if (precision == Precision::MixedPrecision) {
      layer.master_weight = weight;
      layer.master_bias = bias;
      layer.weight = convert(weight, ElementFormat::Half);
      layer.bias = convert(bias, ElementFormat::Half);
    } else {
      layer.weight = std::move(weight);
      layer.bias = std::move(bias);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::size_t Network::param_bytes_stored() const {
  std::size_t bytes = 0;
  for (const Layer& layer : layers) {
    if (const DenseLayer* d = as_dense(layer)) bytes += d->weight.byte_size() + d->bias.byte_size();
  }
  return bytes;
}

std::size_t Network::param_bytes_master() const {
  if (precision != Precision::MixedPrecision) return 0;
  std::size_t bytes = 0;
  for (const Layer& layer : layers) {
    if (const DenseLayer* d = as_dense(layer)) {
      bytes += d->master_weight.byte_size() + d->master_bias.byte_size();
    }
  }
  return bytes;
}

std::size_t Network::input_features() const {
  for (const Layer& layer : layers) {
    if (const DenseLayer* d = as_dense(layer)) return d->in;
  }
  return 0;
}

std::size_t Network::output_features() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (const DenseLayer* d = as_dense(*it)) return d->out;
  }
  return input_features();
}

Tensor boundary_storage(const Network& net, const Tensor& single_value) {
  if (net.precision == Precision::MixedPrecision) {
    return convert(single_value, ElementFormat::Half);
  }
  return single_value;
}

Tensor boundary_compute(const Tensor& stored) {
  if (stored.format() == ElementFormat::Half) return convert(stored, ElementFormat::Single);
  return stored;
}

Tensor decode_input(const Network& net, std::span<const codec::EncodedBatch> chunks) {
  if (!net.starts_with_decode()) {
    throw ShapeError("layer 0: network does not start with a decode layer");
  }
  const auto& layer = std::get<DecodeLayer>(net.layers.front());
  if (chunks.empty()) throw ShapeError("layer 0: no encoded batches supplied");

  std::size_t rows = 0;
  for (const codec::EncodedBatch& enc : chunks) {
    if (enc.mode != layer.mode) {
      throw ShapeError(std::string("layer 0: decode expects mode ") +
                       codec::mode_name(layer.mode) + " but batch uses " +
                       codec::mode_name(enc.mode));
    }
    if (!(enc.shape == chunks[0].shape)) {
      throw ShapeError("layer 0: encoded chunks disagree on image shape");
    }
    rows += enc.n_images;
  }
  if (layer.n_images != 0 && rows != layer.n_images) {
    throw ShapeError("layer 0: decode expects " + std::to_string(layer.n_images) +
                     " images, got " + std::to_string(rows));
  }

  const std::size_t pixels = chunks[0].pixel_count();
  Tensor out = Tensor::zeros({rows, pixels});
  std::span<float> dst = out.values();
  std::size_t row = 0;
  for (const codec::EncodedBatch& enc : chunks) {
    const std::vector<codec::Image> images = codec::decode(enc);
    for (const codec::Image& img : images) {
      float* drow = dst.data() + row * pixels;
      for (std::size_t p = 0; p < pixels; ++p) {
        drow[p] = static_cast<float>(img.pixels[p]) * layer.scale;
      }
      ++row;
    }
  }
  return out;
}

Tensor apply_layer(const Network& net, std::size_t layer_index, const Tensor& input) {
  const Layer& layer = net.layers.at(layer_index);
  if (std::holds_alternative<DecodeLayer>(layer)) {
    throw ShapeError(layer_tag(layer_index) + ": decode layer consumes encoded batches");
  }
  if (const DenseLayer* d = as_dense(layer)) {
    if (input.rank() != 2 || input.extent(1) != d->in) {
      throw ShapeError(layer_tag(layer_index) + ": expected input (n x " + std::to_string(d->in) +
                       "), got " + shape_to_string(input.shape()));
    }
    const Tensor weight = boundary_compute(d->weight);
    const Tensor bias = boundary_compute(d->bias);
    Tensor out = matmul(input, weight);
    std::span<float> ov = out.values();
    std::span<const float> bv = bias.values();
    const std::size_t rows = out.extent(0), cols = out.extent(1);
    for (std::size_t i = 0; i < rows; ++i) {
      float* row = ov.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) row[j] += bv[j];
    }
    return out;
  }
  const auto& act = std::get<ActivationLayer>(layer);
  return act.kind == ActivationKind::Sigmoid ? sigmoid(input) : relu(input);
}

namespace {

Tensor run_forward(const Network& net, Tensor boundary0_stored,
                   std::span<const codec::EncodedBatch> chunks, ActivationTape* tape) {
  const bool decoded = net.starts_with_decode();
  if (tape) {
    tape->boundaries.clear();
    tape->layer_count = net.layer_count();
    tape->boundaries.reserve(net.layer_count() + 1);
    tape->boundaries.push_back(boundary0_stored);
  }

  Tensor cur = decoded ? Tensor{} : boundary_compute(boundary0_stored);
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    Tensor raw = (i == 0 && decoded) ? decode_input(net, chunks) : apply_layer(net, i, cur);
    Tensor stored = boundary_storage(net, raw);
    cur = boundary_compute(stored);
    if (tape) tape->boundaries.push_back(std::move(stored));
  }
  return cur;
}

}  // namespace

Tensor forward(const Network& net, const Tensor& input, ActivationTape* tape) {
  if (net.starts_with_decode()) {
    throw ShapeError("layer 0: decode layer expects an encoded batch input");
  }
  if (input.rank() != 2) {
    throw ShapeError("layer 0: expected rank-2 input, got " + shape_to_string(input.shape()));
  }
  return run_forward(net, boundary_storage(net, input), {}, tape);
}

Tensor forward(const Network& net, const codec::EncodedBatch& input, ActivationTape* tape) {
  return forward(net, std::span<const codec::EncodedBatch>(&input, 1), tape);
}

Tensor forward(const Network& net, std::span<const codec::EncodedBatch> chunks,
               ActivationTape* tape) {
  if (!net.starts_with_decode()) {
    throw ShapeError("layer 0: network does not start with a decode layer");
  }
  return run_forward(net, Tensor{}, chunks, tape);
}

std::size_t Gradients::byte_size() const {
  std::size_t bytes = 0;
  for (const DenseGrad& g : dense) bytes += g.dweight.byte_size() + g.dbias.byte_size();
  return bytes;
}

LayerBackward layer_backward(const Network& net, std::size_t layer_index,
                             const Tensor& input_stored, const Tensor& output_stored,
                             const Tensor& dy) {
  const Layer& layer = net.layers.at(layer_index);
  LayerBackward result;

  if (std::holds_alternative<DecodeLayer>(layer)) {
    // Input adapter: data is not differentiated.
    return result;
  }

  if (const DenseLayer* d = as_dense(layer)) {
    const Tensor x = boundary_compute(input_stored);
    const Tensor weight = boundary_compute(d->weight);
    Tensor dweight = matmul_tn(x, dy);
    Tensor dbias = Tensor::zeros({1, d->out});
    {
      std::span<float> bv = dbias.values();
      std::span<const float> dyv = dy.values();
      const std::size_t rows = dy.extent(0), cols = dy.extent(1);
      for (std::size_t i = 0; i < rows; ++i) {
        const float* row = dyv.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) bv[j] += row[j];
      }
    }
    result.dx = matmul_nt(dy, weight);
    DenseGrad grad;
    grad.layer_index = layer_index;
    if (net.precision == Precision::MixedPrecision) {
      grad.dweight = convert(dweight, ElementFormat::Half);
      grad.dbias = convert(dbias, ElementFormat::Half);
    } else {
      grad.dweight = std::move(dweight);
      grad.dbias = std::move(dbias);
    }
    result.param = std::move(grad);
    return result;
  }

  const auto& act = std::get<ActivationLayer>(layer);
  Tensor dx = Tensor::zeros(dy.shape());
  std::span<float> dxv = dx.values();
  std::span<const float> dyv = dy.values();
  if (act.kind == ActivationKind::Sigmoid) {
    const Tensor y = boundary_compute(output_stored);
    std::span<const float> yv = y.values();
    for (std::size_t i = 0; i < dyv.size(); ++i) dxv[i] = dyv[i] * yv[i] * (1.0f - yv[i]);
  } else {
    const Tensor x = boundary_compute(input_stored);
    std::span<const float> xv = x.values();
    for (std::size_t i = 0; i < dyv.size(); ++i) dxv[i] = xv[i] > 0.0f ? dyv[i] : 0.0f;
  }
  result.dx = std::move(dx);
  return result;
}

Gradients backward(const Network& net, const ActivationTape& tape, const Tensor& loss_grad) {
  if (!tape.complete() || tape.layer_count != net.layer_count()) {
    throw Error("backward: stale or missing activation tape");
  }
  Gradients grads;
  Tensor dcur = loss_grad;
  for (std::size_t i = net.layer_count(); i-- > 0;) {
    LayerBackward step =
        layer_backward(net, i, tape.boundaries[i], tape.boundaries[i + 1], dcur);
    if (step.param) grads.dense.push_back(std::move(*step.param));
    if (step.dx.empty()) break;  // decode layer: nothing flows further down
    dcur = std::move(step.dx);
  }
  std::reverse(grads.dense.begin(), grads.dense.end());
  return grads;
}

LossResult loss(const Tensor& pred, const Tensor& target, LossKind kind) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction shape " + shape_to_string(pred.shape()) +
                     " does not match target shape " + shape_to_string(target.shape()));
  }
  const Tensor p = boundary_compute(pred);
  const Tensor t = boundary_compute(target);
  std::span<const float> pv = p.values();
  std::span<const float> tv = t.values();

  LossResult result;
  result.grad = Tensor::zeros(pred.shape());
  std::span<float> gv = result.grad.values();

  if (kind == LossKind::MSE) {
    const auto n = static_cast<double>(pv.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
      acc += d * d;
      gv[i] = static_cast<float>(2.0 * d / n);
    }
    result.value = acc / n;
    return result;
  }

  // Cross entropy over logits, mean over the batch rows.
  const std::size_t rows = pred.extent(0), cols = pred.extent(1);
  const auto n = static_cast<double>(rows);
  double acc = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const float* prow = pv.data() + i * cols;
    const float* trow = tv.data() + i * cols;
    double maxv = prow[0];
    for (std::size_t j = 1; j < cols; ++j) maxv = std::max(maxv, static_cast<double>(prow[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(static_cast<double>(prow[j]) - maxv);
    const double lse = maxv + std::log(sum);
    for (std::size_t j = 0; j < cols; ++j) {
      const double softmax = std::exp(static_cast<double>(prow[j]) - lse);
      gv[i * cols + j] = static_cast<float>((softmax - static_cast<double>(trow[j])) / n);
      acc += static_cast<double>(trow[j]) * (lse - static_cast<double>(prow[j]));
    }
  }
  result.value = acc / n;
  return result;
}

LossResult loss(const Tensor& pred, std::span<const int> labels) {
  if (pred.rank() != 2 || pred.extent(0) != labels.size()) {
    throw ShapeError("loss: prediction rows do not match label count");
  }
  return loss(pred, one_hot(labels, pred.extent(1)), LossKind::CrossEntropy);
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor t = Tensor::zeros({labels.size(), num_classes});
  std::span<float> tv = t.values();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw Error("one_hot: label " + std::to_string(label) + " outside " +
                  std::to_string(num_classes) + " classes");
    }
    tv[i * num_classes + static_cast<std::size_t>(label)] = 1.0f;
  }
  return t;
}

namespace {

void check_finite(const Tensor& g, std::size_t layer_index) {
  const Tensor gs = boundary_compute(g);
  for (const float v : gs.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("sgd: non-finite gradient for layer " + std::to_string(layer_index));
    }
  }
}

void apply_update(Tensor& param, const Tensor& grad, float lr, float inv_scale) {
  std::span<float> pv = param.values();
  const Tensor gs = boundary_compute(grad);
  std::span<const float> gv = gs.values();
  if (pv.size() != gv.size()) throw ShapeError("sgd: gradient shape does not match parameter");
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const float g = gv[i] * inv_scale;
    const float step = lr * g;
    pv[i] = pv[i] - step;
  }
}

}  // namespace

void sgd_step(TrainState& state, const Gradients& grads) {
  if (state.learning_rate < 0.0f) throw Error("sgd: learning rate must be positive");
  const float inv_scale = 1.0f / state.loss_scale;
  for (const DenseGrad& g : grads.dense) {
    Layer& layer = state.network.layers.at(g.layer_index);
    auto* dense = std::get_if<DenseLayer>(&layer);
    if (!dense) throw Error("sgd: gradient targets a non-dense layer");
    check_finite(g.dweight, g.layer_index);
    check_finite(g.dbias, g.layer_index);
    if (state.network.precision == Precision::MixedPrecision) {
      apply_update(dense->master_weight, g.dweight, state.learning_rate, inv_scale);
      apply_update(dense->master_bias, g.dbias, state.learning_rate, inv_scale);
      dense->weight = convert(dense->master_weight, ElementFormat::Half);
      dense->bias = convert(dense->master_bias, ElementFormat::Half);
    } else {
      apply_update(dense->weight, g.dweight, state.learning_rate, inv_scale);
      apply_update(dense->bias, g.dbias, state.learning_rate, inv_scale);
    }
  }
}

}  // namespace optb::nn
