#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "optb/codec.hpp"
#include "optb/tensor.hpp"

namespace optb::nn {

enum class ActivationKind : std::uint8_t { Sigmoid, ReLU };
enum class Precision : std::uint8_t { SinglePrecision, MixedPrecision };
enum class LossKind : std::uint8_t { MSE, CrossEntropy };

// Fully connected layer. Under MixedPrecision the stored weight/bias are Half
// and the single-precision master copies are the update targets; the forward
// and backward paths always compute on the single-converted stored values.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;  // (in, out), stored format
  Tensor bias;    // (1, out), stored format
  Tensor master_weight;  // Single, MixedPrecision only
  Tensor master_bias;    // Single, MixedPrecision only
};

struct ActivationLayer {
  ActivationKind kind = ActivationKind::Sigmoid;
};

// Input adapter that unpacks encoded batches into a (batch, pixels) tensor.
// Carries no parameters, must be layer 0, and no gradient flows into it.
// `scale` is a fixed factor applied to the raw pixel values (1/255 maps
// pixels onto [0, 1]); the default emits the pixels unchanged.
struct DecodeLayer {
  codec::CodecMode mode = codec::CodecMode::ExactInt64;
  std::size_t n_images = 0;  // total rows the decoded batch must supply
  float scale = 1.0f;
};

using Layer = std::variant<DenseLayer, ActivationLayer, DecodeLayer>;

// Construction specs; weights are drawn at Network::make time.
struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
};
struct ActivationSpec {
  ActivationKind kind = ActivationKind::Sigmoid;
};
struct DecodeSpec {
  codec::CodecMode mode = codec::CodecMode::ExactInt64;
  std::size_t n_images = 0;
  float scale = 1.0f;
};
using LayerSpec = std::variant<DenseSpec, ActivationSpec, DecodeSpec>;

struct Network {
  std::vector<Layer> layers;
  Precision precision = Precision::SinglePrecision;

  // Dense weights uniform in +-sqrt(6 / (in + out)), biases zero, drawn from
  // `seed` in layer order; the draw sequence does not depend on precision.
  static Network make(std::span<const LayerSpec> specs, Precision precision,
                      std::uint64_t seed);

  std::size_t layer_count() const { return layers.size(); }
  bool starts_with_decode() const;

  std::size_t param_bytes_stored() const;
  std::size_t param_bytes_master() const;

  // Row count of the activation that layer `i` consumes/produces; used for
  // shape validation and activation size profiles.
  std::size_t input_features() const;   // features expected at layer 0 (post-decode)
  std::size_t output_features() const;
};

// Boundary activations 0..L recorded by a forward pass. Under MixedPrecision
// entries are stored in Half; boundary values always pass through the Half
// round-trip between layers so that replayed segments reproduce identical
// bits.
struct ActivationTape {
  std::vector<Tensor> boundaries;
  std::size_t layer_count = 0;

  bool complete() const { return boundaries.size() == layer_count + 1; }
};

// Forward pass. When `tape` is non-null every boundary activation is
// recorded; when null nothing is retained.
Tensor forward(const Network& net, const Tensor& input, ActivationTape* tape = nullptr);
Tensor forward(const Network& net, const codec::EncodedBatch& input,
               ActivationTape* tape = nullptr);
// Batches larger than one container's capacity arrive as consecutive chunks.
Tensor forward(const Network& net, std::span<const codec::EncodedBatch> chunks,
               ActivationTape* tape = nullptr);

struct DenseGrad {
  std::size_t layer_index = 0;
  Tensor dweight;
  Tensor dbias;
};

struct Gradients {
  std::vector<DenseGrad> dense;  // ascending layer index

  std::size_t byte_size() const;
};

// Reverse-mode chain rule over a recorded tape. Gradient tensors are shaped
// like their parameters; under MixedPrecision they are returned in Half
// storage (computed in Single).
Gradients backward(const Network& net, const ActivationTape& tape, const Tensor& loss_grad);

// Building blocks shared with the checkpointing engine. Boundary tensors are
// handled in stored form (Half under MixedPrecision); replaying a segment
// through these reproduces the original pass bit for bit.
Tensor boundary_storage(const Network& net, const Tensor& single_value);
Tensor boundary_compute(const Tensor& stored);
Tensor apply_layer(const Network& net, std::size_t layer_index, const Tensor& input);
Tensor decode_input(const Network& net, std::span<const codec::EncodedBatch> chunks);

struct LayerBackward {
  Tensor dx;  // empty when nothing flows further down (decode layer)
  std::optional<DenseGrad> param;
};

LayerBackward layer_backward(const Network& net, std::size_t layer_index,
                             const Tensor& input_stored, const Tensor& output_stored,
                             const Tensor& dy);

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d(loss)/d(pred), Single
};

// MSE averages over all elements; CrossEntropy expects one-hot targets and
// averages over the batch with a stabilized log-sum-exp.
LossResult loss(const Tensor& pred, const Tensor& target, LossKind kind);
// CrossEntropy against class indices.
LossResult loss(const Tensor& pred, std::span<const int> labels);

Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

struct TrainState {
  Network network;
  float learning_rate = 0.0f;
  LossKind loss_kind = LossKind::MSE;
  std::uint64_t seed = 0;
  // Static multiplier applied to the loss gradient before backward; the
  // update divides it back out. 1 disables it.
  float loss_scale = 1.0f;
};

// W <- W - lr * g. Under MixedPrecision the Single master copy accumulates
// the update and the Half stored copy is refreshed from it.
void sgd_step(TrainState& state, const Gradients& grads);

}  // namespace optb::nn
