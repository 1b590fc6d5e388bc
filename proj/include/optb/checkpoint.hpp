#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "optb/metering.hpp"
#include "optb/nn.hpp"

namespace optb::checkpoint {

// Boundary indices whose activations stay live through the backward pass.
// Index 0 is the network input, index L the output; both are always present.
// A plan containing every index is the full-storage baseline; {0, L} is the
// maximal-recompute extreme.
struct SegmentPlan {
  std::vector<std::size_t> indices;

  static SegmentPlan full(std::size_t layer_count);
  static SegmentPlan minimal(std::size_t layer_count);
  // `interior` evenly spaced interior checkpoints, remainder pushed onto the
  // last segment.
  static SegmentPlan uniform(std::size_t layer_count, std::size_t interior);
  // Default schedule: ceil(sqrt(L)) segments.
  static SegmentPlan sqrt_default(std::size_t layer_count);

  void validate(std::size_t layer_count) const;
  std::size_t interior_count() const { return indices.size() < 2 ? 0 : indices.size() - 2; }
  bool is_full(std::size_t layer_count) const;
  std::string to_string() const;
};

// Boundary activation sizes for a network at a given batch size: entry i is
// the size of boundary activation i (0 = input, L = output).
struct ActivationSizeProfile {
  std::vector<std::size_t> element_counts;
  std::vector<std::size_t> byte_sizes;

  std::size_t boundary_count() const { return byte_sizes.size(); }
};

// Parse "4,8,12" (interior indices), "full", "sqrt" or "auto:<budget>"
// (resolved by recommend_plan against the profile).
SegmentPlan parse_plan(const std::string& spec, const ActivationSizeProfile& profile);

// `input_features` is the width of boundary 0 (for decode networks, the
// decoded pixel count).
ActivationSizeProfile profile_network(const nn::Network& net, std::size_t batch_rows,
                                      std::size_t input_features);

// Analytic peak for a plan: all checkpoint bytes plus the largest segment
// interior. This is the objective recommend_plan minimizes.
std::size_t predict_peak(const ActivationSizeProfile& profile, const SegmentPlan& plan);

// Pick `budget` interior checkpoints minimizing predict_peak; among ties the
// smaller checkpoint footprint wins (prefer narrow boundaries), then the
// lexicographically smallest index set. Exhaustive for stacks of at most 20
// layers, greedy insertion above that.
SegmentPlan recommend_plan(const ActivationSizeProfile& profile, std::size_t budget);

struct StepResult {
  double loss = 0.0;
  nn::Gradients grads;
};

// Loss + gradients with segment recomputation: the forward pass stores only
// plan boundaries; each segment is replayed (oldest last) right before its
// backward sweep, so only the checkpoints plus one segment's interior are
// ever live. Replay runs the identical op sequence, so gradients match the
// full-storage backward bit for bit. When `ledger` is set, every boundary,
// flowing gradient and parameter gradient is tracked.
StepResult checkpointed_backward(const nn::Network& net, const Tensor& input,
                                 const Tensor& target, const SegmentPlan& plan,
                                 metering::MemoryLedger* ledger, nn::LossKind loss_kind,
                                 float loss_scale = 1.0f);
StepResult checkpointed_backward(const nn::Network& net,
                                 std::span<const codec::EncodedBatch> chunks,
                                 const Tensor& target, const SegmentPlan& plan,
                                 metering::MemoryLedger* ledger, nn::LossKind loss_kind,
                                 float loss_scale = 1.0f);

}  // namespace optb::checkpoint
