#include "optb/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "optb/rng.hpp"

namespace optb::sampler {

SamplerPlan plan(std::span<const double> class_weights, std::size_t batch_size,
                 std::uint64_t seed) {
  if (class_weights.empty()) throw Error("sampler: at least one class weight required");
  if (batch_size == 0) throw Error("sampler: batch size must be positive");
  double sum = 0.0;
  for (std::size_t c = 0; c < class_weights.size(); ++c) {
    if (class_weights[c] < 0.0) {
      throw Error("sampler: negative weight for class " + std::to_string(c));
    }
    sum += class_weights[c];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error("sampler: class weights sum to " + std::to_string(sum) + ", expected 1");
  }

  SamplerPlan out;
  out.class_weights.assign(class_weights.begin(), class_weights.end());
  out.batch_size = batch_size;
  out.seed = seed;
  out.counts.assign(class_weights.size(), 0);

  // Largest-remainder: floor everything, then hand the shortfall to the
  // largest fractional parts, ties to the lower class index.
  std::vector<double> remainder(class_weights.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < class_weights.size(); ++c) {
    const double exact = class_weights[c] * static_cast<double>(batch_size);
    out.counts[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - std::floor(exact);
    assigned += out.counts[c];
  }
  std::vector<std::size_t> order(class_weights.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < batch_size; ++k) {
    out.counts[order[k % order.size()]] += 1;
    ++assigned;
  }
  return out;
}

ClassIndex ClassIndex::from_labels(std::span<const int> labels, std::size_t num_classes) {
  ClassIndex index;
  index.by_class.resize(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw Error("sampler: label " + std::to_string(label) + " outside " +
                  std::to_string(num_classes) + " classes");
    }
    index.by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  return index;
}

BatchCursor::BatchCursor(SamplerPlan plan, ClassIndex index)
    : plan_(std::move(plan)), rng_state_(plan_.seed) {
  if (index.num_classes() != plan_.num_classes()) {
    throw Error("sampler: index has " + std::to_string(index.num_classes()) +
                " classes, plan has " + std::to_string(plan_.num_classes()));
  }
  classes_.resize(index.num_classes());
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    if (plan_.counts[c] > 0 && index.by_class[c].empty()) {
      throw Error("sampler: class " + std::to_string(c) +
                  " has no examples but a positive batch count");
    }
    classes_[c].order = std::move(index.by_class[c]);
    reshuffle(c);
  }
}

void BatchCursor::reshuffle(std::size_t cls) {
  Rng rng(rng_state_);
  rng.shuffle(classes_[cls].order.data(), classes_[cls].order.size());
  rng_state_ = rng.next_u64();
  classes_[cls].pos = 0;
}

std::vector<Draw> BatchCursor::next() {
  std::vector<Draw> batch;
  batch.reserve(plan_.batch_size);
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    for (std::size_t k = 0; k < plan_.counts[c]; ++k) {
      ClassState& state = classes_[c];
      if (state.pos == state.order.size()) reshuffle(c);
      const std::size_t example = state.order[state.pos++];
      if (hook_) hook_(c, example);
      batch.push_back(Draw{example, c});
    }
  }
  return batch;
}

}  // namespace optb::sampler
