#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "optb/errors.hpp"

namespace optb::sampler {

// Per-class counts for one batch, derived from class weights by
// largest-remainder apportionment so the counts always sum to batch_size.
struct SamplerPlan {
  std::vector<double> class_weights;
  std::size_t batch_size = 0;
  std::vector<std::size_t> counts;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return counts.size(); }
};

SamplerPlan plan(std::span<const double> class_weights, std::size_t batch_size,
                 std::uint64_t seed);

// Dataset indices grouped by class; every index lives in exactly one list.
struct ClassIndex {
  std::vector<std::vector<std::size_t>> by_class;

  static ClassIndex from_labels(std::span<const int> labels, std::size_t num_classes);
  std::size_t num_classes() const { return by_class.size(); }
};

struct Draw {
  std::size_t example = 0;
  std::size_t cls = 0;
};

// Preprocessing seam: called once per emitted example with (class, example).
using PreprocessHook = std::function<void(std::size_t cls, std::size_t example)>;

// Single-consumer batch stream. Draws without replacement inside each class;
// an exhausted class is reshuffled and continues, which keeps every batch's
// composition exact at the cost of intra-epoch repeats for minority classes.
class BatchCursor {
public:
  BatchCursor(SamplerPlan plan, ClassIndex index);

  void set_preprocess_hook(PreprocessHook hook) { hook_ = std::move(hook); }

  // Exactly plan.counts[c] draws from class c, in class order.
  std::vector<Draw> next();

  const SamplerPlan& plan() const { return plan_; }

private:
  struct ClassState {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };

  SamplerPlan plan_;
  std::vector<ClassState> classes_;
  std::uint64_t rng_state_;
  PreprocessHook hook_;

  void reshuffle(std::size_t cls);
};

}  // namespace optb::sampler
