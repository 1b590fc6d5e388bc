#include <doctest.h>

#include <sstream>

#include "optb/checkpoint.hpp"
#include "optb/metering.hpp"
#include "optb/rng.hpp"

using namespace optb;
using namespace optb::metering;

namespace {

// one instrumented training step over an equal-width dense stack; the batch
// is large enough that activations outweigh parameter gradients
struct StepTimeline {
  std::vector<std::size_t> samples;
  std::size_t backward_start_index = 0;
  std::size_t peak = 0;
};

StepTimeline run_instrumented_step(std::size_t layers, const checkpoint::SegmentPlan& plan,
                                   MemoryLedger& ledger) {
  const std::size_t width = 16, rows = 128;
  std::vector<nn::LayerSpec> specs;
  for (std::size_t i = 0; i < layers; ++i) specs.push_back(nn::DenseSpec{width, width});
  const nn::Network net = nn::Network::make(specs, nn::Precision::SinglePrecision, 3);
  Rng rng(9);
  Tensor input = Tensor::zeros({rows, width});
  for (float& v : input.values()) v = rng.next_float();
  Tensor target = Tensor::zeros({rows, width});
  for (float& v : target.values()) v = rng.next_float();

  const checkpoint::StepResult step =
      checkpoint::checkpointed_backward(net, input, target, plan, &ledger, nn::LossKind::MSE);
  ledger.track_free(Category::Gradients, step.grads.byte_size(), "step:grads_applied");

  StepTimeline out;
  const auto events = ledger.events();
  out.samples.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    out.samples.push_back(events[i].total_after);
    if (events[i].label == "bwd:dloss") out.backward_start_index = i;
    out.peak = std::max(out.peak, events[i].total_after);
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("metering");

TEST_CASE("alloc and free pair up") {
  MemoryLedger ledger;
  ledger.track_alloc(Category::Activations, 100, "a");
  ledger.track_free(Category::Activations, 100, "a");
  CHECK(ledger.current(Category::Activations) == 0);
  CHECK(ledger.peak(Category::Activations) == 100);
}

TEST_CASE("peak tracks the high-water mark") {
  MemoryLedger ledger;
  ledger.track_alloc(Category::Gradients, 100);
  ledger.track_alloc(Category::Gradients, 50);
  ledger.track_free(Category::Gradients, 100);
  CHECK(ledger.current(Category::Gradients) == 50);
  CHECK(ledger.peak(Category::Gradients) == 150);
}

TEST_CASE("freeing untracked bytes is an accounting error") {
  MemoryLedger ledger;
  CHECK_THROWS_AS(ledger.track_free(Category::Weights, 1), AccountingError);
  ledger.track_alloc(Category::Weights, 10);
  CHECK_THROWS_AS(ledger.track_free(Category::Weights, 11), AccountingError);
  CHECK_NOTHROW(ledger.track_free(Category::Weights, 10));
}

TEST_CASE("category sums equal the tracked total at every event") {
  MemoryLedger ledger;
  Rng rng(21);
  std::array<std::size_t, kCategoryCount> shadow{};
  for (int i = 0; i < 500; ++i) {
    const auto cat = static_cast<Category>(rng.next_below(kCategoryCount));
    const auto idx = static_cast<std::size_t>(cat);
    if (rng.next_below(2) == 0 || shadow[idx] == 0) {
      const std::size_t bytes = 1 + rng.next_below(1000);
      ledger.track_alloc(cat, bytes);
      shadow[idx] += bytes;
    } else {
      const std::size_t bytes = 1 + rng.next_below(shadow[idx]);
      ledger.track_free(cat, bytes);
      shadow[idx] -= bytes;
    }
    std::size_t sum = 0;
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      CHECK(ledger.current(static_cast<Category>(c)) == shadow[c]);
      sum += shadow[c];
    }
    CHECK(ledger.total_current() == sum);
    CHECK(ledger.total_peak() >= ledger.total_current());
  }
  // the total peak is the max of the event-driven timeline
  std::size_t timeline_max = 0;
  for (const std::size_t t : ledger.timeline()) timeline_max = std::max(timeline_max, t);
  CHECK(ledger.total_peak() == timeline_max);
}

TEST_CASE("per-category peaks never decrease") {
  MemoryLedger ledger;
  ledger.track_alloc(Category::Activations, 64);
  const std::size_t p1 = ledger.peak(Category::Activations);
  ledger.track_free(Category::Activations, 64);
  CHECK(ledger.peak(Category::Activations) == p1);
}

TEST_CASE("csv exports carry the documented columns") {
  MemoryLedger ledger;
  ledger.track_alloc(Category::EncodedBatches, 32, "buf");
  ledger.track_free(Category::EncodedBatches, 32, "buf");

  std::ostringstream events;
  ledger.write_event_csv(events);
  const std::string etext = events.str();
  CHECK(etext.find("ts_ns,category,delta_bytes,label") != std::string::npos);
  CHECK(etext.find("encoded_batches,32,buf") != std::string::npos);
  CHECK(etext.find("encoded_batches,-32,buf") != std::string::npos);

  std::ostringstream summary;
  ledger.write_summary_csv(summary);
  const std::string stext = summary.str();
  CHECK(stext.find("category,peak_bytes") != std::string::npos);
  CHECK(stext.find("encoded_batches,32") != std::string::npos);
  CHECK(stext.find("total,32") != std::string::npos);
}

TEST_CASE("iteration timeline rises through forward, peaks at backward start, returns") {
  MemoryLedger ledger;
  const StepTimeline t =
      run_instrumented_step(16, checkpoint::SegmentPlan::full(16), ledger);
  REQUIRE(!t.samples.empty());
  // forward is allocation-only under full storage
  for (std::size_t i = 1; i <= t.backward_start_index; ++i) {
    CHECK(t.samples[i] > t.samples[i - 1]);
  }
  // the high-water mark sits where backward takes over (the first backward
  // layer still holds the whole tape plus its freshly built gradients)
  std::size_t peak_index = 0;
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    if (t.samples[i] == t.peak) {
      peak_index = i;
      break;
    }
  }
  CHECK(peak_index >= t.backward_start_index);
  CHECK(peak_index <= t.backward_start_index + 12);
  // and a completed step hands every byte back
  CHECK(t.samples.back() == 0);
  CHECK(ledger.total_current() == 0);
}

TEST_CASE("a checkpointed iteration peaks strictly below the baseline timeline") {
  MemoryLedger full_ledger;
  const StepTimeline full =
      run_instrumented_step(16, checkpoint::SegmentPlan::full(16), full_ledger);
  MemoryLedger ckpt_ledger;
  const StepTimeline ckpt =
      run_instrumented_step(16, checkpoint::SegmentPlan::sqrt_default(16), ckpt_ledger);
  CHECK(ckpt.peak < full.peak);
}

TEST_CASE("an empty network allocates nothing beyond its input") {
  const nn::Network net = nn::Network::make({}, nn::Precision::SinglePrecision, 1);
  const Tensor input = Tensor::zeros({4, 4});
  const Tensor target = Tensor::zeros({4, 4});
  MemoryLedger ledger;
  checkpoint::checkpointed_backward(net, input, target, checkpoint::SegmentPlan::full(0),
                                    &ledger, nn::LossKind::MSE);
  CHECK(ledger.peak(Category::Activations) == input.byte_size());
  CHECK(ledger.current(Category::Activations) == 0);
}

TEST_CASE("phase timer requires proper nesting") {
  PhaseTimer timer;
  timer.start("outer");
  timer.start("inner");
  timer.stop("inner");
  timer.stop("outer");
  CHECK(timer.total_ms("outer") >= timer.total_ms("inner"));
  CHECK(timer.has_phase("inner"));

  timer.start("a");
  timer.start("b");
  CHECK_THROWS_AS(timer.stop("a"), Error);
}

TEST_SUITE_END();
