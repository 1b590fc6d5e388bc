#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "optb/codec.hpp"
#include "optb/metering.hpp"
#include "optb/sampler.hpp"

namespace optb::pipeline {

enum class BufferStatus : std::uint8_t { Preparing, Ready, Consumed };

// One epoch's worth of encoded batches. At most two of these are alive at any
// time: the one being trained on and the one being prepared.
struct EpochBuffer {
  std::size_t epoch_id = 0;
  std::vector<codec::EncodedBatch> batches;
  BufferStatus status = BufferStatus::Preparing;

  std::size_t byte_size() const;
};

struct EpochTiming {
  std::size_t epoch = 0;
  double prepare_ms = 0.0;
  double train_ms = 0.0;
  double overlap_ms = 0.0;  // time this epoch's training ran alongside the next prepare
};

struct TimingReport {
  std::vector<EpochTiming> epochs;
  double cold_prepare_ms = 0.0;  // blocking wait before epoch 0; zero on warm start
  double total_ms = 0.0;

  // CSV: epoch,prepare_ms,train_ms,overlap_ms
  void write_csv(std::ostream& out) const;
};

struct PipelineConfig {
  std::size_t epochs = 1;
  std::size_t batches_per_epoch = 1;
  codec::CodecMode mode = codec::CodecMode::ExactInt64;
  std::optional<sampler::SamplerPlan> sampler_plan;  // carried for config echo

  // Data already dumped in encoded form: load it once and go straight to
  // training, no producer.
  bool warm_start = false;
  std::filesystem::path dump_dir;  // required for warm_start or dump_to_disk
  bool dump_to_disk = false;

  bool serialize = false;           // prepare/train strictly in turn (no overlap)
  double injected_prepare_ms = 0.0;  // simulated per-epoch preprocessing cost
};

// Builds batch `index` of `epoch` as raw images, ready to encode.
using BatchBuilder =
    std::function<std::vector<codec::Image>(std::size_t epoch, std::size_t index)>;

// Consumes one prepared epoch (status is always Ready when called).
using TrainEpoch = std::function<void(const EpochBuffer& buffer)>;

// Run the encode-while-train loop: while epoch k trains, a producer thread
// shuffles, encodes and (optionally) dumps epoch k+1. Hand-off is a bounded
// slot of depth one, so the producer blocks when a Ready buffer is pending.
// Producer failures surface before the affected epoch begins; a consumer
// failure stops the producer promptly.
TimingReport run(const PipelineConfig& config, const BatchBuilder& build_batch,
                 const TrainEpoch& train_epoch, metering::MemoryLedger* ledger = nullptr);

// One OPTB file per batch, named batch_<epoch>_<index>.optb.
void dump(std::span<const codec::EncodedBatch> batches, const std::filesystem::path& dir,
          std::size_t epoch);
// Load every batch_<epoch>_<index>.optb with contiguous indices from 0.
std::vector<codec::EncodedBatch> load(const std::filesystem::path& dir, std::size_t epoch);

}  // namespace optb::pipeline
