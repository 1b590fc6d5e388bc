#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "optb/checkpoint.hpp"
#include "optb/codec.hpp"
#include "optb/dataset.hpp"
#include "optb/metering.hpp"
#include "optb/nn.hpp"
#include "optb/pipeline.hpp"

namespace optb::cli {

// Raw pixels map onto [0, 1] for training; both the direct path and the
// decode layer use this exact constant so their float streams match bit for
// bit.
inline constexpr float kPixelScale = 1.0f / 255.0f;

struct RunConfig {
  // dataset
  enum class Source : std::uint8_t { Blobs, Records };
  Source source = Source::Blobs;
  std::filesystem::path records_path;
  codec::ImageShape shape{8, 8, 1};
  std::size_t num_classes = 10;
  std::size_t blob_examples = 16384;
  double blob_spread = 110.0;
  double blob_sigma = 16.0;
  std::uint64_t data_seed = 7;

  // model: hidden_layers dense+activation pairs, then the output dense
  std::size_t hidden_layers = 16;
  std::size_t hidden_width = 64;
  nn::ActivationKind activation = nn::ActivationKind::ReLU;
  nn::LossKind loss_kind = nn::LossKind::MSE;

  // training
  std::size_t epochs = 10;
  std::size_t batch = 256;
  float learning_rate = 0.5f;
  float loss_scale = 1.0f;
  std::uint64_t seed = 1;
  std::vector<double> class_weights;  // empty = uniform

  // optimization pipeline
  bool encoded_batches = false;  // E-D
  codec::CodecMode mode = codec::CodecMode::ExactInt128;
  bool mixed_precision = false;  // M-P
  std::string checkpoint_plan = "full";  // S-C: "sqrt", "auto:<k>" or indices
  double prep_cost_ms = 0.0;     // injected per-epoch preparation cost
  bool ed_serialize = false;     // disable producer overlap (measurement aid)
  std::filesystem::path dump_dir;
  bool dump_to_disk = false;
  bool warm_start = false;

  bool suppress_timings = false;  // zero wall-clock columns for bit-exact CSVs

  std::string pipeline_label() const;
  // '#'-prefixed config echo embedded at the top of every output CSV.
  std::string echo() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  double prepare_ms = 0.0;
  double train_ms = 0.0;
  std::array<std::size_t, metering::kCategoryCount> peak_bytes{};
  std::size_t peak_total = 0;
};

struct RunResult {
  std::vector<EpochMetrics> epochs;
  std::vector<float> step_losses;  // per training step, in order
  std::vector<double> step_ms;
  std::array<std::size_t, metering::kCategoryCount> peak_bytes{};
  std::size_t peak_total = 0;
  double final_accuracy = 0.0;
  double final_mean_loss = 0.0;
  double total_ms = 0.0;
  std::string plan_used;
  pipeline::TimingReport pipeline_report;  // filled for encoded-batch runs
};

RunResult train_run(const RunConfig& config, metering::MemoryLedger* ledger_out = nullptr);

void write_train_csv(std::ostream& out, const RunConfig& config, const RunResult& result);

struct BenchRow {
  std::string pipeline;
  double accuracy = 0.0;
  double total_ms = 0.0;
  std::array<std::size_t, metering::kCategoryCount> peak_bytes{};
  std::size_t peak_total = 0;
};

// One row per pipeline token ("B", "E-D", "M-P", "S-C" and '+' combinations),
// all runs sharing the base config and seed.
std::vector<BenchRow> bench_run(const RunConfig& base, const std::vector<std::string>& pipelines);

void write_bench_csv(std::ostream& out, const RunConfig& config,
                     const std::vector<BenchRow>& rows);

data::Dataset build_dataset(const RunConfig& config);

}  // namespace optb::cli
