#include "optb/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>
#include <thread>

namespace optb::cli {

using Clock = std::chrono::steady_clock;
using metering::Category;
using metering::MemoryLedger;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<nn::LayerSpec> model_specs(const RunConfig& config, std::size_t input_features) {
  std::vector<nn::LayerSpec> specs;
  if (config.encoded_batches) {
    specs.push_back(nn::DecodeSpec{config.mode, config.batch, kPixelScale});
  }
  std::size_t in = input_features;
  for (std::size_t i = 0; i < config.hidden_layers; ++i) {
    specs.push_back(nn::DenseSpec{in, config.hidden_width});
    specs.push_back(nn::ActivationSpec{config.activation});
    in = config.hidden_width;
  }
  specs.push_back(nn::DenseSpec{in, config.num_classes});
  return specs;
}

std::vector<double> effective_weights(const RunConfig& config) {
  if (!config.class_weights.empty()) return config.class_weights;
  return std::vector<double>(config.num_classes, 1.0 / static_cast<double>(config.num_classes));
}

// The whole run's batch streams are materialized up front: the stream depends
// only on (weights, batch, seed, dataset), never on which pipeline consumes
// it.
std::vector<std::vector<sampler::Draw>> draw_stream(const RunConfig& config,
                                                    const data::Dataset& dataset) {
  const std::vector<double> weights = effective_weights(config);
  sampler::SamplerPlan plan = sampler::plan(weights, config.batch, config.seed);
  sampler::ClassIndex index =
      sampler::ClassIndex::from_labels(dataset.labels, config.num_classes);
  sampler::BatchCursor cursor(std::move(plan), std::move(index));
  std::vector<std::vector<sampler::Draw>> stream;
  stream.reserve(config.epochs * (dataset.size() / config.batch));
  const std::size_t batches_per_epoch = dataset.size() / config.batch;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    for (std::size_t b = 0; b < batches_per_epoch; ++b) stream.push_back(cursor.next());
  }
  return stream;
}

std::vector<std::size_t> example_indices(const std::vector<sampler::Draw>& draws) {
  std::vector<std::size_t> idx(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) idx[i] = draws[i].example;
  return idx;
}

std::vector<int> batch_labels(const std::vector<sampler::Draw>& draws,
                              const data::Dataset& dataset) {
  std::vector<int> labels(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    labels[i] = dataset.labels[draws[i].example];
  }
  return labels;
}

// Split one training batch into capacity-sized containers.
std::vector<codec::EncodedBatch> encode_chunks(const data::Dataset& dataset,
                                               std::span<const std::size_t> examples,
                                               codec::CodecMode mode) {
  const std::size_t cap = codec::capacity(mode);
  std::vector<codec::EncodedBatch> chunks;
  for (std::size_t base = 0; base < examples.size(); base += cap) {
    const std::size_t n = std::min(cap, examples.size() - base);
    std::vector<codec::Image> images;
    images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) images.push_back(dataset.image_of(examples[base + i]));
    chunks.push_back(codec::encode(images, mode));
  }
  return chunks;
}

double evaluate_accuracy(const nn::Network& net, const data::Dataset& dataset,
                         const RunConfig& config) {
  std::size_t correct = 0;
  const std::size_t n = dataset.size();
  const std::size_t group = config.batch;
  std::vector<std::size_t> indices;
  for (std::size_t base = 0; base < n; base += group) {
    const std::size_t rows = std::min(group, n - base);
    indices.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) indices[i] = base + i;
    Tensor logits;
    if (net.starts_with_decode()) {
      const std::vector<codec::EncodedBatch> chunks =
          encode_chunks(dataset, indices, config.mode);
      logits = nn::forward(net, chunks);
    } else {
      logits = nn::forward(net, dataset.batch_tensor(indices, kPixelScale));
    }
    const std::size_t cols = logits.extent(1);
    std::span<const float> lv = logits.values();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = lv.data() + r * cols;
      std::size_t best = 0;
      for (std::size_t j = 1; j < cols; ++j) {
        if (row[j] > row[best]) best = j;
      }
      if (static_cast<int>(best) == dataset.labels[base + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

struct StepOutcome {
  double loss = 0.0;
  double ms = 0.0;
};

StepOutcome one_step(nn::TrainState& state, const checkpoint::SegmentPlan& plan,
                     MemoryLedger& ledger, const Tensor* input,
                     std::span<const codec::EncodedBatch> chunks, const Tensor& target,
                     const RunConfig& config) {
  const auto t0 = Clock::now();
  checkpoint::StepResult step =
      input ? checkpoint::checkpointed_backward(state.network, *input, target, plan, &ledger,
                                                config.loss_kind, config.loss_scale)
            : checkpoint::checkpointed_backward(state.network, chunks, target, plan, &ledger,
                                                config.loss_kind, config.loss_scale);
  nn::sgd_step(state, step.grads);
  ledger.track_free(Category::Gradients, step.grads.byte_size(), "step:grads_applied");
  return StepOutcome{step.loss, ms_since(t0)};
}

void snapshot_peaks(const MemoryLedger& ledger,
                    std::array<std::size_t, metering::kCategoryCount>& peaks,
                    std::size_t& total) {
  for (std::size_t c = 0; c < metering::kCategoryCount; ++c) {
    peaks[c] = ledger.peak(static_cast<Category>(c));
  }
  total = ledger.total_peak();
}

}  // namespace

data::Dataset build_dataset(const RunConfig& config) {
  if (config.source == RunConfig::Source::Records) {
    return data::load_records(config.records_path, config.shape, config.num_classes);
  }
  return data::make_blobs(config.blob_examples, config.num_classes, config.shape,
                          config.blob_spread, config.blob_sigma, config.data_seed);
}

std::string RunConfig::pipeline_label() const {
  std::string label;
  auto append = [&](const char* tag) {
    if (!label.empty()) label += '+';
    label += tag;
  };
  if (encoded_batches) append("E-D");
  if (checkpoint_plan != "full") append("S-C");
  if (mixed_precision) append("M-P");
  return label.empty() ? "B" : label;
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  out << "# pipeline=" << pipeline_label() << "\n";
  out << "# dataset="
      << (source == Source::Blobs ? "blobs" : std::string("records:") + records_path.string())
      << " shape=" << shape.height << 'x' << shape.width << 'x' << shape.channels
      << " classes=" << num_classes;
  if (source == Source::Blobs) {
    out << " examples=" << blob_examples << " spread=" << blob_spread << " sigma=" << blob_sigma
        << " data_seed=" << data_seed;
  }
  out << "\n";
  out << "# model=dense[" << hidden_layers << 'x' << hidden_width << ']'
      << (activation == nn::ActivationKind::ReLU ? "+relu" : "+sigmoid")
      << " loss=" << (loss_kind == nn::LossKind::CrossEntropy ? "crossentropy" : "mse") << "\n";
  out << "# epochs=" << epochs << " batch=" << batch << " lr=" << learning_rate
      << " seed=" << seed << " loss_scale=" << loss_scale << "\n";
  out << "# ed=" << (encoded_batches ? 1 : 0) << " mode=" << codec::mode_name(mode)
      << " mp=" << (mixed_precision ? 1 : 0) << " sc=" << checkpoint_plan
      << " prep_cost_ms=" << prep_cost_ms << "\n";
  std::string weights = "uniform";
  if (!class_weights.empty()) {
    weights.clear();
    for (std::size_t i = 0; i < class_weights.size(); ++i) {
      if (i) weights += ',';
      weights += std::to_string(class_weights[i]);
    }
  }
  out << "# class_weights=" << weights << "\n";
  return out.str();
}

RunResult train_run(const RunConfig& config, MemoryLedger* ledger_out) {
  if (config.batch == 0 || config.epochs == 0) {
    throw Error("train: batch and epochs must be positive");
  }
  const data::Dataset dataset = build_dataset(config);
  if (dataset.size() < config.batch) {
    throw Error("train: dataset smaller than one batch");
  }
  if (config.encoded_batches && dataset.size() % config.batch != 0) {
    throw Error("train: encoded-batch runs need a dataset size divisible by the batch size");
  }
  const std::size_t batches_per_epoch = dataset.size() / config.batch;
  const std::size_t input_features = dataset.shape.pixel_count();

  const std::vector<nn::LayerSpec> specs = model_specs(config, input_features);
  nn::TrainState state;
  state.network = nn::Network::make(specs, config.mixed_precision
                                               ? nn::Precision::MixedPrecision
                                               : nn::Precision::SinglePrecision,
                                    config.seed);
  state.learning_rate = config.learning_rate;
  state.loss_kind = config.loss_kind;
  state.seed = config.seed;
  state.loss_scale = config.loss_scale;

  const checkpoint::ActivationSizeProfile profile =
      checkpoint::profile_network(state.network, config.batch, input_features);
  const checkpoint::SegmentPlan plan = checkpoint::parse_plan(config.checkpoint_plan, profile);

  MemoryLedger local_ledger;
  MemoryLedger& ledger = ledger_out ? *ledger_out : local_ledger;
  ledger.track_alloc(Category::Weights, state.network.param_bytes_stored(), "params");
  if (config.mixed_precision) {
    ledger.track_alloc(Category::MasterWeights, state.network.param_bytes_master(),
                       "master_params");
  }

  const std::vector<std::vector<sampler::Draw>> stream = draw_stream(config, dataset);

  RunResult result;
  result.plan_used = plan.to_string();
  result.step_losses.reserve(stream.size());
  result.step_ms.reserve(stream.size());
  const auto run_begin = Clock::now();

  auto finish_epoch = [&](std::size_t epoch, double loss_sum, double prepare_ms,
                          double train_ms) {
    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(batches_per_epoch);
    m.accuracy = evaluate_accuracy(state.network, dataset, config);
    m.prepare_ms = prepare_ms;
    m.train_ms = train_ms;
    snapshot_peaks(ledger, m.peak_bytes, m.peak_total);
    result.epochs.push_back(m);
  };

  if (config.encoded_batches) {
    const std::size_t cap = codec::capacity(config.mode);
    const std::size_t chunks_per_batch = (config.batch + cap - 1) / cap;

    pipeline::PipelineConfig pipe;
    pipe.epochs = config.epochs;
    pipe.batches_per_epoch = batches_per_epoch * chunks_per_batch;
    pipe.mode = config.mode;
    pipe.warm_start = config.warm_start;
    pipe.dump_dir = config.dump_dir;
    pipe.dump_to_disk = config.dump_to_disk;
    pipe.serialize = config.ed_serialize;
    pipe.injected_prepare_ms = config.prep_cost_ms;

    const auto build = [&](std::size_t epoch, std::size_t index) {
      const std::size_t batch_index = index / chunks_per_batch;
      const std::size_t chunk_index = index % chunks_per_batch;
      const std::vector<sampler::Draw>& draws =
          stream[epoch * batches_per_epoch + batch_index];
      const std::vector<std::size_t> examples = example_indices(draws);
      std::vector<codec::Image> images;
      const std::size_t base = chunk_index * cap;
      const std::size_t n = std::min(cap, examples.size() - base);
      images.reserve(n);
      for (std::size_t i = 0; i < n; ++i) images.push_back(dataset.image_of(examples[base + i]));
      return images;
    };

    const auto train_epoch = [&](const pipeline::EpochBuffer& buffer) {
      double loss_sum = 0.0;
      const auto t0 = Clock::now();
      for (std::size_t b = 0; b < batches_per_epoch; ++b) {
        const std::vector<sampler::Draw>& draws =
            stream[buffer.epoch_id * batches_per_epoch + b];
        const Tensor target = nn::one_hot(batch_labels(draws, dataset), config.num_classes);
        const std::span<const codec::EncodedBatch> chunks(
            buffer.batches.data() + b * chunks_per_batch, chunks_per_batch);
        const StepOutcome outcome =
            one_step(state, plan, ledger, nullptr, chunks, target, config);
        loss_sum += outcome.loss;
        result.step_losses.push_back(static_cast<float>(outcome.loss));
        result.step_ms.push_back(outcome.ms);
      }
      const double train_ms = ms_since(t0);
      finish_epoch(buffer.epoch_id, loss_sum, 0.0, train_ms);
    };

    result.pipeline_report = pipeline::run(pipe, build, train_epoch, &ledger);
    for (std::size_t e = 0;
         e < result.pipeline_report.epochs.size() && e < result.epochs.size(); ++e) {
      result.epochs[e].prepare_ms = result.pipeline_report.epochs[e].prepare_ms;
    }
  } else {
    for (std::size_t e = 0; e < config.epochs; ++e) {
      const auto p0 = Clock::now();
      if (config.prep_cost_ms > 0.0) {
        std::this_thread::sleep_for(
            std::chrono::duration<double, std::milli>(config.prep_cost_ms));
      }
      const double prepare_ms = ms_since(p0);
      double loss_sum = 0.0;
      const auto t0 = Clock::now();
      for (std::size_t b = 0; b < batches_per_epoch; ++b) {
        const std::vector<sampler::Draw>& draws = stream[e * batches_per_epoch + b];
        const std::vector<std::size_t> examples = example_indices(draws);
        const Tensor input = dataset.batch_tensor(examples, kPixelScale);
        const Tensor target = nn::one_hot(batch_labels(draws, dataset), config.num_classes);
        const StepOutcome outcome = one_step(state, plan, ledger, &input, {}, target, config);
        loss_sum += outcome.loss;
        result.step_losses.push_back(static_cast<float>(outcome.loss));
        result.step_ms.push_back(outcome.ms);
      }
      finish_epoch(e, loss_sum, prepare_ms, ms_since(t0));
    }
  }

  ledger.track_free(Category::Weights, state.network.param_bytes_stored(), "params");
  if (config.mixed_precision) {
    ledger.track_free(Category::MasterWeights, state.network.param_bytes_master(),
                      "master_params");
  }

  snapshot_peaks(ledger, result.peak_bytes, result.peak_total);
  result.total_ms = ms_since(run_begin);
  result.final_accuracy = result.epochs.back().accuracy;
  result.final_mean_loss = result.epochs.back().mean_loss;
  return result;
}

void write_train_csv(std::ostream& out, const RunConfig& config, const RunResult& result) {
  out << config.echo();
  out << "# plan=" << result.plan_used << "\n";
  out << "epoch,loss,accuracy";
  for (std::size_t c = 0; c < metering::kCategoryCount; ++c) {
    out << ",peak_" << metering::category_name(static_cast<Category>(c));
  }
  out << ",peak_total,prepare_ms,train_ms\n";
  const bool times = !config.suppress_timings;
  for (const EpochMetrics& m : result.epochs) {
    out << m.epoch << ',' << m.mean_loss << ',' << m.accuracy;
    for (std::size_t c = 0; c < metering::kCategoryCount; ++c) out << ',' << m.peak_bytes[c];
    out << ',' << m.peak_total << ',' << (times ? m.prepare_ms : 0.0) << ','
        << (times ? m.train_ms : 0.0) << "\n";
  }
}

namespace {

RunConfig config_for_pipeline(const RunConfig& base, const std::string& token) {
  RunConfig cfg = base;
  cfg.encoded_batches = false;
  cfg.mixed_precision = false;
  cfg.checkpoint_plan = "full";
  if (token == "B") return cfg;
  std::size_t pos = 0;
  while (pos < token.size()) {
    std::size_t next = token.find('+', pos);
    if (next == std::string::npos) next = token.size();
    const std::string part = token.substr(pos, next - pos);
    if (part == "ED" || part == "E-D") {
      cfg.encoded_batches = true;
    } else if (part == "MP" || part == "M-P") {
      cfg.mixed_precision = true;
    } else if (part == "SC" || part == "S-C") {
      cfg.checkpoint_plan = base.checkpoint_plan != "full" ? base.checkpoint_plan : "auto:4";
    } else {
      throw Error("bench: unknown pipeline token '" + part + "'");
    }
    pos = next + 1;
  }
  return cfg;
}

}  // namespace

std::vector<BenchRow> bench_run(const RunConfig& base,
                                const std::vector<std::string>& pipelines) {
  std::vector<BenchRow> rows;
  rows.reserve(pipelines.size());
  for (const std::string& token : pipelines) {
    const RunConfig cfg = config_for_pipeline(base, token);
    const auto t0 = Clock::now();
    const RunResult res = train_run(cfg);
    BenchRow row;
    row.pipeline = cfg.pipeline_label();
    row.accuracy = res.final_accuracy;
    row.total_ms = ms_since(t0);
    row.peak_bytes = res.peak_bytes;
    row.peak_total = res.peak_total;
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const RunConfig& config,
                     const std::vector<BenchRow>& rows) {
  out << config.echo();
  out << "pipeline,accuracy,total_ms";
  for (std::size_t c = 0; c < metering::kCategoryCount; ++c) {
    out << ",peak_" << metering::category_name(static_cast<Category>(c));
  }
  out << ",peak_total\n";
  const bool times = !config.suppress_timings;
  for (const BenchRow& row : rows) {
    out << row.pipeline << ',' << row.accuracy << ',' << (times ? row.total_ms : 0.0);
    for (std::size_t c = 0; c < metering::kCategoryCount; ++c) out << ',' << row.peak_bytes[c];
    out << ',' << row.peak_total << "\n";
  }
}

}  // namespace optb::cli
