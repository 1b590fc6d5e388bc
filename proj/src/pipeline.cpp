#include "optb/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace optb::pipeline {

using Clock = std::chrono::steady_clock;
using metering::Category;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

void sleep_ms(double ms) {
  if (ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

struct Interval {
  Clock::time_point begin{};
  Clock::time_point end{};
};

double overlap_ms(const Interval& a, const Interval& b) {
  const auto lo = std::max(a.begin, b.begin);
  const auto hi = std::min(a.end, b.end);
  return hi > lo ? ms_between(lo, hi) : 0.0;
}

// Depth-one rendezvous: producer parks one Ready buffer, consumer takes it.
class HandoffSlot {
public:
  // Blocks until the slot is free so the producer starts the next epoch only
  // once the pending buffer has been taken; this is what bounds live buffers
  // to two. Returns false if the consumer has stopped.
  bool wait_space() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_space_.wait(lock, [&] { return !full_ || stopped_; });
    return !stopped_;
  }

  // Blocks while a Ready buffer is already pending. Returns false if the
  // consumer has stopped.
  bool push(EpochBuffer&& buffer) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_space_.wait(lock, [&] { return !full_ || stopped_; });
    if (stopped_) return false;
    buffer_ = std::move(buffer);
    full_ = true;
    cv_data_.notify_one();
    return true;
  }

  void push_error(std::exception_ptr error) {
    std::lock_guard<std::mutex> lock(mu_);
    error_ = std::move(error);
    cv_data_.notify_one();
  }

  // Blocks until a buffer or a producer error is available; rethrows the
  // error so it surfaces before the affected epoch begins.
  EpochBuffer pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_data_.wait(lock, [&] { return full_ || error_; });
    if (!full_ && error_) std::rethrow_exception(error_);
    EpochBuffer out = std::move(buffer_);
    full_ = false;
    cv_space_.notify_one();
    return out;
  }

  void stop() {
    std::lock_guard<std::mutex> lock(mu_);
    stopped_ = true;
    cv_space_.notify_one();
  }

  bool stopped() const {
    std::lock_guard<std::mutex> lock(mu_);
    return stopped_;
  }

private:
  mutable std::mutex mu_;
  std::condition_variable cv_space_;
  std::condition_variable cv_data_;
  EpochBuffer buffer_;
  bool full_ = false;
  bool stopped_ = false;
  std::exception_ptr error_;
};

}  // namespace

std::size_t EpochBuffer::byte_size() const {
  std::size_t bytes = 0;
  for (const codec::EncodedBatch& b : batches) bytes += b.byte_size();
  return bytes;
}

void TimingReport::write_csv(std::ostream& out) const {
  out << "epoch,prepare_ms,train_ms,overlap_ms\n";
  for (const EpochTiming& e : epochs) {
    out << e.epoch << ',' << e.prepare_ms << ',' << e.train_ms << ',' << e.overlap_ms << '\n';
  }
}

namespace {

EpochBuffer prepare_epoch(const PipelineConfig& config, const BatchBuilder& build_batch,
                          std::size_t epoch) {
  EpochBuffer buffer;
  buffer.epoch_id = epoch;
  buffer.status = BufferStatus::Preparing;
  buffer.batches.reserve(config.batches_per_epoch);
  for (std::size_t b = 0; b < config.batches_per_epoch; ++b) {
    buffer.batches.push_back(codec::encode(build_batch(epoch, b), config.mode));
  }
  sleep_ms(config.injected_prepare_ms);
  if (config.dump_to_disk) dump(buffer.batches, config.dump_dir, epoch);
  buffer.status = BufferStatus::Ready;
  return buffer;
}

TimingReport run_serial(const PipelineConfig& config, const BatchBuilder& build_batch,
                        const TrainEpoch& train_epoch, metering::MemoryLedger* ledger) {
  TimingReport report;
  const auto run_begin = Clock::now();
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochTiming timing;
    timing.epoch = e;
    const auto p0 = Clock::now();
    EpochBuffer buffer = prepare_epoch(config, build_batch, e);
    if (ledger) ledger->track_alloc(Category::EncodedBatches, buffer.byte_size(), "epoch_buffer");
    const auto p1 = Clock::now();
    timing.prepare_ms = ms_between(p0, p1);
    if (e == 0) report.cold_prepare_ms = timing.prepare_ms;
    train_epoch(buffer);
    buffer.status = BufferStatus::Consumed;
    if (ledger) ledger->track_free(Category::EncodedBatches, buffer.byte_size(), "epoch_buffer");
    timing.train_ms = ms_between(p1, Clock::now());
    report.epochs.push_back(timing);
  }
  report.total_ms = ms_between(run_begin, Clock::now());
  return report;
}

TimingReport run_warm(const PipelineConfig& config, const TrainEpoch& train_epoch,
                      metering::MemoryLedger* ledger) {
  // Data is already dumped in encoded form: no preparation phase at all.
  TimingReport report;
  const auto run_begin = Clock::now();
  std::vector<codec::EncodedBatch> batches = load(config.dump_dir, 0);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochBuffer buffer;
    buffer.epoch_id = e;
    buffer.batches = batches;
    buffer.status = BufferStatus::Ready;
    if (ledger) ledger->track_alloc(Category::EncodedBatches, buffer.byte_size(), "epoch_buffer");
    EpochTiming timing;
    timing.epoch = e;
    const auto t0 = Clock::now();
    train_epoch(buffer);
    buffer.status = BufferStatus::Consumed;
    if (ledger) ledger->track_free(Category::EncodedBatches, buffer.byte_size(), "epoch_buffer");
    timing.train_ms = ms_between(t0, Clock::now());
    report.epochs.push_back(timing);
  }
  report.total_ms = ms_between(run_begin, Clock::now());
  return report;
}

}  // namespace

TimingReport run(const PipelineConfig& config, const BatchBuilder& build_batch,
                 const TrainEpoch& train_epoch, metering::MemoryLedger* ledger) {
  if (config.epochs == 0 || config.batches_per_epoch == 0) {
    throw Error("pipeline: epochs and batches_per_epoch must be positive");
  }
  if (config.warm_start) return run_warm(config, train_epoch, ledger);
  if (config.serialize) return run_serial(config, build_batch, train_epoch, ledger);

  TimingReport report;
  report.epochs.resize(config.epochs);
  std::vector<Interval> prepare_window(config.epochs);
  std::vector<Interval> train_window(config.epochs);

  HandoffSlot slot;
  const auto run_begin = Clock::now();

  std::thread producer([&] {
    try {
      for (std::size_t e = 0; e < config.epochs; ++e) {
        if (!slot.wait_space()) return;
        const auto p0 = Clock::now();
        EpochBuffer buffer = prepare_epoch(config, build_batch, e);
        const auto p1 = Clock::now();
        prepare_window[e] = Interval{p0, p1};
        report.epochs[e].prepare_ms = ms_between(p0, p1);
        const std::size_t bytes = buffer.byte_size();
        if (ledger) ledger->track_alloc(Category::EncodedBatches, bytes, "epoch_buffer");
        if (!slot.push(std::move(buffer))) {
          if (ledger) ledger->track_free(Category::EncodedBatches, bytes, "epoch_buffer");
          return;
        }
      }
    } catch (...) {
      slot.push_error(std::current_exception());
    }
  });

  try {
    for (std::size_t e = 0; e < config.epochs; ++e) {
      EpochBuffer buffer = slot.pop();
      if (e == 0) report.cold_prepare_ms = ms_between(run_begin, Clock::now());
      const auto t0 = Clock::now();
      train_epoch(buffer);
      buffer.status = BufferStatus::Consumed;
      const auto t1 = Clock::now();
      train_window[e] = Interval{t0, t1};
      report.epochs[e].epoch = e;
      report.epochs[e].train_ms = ms_between(t0, t1);
      if (ledger) {
        ledger->track_free(Category::EncodedBatches, buffer.byte_size(), "epoch_buffer");
      }
    }
  } catch (...) {
    slot.stop();
    producer.join();
    throw;
  }
  producer.join();
  report.total_ms = ms_between(run_begin, Clock::now());
  for (std::size_t e = 0; e + 1 < config.epochs; ++e) {
    report.epochs[e].overlap_ms = overlap_ms(train_window[e], prepare_window[e + 1]);
  }
  return report;
}

void dump(std::span<const codec::EncodedBatch> batches, const std::filesystem::path& dir,
          std::size_t epoch) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("dump: cannot create directory " + dir.string());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const std::filesystem::path path =
        dir / ("batch_" + std::to_string(epoch) + "_" + std::to_string(i) + ".optb");
    codec::write_optb_file(path, batches[i]);
  }
}

std::vector<codec::EncodedBatch> load(const std::filesystem::path& dir, std::size_t epoch) {
  std::vector<codec::EncodedBatch> batches;
  for (std::size_t i = 0;; ++i) {
    const std::filesystem::path path =
        dir / ("batch_" + std::to_string(epoch) + "_" + std::to_string(i) + ".optb");
    if (!std::filesystem::exists(path)) break;
    batches.push_back(codec::read_optb_file(path));
  }
  if (batches.empty()) {
    throw FormatError("load: no batch files for epoch " + std::to_string(epoch) + " in " +
                      dir.string());
  }
  return batches;
}

}  // namespace optb::pipeline
