#include "optb/metering.hpp"

#include <chrono>
#include <ostream>

namespace optb::metering {

namespace {

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

const char* category_name(Category c) {
  switch (c) {
    case Category::Activations:
      return "activations";
    case Category::Weights:
      return "weights";
    case Category::MasterWeights:
      return "master_weights";
    case Category::Gradients:
      return "gradients";
    case Category::EncodedBatches:
      return "encoded_batches";
  }
  return "?";
}

void MemoryLedger::record(Category category, std::int64_t delta, std::string_view label) {
  if (logging_) {
    events_.push_back(LedgerEvent{now_ns(), category, delta, std::string(label), total_current_});
  }
}

void MemoryLedger::track_alloc(Category category, std::size_t bytes, std::string_view label) {
  std::lock_guard<std::mutex> lock(mu_);
  const auto idx = static_cast<std::size_t>(category);
  current_[idx] += bytes;
  total_current_ += bytes;
  if (current_[idx] > peak_[idx]) peak_[idx] = current_[idx];
  if (total_current_ > total_peak_) total_peak_ = total_current_;
  record(category, static_cast<std::int64_t>(bytes), label);
}

void MemoryLedger::track_free(Category category, std::size_t bytes, std::string_view label) {
  std::lock_guard<std::mutex> lock(mu_);
  const auto idx = static_cast<std::size_t>(category);
  if (bytes > current_[idx]) {
    throw AccountingError(std::string("ledger: freeing ") + std::to_string(bytes) +
                          " bytes from " + category_name(category) + " which holds " +
                          std::to_string(current_[idx]));
  }
  current_[idx] -= bytes;
  total_current_ -= bytes;
  record(category, -static_cast<std::int64_t>(bytes), label);
}

std::size_t MemoryLedger::current(Category category) const {
  std::lock_guard<std::mutex> lock(mu_);
  return current_[static_cast<std::size_t>(category)];
}

std::size_t MemoryLedger::peak(Category category) const {
  std::lock_guard<std::mutex> lock(mu_);
  return peak_[static_cast<std::size_t>(category)];
}

std::size_t MemoryLedger::total_current() const {
  std::lock_guard<std::mutex> lock(mu_);
  return total_current_;
}

std::size_t MemoryLedger::total_peak() const {
  std::lock_guard<std::mutex> lock(mu_);
  return total_peak_;
}

void MemoryLedger::set_logging(bool enabled) {
  std::lock_guard<std::mutex> lock(mu_);
  logging_ = enabled;
}

std::vector<LedgerEvent> MemoryLedger::events() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_;
}

std::vector<std::size_t> MemoryLedger::timeline() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::size_t> samples;
  samples.reserve(events_.size());
  for (const LedgerEvent& e : events_) samples.push_back(e.total_after);
  return samples;
}

void MemoryLedger::write_event_csv(std::ostream& out) const {
  out << "ts_ns,category,delta_bytes,label\n";
  for (const LedgerEvent& e : events()) {
    out << e.ts_ns << ',' << category_name(e.category) << ',' << e.delta_bytes << ',' << e.label
        << '\n';
  }
}

void MemoryLedger::write_summary_csv(std::ostream& out) const {
  out << "category,peak_bytes\n";
  std::lock_guard<std::mutex> lock(mu_);
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    out << category_name(static_cast<Category>(i)) << ',' << peak_[i] << '\n';
  }
  out << "total," << total_peak_ << '\n';
}

PhaseTimer::Phase* PhaseTimer::find(std::string_view name) {
  for (Phase& p : phases_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const PhaseTimer::Phase* PhaseTimer::find(std::string_view name) const {
  for (const Phase& p : phases_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void PhaseTimer::start(std::string_view name) {
  open_.emplace_back(std::string(name), now_ns());
}

void PhaseTimer::stop(std::string_view name) {
  if (open_.empty() || open_.back().first != name) {
    throw Error("phase timer: stop(" + std::string(name) + ") does not match the open phase");
  }
  const double ms = static_cast<double>(now_ns() - open_.back().second) * 1e-6;
  open_.pop_back();
  if (Phase* p = find(name)) {
    p->total_ms += ms;
  } else {
    phases_.push_back(Phase{std::string(name), ms});
  }
}

double PhaseTimer::total_ms(std::string_view name) const {
  const Phase* p = find(name);
  return p ? p->total_ms : 0.0;
}

bool PhaseTimer::has_phase(std::string_view name) const { return find(name) != nullptr; }

void PhaseTimer::write_csv(std::ostream& out) const {
  out << "phase,total_ms\n";
  for (const Phase& p : phases_) out << p.name << ',' << p.total_ms << '\n';
}

}  // namespace optb::metering
