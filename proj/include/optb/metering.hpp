#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "optb/errors.hpp"

namespace optb::metering {

enum class Category : std::uint8_t {
  Activations = 0,
  Weights = 1,
  MasterWeights = 2,
  Gradients = 3,
  EncodedBatches = 4,
};

inline constexpr std::size_t kCategoryCount = 5;

const char* category_name(Category c);

struct LedgerEvent {
  std::int64_t ts_ns = 0;
  Category category = Category::Activations;
  std::int64_t delta_bytes = 0;
  std::string label;
  std::size_t total_after = 0;  // tracked bytes across all categories
};

// Byte-accurate accounting of live tensor memory. This meters logical tensor
// bytes, not process RSS: logical bytes are deterministic, so every peak in
// the test suite is an exact assertion rather than a measurement band.
// Internally serialized; the pipeline producer reports encoded-batch deltas
// through the same instance at hand-off points.
class MemoryLedger {
public:
  void track_alloc(Category category, std::size_t bytes, std::string_view label = {});
  void track_free(Category category, std::size_t bytes, std::string_view label = {});

  std::size_t current(Category category) const;
  std::size_t peak(Category category) const;
  std::size_t total_current() const;
  std::size_t total_peak() const;  // high-water mark of the category sum

  void set_logging(bool enabled);
  std::vector<LedgerEvent> events() const;

  // Event-driven timeline of total tracked bytes, one sample per event.
  std::vector<std::size_t> timeline() const;

  // CSV: ts_ns,category,delta_bytes,label
  void write_event_csv(std::ostream& out) const;
  // CSV: category,peak_bytes
  void write_summary_csv(std::ostream& out) const;

private:
  mutable std::mutex mu_;
  std::array<std::size_t, kCategoryCount> current_{};
  std::array<std::size_t, kCategoryCount> peak_{};
  std::size_t total_current_ = 0;
  std::size_t total_peak_ = 0;
  bool logging_ = true;
  std::vector<LedgerEvent> events_;

  void record(Category category, std::int64_t delta, std::string_view label);
};

// Wall-clock phase timing; phases must nest properly.
class PhaseTimer {
public:
  void start(std::string_view name);
  void stop(std::string_view name);
  double total_ms(std::string_view name) const;
  bool has_phase(std::string_view name) const;

  // CSV: phase,total_ms
  void write_csv(std::ostream& out) const;

private:
  struct Phase {
    std::string name;
    double total_ms = 0.0;
  };
  std::vector<Phase> phases_;
  std::vector<std::pair<std::string, std::int64_t>> open_;  // name, start ns

  Phase* find(std::string_view name);
  const Phase* find(std::string_view name) const;
};

}  // namespace optb::metering
