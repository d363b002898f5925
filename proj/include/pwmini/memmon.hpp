#pragma once

// Runtime memory ledger. Instrumentation is explicit: call sites record
// their large allocations by label and category.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pwmini::transport {
class World;
}

namespace pwmini::memmon {

enum class Category : int { global = 0, temporary = 1, dft_data = 2 };
inline constexpr int kCategoryCount = 3;

std::string_view category_name(Category c);

struct Snapshot {
  std::array<std::int64_t, kCategoryCount> totals{};
  std::array<std::int64_t, kCategoryCount> category_high_water{};
  std::int64_t total = 0;
  std::int64_t high_water = 0;

  std::int64_t of(Category c) const { return totals[static_cast<int>(c)]; }
  std::int64_t peak(Category c) const { return category_high_water[static_cast<int>(c)]; }
};

struct LedgerOptions {
  // A change is reported when |delta| >= max(min_report_bytes,
  // report_fraction * total before the change).
  std::int64_t min_report_bytes = std::int64_t{1} << 20;
  double report_fraction = 0.05;
};

class MemoryLedger {
 public:
  using Sink = std::function<void(const std::string&)>;

  explicit MemoryLedger(int rank = 0, LedgerOptions opts = {});

  void record_alloc(const std::string& label, Category category, std::int64_t bytes);
  void record_free(const std::string& label);

  Snapshot snapshot() const { return snap_; }

  // Resets high-water marks to the current totals.
  void reset_high_water();

  bool contains(const std::string& label) const { return live_.count(label) != 0; }
  std::size_t live_count() const { return live_.size(); }

  // Report lines are kept in memory and forwarded to the sink if one is set.
  const std::vector<std::string>& report_lines() const { return lines_; }
  void set_sink(Sink sink) { sink_ = std::move(sink); }
  void set_options(LedgerOptions opts) { opts_ = opts; }
  int rank() const { return rank_; }

 private:
  struct Entry {
    Category category;
    std::int64_t bytes;
  };

  void apply(const std::string& label, Category category, std::int64_t delta);

  int rank_;
  LedgerOptions opts_;
  std::map<std::string, Entry> live_;
  Snapshot snap_;
  std::vector<std::string> lines_;
  Sink sink_;
};

// RAII registration of one ledger entry.
class ScopedRecord {
 public:
  ScopedRecord(MemoryLedger* ledger, std::string label, Category category, std::int64_t bytes)
      : ledger_(ledger), label_(std::move(label)) {
    if (ledger_) ledger_->record_alloc(label_, category, bytes);
  }
  ScopedRecord(const ScopedRecord&) = delete;
  ScopedRecord& operator=(const ScopedRecord&) = delete;
  ~ScopedRecord() {
    if (ledger_) ledger_->record_free(label_);
  }

 private:
  MemoryLedger* ledger_;
  std::string label_;
};

// Collective over the world: rank 0 receives every rank's snapshot (indexed
// by rank); other ranks receive an empty vector.
std::vector<Snapshot> gather_report(transport::World& world, const MemoryLedger& ledger);

}  // namespace pwmini::memmon
