#include "pwmini/memmon.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "pwmini/error.hpp"
#include "pwmini/transport.hpp"

namespace pwmini::memmon {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::global: return "global";
    case Category::temporary: return "temporary";
    case Category::dft_data: return "dft_data";
  }
  return "unknown";
}

MemoryLedger::MemoryLedger(int rank, LedgerOptions opts) : rank_(rank), opts_(opts) {}

void MemoryLedger::record_alloc(const std::string& label, Category category, std::int64_t bytes) {
  if (bytes < 0) throw InvalidArgument("negative allocation size for '" + label + "'");
  if (live_.count(label)) throw InvalidArgument("duplicate live label '" + label + "'");
  live_.emplace(label, Entry{category, bytes});
  apply(label, category, bytes);
}

void MemoryLedger::record_free(const std::string& label) {
  auto it = live_.find(label);
  if (it == live_.end()) throw InvalidArgument("free of unknown label '" + label + "'");
  Entry e = it->second;
  live_.erase(it);
  apply(label, e.category, -e.bytes);
}

void MemoryLedger::reset_high_water() {
  snap_.high_water = snap_.total;
  snap_.category_high_water = snap_.totals;
}

void MemoryLedger::apply(const std::string& label, Category category, std::int64_t delta) {
  const std::int64_t before = snap_.total;
  const int c = static_cast<int>(category);
  snap_.totals[static_cast<std::size_t>(c)] += delta;
  snap_.total += delta;
  snap_.high_water = std::max(snap_.high_water, snap_.total);
  snap_.category_high_water[static_cast<std::size_t>(c)] =
      std::max(snap_.category_high_water[static_cast<std::size_t>(c)],
               snap_.totals[static_cast<std::size_t>(c)]);

  const double threshold = std::max(static_cast<double>(opts_.min_report_bytes),
                                    opts_.report_fraction * static_cast<double>(before));
  if (static_cast<double>(std::llabs(delta)) < threshold) return;

  std::ostringstream os;
  os << "MEM rank=" << rank_ << " cat=" << category_name(category) << " label=" << label
     << " delta=" << (delta >= 0 ? "+" : "") << delta << " total=" << snap_.total
     << " hwm=" << snap_.high_water;
  lines_.push_back(os.str());
  if (sink_) sink_(lines_.back());
}

std::vector<Snapshot> gather_report(transport::World& world, const MemoryLedger& ledger) {
  constexpr std::uint32_t kTag = 0xFE10;
  auto encode = [](const Snapshot& s) {
    std::vector<std::int64_t> v;
    v.insert(v.end(), s.totals.begin(), s.totals.end());
    v.insert(v.end(), s.category_high_water.begin(), s.category_high_water.end());
    v.push_back(s.total);
    v.push_back(s.high_water);
    return v;
  };
  auto decode = [](const std::vector<std::int64_t>& v) {
    if (v.size() != 2 * kCategoryCount + 2) throw Error("malformed memory report");
    Snapshot s;
    std::copy_n(v.begin(), kCategoryCount, s.totals.begin());
    std::copy_n(v.begin() + kCategoryCount, kCategoryCount, s.category_high_water.begin());
    s.total = v[2 * kCategoryCount];
    s.high_water = v[2 * kCategoryCount + 1];
    return s;
  };

  if (world.rank() != 0) {
    auto v = encode(ledger.snapshot());
    world.send<std::int64_t>(0, kTag, v);
    return {};
  }
  std::vector<Snapshot> out(static_cast<std::size_t>(world.size()));
  out[0] = ledger.snapshot();
  for (int r = 1; r < world.size(); ++r) {
    out[static_cast<std::size_t>(r)] = decode(world.recv<std::int64_t>(r, kTag));
  }
  return out;
}

}  // namespace pwmini::memmon
