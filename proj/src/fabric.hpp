#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <utility>
#include <vector>

#include "pwmini/memmon.hpp"
#include "pwmini/transport.hpp"

namespace pwmini::transport::detail {

// Messages waiting for one destination rank, keyed by (source, wire tag).
class Mailbox {
 public:
  void deliver(int src, Message msg);
  Message take(int src, std::uint32_t tag, const std::atomic<bool>& shut);
  std::optional<Message> try_take(int src, std::uint32_t tag, const std::atomic<bool>& shut);
  void wake_all();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<int, std::uint32_t>, std::deque<Message>> queues_;
};

struct RankSlot {
  Mailbox mailbox;
  Counters counters;
  memmon::MemoryLedger ledger;
  std::mt19937_64 jitter_rng;
};

// Shared state of one world of ranks. The in-process fabric delivers
// straight into the destination mailbox; the socket fabric overrides
// `transmit` to push frames through kernel sockets.
class Fabric : public std::enable_shared_from_this<Fabric> {
 public:
  explicit Fabric(const WorldOptions& opts);
  virtual ~Fabric() = default;

  int size() const { return size_; }
  Backend backend() const { return backend_; }

  void post(int src, int dst, Message msg);
  Message take(int dst, int src, std::uint32_t tag);
  std::optional<Message> try_take(int dst, int src, std::uint32_t tag);

  virtual void shutdown();
  bool is_shut_down() const { return shut_.load(); }

  RankSlot& slot(int global) { return *slots_[static_cast<std::size_t>(global)]; }

  // Context id for a communicator; equal keys map to the same id.
  std::uint32_t context_for(std::uint32_t parent, const std::vector<int>& globals);

  World root_world(int rank);
  World make_world(std::shared_ptr<const std::vector<int>> members, int self, std::uint32_t ctx);

 protected:
  virtual void transmit(int src, int dst, Message msg);
  void deliver_local(int src, int dst, Message msg);

  int size_;
  Backend backend_;
  bool jitter_;
  std::atomic<bool> shut_{false};
  std::vector<std::unique_ptr<RankSlot>> slots_;

 private:
  std::mutex ctx_mu_;
  std::map<std::pair<std::uint32_t, std::vector<int>>, std::uint32_t> contexts_;
  std::uint32_t next_ctx_ = 1;
  std::shared_ptr<const std::vector<int>> root_members_;
};

std::shared_ptr<Fabric> make_socket_fabric(const WorldOptions& opts);

}  // namespace pwmini::transport::detail
