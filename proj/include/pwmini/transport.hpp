#pragma once

// Rank-based message passing. Every rank runs the same body concurrently
// (SPMD); ranks talk only through send/recv/barrier on a World handle.
// Collectives and distributed kernels are layered on top of these three
// primitives.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pwmini/error.hpp"
#include "pwmini/memmon.hpp"

namespace pwmini::transport {

enum class Backend { inproc, socket };

Backend parse_backend(const std::string& name);
std::string backend_name(Backend b);
bool socket_backend_available();

// Element type codes, shared with the socket frame and the matrix file header.
enum class ElemType : std::uint32_t { bytes = 0, f64 = 1, c128 = 2, i64 = 3 };

std::size_t elem_size(ElemType t);

template <typename T>
constexpr ElemType elem_type_of();
template <>
constexpr ElemType elem_type_of<double>() { return ElemType::f64; }
template <>
constexpr ElemType elem_type_of<std::complex<double>>() { return ElemType::c128; }
template <>
constexpr ElemType elem_type_of<std::int64_t>() { return ElemType::i64; }
template <>
constexpr ElemType elem_type_of<std::byte>() { return ElemType::bytes; }

struct Message {
  std::uint32_t tag = 0;
  ElemType type = ElemType::bytes;
  std::vector<std::byte> payload;

  std::size_t element_count() const { return payload.size() / elem_size(type); }
};

// Socket frame: [u32 tag][u32 element-type code][u64 byte length][bytes],
// all little-endian.
inline constexpr std::size_t kFrameHeaderBytes = 16;

struct FrameHeader {
  std::uint32_t tag;
  ElemType type;
  std::uint64_t length;
};

std::vector<std::byte> encode_frame(const Message& msg);
FrameHeader decode_frame_header(std::span<const std::byte> header);
Message decode_frame(std::span<const std::byte> frame);

// User tags live in [0, kMaxUserTag]; the upper half of the 32-bit wire tag
// carries the communicator context.
inline constexpr std::uint32_t kMaxUserTag = 0xFEFF;

struct Counters {
  std::int64_t msgs_sent = 0;
  std::int64_t bytes_sent = 0;
  std::int64_t msgs_recv = 0;
  std::int64_t bytes_recv = 0;

  Counters operator-(const Counters& o) const {
    return {msgs_sent - o.msgs_sent, bytes_sent - o.bytes_sent, msgs_recv - o.msgs_recv,
            bytes_recv - o.bytes_recv};
  }
};

namespace detail {
class Fabric;
}

class World;

// Sends are buffered by both backends, so an isend completes on return.
class SendRequest {
 public:
  bool done() const { return true; }
  void wait() {}
};

class RecvRequest {
 public:
  RecvRequest() = default;

  // Blocks until the message is available.
  Message wait();
  // Nonblocking poll; true once the message has arrived.
  bool test();

  template <typename T>
  std::vector<T> wait_as();

 private:
  friend class World;
  RecvRequest(const World* world, int src, std::uint32_t tag) : world_(world), src_(src), tag_(tag) {}

  const World* world_ = nullptr;
  int src_ = -1;
  std::uint32_t tag_ = 0;
  std::optional<Message> msg_;
};

class World {
 public:
  int size() const { return static_cast<int>(members_->size()); }
  int rank() const { return self_; }
  Backend backend() const;

  // Global rank (in the root world) of local rank `r`.
  int global_rank(int r) const { return (*members_)[static_cast<std::size_t>(r)]; }

  void send_message(int dest, Message msg) const;
  Message recv_message(int src, std::uint32_t tag) const;
  std::optional<Message> try_recv_message(int src, std::uint32_t tag) const;

  template <typename T>
  void send(int dest, std::uint32_t tag, std::span<const T> data) const {
    Message m;
    m.tag = tag;
    m.type = elem_type_of<T>();
    m.payload.resize(data.size_bytes());
    if (!data.empty()) std::memcpy(m.payload.data(), data.data(), data.size_bytes());
    send_message(dest, std::move(m));
  }

  template <typename T>
  SendRequest isend(int dest, std::uint32_t tag, std::span<const T> data) const {
    send(dest, tag, data);
    return {};
  }

  template <typename T>
  std::vector<T> recv(int src, std::uint32_t tag) const {
    return unpack<T>(recv_message(src, tag));
  }

  // Receives exactly out.size() elements into `out`.
  template <typename T>
  void recv_into(int src, std::uint32_t tag, std::span<T> out) const {
    Message m = recv_message(src, tag);
    check_type(m, elem_type_of<T>());
    if (m.payload.size() != out.size_bytes()) throw Error("message length mismatch");
    if (!out.empty()) std::memcpy(out.data(), m.payload.data(), m.payload.size());
  }

  RecvRequest irecv(int src, std::uint32_t tag) const { return RecvRequest(this, src, tag); }

  void barrier() const;

  // Communicator over `members` (ranks of this world, renumbered in list
  // order). Non-members receive std::nullopt. No communication is needed.
  std::optional<World> subgroup(std::span<const int> members) const;

  // Traffic counters of this rank's process slot (shared by all subgroups).
  Counters counters() const;
  memmon::MemoryLedger& ledger() const;

  template <typename T>
  static std::vector<T> unpack(const Message& m) {
    check_type(m, elem_type_of<T>());
    std::vector<T> out(m.payload.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), m.payload.data(), m.payload.size());
    return out;
  }

 private:
  friend class detail::Fabric;

  World(std::shared_ptr<detail::Fabric> fabric, std::shared_ptr<const std::vector<int>> members,
        int self, std::uint32_t context);

  static void check_type(const Message& m, ElemType expected);
  std::uint32_t wire_tag(std::uint32_t tag) const;

  std::shared_ptr<detail::Fabric> fabric_;
  std::shared_ptr<const std::vector<int>> members_;
  int self_ = 0;
  std::uint32_t context_ = 0;
};

template <typename T>
std::vector<T> RecvRequest::wait_as() {
  return World::unpack<T>(wait());
}

struct WorldOptions {
  int size = 1;
  Backend backend = Backend::inproc;
  // When jitter is on, every send yields a seeded pseudo-random number of
  // times to perturb the interleaving of ranks.
  std::uint64_t schedule_seed = 0;
  bool jitter = false;
  memmon::LedgerOptions ledger{};
};

// Runs `body` once per rank concurrently and joins. If any rank throws, the
// world is shut down (blocked ranks get WorldShutdown) and the first
// non-shutdown exception is rethrown.
void run_world(const WorldOptions& opts, const std::function<void(World&)>& body);

}  // namespace pwmini::transport
