#include "pwmini/transport.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <set>
#include <thread>

#include "fabric.hpp"
#include "pwmini/wire.hpp"

namespace pwmini::transport {

namespace {
constexpr std::uint32_t kBarrierTag = 0xFFF0;
}

Backend parse_backend(const std::string& name) {
  if (name == "inproc") return Backend::inproc;
  if (name == "socket") return Backend::socket;
  throw InvalidArgument("unknown transport backend '" + name + "' (expected inproc|socket)");
}

std::string backend_name(Backend b) { return b == Backend::inproc ? "inproc" : "socket"; }

std::size_t elem_size(ElemType t) {
  switch (t) {
    case ElemType::bytes: return 1;
    case ElemType::f64: return 8;
    case ElemType::c128: return 16;
    case ElemType::i64: return 8;
  }
  throw Error("unknown element type code");
}

std::vector<std::byte> encode_frame(const Message& msg) {
  std::vector<std::byte> out;
  out.reserve(kFrameHeaderBytes + msg.payload.size());
  wire::put_le(out, msg.tag);
  wire::put_le(out, static_cast<std::uint32_t>(msg.type));
  wire::put_le(out, static_cast<std::uint64_t>(msg.payload.size()));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

FrameHeader decode_frame_header(std::span<const std::byte> header) {
  wire::Reader rd(header.first(std::min(header.size(), kFrameHeaderBytes)));
  FrameHeader h{};
  h.tag = rd.get_le<std::uint32_t>();
  auto code = rd.get_le<std::uint32_t>();
  if (code > 3) throw Error("bad element type code in frame");
  h.type = static_cast<ElemType>(code);
  h.length = rd.get_le<std::uint64_t>();
  if (h.length % elem_size(h.type) != 0) throw Error("frame length not a multiple of element size");
  return h;
}

Message decode_frame(std::span<const std::byte> frame) {
  FrameHeader h = decode_frame_header(frame);
  if (frame.size() != kFrameHeaderBytes + h.length) throw Error("frame length mismatch");
  Message m;
  m.tag = h.tag;
  m.type = h.type;
  auto body = frame.subspan(kFrameHeaderBytes);
  m.payload.assign(body.begin(), body.end());
  return m;
}

namespace detail {

void Mailbox::deliver(int src, Message msg) {
  {
    std::lock_guard lk(mu_);
    queues_[{src, msg.tag}].push_back(std::move(msg));
  }
  cv_.notify_all();
}

Message Mailbox::take(int src, std::uint32_t tag, const std::atomic<bool>& shut) {
  std::unique_lock lk(mu_);
  auto key = std::make_pair(src, tag);
  for (;;) {
    auto it = queues_.find(key);
    if (it != queues_.end() && !it->second.empty()) {
      Message m = std::move(it->second.front());
      it->second.pop_front();
      if (it->second.empty()) queues_.erase(it);
      return m;
    }
    if (shut.load()) throw WorldShutdown("world shut down while waiting in recv");
    cv_.wait(lk);
  }
}

std::optional<Message> Mailbox::try_take(int src, std::uint32_t tag, const std::atomic<bool>& shut) {
  std::lock_guard lk(mu_);
  auto it = queues_.find({src, tag});
  if (it == queues_.end() || it->second.empty()) {
    if (shut.load()) throw WorldShutdown();
    return std::nullopt;
  }
  Message m = std::move(it->second.front());
  it->second.pop_front();
  if (it->second.empty()) queues_.erase(it);
  return m;
}

void Mailbox::wake_all() {
  { std::lock_guard lk(mu_); }
  cv_.notify_all();
}

Fabric::Fabric(const WorldOptions& opts)
    : size_(opts.size), backend_(opts.backend), jitter_(opts.jitter) {
  if (opts.size < 1) throw InvalidArgument("world size must be >= 1");
  slots_.reserve(static_cast<std::size_t>(size_));
  for (int r = 0; r < size_; ++r) {
    auto s = std::make_unique<RankSlot>();
    s->ledger = memmon::MemoryLedger(r, opts.ledger);
    s->jitter_rng.seed(opts.schedule_seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(r));
    slots_.push_back(std::move(s));
  }
  std::vector<int> all(static_cast<std::size_t>(size_));
  std::iota(all.begin(), all.end(), 0);
  root_members_ = std::make_shared<const std::vector<int>>(std::move(all));
}

void Fabric::post(int src, int dst, Message msg) {
  if (shut_.load()) throw WorldShutdown();
  RankSlot& s = slot(src);
  if (jitter_) {
    auto spins = s.jitter_rng() % 4;
    for (std::uint64_t i = 0; i < spins; ++i) std::this_thread::yield();
  }
  s.counters.msgs_sent += 1;
  s.counters.bytes_sent += static_cast<std::int64_t>(msg.payload.size());
  transmit(src, dst, std::move(msg));
}

void Fabric::transmit(int src, int dst, Message msg) { deliver_local(src, dst, std::move(msg)); }

void Fabric::deliver_local(int src, int dst, Message msg) {
  slot(dst).mailbox.deliver(src, std::move(msg));
}

Message Fabric::take(int dst, int src, std::uint32_t tag) {
  Message m = slot(dst).mailbox.take(src, tag, shut_);
  RankSlot& s = slot(dst);
  s.counters.msgs_recv += 1;
  s.counters.bytes_recv += static_cast<std::int64_t>(m.payload.size());
  return m;
}

std::optional<Message> Fabric::try_take(int dst, int src, std::uint32_t tag) {
  auto m = slot(dst).mailbox.try_take(src, tag, shut_);
  if (m) {
    RankSlot& s = slot(dst);
    s.counters.msgs_recv += 1;
    s.counters.bytes_recv += static_cast<std::int64_t>(m->payload.size());
  }
  return m;
}

void Fabric::shutdown() {
  shut_.store(true);
  for (auto& s : slots_) s->mailbox.wake_all();
}

std::uint32_t Fabric::context_for(std::uint32_t parent, const std::vector<int>& globals) {
  std::lock_guard lk(ctx_mu_);
  auto key = std::make_pair(parent, globals);
  auto it = contexts_.find(key);
  if (it != contexts_.end()) return it->second;
  if (next_ctx_ > 0xFFFF) throw Error("too many communicators");
  std::uint32_t id = next_ctx_++;
  contexts_.emplace(std::move(key), id);
  return id;
}

World Fabric::root_world(int rank) { return World(shared_from_this(), root_members_, rank, 0); }

World Fabric::make_world(std::shared_ptr<const std::vector<int>> members, int self, std::uint32_t ctx) {
  return World(shared_from_this(), std::move(members), self, ctx);
}

}  // namespace detail

World::World(std::shared_ptr<detail::Fabric> fabric, std::shared_ptr<const std::vector<int>> members,
             int self, std::uint32_t context)
    : fabric_(std::move(fabric)), members_(std::move(members)), self_(self), context_(context) {}

Backend World::backend() const { return fabric_->backend(); }

std::uint32_t World::wire_tag(std::uint32_t tag) const {
  if (tag > 0xFFFF) throw InvalidArgument("tag out of range");
  return (context_ << 16) | tag;
}

void World::check_type(const Message& m, ElemType expected) {
  if (m.type != expected) throw Error("message element type mismatch");
  if (m.payload.size() % elem_size(m.type) != 0) throw Error("payload not a multiple of element size");
}

void World::send_message(int dest, Message msg) const {
  if (dest < 0 || dest >= size()) throw InvalidArgument("rank out of range");
  if (dest == self_) throw InvalidArgument("send to self");
  if (msg.payload.size() % elem_size(msg.type) != 0)
    throw InvalidArgument("payload not a multiple of element size");
  msg.tag = wire_tag(msg.tag);
  fabric_->post(global_rank(self_), global_rank(dest), std::move(msg));
}

Message World::recv_message(int src, std::uint32_t tag) const {
  if (src < 0 || src >= size()) throw InvalidArgument("rank out of range");
  if (src == self_) throw InvalidArgument("recv from self");
  Message m = fabric_->take(global_rank(self_), global_rank(src), wire_tag(tag));
  m.tag = tag;
  return m;
}

std::optional<Message> World::try_recv_message(int src, std::uint32_t tag) const {
  if (src < 0 || src >= size()) throw InvalidArgument("rank out of range");
  auto m = fabric_->try_take(global_rank(self_), global_rank(src), wire_tag(tag));
  if (m) m->tag = tag;
  return m;
}

// Dissemination barrier: ceil(log2 P) rounds of one send and one receive.
void World::barrier() const {
  const int p = size();
  for (int k = 1; k < p; k *= 2) {
    std::int64_t token = k;
    send<std::int64_t>((self_ + k) % p, kBarrierTag, std::span<const std::int64_t>(&token, 1));
    (void)recv<std::int64_t>((self_ - k + p) % p, kBarrierTag);
  }
}

std::optional<World> World::subgroup(std::span<const int> members) const {
  std::set<int> seen;
  std::vector<int> globals;
  globals.reserve(members.size());
  int self_index = -1;
  for (std::size_t i = 0; i < members.size(); ++i) {
    int m = members[i];
    if (m < 0 || m >= size()) throw InvalidArgument("subgroup member rank out of range");
    if (!seen.insert(m).second) throw InvalidArgument("duplicate subgroup member");
    if (m == self_) self_index = static_cast<int>(i);
    globals.push_back(global_rank(m));
  }
  if (members.empty()) throw InvalidArgument("empty subgroup");
  if (self_index < 0) return std::nullopt;
  std::uint32_t ctx = fabric_->context_for(context_, globals);
  auto shared = std::make_shared<const std::vector<int>>(std::move(globals));
  return fabric_->make_world(std::move(shared), self_index, ctx);
}

Counters World::counters() const { return fabric_->slot(global_rank(self_)).counters; }

memmon::MemoryLedger& World::ledger() const { return fabric_->slot(global_rank(self_)).ledger; }

Message RecvRequest::wait() {
  if (!world_) throw Error("wait on empty request");
  if (!msg_) msg_ = world_->recv_message(src_, tag_);
  Message m = std::move(*msg_);
  msg_.reset();
  world_ = nullptr;
  return m;
}

bool RecvRequest::test() {
  if (!world_) throw Error("test on empty request");
  if (!msg_) msg_ = world_->try_recv_message(src_, tag_);
  return msg_.has_value();
}

void run_world(const WorldOptions& opts, const std::function<void(World&)>& body) {
  std::shared_ptr<detail::Fabric> fabric;
  if (opts.backend == Backend::socket) {
    fabric = detail::make_socket_fabric(opts);
  } else {
    fabric = std::make_shared<detail::Fabric>(opts);
  }

  const int p = opts.size;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(p));
  auto rank_main = [&](int r) {
    try {
      World w = fabric->root_world(r);
      body(w);
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
      fabric->shutdown();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(p));
  for (int r = 0; r < p; ++r) threads.emplace_back(rank_main, r);
  for (auto& t : threads) t.join();
  fabric->shutdown();

  std::exception_ptr first_shutdown;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const WorldShutdown&) {
      if (!first_shutdown) first_shutdown = e;
    } catch (...) {
      throw;
    }
  }
  if (first_shutdown) std::rethrow_exception(first_shutdown);
}

}  // namespace pwmini::transport
