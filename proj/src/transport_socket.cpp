#include "fabric.hpp"

#ifdef PWMINI_WITH_SOCKET

#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <thread>

namespace pwmini::transport {

bool socket_backend_available() { return true; }

namespace detail {
namespace {

static_assert(std::endian::native == std::endian::little,
              "frames are written from host memory and must be little-endian");

bool write_all(int fd, const std::byte* data, std::size_t n) {
  while (n > 0) {
    ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool read_all(int fd, std::byte* data, std::size_t n) {
  while (n > 0) {
    ssize_t k = ::read(fd, data, n);
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    if (k == 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

// Full mesh of AF_UNIX stream socket pairs between rank slots. Each rank owns
// a progress thread that drains its sockets into its mailbox, so a blocking
// send never waits on the receiving rank's own code.
class SocketFabric final : public Fabric {
 public:
  explicit SocketFabric(const WorldOptions& opts) : Fabric(opts) {
    const auto p = static_cast<std::size_t>(size_);
    fds_.assign(p, std::vector<int>(p, -1));
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = a + 1; b < p; ++b) {
        int sv[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0) {
          close_all();
          throw Error(std::string("socketpair failed: ") + std::strerror(errno));
        }
        fds_[a][b] = sv[0];
        fds_[b][a] = sv[1];
      }
    }
    wake_.assign(p, -1);
    for (std::size_t r = 0; r < p; ++r) {
      wake_[r] = ::eventfd(0, 0);
      if (wake_[r] < 0) {
        close_all();
        throw Error("eventfd failed");
      }
    }
    for (int r = 0; r < size_; ++r) progress_.emplace_back([this, r] { progress_loop(r); });
  }

  ~SocketFabric() override {
    shutdown();
    for (auto& t : progress_) t.join();
    close_all();
  }

  void shutdown() override {
    if (!stopping_.exchange(true)) {
      for (int fd : wake_) {
        std::uint64_t one = 1;
        if (fd >= 0) (void)!::write(fd, &one, sizeof(one));
      }
    }
    Fabric::shutdown();
  }

 protected:
  void transmit(int src, int dst, Message msg) override {
    auto frame = encode_frame(msg);
    int fd = fds_[static_cast<std::size_t>(src)][static_cast<std::size_t>(dst)];
    if (!write_all(fd, frame.data(), frame.size())) throw WorldShutdown("socket send failed");
  }

 private:
  void progress_loop(int r) {
    const auto p = static_cast<std::size_t>(size_);
    std::vector<pollfd> pfds;
    std::vector<int> peer;
    for (std::size_t q = 0; q < p; ++q) {
      if (static_cast<int>(q) == r) continue;
      pfds.push_back({fds_[static_cast<std::size_t>(r)][q], POLLIN, 0});
      peer.push_back(static_cast<int>(q));
    }
    pfds.push_back({wake_[static_cast<std::size_t>(r)], POLLIN, 0});

    while (!stopping_.load()) {
      int rc = ::poll(pfds.data(), pfds.size(), -1);
      if (rc < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (pfds.back().revents != 0) break;
      for (std::size_t i = 0; i + 1 < pfds.size(); ++i) {
        if ((pfds[i].revents & POLLIN) == 0) continue;
        std::byte header[kFrameHeaderBytes];
        if (!read_all(pfds[i].fd, header, sizeof(header))) return;
        FrameHeader h = decode_frame_header(header);
        Message m;
        m.tag = h.tag;
        m.type = h.type;
        m.payload.resize(h.length);
        if (!read_all(pfds[i].fd, m.payload.data(), m.payload.size())) return;
        deliver_local(peer[i], r, std::move(m));
      }
    }
  }

  void close_all() {
    for (auto& row : fds_)
      for (int& fd : row)
        if (fd >= 0) {
          ::close(fd);
          fd = -1;
        }
    for (int& fd : wake_)
      if (fd >= 0) {
        ::close(fd);
        fd = -1;
      }
  }

  std::vector<std::vector<int>> fds_;
  std::vector<int> wake_;
  std::vector<std::thread> progress_;
  std::atomic<bool> stopping_{false};
};

}  // namespace

std::shared_ptr<Fabric> make_socket_fabric(const WorldOptions& opts) {
  return std::make_shared<SocketFabric>(opts);
}

}  // namespace detail
}  // namespace pwmini::transport

#else

namespace pwmini::transport {

bool socket_backend_available() { return false; }

namespace detail {
std::shared_ptr<Fabric> make_socket_fabric(const WorldOptions&) {
  throw Error("socket backend not built (configure with -DPWMINI_SOCKET_BACKEND=ON)");
}
}  // namespace detail
}  // namespace pwmini::transport

#endif
