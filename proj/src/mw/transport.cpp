#include "i2m/mw/transport.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>

#include "i2m/common/bytes.hpp"
#include "i2m/common/error.hpp"

namespace i2m {

const char* kind_name(MsgKind k) {
  switch (k) {
    case MsgKind::TaskRequest:
      return "TaskRequest";
    case MsgKind::TaskGrant:
      return "TaskGrant";
    case MsgKind::NoWorkYet:
      return "NoWorkYet";
    case MsgKind::SubmeshRequest:
      return "SubmeshRequest";
    case MsgKind::SubmeshReply:
      return "SubmeshReply";
    case MsgKind::ResultSubmit:
      return "ResultSubmit";
    case MsgKind::Terminate:
      return "Terminate";
    case MsgKind::Report:
      return "Report";
    case MsgKind::Abort:
      return "Abort";
  }
  return "?";
}

namespace {
constexpr std::size_t kFrameHead = 4 + 1 + 1 + 4 + 8;
}

std::vector<std::uint8_t> encode_envelope(const Envelope& e) {
  ByteWriter w;
  w.reserve(kFrameHead + e.payload.size());
  w.u32(static_cast<std::uint32_t>(kFrameHead - 4 + e.payload.size()));
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(e.kind));
  w.i32(e.sender);
  w.u64(e.seq);
  w.bytes(e.payload);
  return w.take();
}

Envelope decode_envelope(std::span<const std::uint8_t> frame) {
  ByteReader r(frame, "envelope");
  const std::uint32_t len = r.u32();
  if (len != frame.size() - 4) {
    throw ProtocolError("envelope length prefix " + std::to_string(len) + " but frame carries " +
                        std::to_string(frame.size() - 4) + " bytes");
  }
  const std::uint8_t version = r.u8();
  if (version != kWireVersion) {
    throw ProtocolError("envelope version " + std::to_string(version) + ", expected " +
                        std::to_string(kWireVersion));
  }
  const std::uint8_t kind = r.u8();
  if (kind < static_cast<std::uint8_t>(MsgKind::TaskRequest) || kind > static_cast<std::uint8_t>(MsgKind::Abort)) {
    throw ProtocolError("unknown envelope kind " + std::to_string(kind));
  }
  Envelope e;
  e.kind = static_cast<MsgKind>(kind);
  e.sender = r.i32();
  e.seq = r.u64();
  const auto rest = r.bytes(r.remaining());
  e.payload.assign(rest.begin(), rest.end());
  return e;
}

std::vector<std::uint8_t> departure_marker(int peer) {
  ByteWriter w;
  w.u32(0xFFFFFFFFu);
  w.i32(peer);
  return w.take();
}

namespace {

std::optional<int> marker_peer(const std::vector<std::uint8_t>& f) {
  if (f.size() != 8) return std::nullopt;
  ByteReader r(f, "marker");
  if (r.u32() != 0xFFFFFFFFu) return std::nullopt;
  return r.i32();
}

}  // namespace

void Transport::init_sequencing(int size) {
  next_seq_.assign(static_cast<std::size_t>(size), 1);
  last_seen_.assign(static_cast<std::size_t>(size), 0);
  critical_.assign(static_cast<std::size_t>(size), true);
  gone_.assign(static_cast<std::size_t>(size), false);
}

void Transport::set_critical(int peer, bool critical) { critical_.at(static_cast<std::size_t>(peer)) = critical; }

void Transport::send(int to, Envelope e) {
  if (to < 0 || to >= size() || to == rank()) {
    throw TransportError("rank " + std::to_string(rank()) + " cannot send to rank " + std::to_string(to));
  }
  e.sender = rank();
  e.seq = next_seq_[static_cast<std::size_t>(to)]++;
  deliver(to, encode_envelope(e));
}

std::optional<Envelope> Transport::recv(Duration timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::optional<std::vector<std::uint8_t>> frame;
  for (;;) {
    frame = next_frame(std::max(Duration::zero(), deadline - std::chrono::steady_clock::now()));
    if (!frame) return std::nullopt;
    const auto p = marker_peer(*frame);
    if (!p) break;
    if (*p < 0 || *p >= size()) throw ProtocolError("departure marker for invalid rank");
    gone_[static_cast<std::size_t>(*p)] = true;
    if (critical_[static_cast<std::size_t>(*p)]) {
      throw TransportError("rank " + std::to_string(*p) + " left while rank " + std::to_string(rank()) +
                           " still depended on it");
    }
  }
  Envelope e = decode_envelope(*frame);
  if (e.sender < 0 || e.sender >= size() || e.sender == rank()) {
    throw ProtocolError("envelope from invalid sender " + std::to_string(e.sender));
  }
  auto& last = last_seen_[static_cast<std::size_t>(e.sender)];
  if (e.seq <= last) {
    throw ProtocolError("sequence from rank " + std::to_string(e.sender) + " went from " + std::to_string(last) +
                        " to " + std::to_string(e.seq));
  }
  last = e.seq;
  return e;
}

void Mailbox::push(std::vector<std::uint8_t> frame) {
  {
    std::lock_guard lock(mu_);
    q_.push_back(std::move(frame));
  }
  cv_.notify_one();
}

void Mailbox::fail(std::string why) {
  {
    std::lock_guard lock(mu_);
    if (failure_.empty()) failure_ = std::move(why);
  }
  cv_.notify_all();
}

std::optional<std::vector<std::uint8_t>> Mailbox::pop(Transport::Duration timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !q_.empty() || !failure_.empty(); });
  if (!q_.empty()) {
    auto f = std::move(q_.front());
    q_.pop_front();
    return f;
  }
  if (!failure_.empty()) throw TransportError(failure_);
  return std::nullopt;
}

// ---------------------------------------------------------------- inproc

class InprocTransport final : public Transport {
 public:
  InprocTransport(std::shared_ptr<InprocHub> hub, int rank) : hub_(std::move(hub)), rank_(rank) {
    init_sequencing(size());
  }
  ~InprocTransport() override { close(); }

  int rank() const override { return rank_; }
  int size() const override { return static_cast<int>(hub_->boxes_.size()); }

  void close() override {
    {
      std::lock_guard lock(hub_->mu_);
      if (hub_->closed_[static_cast<std::size_t>(rank_)]) return;
      hub_->closed_[static_cast<std::size_t>(rank_)] = true;
    }
    for (int p = 0; p < size(); ++p) {
      if (p != rank_) hub_->boxes_[static_cast<std::size_t>(p)]->push(departure_marker(rank_));
    }
  }

 protected:
  void deliver(int to, std::vector<std::uint8_t> frame) override {
    {
      std::lock_guard lock(hub_->mu_);
      if (hub_->closed_[static_cast<std::size_t>(to)]) {
        throw TransportError("rank " + std::to_string(to) + " is gone");
      }
    }
    hub_->boxes_[static_cast<std::size_t>(to)]->push(std::move(frame));
  }
  std::optional<std::vector<std::uint8_t>> next_frame(Duration timeout) override {
    return hub_->boxes_[static_cast<std::size_t>(rank_)]->pop(timeout);
  }

 private:
  std::shared_ptr<InprocHub> hub_;
  int rank_;
};

InprocHub::InprocHub(int size) : closed_(static_cast<std::size_t>(size), false) {
  for (int i = 0; i < size; ++i) boxes_.push_back(std::make_unique<Mailbox>());
}

std::shared_ptr<InprocHub> InprocHub::create(int size) {
  if (size < 2) throw UsageError("a transport group needs at least two ranks");
  return std::shared_ptr<InprocHub>(new InprocHub(size));
}

std::unique_ptr<Transport> InprocHub::endpoint(int rank) {
  if (rank < 0 || rank >= static_cast<int>(boxes_.size())) throw UsageError("no rank " + std::to_string(rank));
  return std::make_unique<InprocTransport>(shared_from_this(), rank);
}

// ---------------------------------------------------------------- sockets

namespace {

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

}  // namespace

class SocketTransport final : public Transport {
 public:
  SocketTransport(int rank, int size, std::vector<int> peers) : rank_(rank), size_(size), peers_(std::move(peers)) {
    init_sequencing(size);
    if (::pipe(wake_) != 0) throw TransportError(std::string("pipe: ") + std::strerror(errno));
    send_mu_ = std::vector<std::mutex>(static_cast<std::size_t>(size));
    reader_ = std::thread([this] { read_loop(); });
  }
  ~SocketTransport() override { close(); }

  int rank() const override { return rank_; }
  int size() const override { return size_; }

  void close() override {
    if (closed_.exchange(true)) return;
    const char x = 0;
    [[maybe_unused]] auto n = ::write(wake_[1], &x, 1);
    if (reader_.joinable()) reader_.join();
    for (int& fd : peers_) close_fd(fd);
    close_fd(wake_[0]);
    close_fd(wake_[1]);
  }

 protected:
  void deliver(int to, std::vector<std::uint8_t> frame) override {
    std::lock_guard lock(send_mu_[static_cast<std::size_t>(to)]);
    const int fd = peers_[static_cast<std::size_t>(to)];
    if (fd < 0) throw TransportError("rank " + std::to_string(to) + " is gone");
    std::size_t off = 0;
    while (off < frame.size()) {
      const ssize_t n = ::send(fd, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("send to rank " + std::to_string(to) + ": " + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }
  std::optional<std::vector<std::uint8_t>> next_frame(Duration timeout) override { return box_.pop(timeout); }

 private:
  void read_loop() {
    std::vector<std::vector<std::uint8_t>> pending(static_cast<std::size_t>(size_));
    std::vector<bool> open(static_cast<std::size_t>(size_), false);
    for (int p = 0; p < size_; ++p) open[static_cast<std::size_t>(p)] = peers_[static_cast<std::size_t>(p)] >= 0;
    std::vector<std::uint8_t> chunk(1 << 16);
    for (;;) {
      std::vector<pollfd> fds{{wake_[0], POLLIN, 0}};
      std::vector<int> who{-1};
      for (int p = 0; p < size_; ++p) {
        if (!open[static_cast<std::size_t>(p)]) continue;
        fds.push_back({peers_[static_cast<std::size_t>(p)], POLLIN, 0});
        who.push_back(p);
      }
      if (::poll(fds.data(), fds.size(), -1) < 0) {
        if (errno == EINTR) continue;
        box_.fail(std::string("poll: ") + std::strerror(errno));
        return;
      }
      if (fds[0].revents) return;
      for (std::size_t i = 1; i < fds.size(); ++i) {
        if (!fds[i].revents) continue;
        const int p = who[i];
        const ssize_t n = ::read(fds[i].fd, chunk.data(), chunk.size());
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
          open[static_cast<std::size_t>(p)] = false;
          box_.push(departure_marker(p));
          continue;
        }
        auto& buf = pending[static_cast<std::size_t>(p)];
        buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
        std::size_t at = 0;
        while (buf.size() - at >= 4) {
          std::uint32_t len = 0;
          std::memcpy(&len, buf.data() + at, 4);
          if (buf.size() - at - 4 < len) break;
          box_.push(std::vector<std::uint8_t>(buf.begin() + static_cast<std::ptrdiff_t>(at),
                                              buf.begin() + static_cast<std::ptrdiff_t>(at + 4 + len)));
          at += 4 + len;
        }
        buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(at));
      }
    }
  }

  int rank_;
  int size_;
  std::vector<int> peers_;
  std::vector<std::mutex> send_mu_;
  int wake_[2] = {-1, -1};
  Mailbox box_;
  std::thread reader_;
  std::atomic<bool> closed_{false};
};

SocketTable::SocketTable(int size) : size_(size), fds_(static_cast<std::size_t>(size * size), -1) {
  if (size < 2) throw UsageError("a transport group needs at least two ranks");
  for (int a = 0; a < size; ++a) {
    for (int b = a + 1; b < size; ++b) {
      int sv[2];
      if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
        throw TransportError(std::string("socketpair: ") + std::strerror(errno));
      }
      fds_[static_cast<std::size_t>(a * size + b)] = sv[0];
      fds_[static_cast<std::size_t>(b * size + a)] = sv[1];
    }
  }
}

SocketTable::~SocketTable() {
  for (int& fd : fds_) close_fd(fd);
}

std::unique_ptr<Transport> SocketTable::endpoint(int rank, bool exclusive) {
  if (rank < 0 || rank >= size_) throw UsageError("no rank " + std::to_string(rank));
  std::vector<int> mine(static_cast<std::size_t>(size_), -1);
  for (int b = 0; b < size_; ++b) {
    if (b == rank) continue;
    std::swap(mine[static_cast<std::size_t>(b)], fds_[static_cast<std::size_t>(rank * size_ + b)]);
  }
  if (exclusive) {
    for (int& fd : fds_) close_fd(fd);
  }
  return std::make_unique<SocketTransport>(rank, size_, std::move(mine));
}

}  // namespace i2m
