#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace i2m {

inline constexpr std::uint8_t kWireVersion = 1;

enum class MsgKind : std::uint8_t {
  TaskRequest = 1,
  TaskGrant = 2,
  NoWorkYet = 3,
  SubmeshRequest = 4,
  SubmeshReply = 5,
  ResultSubmit = 6,
  Terminate = 7,
  Report = 8,  // worker -> master after Terminate: breakdown and stats
  Abort = 9,   // either direction: the sender failed, payload is the reason
};

const char* kind_name(MsgKind k);

struct Envelope {
  MsgKind kind = MsgKind::TaskRequest;
  std::int32_t sender = 0;
  std::uint64_t seq = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

/// Wire form: u32 length of the rest, u8 version, u8 kind, i32 sender,
/// u64 seq, payload. Little-endian.
std::vector<std::uint8_t> encode_envelope(const Envelope& e);
/// Throws ProtocolError on a short frame, length mismatch, unknown kind or
/// version mismatch.
Envelope decode_envelope(std::span<const std::uint8_t> frame);

/// Reliable, per-peer ordered message passing between ranks 0..size-1.
class Transport {
 public:
  using Duration = std::chrono::steady_clock::duration;

  virtual ~Transport() = default;
  virtual int rank() const = 0;
  virtual int size() const = 0;
  /// Stamps sender and the next per-destination sequence number.
  /// Throws TransportError if the peer is gone.
  void send(int to, Envelope e);
  /// Next envelope from any peer, or none once `timeout` has elapsed.
  /// Throws ProtocolError if a peer's sequence numbers do not increase and
  /// TransportError if a critical peer has left.
  std::optional<Envelope> recv(Duration timeout);
  /// Whether a peer leaving is an error (default: every peer is critical).
  void set_critical(int peer, bool critical);
  bool gone(int peer) const { return gone_.at(static_cast<std::size_t>(peer)); }
  /// Leaves the group: later sends to this rank fail.
  virtual void close() = 0;

 protected:
  void init_sequencing(int size);
  virtual void deliver(int to, std::vector<std::uint8_t> frame) = 0;
  virtual std::optional<std::vector<std::uint8_t>> next_frame(Duration timeout) = 0;

 private:
  std::vector<std::uint64_t> next_seq_;
  std::vector<std::uint64_t> last_seen_;
  std::vector<bool> critical_;
  std::vector<bool> gone_;
};

/// Frame queued after a peer's last frame once it has left.
std::vector<std::uint8_t> departure_marker(int peer);

/// Thread-safe frame queue shared by both transports' receive sides.
class Mailbox {
 public:
  void push(std::vector<std::uint8_t> frame);
  /// Local failure; pop throws TransportError once the queue is drained.
  void fail(std::string why);
  std::optional<std::vector<std::uint8_t>> pop(Transport::Duration timeout);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> q_;
  std::string failure_;
};

/// Ranks as threads of one process.
class InprocHub : public std::enable_shared_from_this<InprocHub> {
 public:
  static std::shared_ptr<InprocHub> create(int size);
  std::unique_ptr<Transport> endpoint(int rank);

 private:
  friend class InprocTransport;
  explicit InprocHub(int size);

  std::mutex mu_;
  std::vector<bool> closed_;
  std::vector<std::unique_ptr<Mailbox>> boxes_;
};

/// Ranks as OS processes joined by Unix stream socketpairs, one per rank
/// pair. Create the fd table before fork; each process then builds its own
/// endpoint, which drops the fds belonging to other ranks.
class SocketTable {
 public:
  explicit SocketTable(int size);
  ~SocketTable();
  SocketTable(const SocketTable&) = delete;
  SocketTable& operator=(const SocketTable&) = delete;

  int size() const { return size_; }
  /// Takes this rank's fds. With `exclusive`, the fds of other ranks are
  /// closed in this process (what a forked rank must do).
  std::unique_ptr<Transport> endpoint(int rank, bool exclusive = true);

 private:
  int size_;
  std::vector<int> fds_;  // fds_[a * size + b]: a's end of the (a, b) pair
};

}  // namespace i2m
