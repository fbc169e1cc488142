#pragma once

// Verification game between a trainer (serving its Merkle tree) and an
// auditor (holding the tree from its own replay).
//
// Wire format: 4-byte little-endian length, then a UTF-8 JSON object with a
// "type" field. Node coordinates are (level, index) with level 0 = leaves.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtrain/error.hpp"
#include "vtrain/merkle.hpp"

namespace vtrain {

inline constexpr int kGameProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 1 << 20;
inline constexpr std::chrono::milliseconds kDefaultGameTimeout{30000};

/// Timeout, EOF or transport failure while waiting for the peer.
class ChannelError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// ---------------------------------------------------------------------------
// Messages

namespace msg {
nlohmann::json hello(const std::string& run_id);
nlohmann::json root_announce(const Digest& root, std::size_t leaf_count);
nlohmann::json node_request(std::size_t level, std::size_t index);
nlohmann::json node_response(std::size_t level, std::size_t index, const Digest& digest);
nlohmann::json verdict_claim(std::size_t leaf, const MerklePath& trainer_path, const MerklePath& auditor_path);
nlohmann::json accept();
nlohmann::json refuse(const std::string& reason);
}  // namespace msg

nlohmann::json path_to_json(const MerklePath& path);
/// Throws FormatError.
MerklePath path_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> encode_frame(const nlohmann::json& message);
/// Decodes one frame body (without the length prefix). Throws FormatError.
nlohmann::json decode_frame_body(const std::vector<std::uint8_t>& body);

// ---------------------------------------------------------------------------
// Transport

class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const nlohmann::json& message) = 0;
  /// Throws ChannelError on timeout or when the peer closed the connection.
  virtual nlohmann::json receive(std::chrono::milliseconds timeout) = 0;
};

/// Trainer-side state machine for one session.
class ServerSession {
 public:
  explicit ServerSession(const MerkleTree& tree) : tree_(tree) {}

  /// Reply to `request`, or nothing. Sets done() when the session is over.
  std::optional<nlohmann::json> handle(const nlohmann::json& request);
  bool done() const { return done_; }

 private:
  const MerkleTree& tree_;
  bool greeted_ = false;
  bool done_ = false;
};

/// Runs a ServerSession in-process; used by tests and local disputes.
class LoopbackChannel final : public Channel {
 public:
  explicit LoopbackChannel(const MerkleTree& served) : session_(served) {}

  void send(const nlohmann::json& message) override;
  nlohmann::json receive(std::chrono::milliseconds timeout) override;

 private:
  ServerSession session_;
  std::vector<nlohmann::json> pending_;
};

/// Framed JSON over a connected stream socket.
class SocketChannel final : public Channel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {}
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  /// "host:port". Throws IoError.
  static std::unique_ptr<SocketChannel> connect(const std::string& address,
                                                std::chrono::milliseconds timeout = kDefaultGameTimeout);

  void send(const nlohmann::json& message) override;
  nlohmann::json receive(std::chrono::milliseconds timeout) override;

 private:
  int fd_;
};

/// TCP listener serving one session at a time.
class GameServer {
 public:
  /// `address` is "host:port"; port 0 picks a free port. Throws IoError.
  GameServer(const MerkleTree& tree, const std::string& address);
  ~GameServer();
  GameServer(const GameServer&) = delete;
  GameServer& operator=(const GameServer&) = delete;

  std::uint16_t port() const { return port_; }

  /// Accepts one connection and answers it until the session ends.
  void serve_one(std::chrono::milliseconds idle_timeout = kDefaultGameTimeout);
  /// serve_one() forever; never returns normally.
  void serve_forever();

 private:
  const MerkleTree& tree_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

// ---------------------------------------------------------------------------
// Challenge and judge

enum class Outcome { TrainingVerified, DisputeAtLeaf, TrainerUnresponsive, ScheduleMismatch };

std::string to_string(Outcome outcome);

struct VerdictReport {
  Outcome outcome = Outcome::TrainingVerified;
  std::optional<std::size_t> leaf;  ///< DisputeAtLeaf only
  std::size_t leaf_count = 0;       ///< as announced by the trainer
  Digest trainer_root{};
  Digest auditor_root{};
  std::optional<MerklePath> trainer_path;
  std::optional<MerklePath> auditor_path;
  std::size_t node_requests = 0;
  std::string reason;
  /// One JSON document per message, {"from": "auditor"|"trainer", "message": ...}.
  std::vector<std::string> transcript;

  nlohmann::json to_json() const;
  /// Throws FormatError.
  static VerdictReport from_json(const nlohmann::json& j);
  /// Transcript as JSON lines.
  std::string transcript_jsonl() const;
};

/// Descends the trainer's tree over `channel` to the first leaf whose digest
/// differs from `local`. Never throws for trainer misbehavior: a timeout,
/// refusal, closed connection or inconsistent node yields TrainerUnresponsive.
VerdictReport challenge(const MerkleTree& local, Channel& channel,
                        std::chrono::milliseconds timeout = kDefaultGameTimeout, const std::string& run_id = "");

struct JudgeResult {
  bool accepted = false;
  std::string reason;
  explicit operator bool() const { return accepted; }
};

/// Checks dispute evidence against both roots with path verification only.
JudgeResult judge_check(const VerdictReport& report, const Digest& trainer_root, const Digest& auditor_root);

}  // namespace vtrain
