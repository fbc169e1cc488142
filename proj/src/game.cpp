#include "vtrain/game.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace vtrain {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Messages

namespace msg {

json hello(const std::string& run_id) {
  return {{"type", "hello"}, {"protocol_version", kGameProtocolVersion}, {"run_id", run_id}};
}

json root_announce(const Digest& root, std::size_t leaf_count) {
  return {{"type", "root_announce"}, {"root", to_hex(root)}, {"leaf_count", leaf_count}};
}

json node_request(std::size_t level, std::size_t index) {
  return {{"type", "node_request"}, {"level", level}, {"index", index}};
}

json node_response(std::size_t level, std::size_t index, const Digest& digest) {
  return {{"type", "node_response"}, {"level", level}, {"index", index}, {"digest", to_hex(digest)}};
}

json verdict_claim(std::size_t leaf, const MerklePath& trainer_path, const MerklePath& auditor_path) {
  return {{"type", "verdict_claim"},
          {"first_divergent_leaf", leaf},
          {"trainer_path", path_to_json(trainer_path)},
          {"auditor_path", path_to_json(auditor_path)}};
}

json accept() { return {{"type", "accept"}}; }

json refuse(const std::string& reason) { return {{"type", "refuse"}, {"reason", reason}}; }

}  // namespace msg

json path_to_json(const MerklePath& path) {
  json siblings = json::array();
  for (const auto& step : path.siblings) {
    siblings.push_back({{"digest", to_hex(step.sibling)}, {"side", step.side == Side::Left ? "left" : "right"}});
  }
  return {{"leaf_index", path.leaf_index}, {"leaf", to_hex(path.leaf)}, {"siblings", siblings}};
}

MerklePath path_from_json(const json& j) {
  try {
    MerklePath path;
    path.leaf_index = j.at("leaf_index").get<std::size_t>();
    path.leaf = digest_from_hex(j.at("leaf").get<std::string>());
    for (const auto& s : j.at("siblings")) {
      const auto side = s.at("side").get<std::string>();
      if (side != "left" && side != "right") throw FormatError("path step side must be left or right");
      path.siblings.push_back({digest_from_hex(s.at("digest").get<std::string>()),
                               side == "left" ? Side::Left : Side::Right});
    }
    return path;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed Merkle path: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_frame(const json& message) {
  const std::string body = message.dump();
  if (body.size() > kMaxFrameBytes) throw ProtocolError("message exceeds the frame size limit");
  std::vector<std::uint8_t> frame(4 + body.size());
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) frame[i] = static_cast<std::uint8_t>(n >> (8 * i));
  std::memcpy(frame.data() + 4, body.data(), body.size());
  return frame;
}

json decode_frame_body(const std::vector<std::uint8_t>& body) {
  json j;
  try {
    j = json::parse(body.begin(), body.end());
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("frame is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw FormatError("frame is not a JSON object with a string 'type'");
  }
  return j;
}

// ---------------------------------------------------------------------------
// Server state machine

std::optional<json> ServerSession::handle(const json& request) {
  if (done_) return std::nullopt;
  const auto refuse = [this](const std::string& reason) {
    done_ = true;
    return msg::refuse(reason);
  };
  try {
    const auto type = request.at("type").get<std::string>();
    if (type == "hello") {
      if (request.at("protocol_version").get<int>() != kGameProtocolVersion) {
        return refuse("unsupported protocol version");
      }
      greeted_ = true;
      return msg::root_announce(tree_.root(), tree_.leaf_count());
    }
    if (!greeted_) return refuse("expected hello");
    if (type == "node_request") {
      const auto level = request.at("level").get<std::size_t>();
      const auto index = request.at("index").get<std::size_t>();
      if (level >= tree_.height() || index >= tree_.level_size(level)) {
        return refuse("node (" + std::to_string(level) + ", " + std::to_string(index) + ") out of range");
      }
      return msg::node_response(level, index, tree_.node(level, index));
    }
    if (type == "accept" || type == "verdict_claim" || type == "refuse") {
      done_ = true;
      return std::nullopt;
    }
    return refuse("unexpected message type '" + type + "'");
  } catch (const json::exception&) {
    return refuse("malformed message");
  }
}

void LoopbackChannel::send(const json& message) {
  if (auto reply = session_.handle(message)) pending_.push_back(std::move(*reply));
}

json LoopbackChannel::receive(std::chrono::milliseconds) {
  if (pending_.empty()) throw ChannelError("no response");
  json reply = std::move(pending_.front());
  pending_.erase(pending_.begin());
  return reply;
}

// ---------------------------------------------------------------------------
// Sockets

namespace {

std::pair<std::string, std::string> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw DomainError("address must be host:port, got '" + address + "'");
  }
  std::string host = address.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  return {host, address.substr(colon + 1)};
}

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

void resolve(const std::string& address, bool passive, AddrInfo& out) {
  const auto [host, port] = split_address(address);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  if (const int rc = getaddrinfo(host.c_str(), port.c_str(), &hints, &out.head); rc != 0) {
    throw IoError("cannot resolve " + address + ": " + gai_strerror(rc));
  }
}

// Waits until fd is readable/writable or the deadline passes.
bool wait_for(int fd, short events, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
    if (rc > 0) return true;
    if (rc < 0 && errno != EINTR) throw IoError(std::string("poll failed: ") + std::strerror(errno));
  }
}

void read_exact(int fd, std::uint8_t* data, std::size_t n, std::chrono::steady_clock::time_point deadline) {
  std::size_t got = 0;
  while (got < n) {
    if (!wait_for(fd, POLLIN, deadline)) throw ChannelError("no response within the deadline");
    const ssize_t rc = ::recv(fd, data + got, n - got, 0);
    if (rc == 0) throw ChannelError("connection closed by peer");
    if (rc < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ChannelError(std::string("receive failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(rc);
  }
}

}  // namespace

SocketChannel::~SocketChannel() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<SocketChannel> SocketChannel::connect(const std::string& address, std::chrono::milliseconds timeout) {
  AddrInfo info;
  resolve(address, false, info);
  std::string last_error = "no usable address";
  for (addrinfo* ai = info.head; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = std::strerror(errno);
      continue;
    }
    timeval tv{static_cast<time_t>(timeout.count() / 1000), static_cast<suseconds_t>((timeout.count() % 1000) * 1000)};
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) return std::make_unique<SocketChannel>(fd);
    last_error = std::strerror(errno);
    ::close(fd);
  }
  throw IoError("cannot connect to " + address + ": " + last_error);
}

void SocketChannel::send(const json& message) {
  const auto frame = encode_frame(message);
  std::size_t sent = 0;
  while (sent < frame.size()) {
    const ssize_t rc = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ChannelError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(rc);
  }
}

json SocketChannel::receive(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::uint8_t prefix[4];
  read_exact(fd_, prefix, 4, deadline);
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= std::uint32_t{prefix[i]} << (8 * i);
  if (n > kMaxFrameBytes) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds the limit");
  std::vector<std::uint8_t> body(n);
  read_exact(fd_, body.data(), n, deadline);
  return decode_frame_body(body);
}

GameServer::GameServer(const MerkleTree& tree, const std::string& address) : tree_(tree) {
  AddrInfo info;
  resolve(address, true, info);
  std::string last_error = "no usable address";
  for (addrinfo* ai = info.head; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = std::strerror(errno);
      continue;
    }
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 4) == 0) {
      listen_fd_ = fd;
      break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  if (listen_fd_ < 0) throw IoError("cannot listen on " + address + ": " + last_error);

  sockaddr_storage bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  if (bound.ss_family == AF_INET) {
    port_ = ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
  } else if (bound.ss_family == AF_INET6) {
    port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port);
  }
}

GameServer::~GameServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void GameServer::serve_one(std::chrono::milliseconds idle_timeout) {
  int fd;
  do {
    fd = ::accept(listen_fd_, nullptr, nullptr);
  } while (fd < 0 && errno == EINTR);
  if (fd < 0) throw IoError(std::string("accept failed: ") + std::strerror(errno));

  SocketChannel channel(fd);
  ServerSession session(tree_);
  while (!session.done()) {
    json request;
    try {
      request = channel.receive(idle_timeout);
    } catch (const FormatError& e) {
      channel.send(msg::refuse(e.what()));
      return;
    } catch (const ProtocolError&) {
      return;  // peer went away or stalled
    }
    if (auto reply = session.handle(request)) {
      try {
        channel.send(*reply);
      } catch (const ChannelError&) {
        return;
      }
    }
  }
}

void GameServer::serve_forever() {
  for (;;) serve_one();
}

// ---------------------------------------------------------------------------
// Challenge

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::TrainingVerified:
      return "TrainingVerified";
    case Outcome::DisputeAtLeaf:
      return "DisputeAtLeaf";
    case Outcome::TrainerUnresponsive:
      return "TrainerUnresponsive";
    case Outcome::ScheduleMismatch:
      return "ScheduleMismatch";
  }
  return "unknown";
}

namespace {

Outcome outcome_from_string(const std::string& s) {
  for (auto o : {Outcome::TrainingVerified, Outcome::DisputeAtLeaf, Outcome::TrainerUnresponsive,
                 Outcome::ScheduleMismatch}) {
    if (to_string(o) == s) return o;
  }
  throw FormatError("unknown verdict outcome '" + s + "'");
}

class Recorder {
 public:
  Recorder(Channel& channel, std::vector<std::string>& transcript, std::chrono::milliseconds timeout)
      : channel_(channel), transcript_(transcript), timeout_(timeout) {}

  void send(const json& message) {
    transcript_.push_back(json{{"from", "auditor"}, {"message", message}}.dump());
    channel_.send(message);
  }

  json receive() {
    json message = channel_.receive(timeout_);
    transcript_.push_back(json{{"from", "trainer"}, {"message", message}}.dump());
    return message;
  }

 private:
  Channel& channel_;
  std::vector<std::string>& transcript_;
  std::chrono::milliseconds timeout_;
};

struct Unresponsive {
  std::string reason;
};

json expect(Recorder& rec, const char* type) {
  json reply = rec.receive();
  const auto got = reply.at("type").get<std::string>();
  if (got == "refuse") throw Unresponsive{"trainer refused: " + reply.value("reason", std::string())};
  if (got != type) throw Unresponsive{"expected " + std::string(type) + ", got " + got};
  return reply;
}

Digest fetch_node(Recorder& rec, std::size_t level, std::size_t index, std::size_t& requests) {
  ++requests;
  rec.send(msg::node_request(level, index));
  const json reply = expect(rec, "node_response");
  if (reply.at("level").get<std::size_t>() != level || reply.at("index").get<std::size_t>() != index) {
    throw Unresponsive{"node response does not answer the request"};
  }
  return digest_from_hex(reply.at("digest").get<std::string>());
}

}  // namespace

VerdictReport challenge(const MerkleTree& local, Channel& channel, std::chrono::milliseconds timeout,
                        const std::string& run_id) {
  VerdictReport report;
  report.auditor_root = local.root();
  Recorder rec(channel, report.transcript, timeout);

  try {
    rec.send(msg::hello(run_id));
    const json announce = expect(rec, "root_announce");
    report.trainer_root = digest_from_hex(announce.at("root").get<std::string>());
    report.leaf_count = announce.at("leaf_count").get<std::size_t>();

    if (report.leaf_count != local.leaf_count()) {
      report.outcome = Outcome::ScheduleMismatch;
      report.reason = "trainer has " + std::to_string(report.leaf_count) + " checkpoints, auditor has " +
                      std::to_string(local.leaf_count());
      rec.send(msg::refuse("checkpoint schedule mismatch"));
      return report;
    }
    if (report.trainer_root == local.root()) {
      report.outcome = Outcome::TrainingVerified;
      rec.send(msg::accept());
      return report;
    }

    // Trainer's path, collected root to leaf.
    std::vector<PathStep> siblings;
    Digest parent = report.trainer_root;
    std::size_t idx = 0;
    for (std::size_t level = local.height() - 1; level-- > 0;) {
      const std::size_t left = 2 * idx;
      const std::size_t right = left + 1;
      const bool paired = right < local.level_size(level);
      const Digest tl = fetch_node(rec, level, left, report.node_requests);
      if (!paired) {
        if (tl != parent) throw Unresponsive{"trainer served inconsistent tree nodes"};
        idx = left;
        continue;
      }
      const Digest tr = fetch_node(rec, level, right, report.node_requests);
      if (sha256_pair(tl, tr) != parent) throw Unresponsive{"trainer served inconsistent tree nodes"};
      if (tl != local.node(level, left)) {
        siblings.push_back({tr, Side::Right});
        parent = tl;
        idx = left;
      } else {
        siblings.push_back({tl, Side::Left});
        parent = tr;
        idx = right;
      }
    }

    MerklePath trainer_path{idx, parent, {siblings.rbegin(), siblings.rend()}};
    MerklePath auditor_path = local.path(idx);
    report.outcome = Outcome::DisputeAtLeaf;
    report.leaf = idx;
    rec.send(msg::verdict_claim(idx, trainer_path, auditor_path));
    report.trainer_path = std::move(trainer_path);
    report.auditor_path = std::move(auditor_path);
  } catch (const Unresponsive& u) {
    report.outcome = Outcome::TrainerUnresponsive;
    report.reason = u.reason;
  } catch (const ChannelError& e) {
    report.outcome = Outcome::TrainerUnresponsive;
    report.reason = e.what();
  } catch (const json::exception&) {
    report.outcome = Outcome::TrainerUnresponsive;
    report.reason = "malformed message from trainer";
  } catch (const FormatError& e) {
    report.outcome = Outcome::TrainerUnresponsive;
    report.reason = e.what();
  }
  return report;
}

JudgeResult judge_check(const VerdictReport& report, const Digest& trainer_root, const Digest& auditor_root) {
  const auto reject = [](std::string reason) { return JudgeResult{false, std::move(reason)}; };
  if (report.outcome != Outcome::DisputeAtLeaf) return reject("report does not claim a dispute");
  if (!report.leaf || !report.trainer_path || !report.auditor_path) return reject("missing evidence");
  const auto& tp = *report.trainer_path;
  const auto& ap = *report.auditor_path;
  const std::size_t i = *report.leaf;
  if (tp.leaf_index != i || ap.leaf_index != i) return reject("path leaf index does not match the claim");
  if (i >= report.leaf_count) return reject("claimed leaf out of range");

  const auto shape = expected_path_shape(i, report.leaf_count);
  const auto matches_shape = [&shape](const MerklePath& p) {
    if (p.siblings.size() != shape.size()) return false;
    for (std::size_t s = 0; s < shape.size(); ++s) {
      if (p.siblings[s].side != shape[s]) return false;
    }
    return true;
  };
  if (!matches_shape(tp) || !matches_shape(ap)) return reject("path shape does not fit the tree");
  if (!verify_path(tp, trainer_root)) return reject("trainer path does not verify against the trainer root");
  if (!verify_path(ap, auditor_root)) return reject("auditor path does not verify against the auditor root");
  if (tp.leaf == ap.leaf) return reject("leaf digests are equal");
  return {true, "dispute at leaf " + std::to_string(i) + " confirmed"};
}

// ---------------------------------------------------------------------------
// Report serialization

json VerdictReport::to_json() const {
  json j = {
      {"outcome", to_string(outcome)},
      {"leaf_count", leaf_count},
      {"trainer_root", to_hex(trainer_root)},
      {"auditor_root", to_hex(auditor_root)},
      {"node_requests", node_requests},
  };
  if (leaf) j["leaf"] = *leaf;
  if (!reason.empty()) j["reason"] = reason;
  if (trainer_path) j["trainer_path"] = path_to_json(*trainer_path);
  if (auditor_path) j["auditor_path"] = path_to_json(*auditor_path);
  json lines = json::array();
  for (const auto& line : transcript) lines.push_back(json::parse(line));
  j["transcript"] = lines;
  return j;
}

VerdictReport VerdictReport::from_json(const json& j) {
  try {
    VerdictReport r;
    r.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    r.leaf_count = j.at("leaf_count").get<std::size_t>();
    r.trainer_root = digest_from_hex(j.at("trainer_root").get<std::string>());
    r.auditor_root = digest_from_hex(j.at("auditor_root").get<std::string>());
    r.node_requests = j.value("node_requests", std::size_t{0});
    if (j.contains("leaf")) r.leaf = j["leaf"].get<std::size_t>();
    r.reason = j.value("reason", std::string());
    if (j.contains("trainer_path")) r.trainer_path = path_from_json(j["trainer_path"]);
    if (j.contains("auditor_path")) r.auditor_path = path_from_json(j["auditor_path"]);
    if (j.contains("transcript")) {
      for (const auto& line : j["transcript"]) r.transcript.push_back(line.dump());
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed verdict report: ") + e.what());
  }
}

std::string VerdictReport::transcript_jsonl() const {
  std::string out;
  for (const auto& line : transcript) {
    out += line;
    out += '\n';
  }
  return out;
}

}  // namespace vtrain
