#pragma once

// Packed on-disk rounding log.
//
// Layout (little-endian):
//   offset 0  magic "VTRL"
//   offset 4  version (1)
//   offset 5  b_r
//   offset 6  flags (bit 0: payload is a raw DEFLATE stream)
//   offset 7  entry_count (u64)
//   offset 15 payload: ceil(entry_count / 5) bytes, each d0 + 3 d1 + 9 d2 + 27 d3 + 81 d4
//
// The final group is padded with Direction::Ignore.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <vector>

#include "vtrain/fpround.hpp"

namespace vtrain {

inline constexpr std::array<char, 4> kLogMagic = {'V', 'T', 'R', 'L'};
inline constexpr std::uint8_t kLogVersion = 1;
inline constexpr std::size_t kLogHeaderSize = 15;
inline constexpr std::uint8_t kLogFlagDeflate = 0x01;
inline constexpr std::uint8_t kMaxPackedByte = 242;

struct LogHeader {
  std::uint8_t version = kLogVersion;
  std::uint8_t b_r = 32;
  std::uint8_t flags = 0;
  std::uint64_t entry_count = 0;

  bool compressed() const { return (flags & kLogFlagDeflate) != 0; }
};

std::uint8_t pack5(std::span<const Direction, 5> d);
std::array<Direction, 5> unpack5(std::uint8_t b);

/// Payload size for n entries: ceil(n / 5).
constexpr std::uint64_t packed_payload_bytes(std::uint64_t n) { return (n + 4) / 5; }

/// Destination for trainer-side decisions.
class DirectionSink {
 public:
  virtual ~DirectionSink() = default;
  virtual void write(Direction d) = 0;
};

/// Source of logged decisions for the auditor.
class DirectionSource {
 public:
  virtual ~DirectionSource() = default;
  /// Throws ProtocolError("log exhausted") when no entries remain.
  virtual Direction read() = 0;
  virtual std::uint64_t remaining() const = 0;
};

/// Unpacked in-memory log; mainly for tests and threshold experiments.
class MemoryLog final : public DirectionSink, public DirectionSource {
 public:
  MemoryLog() = default;
  explicit MemoryLog(std::vector<Direction> entries) : entries_(std::move(entries)) {}

  void write(Direction d) override { entries_.push_back(d); }
  Direction read() override;
  std::uint64_t remaining() const override { return entries_.size() - cursor_; }

  const std::vector<Direction>& entries() const { return entries_; }
  void rewind() { cursor_ = 0; }

 private:
  std::vector<Direction> entries_;
  std::size_t cursor_ = 0;
};

class LogWriter final : public DirectionSink {
 public:
  LogWriter(const std::filesystem::path& path, int b_r, bool compress = false);
  ~LogWriter() override;
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;

  void write(Direction d) override;
  /// Pads, flushes and finalizes the header. Idempotent.
  void close();

  std::uint64_t entry_count() const { return count_; }

 private:
  struct Deflater;

  void emit(std::uint8_t byte);
  void flush_buffer(bool finish);

  std::filesystem::path path_;
  std::ofstream out_;
  LogHeader header_;
  std::array<Direction, 5> group_{};
  std::size_t group_fill_ = 0;
  std::uint64_t count_ = 0;
  std::vector<std::uint8_t> buffer_;
  std::uint64_t file_offset_ = kLogHeaderSize;
  std::unique_ptr<Deflater> deflater_;
  bool closed_ = false;
};

class LogReader final : public DirectionSource {
 public:
  explicit LogReader(const std::filesystem::path& path);
  ~LogReader() override;
  LogReader(const LogReader&) = delete;
  LogReader& operator=(const LogReader&) = delete;

  Direction read() override;
  std::uint64_t remaining() const override { return header_.entry_count - position_; }

  const LogHeader& header() const { return header_; }
  std::uint64_t position() const { return position_; }

 private:
  struct Inflater;

  std::uint8_t next_payload_byte();

  std::filesystem::path path_;
  std::ifstream in_;
  LogHeader header_;
  std::uint64_t position_ = 0;
  std::uint64_t payload_index_ = 0;
  std::array<Direction, 5> group_{};
  std::vector<std::uint8_t> buffer_;
  std::size_t buffer_pos_ = 0;
  std::unique_ptr<Inflater> inflater_;
};

struct LogSummary {
  LogHeader header;
  std::array<std::uint64_t, 3> histogram{};  ///< indexed by Direction code
  std::uint64_t payload_bytes = 0;           ///< bytes after the header, as stored
  std::uint64_t file_bytes = 0;
};

/// Reads a whole log and counts each direction.
LogSummary inspect_log(const std::filesystem::path& path);

}  // namespace vtrain
