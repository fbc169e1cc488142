#include "vtrain/roundlog.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <string>

#include "vtrain/error.hpp"

namespace vtrain {
namespace {

constexpr std::size_t kChunk = 1 << 16;

void put_u64_le(std::uint8_t* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_u64_le(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{in[i]} << (8 * i);
  return v;
}

std::string where(const std::filesystem::path& path, std::uint64_t offset) {
  return path.string() + " at byte offset " + std::to_string(offset);
}

}  // namespace

std::uint8_t pack5(std::span<const Direction, 5> d) {
  unsigned value = 0;
  unsigned weight = 1;
  for (Direction digit : d) {
    const auto code = static_cast<unsigned>(digit);
    if (code > 2) throw DomainError("rounding direction out of range");
    value += code * weight;
    weight *= 3;
  }
  return static_cast<std::uint8_t>(value);
}

std::array<Direction, 5> unpack5(std::uint8_t b) {
  if (b > kMaxPackedByte) throw FormatError("corrupt log byte");
  std::array<Direction, 5> out{};
  unsigned value = b;
  for (auto& digit : out) {
    digit = static_cast<Direction>(value % 3);
    value /= 3;
  }
  return out;
}

Direction MemoryLog::read() {
  if (cursor_ >= entries_.size()) throw ProtocolError("log exhausted");
  return entries_[cursor_++];
}

// ---------------------------------------------------------------------------
// Writer

struct LogWriter::Deflater {
  z_stream stream{};
  Deflater() {
    if (deflateInit2(&stream, Z_BEST_COMPRESSION, Z_DEFLATED, -15, 9, Z_DEFAULT_STRATEGY) != Z_OK) {
      throw Error("deflateInit2 failed");
    }
  }
  ~Deflater() { deflateEnd(&stream); }
};

LogWriter::LogWriter(const std::filesystem::path& path, int b_r, bool compress)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  check_rounding_bits(b_r);
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  header_.b_r = static_cast<std::uint8_t>(b_r);
  header_.flags = compress ? kLogFlagDeflate : 0;
  if (compress) deflater_ = std::make_unique<Deflater>();
  buffer_.reserve(kChunk);

  std::array<std::uint8_t, kLogHeaderSize> raw{};
  std::memcpy(raw.data(), kLogMagic.data(), 4);
  raw[4] = header_.version;
  raw[5] = header_.b_r;
  raw[6] = header_.flags;
  out_.write(reinterpret_cast<const char*>(raw.data()), raw.size());
  if (!out_) throw IoError("write failed: " + where(path_, 0));
}

LogWriter::~LogWriter() {
  try {
    close();
  } catch (...) {
  }
}

void LogWriter::write(Direction d) {
  if (closed_) throw Error("write to closed log " + path_.string());
  group_[group_fill_++] = d;
  ++count_;
  if (group_fill_ == 5) {
    emit(pack5(group_));
    group_fill_ = 0;
  }
}

void LogWriter::emit(std::uint8_t byte) {
  buffer_.push_back(byte);
  if (buffer_.size() >= kChunk) flush_buffer(false);
}

void LogWriter::flush_buffer(bool finish) {
  auto write_raw = [this](const std::uint8_t* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + where(path_, file_offset_));
    file_offset_ += n;
  };

  if (!deflater_) {
    if (!buffer_.empty()) write_raw(buffer_.data(), buffer_.size());
    buffer_.clear();
    return;
  }

  z_stream& zs = deflater_->stream;
  zs.next_in = buffer_.data();
  zs.avail_in = static_cast<uInt>(buffer_.size());
  std::array<std::uint8_t, kChunk> out{};
  int rc;
  do {
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    rc = deflate(&zs, finish ? Z_FINISH : Z_NO_FLUSH);
    if (rc == Z_STREAM_ERROR) throw Error("deflate failed for " + path_.string());
    write_raw(out.data(), out.size() - zs.avail_out);
  } while (zs.avail_out == 0 || (finish && rc != Z_STREAM_END));
  buffer_.clear();
}

void LogWriter::close() {
  if (closed_) return;
  closed_ = true;
  if (group_fill_ > 0) {
    std::fill(group_.begin() + static_cast<std::ptrdiff_t>(group_fill_), group_.end(), Direction::Ignore);
    emit(pack5(group_));
    group_fill_ = 0;
  }
  flush_buffer(true);

  std::array<std::uint8_t, 8> count{};
  put_u64_le(count.data(), count_);
  out_.seekp(7);
  out_.write(reinterpret_cast<const char*>(count.data()), count.size());
  out_.flush();
  if (!out_) throw IoError("write failed: " + where(path_, 7));
  out_.close();
  header_.entry_count = count_;
}

// ---------------------------------------------------------------------------
// Reader

struct LogReader::Inflater {
  z_stream stream{};
  std::vector<std::uint8_t> input = std::vector<std::uint8_t>(kChunk);
  bool finished = false;
  Inflater() {
    if (inflateInit2(&stream, -15) != Z_OK) throw Error("inflateInit2 failed");
  }
  ~Inflater() { inflateEnd(&stream); }
};

LogReader::LogReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string());
  std::array<std::uint8_t, kLogHeaderSize> raw{};
  in_.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (in_.gcount() < 4 || std::memcmp(raw.data(), kLogMagic.data(), 4) != 0) {
    throw FormatError("not a rounding log: " + path.string());
  }
  if (in_.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("truncated log header: " + path.string());
  }
  header_.version = raw[4];
  header_.b_r = raw[5];
  header_.flags = raw[6];
  header_.entry_count = get_u64_le(raw.data() + 7);
  if (header_.version != kLogVersion) {
    throw FormatError("unsupported log version " + std::to_string(header_.version) + ": " + path.string());
  }
  if ((header_.flags & ~kLogFlagDeflate) != 0) throw FormatError("unknown log flags: " + path.string());

  if (header_.compressed()) {
    inflater_ = std::make_unique<Inflater>();
  } else {
    const auto size = std::filesystem::file_size(path);
    if (size - kLogHeaderSize != packed_payload_bytes(header_.entry_count)) {
      throw FormatError("payload size does not match entry_count: " + path.string());
    }
  }
}

LogReader::~LogReader() = default;

std::uint8_t LogReader::next_payload_byte() {
  if (buffer_pos_ < buffer_.size()) return buffer_[buffer_pos_++];
  buffer_.clear();
  buffer_pos_ = 0;
  if (!inflater_) {
    buffer_.resize(kChunk);
    in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    buffer_.resize(static_cast<std::size_t>(in_.gcount()));
  } else {
    Inflater& inf = *inflater_;
    z_stream& zs = inf.stream;
    buffer_.resize(kChunk);
    zs.next_out = buffer_.data();
    zs.avail_out = static_cast<uInt>(buffer_.size());
    while (zs.avail_out == buffer_.size() && !inf.finished) {
      if (zs.avail_in == 0) {
        in_.read(reinterpret_cast<char*>(inf.input.data()), static_cast<std::streamsize>(inf.input.size()));
        zs.next_in = inf.input.data();
        zs.avail_in = static_cast<uInt>(in_.gcount());
        if (zs.avail_in == 0) break;
      }
      const int rc = inflate(&zs, Z_NO_FLUSH);
      if (rc == Z_STREAM_END) {
        inf.finished = true;
      } else if (rc != Z_OK && rc != Z_BUF_ERROR) {
        throw FormatError("corrupt compressed payload: " + path_.string());
      }
    }
    buffer_.resize(buffer_.size() - zs.avail_out);
  }
  if (buffer_.empty()) {
    throw FormatError("truncated log payload: " + where(path_, kLogHeaderSize + payload_index_));
  }
  return buffer_[buffer_pos_++];
}

Direction LogReader::read() {
  if (position_ >= header_.entry_count) throw ProtocolError("log exhausted");
  const std::size_t slot = position_ % 5;
  if (slot == 0) {
    const std::uint8_t byte = next_payload_byte();
    if (byte > kMaxPackedByte) {
      throw FormatError("corrupt log byte: " + where(path_, kLogHeaderSize + payload_index_));
    }
    group_ = unpack5(byte);
    ++payload_index_;
  }
  ++position_;
  return group_[slot];
}

LogSummary inspect_log(const std::filesystem::path& path) {
  LogReader reader(path);
  LogSummary summary;
  summary.header = reader.header();
  while (reader.remaining() > 0) ++summary.histogram[static_cast<std::size_t>(reader.read())];
  summary.file_bytes = std::filesystem::file_size(path);
  summary.payload_bytes = summary.file_bytes - kLogHeaderSize;
  return summary;
}

}  // namespace vtrain
