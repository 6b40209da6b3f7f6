#pragma once

// Feature-extractor logic: trace ingestion, 5-tuple flow tracking,
// inter-arrival features, inference-point triggering, input assembly and
// per-flow voting.
//
// Text trace format, one packet per line (CSV):
//   timestamp_ns,src_ip,src_port,dst_ip,dst_port,proto,prefix_hex[,label]
// or the same fields as a JSON object per line:
//   {"ts":0,"src_ip":"10.0.0.1","src_port":1234,"dst_ip":"10.0.0.2",
//    "dst_port":53,"proto":17,"prefix":"4500...","label":1}
// Blank lines and lines starting with '#' are ignored, as is a CSV header
// line starting with "timestamp".

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "netnn/arith.hpp"
#include "netnn/model.hpp"

namespace netnn {

inline constexpr std::size_t kPrefixBytes = 68;
inline constexpr std::uint32_t kBitInputWidth = kPrefixBytes * 8 + 8 + 8 + 8;  // 568

struct FiveTuple {
  std::uint32_t src_ip = 0;
  std::uint32_t dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t proto = 0;

  auto operator<=>(const FiveTuple&) const = default;
};

inline std::string ip_to_string(std::uint32_t ip) {
  return std::to_string(ip >> 24) + "." + std::to_string((ip >> 16) & 0xff) + "." + std::to_string((ip >> 8) & 0xff) +
         "." + std::to_string(ip & 0xff);
}

inline std::string to_string(const FiveTuple& t) {
  return ip_to_string(t.src_ip) + ":" + std::to_string(t.src_port) + "->" + ip_to_string(t.dst_ip) + ":" +
         std::to_string(t.dst_port) + "/" + std::to_string(t.proto);
}

/// 32-bit FNV-1a over the tuple in network byte order.
inline std::uint32_t flow_hash(const FiveTuple& t) {
  std::array<std::uint8_t, 13> bytes{};
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
  };
  put32(0, t.src_ip);
  put32(4, t.dst_ip);
  bytes[8] = static_cast<std::uint8_t>(t.src_port >> 8);
  bytes[9] = static_cast<std::uint8_t>(t.src_port);
  bytes[10] = static_cast<std::uint8_t>(t.dst_port >> 8);
  bytes[11] = static_cast<std::uint8_t>(t.dst_port);
  bytes[12] = t.proto;
  std::uint32_t h = 2166136261u;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 16777619u;
  }
  return h;
}

struct TracePacket {
  std::uint64_t timestamp_ns = 0;
  FiveTuple tuple;
  std::vector<std::uint8_t> raw_prefix;  // at most 68 bytes, from the IP header on
  std::optional<std::uint32_t> label;

  bool operator==(const TracePacket&) const = default;
};

struct Vote {
  std::uint32_t point = 0;  // packet count that triggered the inference
  std::uint32_t class_index = 0;

  bool operator==(const Vote&) const = default;
};

struct FlowRecord {
  FiveTuple key;
  std::uint32_t flow_id = 0;
  std::uint64_t packet_count = 0;
  std::uint64_t last_arrival = 0;
  std::uint64_t min_iat = 0;  // meaningful once packet_count >= 2
  std::uint64_t max_iat = 0;
  std::vector<Vote> votes;
  std::map<std::uint32_t, std::uint64_t> label_counts;

  bool has_iat() const { return packet_count >= 2; }
};

class FlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowOptions {
  std::uint64_t max_inference_point = 1024;
  bool strict_timestamps = true;
};

/// Flow records in first-seen order.
class FlowTable {
 public:
  explicit FlowTable(FlowOptions options = {}) : options_(options) {}

  const FlowOptions& options() const { return options_; }
  std::size_t size() const { return records_.size(); }
  FlowRecord& at(std::size_t i) { return records_.at(i); }
  const FlowRecord& at(std::size_t i) const { return records_.at(i); }
  const std::vector<FlowRecord>& records() const { return records_; }

  std::optional<std::size_t> find(const FiveTuple& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t find_or_insert(const FiveTuple& key) {
    auto [it, fresh] = index_.try_emplace(key, records_.size());
    if (fresh) {
      FlowRecord r;
      r.key = key;
      r.flow_id = flow_hash(key);
      records_.push_back(std::move(r));
    }
    return it->second;
  }

 private:
  FlowOptions options_;
  std::vector<FlowRecord> records_;
  std::map<FiveTuple, std::size_t> index_;
};

struct FlowUpdate {
  std::size_t index = 0;  // record position in the table
  bool is_inference_point = false;
};

inline FlowUpdate update_flow(FlowTable& table, const TracePacket& pkt) {
  std::size_t idx = table.find_or_insert(pkt.tuple);
  FlowRecord& r = table.at(idx);
  std::uint64_t ts = pkt.timestamp_ns;
  if (r.packet_count > 0 && ts < r.last_arrival) {
    if (table.options().strict_timestamps)
      throw FlowError("non-monotonic timestamp in flow " + to_string(r.key) + ": " + std::to_string(ts) + " < " +
                      std::to_string(r.last_arrival));
    ts = r.last_arrival;
  }
  if (r.packet_count > 0) {
    std::uint64_t iat = ts - r.last_arrival;
    if (r.packet_count == 1) {
      r.min_iat = r.max_iat = iat;
    } else {
      r.min_iat = std::min(r.min_iat, iat);
      r.max_iat = std::max(r.max_iat, iat);
    }
  }
  r.last_arrival = ts;
  ++r.packet_count;
  if (pkt.label) ++r.label_counts[*pkt.label];
  return {idx, is_power_of_two(r.packet_count) && r.packet_count <= table.options().max_inference_point};
}

/// min(255, floor(log2(iat + 1)) * 8).
inline Activation iat_feature(std::uint64_t iat_ns) {
  std::uint64_t x = iat_ns == UINT64_MAX ? iat_ns : iat_ns + 1;
  std::uint64_t lg = static_cast<std::uint64_t>(std::bit_width(x)) - 1;
  return static_cast<Activation>(std::min<std::uint64_t>(255, lg * 8));
}

/// The flow id folded to one byte by XOR.
inline Activation flow_feature(std::uint32_t flow_id) {
  return static_cast<Activation>((flow_id ^ (flow_id >> 8) ^ (flow_id >> 16) ^ (flow_id >> 24)) & 0xff);
}

/// Bit-mode input: 544 prefix bits (MSB first, zero-padded), then the min
/// IAT, max IAT and flow id features as 8-bit values each. Undefined IATs
/// (first packet) are 0.
inline std::vector<Activation> build_input(const FlowRecord& record, const TracePacket& pkt,
                                           std::uint32_t input_width) {
  if (input_width != kBitInputWidth)
    throw std::invalid_argument("bit-mode input needs a model input width of " + std::to_string(kBitInputWidth) +
                                ", got " + std::to_string(input_width));
  if (pkt.raw_prefix.size() > kPrefixBytes) throw std::invalid_argument("raw prefix longer than 68 bytes");
  std::vector<Activation> in(kBitInputWidth, 0);
  for (std::size_t b = 0; b < pkt.raw_prefix.size(); ++b)
    for (int bit = 0; bit < 8; ++bit) in[b * 8 + bit] = (pkt.raw_prefix[b] >> (7 - bit)) & 1u;
  const std::size_t tail = kPrefixBytes * 8;
  in[tail] = record.has_iat() ? iat_feature(record.min_iat) : 0;
  in[tail + 1] = record.has_iat() ? iat_feature(record.max_iat) : 0;
  in[tail + 2] = flow_feature(record.flow_id);
  return in;
}

inline std::vector<Activation> build_input(const FlowRecord& record, const TracePacket& pkt,
                                           const QuantizedModel& model) {
  return build_input(record, pkt, model.input_width);
}

inline void record_vote(FlowRecord& record, std::uint32_t point, std::uint32_t class_index) {
  for (const Vote& v : record.votes)
    if (v.point == point)
      throw FlowError("flow " + to_string(record.key) + " already voted at point " + std::to_string(point));
  record.votes.push_back({point, class_index});
}

/// Plurality over the first `limit` votes (all when limit is 0). A tie that
/// includes the malicious class goes to it; otherwise the lowest class wins.
inline std::uint32_t verdict(std::span<const Vote> votes, std::uint32_t malicious_class = 1, std::size_t limit = 0) {
  if (votes.empty()) throw FlowError("verdict: flow has no votes");
  std::size_t n = limit == 0 ? votes.size() : std::min(limit, votes.size());
  std::map<std::uint32_t, std::size_t> tally;
  for (std::size_t i = 0; i < n; ++i) ++tally[votes[i].class_index];
  std::size_t best = 0;
  for (const auto& [cls, count] : tally) best = std::max(best, count);
  auto mal = tally.find(malicious_class);
  if (mal != tally.end() && mal->second == best) return malicious_class;
  for (const auto& [cls, count] : tally)
    if (count == best) return cls;
  return 0;
}

inline std::uint32_t verdict(const FlowRecord& record, std::uint32_t malicious_class = 1) {
  return verdict(std::span<const Vote>(record.votes), malicious_class);
}

/// Plurality of the packet labels (same tie rule), if any packet was labelled.
inline std::optional<std::uint32_t> flow_label(const FlowRecord& record, std::uint32_t malicious_class = 1) {
  if (record.label_counts.empty()) return std::nullopt;
  std::uint64_t best = 0;
  for (const auto& [cls, n] : record.label_counts) best = std::max(best, n);
  auto mal = record.label_counts.find(malicious_class);
  if (mal != record.label_counts.end() && mal->second == best) return malicious_class;
  for (const auto& [cls, n] : record.label_counts)
    if (n == best) return cls;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Trace parsing

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParsedTrace {
  std::vector<TracePacket> packets;
  std::uint64_t skipped_non_ipv4 = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_uint(std::string_view s, std::uint64_t max, const char* what) {
  s = trim(s);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty() || v > max)
    throw TraceError(std::string("bad ") + what + " '" + std::string(s) + "'");
  return static_cast<T>(v);
}

inline std::uint32_t parse_ip(std::string_view s) {
  s = trim(s);
  std::uint32_t ip = 0;
  for (int part = 0; part < 4; ++part) {
    std::size_t dot = part < 3 ? s.find('.') : s.size();
    if (dot == std::string_view::npos) throw TraceError("bad IPv4 address");
    ip = (ip << 8) | parse_uint<std::uint32_t>(s.substr(0, dot), 255, "IPv4 octet");
    s = part < 3 ? s.substr(dot + 1) : std::string_view{};
  }
  return ip;
}

inline std::vector<std::uint8_t> parse_hex(std::string_view s) {
  s = trim(s);
  if (s.size() % 2 != 0) throw TraceError("hex prefix has odd length");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    std::uint8_t b = 0;
    auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + i + 2, b, 16);
    if (ec != std::errc{} || ptr != s.data() + i + 2) throw TraceError("bad hex prefix");
    out.push_back(b);
  }
  if (out.size() > kPrefixBytes) throw TraceError("prefix longer than 68 bytes");
  return out;
}

inline TracePacket parse_csv_line(std::string_view line) {
  std::vector<std::string_view> f;
  while (true) {
    std::size_t c = line.find(',');
    f.push_back(line.substr(0, c));
    if (c == std::string_view::npos) break;
    line.remove_prefix(c + 1);
  }
  if (f.size() < 7 || f.size() > 8) throw TraceError("expected 7 or 8 comma-separated fields");
  TracePacket p;
  p.timestamp_ns = parse_uint<std::uint64_t>(f[0], UINT64_MAX, "timestamp");
  p.tuple.src_ip = parse_ip(f[1]);
  p.tuple.src_port = parse_uint<std::uint16_t>(f[2], 0xffff, "port");
  p.tuple.dst_ip = parse_ip(f[3]);
  p.tuple.dst_port = parse_uint<std::uint16_t>(f[4], 0xffff, "port");
  p.tuple.proto = parse_uint<std::uint8_t>(f[5], 0xff, "protocol");
  p.raw_prefix = parse_hex(f[6]);
  if (f.size() == 8 && !trim(f[7]).empty()) p.label = parse_uint<std::uint32_t>(f[7], UINT32_MAX, "label");
  return p;
}

inline TracePacket parse_json_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("bad JSON record: ") + e.what());
  }
  auto u = [&](const char* key, std::uint64_t max) -> std::uint64_t {
    if (!j.contains(key) || !j[key].is_number_unsigned()) throw TraceError(std::string("missing field ") + key);
    std::uint64_t v = j[key].get<std::uint64_t>();
    if (v > max) throw TraceError(std::string("field out of range: ") + key);
    return v;
  };
  auto s = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) throw TraceError(std::string("missing field ") + key);
    return j[key].get<std::string>();
  };
  TracePacket p;
  p.timestamp_ns = u("ts", UINT64_MAX);
  p.tuple.src_ip = parse_ip(s("src_ip"));
  p.tuple.src_port = static_cast<std::uint16_t>(u("src_port", 0xffff));
  p.tuple.dst_ip = parse_ip(s("dst_ip"));
  p.tuple.dst_port = static_cast<std::uint16_t>(u("dst_port", 0xffff));
  p.tuple.proto = static_cast<std::uint8_t>(u("proto", 0xff));
  p.raw_prefix = parse_hex(s("prefix"));
  if (j.contains("label") && !j["label"].is_null()) p.label = static_cast<std::uint32_t>(u("label", UINT32_MAX));
  return p;
}

inline ParsedTrace parse_text(std::istream& in) {
  ParsedTrace out;
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    if (v.rfind("timestamp", 0) == 0) continue;
    try {
      out.packets.push_back(v.front() == '{' ? parse_json_line(v) : parse_csv_line(v));
    } catch (const TraceError& e) {
      throw TraceError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::uint32_t read32(const std::uint8_t* p, bool swap) {
  std::uint32_t v = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
  return swap ? (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24) : v;
}

inline std::uint16_t be16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] << 8 | p[1]); }
inline std::uint32_t be32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} << 24 | std::uint32_t{p[1]} << 16 | std::uint32_t{p[2]} << 8 | p[3];
}

inline ParsedTrace parse_pcap(std::istream& in) {
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 24) throw TraceError("pcap: truncated global header");
  std::uint32_t magic = read32(data.data(), false);
  bool swap = false;
  bool nanos = false;
  switch (magic) {
    case 0xa1b2c3d4: break;
    case 0xa1b23c4d: nanos = true; break;
    case 0xd4c3b2a1: swap = true; break;
    case 0x4d3cb2a1: swap = nanos = true; break;
    default: throw TraceError("pcap: unknown magic");
  }
  std::uint32_t linktype = read32(data.data() + 20, swap);
  if (linktype != 1) throw TraceError("pcap: only Ethernet captures are supported");
  ParsedTrace out;
  std::size_t off = 24;
  while (off < data.size()) {
    if (data.size() - off < 16) throw TraceError("pcap: truncated record header");
    std::uint64_t sec = read32(data.data() + off, swap);
    std::uint64_t frac = read32(data.data() + off + 4, swap);
    std::uint32_t incl = read32(data.data() + off + 8, swap);
    off += 16;
    if (data.size() - off < incl) throw TraceError("pcap: truncated packet record");
    const std::uint8_t* frame = data.data() + off;
    off += incl;

    std::size_t l3 = 14;
    if (incl < l3) {
      ++out.skipped_non_ipv4;
      continue;
    }
    std::uint16_t ethertype = be16(frame + 12);
    if (ethertype == 0x8100 && incl >= 18) {
      ethertype = be16(frame + 16);
      l3 = 18;
    }
    if (ethertype != 0x0800 || incl < l3 + 20 || (frame[l3] >> 4) != 4) {
      ++out.skipped_non_ipv4;
      continue;
    }
    const std::uint8_t* ip = frame + l3;
    std::size_t captured = incl - l3;
    std::size_t ihl = std::size_t{ip[0] & 0x0fu} * 4;
    std::size_t total = be16(ip + 2);
    if (ihl < 20 || total < ihl) throw TraceError("pcap: malformed IPv4 header");
    TracePacket p;
    p.timestamp_ns = sec * 1'000'000'000ull + (nanos ? frac : frac * 1000);
    p.tuple.proto = ip[9];
    p.tuple.src_ip = be32(ip + 12);
    p.tuple.dst_ip = be32(ip + 16);
    if ((p.tuple.proto == 6 || p.tuple.proto == 17) && captured >= ihl + 4) {
      p.tuple.src_port = be16(ip + ihl);
      p.tuple.dst_port = be16(ip + ihl + 2);
    }
    std::size_t n = std::min({captured, total, kPrefixBytes});
    p.raw_prefix.assign(ip, ip + n);
    out.packets.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

/// format: "csv-jsonl" (text, auto-detected per line) or "pcap".
inline ParsedTrace parse_trace(std::istream& in, std::string_view format) {
  if (format == "csv-jsonl" || format == "csv" || format == "jsonl") return detail::parse_text(in);
  if (format == "pcap") return detail::parse_pcap(in);
  throw TraceError("unknown trace format '" + std::string(format) + "'");
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  for (std::uint8_t b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xf]);
  }
  return s;
}

/// One CSV line of the text format (no newline).
inline std::string format_trace_line(const TracePacket& p) {
  std::string s = std::to_string(p.timestamp_ns) + "," + ip_to_string(p.tuple.src_ip) + "," +
                  std::to_string(p.tuple.src_port) + "," + ip_to_string(p.tuple.dst_ip) + "," +
                  std::to_string(p.tuple.dst_port) + "," + std::to_string(p.tuple.proto) + "," + to_hex(p.raw_prefix);
  if (p.label) s += "," + std::to_string(*p.label);
  return s;
}

}  // namespace netnn
