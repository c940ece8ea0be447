#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccl/errors.hpp"

namespace dccl {

enum class Direction { Uplink, Downlink };

inline std::string direction_name(Direction d) { return d == Direction::Uplink ? "uplink" : "downlink"; }

struct ChannelMessage {
  Direction direction;
  std::string kind;
  uint64_t bytes = 0;
  int round = 0;  // 0 marks one-time setup traffic
};

// The simulated device-cloud link. Every transfer is logged with its exact
// payload size; the counters are, by construction, the per-direction sums of
// the log.
class Channel {
 public:
  void send(Direction dir, const std::string& kind, uint64_t bytes, int round) {
    log_.push_back({dir, kind, bytes, round});
    if (dir == Direction::Uplink) {
      uplink_ += bytes;
    } else {
      downlink_ += bytes;
    }
  }

  uint64_t uplink_bytes() const { return uplink_; }
  uint64_t downlink_bytes() const { return downlink_; }
  uint64_t total_bytes() const { return uplink_ + downlink_; }
  const std::vector<ChannelMessage>& log() const { return log_; }

  uint64_t bytes_in_round(int round) const {
    uint64_t n = 0;
    for (const ChannelMessage& m : log_) {
      if (m.round == round) n += m.bytes;
    }
    return n;
  }

  uint64_t bytes_of_kind(const std::string& kind) const {
    uint64_t n = 0;
    for (const ChannelMessage& m : log_) {
      if (m.kind == kind) n += m.bytes;
    }
    return n;
  }

  size_t count(Direction dir, const std::string& kind) const {
    size_t n = 0;
    for (const ChannelMessage& m : log_) {
      if (m.direction == dir && m.kind == kind) ++n;
    }
    return n;
  }

 private:
  uint64_t uplink_ = 0;
  uint64_t downlink_ = 0;
  std::vector<ChannelMessage> log_;
};

}  // namespace dccl
