#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace capts {

using ItemId = std::uint32_t;
using UserId = std::uint32_t;
using RequestId = std::uint64_t;
using EpochSeconds = std::int64_t;

inline constexpr double kDefaultEffectiveViewSeconds = 7.0;
inline constexpr int kDefaultRetrievalDepth = 50;
inline constexpr EpochSeconds kDefaultReplayRollbackSeconds = 1200;

// Retrieval channel. The numeric value is the stable iteration order.
enum class ChannelId : std::uint8_t { cooccurrence = 0, embedding = 1, content = 2 };

inline constexpr std::array<ChannelId, 3> kAllChannels = {
    ChannelId::cooccurrence, ChannelId::embedding, ChannelId::content};

std::string_view channel_name(ChannelId c);
std::optional<ChannelId> parse_channel(std::string_view name);

// Failure classes; the CLI maps each one to its own exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when no snapshot satisfies the replay rollback rule.
class ReplayUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a, used for config and checkpoint fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace capts
