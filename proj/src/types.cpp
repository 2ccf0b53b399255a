#include "capts/types.hpp"

#include <fstream>
#include <sstream>

#include "capts/text_io.hpp"

namespace capts {

std::string_view channel_name(ChannelId c) {
  switch (c) {
    case ChannelId::cooccurrence: return "cooccurrence";
    case ChannelId::embedding: return "embedding";
    case ChannelId::content: return "content";
  }
  return "unknown";
}

std::optional<ChannelId> parse_channel(std::string_view name) {
  for (ChannelId c : kAllChannels)
    if (channel_name(c) == name) return c;
  return std::nullopt;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace capts
