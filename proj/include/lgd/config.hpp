#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgd {

/// Pyramid strides of the student detector (two levels).
inline constexpr std::array<std::size_t, 2> kStrides{8, 16};

struct DetectorConfig {
  int num_classes = 3;
  int channels = 64;
  std::array<int, 4> backbone_widths{16, 32, 64, 64};
  /// Longer box side (pixels) up to which objects are assigned to level 1.
  double level_split = 32.0;
};

enum class EncoderKind { kPointNetLite, kMlp };
enum class QueryDirection { kStudent, kLabel };
enum class TemperatureMode { kPerHead, kFull };

struct LgdConfig {
  std::array<int, 2> label_hidden{64, 128};
  EncoderKind encoder = EncoderKind::kPointNetLite;
  int heads = 8;
  TemperatureMode temperature = TemperatureMode::kPerHead;
  QueryDirection query = QueryDirection::kStudent;
  bool context_participation = true;
  bool head_sharing = true;
};

inline std::string to_string(EncoderKind k) { return k == EncoderKind::kMlp ? "mlp" : "pointnet-lite"; }
inline std::string to_string(QueryDirection q) { return q == QueryDirection::kLabel ? "label" : "student"; }
inline std::string to_string(TemperatureMode t) { return t == TemperatureMode::kFull ? "full" : "per-head"; }

inline EncoderKind parse_encoder(const std::string& s) {
  if (s == "pointnet-lite") return EncoderKind::kPointNetLite;
  if (s == "mlp") return EncoderKind::kMlp;
  throw std::invalid_argument("unknown label encoder kind: " + s);
}
inline QueryDirection parse_query(const std::string& s) {
  if (s == "student") return QueryDirection::kStudent;
  if (s == "label") return QueryDirection::kLabel;
  throw std::invalid_argument("unknown query direction: " + s);
}
inline TemperatureMode parse_temperature(const std::string& s) {
  if (s == "per-head") return TemperatureMode::kPerHead;
  if (s == "full") return TemperatureMode::kFull;
  throw std::invalid_argument("unknown temperature mode: " + s);
}

}  // namespace lgd
