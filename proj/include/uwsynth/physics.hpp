#pragma once

#include <array>
#include <string>
#include <vector>

#include "uwsynth/image.hpp"

namespace uwsynth {

// Optical parameters of one water style: per-channel attenuation K (1/m)
// and background light B in [0,1].
struct WaterType {
  std::string name;
  std::array<float, 3> K{};  // r, g, b
  std::array<float, 3> B{};

  bool operator==(const WaterType&) const = default;
};

// Exponential attenuation with backscatter:
//   I = B + (J - B) * exp(-K * d)   per pixel and channel.
// The result is always between J and B (inclusive) and clamped to [0,1].
RgbImage render_underwater(const RgbImage& clean, const DepthMap& depth,
                           const WaterType& water);

// Water-type table file: repeated key = value groups, each entry starting
// at its `name =` line with the six coefficient keys K_r K_g K_b B_r B_g B_b.
// `#` starts a comment. Validation failures report the line number.
std::vector<WaterType> parse_water_types(const std::string& text,
                                         const std::string& origin);
std::vector<WaterType> load_water_types(const std::string& path);
std::string serialize_water_types(const std::vector<WaterType>& types);
void save_water_types(const std::vector<WaterType>& types, const std::string& path);

// Built-in table with four styles (blue, light-blue, dark-blue, black).
// The coefficient values are illustrative defaults, not measurements; edit
// the table file to model a specific water body.
std::vector<WaterType> default_water_types();

}  // namespace uwsynth
