#include "uwsynth/physics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace uwsynth {

RgbImage render_underwater(const RgbImage& clean, const DepthMap& depth,
                           const WaterType& water) {
  if (clean.width != depth.width || clean.height != depth.height)
    throw std::invalid_argument(
        "render_underwater: image " + std::to_string(clean.width) + "x" +
        std::to_string(clean.height) + " vs depth " + std::to_string(depth.width) +
        "x" + std::to_string(depth.height));
  RgbImage out(clean.width, clean.height);
  std::size_t plane = std::size_t(clean.width) * clean.height;
  for (int c = 0; c < 3; ++c) {
    const float K = water.K[c];
    const float B = water.B[c];
    const float* J = clean.px.data() + c * plane;
    float* I = out.px.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      // B + (J-B)*t keeps the result inside [min(J,B), max(J,B)] even in
      // floating point, since |fl((J-B)*t)| <= |J-B| for t in [0,1].
      float t = std::exp(-K * depth.d[i]);
      I[i] = std::clamp(B + (J[i] - B) * t, 0.f, 1.f);
    }
  }
  return out;
}

namespace {

std::string fmt_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Line {
  int number;
  std::string key, value;
};

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + msg);
}

float parse_float(const std::string& origin, int line, const std::string& value) {
  float v = 0;
  const char* b = value.data();
  const char* e = b + value.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    fail(origin, line, "not a number: '" + value + "'");
  return v;
}

std::string trim(std::string s) {
  auto issp = [](unsigned char ch) { return std::isspace(ch) != 0; };
  while (!s.empty() && issp(s.front())) s.erase(s.begin());
  while (!s.empty() && issp(s.back())) s.pop_back();
  return s;
}

}  // namespace

std::vector<WaterType> parse_water_types(const std::string& text,
                                         const std::string& origin) {
  static const std::array<std::string, 6> kCoeffKeys = {"K_r", "K_g", "K_b",
                                                        "B_r", "B_g", "B_b"};
  std::vector<WaterType> types;
  std::set<std::string> seen;
  bool in_entry = false;
  WaterType cur;
  std::map<std::string, bool> have;
  int entry_line = 0;

  auto finish_entry = [&](int line) {
    for (const auto& k : kCoeffKeys)
      if (!have[k])
        fail(origin, line, "entry '" + cur.name + "' (line " +
                               std::to_string(entry_line) + ") missing key " + k);
    types.push_back(cur);
  };

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "name") {
      if (in_entry) finish_entry(line_no);
      if (value.empty()) fail(origin, line_no, "empty name");
      if (!seen.insert(value).second)
        fail(origin, line_no, "duplicate water type '" + value + "'");
      cur = WaterType{};
      cur.name = value;
      have.clear();
      in_entry = true;
      entry_line = line_no;
      continue;
    }
    if (!in_entry) fail(origin, line_no, "key '" + key + "' before any name");
    auto idx = std::find(kCoeffKeys.begin(), kCoeffKeys.end(), key);
    if (idx == kCoeffKeys.end()) fail(origin, line_no, "unknown key '" + key + "'");
    if (have[key]) fail(origin, line_no, "duplicate key '" + key + "'");
    float v = parse_float(origin, line_no, value);
    std::size_t ci = std::size_t(idx - kCoeffKeys.begin());
    if (ci < 3) {
      if (!(v >= 0.f) || !std::isfinite(v))
        fail(origin, line_no, key + " must be >= 0, got " + value);
      cur.K[ci] = v;
    } else {
      if (!(v >= 0.f && v <= 1.f))
        fail(origin, line_no, key + " must be in [0,1], got " + value);
      cur.B[ci - 3] = v;
    }
    have[key] = true;
  }
  if (in_entry) finish_entry(line_no);
  if (types.empty())
    throw std::runtime_error(origin + ": no water types defined");
  return types;
}

std::vector<WaterType> load_water_types(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open water table: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_water_types(ss.str(), path);
}

std::string serialize_water_types(const std::vector<WaterType>& types) {
  std::ostringstream out;
  for (const auto& t : types) {
    out << "name = " << t.name << "\n";
    const char* kk[3] = {"K_r", "K_g", "K_b"};
    const char* bk[3] = {"B_r", "B_g", "B_b"};
    for (int c = 0; c < 3; ++c) out << kk[c] << " = " << fmt_float(t.K[c]) << "\n";
    for (int c = 0; c < 3; ++c) out << bk[c] << " = " << fmt_float(t.B[c]) << "\n";
    out << "\n";
  }
  return out.str();
}

void save_water_types(const std::vector<WaterType>& types, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write water table: " + path);
  out << serialize_water_types(types);
}

std::vector<WaterType> default_water_types() {
  // Illustrative coefficients chosen for clearly separated tints; they are
  // not measured optical constants.
  return {
      WaterType{"blue", {0.60f, 0.25f, 0.15f}, {0.05f, 0.35f, 0.60f}},
      WaterType{"light-blue", {0.30f, 0.12f, 0.08f}, {0.15f, 0.55f, 0.75f}},
      WaterType{"dark-blue", {1.00f, 0.50f, 0.30f}, {0.02f, 0.12f, 0.35f}},
      WaterType{"black", {1.50f, 1.20f, 1.00f}, {0.02f, 0.05f, 0.08f}},
  };
}

}  // namespace uwsynth
