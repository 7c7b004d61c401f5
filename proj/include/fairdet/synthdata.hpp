#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fairdet/tensor.hpp"

namespace fairdet {

enum class Gender : std::uint8_t { Male = 0, Female = 1 };
enum class Race : std::uint8_t { Asian = 0, Black = 1, White = 2, Others = 3 };

inline constexpr int kGenderCount = 2;
inline constexpr int kRaceCount = 4;
inline constexpr int kGroupCount = kGenderCount * kRaceCount;

/// Intersectional group id in [0, 8): gender * 4 + race.
constexpr int intersection_id(Gender g, Race r) { return static_cast<int>(g) * kRaceCount + static_cast<int>(r); }
constexpr Gender gender_of(int group) { return static_cast<Gender>(group / kRaceCount); }
constexpr Race race_of(int group) { return static_cast<Race>(group % kRaceCount); }

const char* gender_name(Gender g);
const char* race_name(Race r);
std::string group_name(int group);  // e.g. "Male-White"

/// Demographic variable a metric block is computed over.
enum class Axis { Gender, Race, Intersection };
const char* axis_name(Axis a);
Axis parse_axis(const std::string& s);
int subgroup_count(Axis a);
std::string subgroup_name(Axis a, int id);

using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Sample {
  Image image;    // H x W, values in [0,1]
  int label = 0;  // 0 real, 1 fake
  Gender gender = Gender::Male;
  Race race = Race::Asian;

  int intersection() const { return intersection_id(gender, race); }
  int subgroup(Axis a) const;
};

/// Per-group forgery-cue bias in [-1,1]: fake artifacts of group g are drawn
/// with amplitude artifact_amplitude * (1 + leakage * kGroupBias[g]).
inline constexpr std::array<double, kGroupCount> kGroupBias{
    // Asian, Black, White, Others (Male)
    -0.6, -1.0, 1.0, -0.2,
    // Asian, Black, White, Others (Female)
    -0.8, -0.9, 0.7, -0.4};

struct GenConfig {
  Index count = 2400;
  Index height = 16;
  Index width = 16;
  /// Intersectional proportions indexed by intersection_id. Default skew:
  /// Male-White 0.35, Female-White 0.30, the other six share 0.35.
  std::array<double, kGroupCount> proportions{0.35 / 6, 0.35 / 6, 0.35, 0.35 / 6,
                                              0.35 / 6, 0.35 / 6, 0.30, 0.35 / 6};
  double fake_fraction = 0.5;
  double noise_std = 0.08;
  double group_amplitude = 0.12;
  double artifact_amplitude = 0.08;
  double leakage = 0.8;  // rho
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GenConfig&) const = default;
};

struct Split {
  std::vector<int> train, val, test;
};

enum class SplitTag : std::uint8_t { Train = 0, Val = 1, Test = 2, None = 255 };

struct Dataset {
  GenConfig config;
  std::vector<Sample> samples;
  Split split;  // empty until assigned

  Index size() const { return static_cast<Index>(samples.size()); }
  std::vector<SplitTag> split_tags() const;
};

/// Largest-remainder apportionment of `total` items by `weights` (which need
/// not be normalized). Ties in the remainder go to the lower index.
std::vector<Index> largest_remainder(std::span<const double> weights, Index total);

Dataset generate(const GenConfig& config);

enum class Perturbation { GaussianNoise, GaussianBlur, BlockWiseNoise };
const char* perturbation_name(Perturbation p);  // "GN", "GB", "BWN"
Perturbation parse_perturbation(const std::string& s);

/// Robustness distortions. GN: additive N(0, intensity^2) then clip to [0,1].
/// GB: Gaussian blur with sigma = intensity, reflected borders.
/// BWN: ceil(intensity) random 4x4-aligned blocks replaced by U(0,1) noise.
/// Intensity 0 returns the image unchanged for every kind.
Image perturb(const Image& image, Perturbation kind, double intensity, std::uint64_t seed);

/// Stratified (by intersection) seeded split; per-stratum counts by largest
/// remainder.
Split split_dataset(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed);

/// Stacks the selected samples into [B,1,H,W].
Tensor batch_images(const Dataset& data, std::span<const int> indices);
std::vector<int> batch_labels(const Dataset& data, std::span<const int> indices);
std::vector<int> batch_groups(const Dataset& data, std::span<const int> indices, Axis axis = Axis::Intersection);

// Dataset container (little-endian):
//   8 bytes magic "FAIRDS01"
//   u32 length + text block with the GenConfig as key=value lines
//   u64 sample count N, u32 H, u32 W
//   N records: u8 label, u8 gender, u8 race, u8 split tag, H*W f64 pixels
void save_dataset(std::ostream& os, const Dataset& data);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(std::istream& is);
Dataset load_dataset(const std::string& path);

/// CSV manifest: index,label,gender,race,split
void write_manifest(std::ostream& os, const Dataset& data);

std::string gen_config_text(const GenConfig& c);

/// SplitMix64 step, used to derive per-sample seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fairdet
