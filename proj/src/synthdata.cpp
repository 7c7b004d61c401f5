#include "fairdet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "fairdet/config.hpp"

namespace fairdet {

const char* gender_name(Gender g) { return g == Gender::Male ? "Male" : "Female"; }

const char* race_name(Race r) {
  switch (r) {
    case Race::Asian: return "Asian";
    case Race::Black: return "Black";
    case Race::White: return "White";
    case Race::Others: return "Others";
  }
  return "?";
}

std::string group_name(int group) {
  return std::string(gender_name(gender_of(group))) + "-" + race_name(race_of(group));
}

const char* axis_name(Axis a) {
  switch (a) {
    case Axis::Gender: return "gender";
    case Axis::Race: return "race";
    case Axis::Intersection: return "intersection";
  }
  return "?";
}

Axis parse_axis(const std::string& s) {
  if (s == "gender") return Axis::Gender;
  if (s == "race") return Axis::Race;
  if (s == "intersection") return Axis::Intersection;
  throw ConfigError("unknown axis '" + s + "'");
}

int subgroup_count(Axis a) {
  switch (a) {
    case Axis::Gender: return kGenderCount;
    case Axis::Race: return kRaceCount;
    case Axis::Intersection: return kGroupCount;
  }
  return 0;
}

std::string subgroup_name(Axis a, int id) {
  switch (a) {
    case Axis::Gender: return gender_name(static_cast<Gender>(id));
    case Axis::Race: return race_name(static_cast<Race>(id));
    case Axis::Intersection: return group_name(id);
  }
  return "?";
}

int Sample::subgroup(Axis a) const {
  switch (a) {
    case Axis::Gender: return static_cast<int>(gender);
    case Axis::Race: return static_cast<int>(race);
    case Axis::Intersection: return intersection();
  }
  return -1;
}

void GenConfig::validate() const {
  if (count < 1) throw ConfigError("count must be positive");
  if (height < 4 || width < 4) throw ConfigError("images must be at least 4x4");
  double total = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ConfigError("group proportions must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("group proportions sum to " + std::to_string(total) + ", not 1");
  if (!(fake_fraction >= 0.0 && fake_fraction <= 1.0)) throw ConfigError("fake_fraction must lie in [0,1]");
  if (!(noise_std >= 0.0) || !(group_amplitude >= 0.0) || !(artifact_amplitude >= 0.0)) {
    throw ConfigError("amplitudes must be nonnegative");
  }
  if (!(leakage >= 0.0 && leakage <= 1.0)) throw ConfigError("leakage must lie in [0,1]");
}

std::vector<SplitTag> Dataset::split_tags() const {
  std::vector<SplitTag> tags(samples.size(), SplitTag::None);
  for (int i : split.train) tags.at(static_cast<std::size_t>(i)) = SplitTag::Train;
  for (int i : split.val) tags.at(static_cast<std::size_t>(i)) = SplitTag::Val;
  for (int i : split.test) tags.at(static_cast<std::size_t>(i)) = SplitTag::Test;
  return tags;
}

std::vector<Index> largest_remainder(std::span<const double> weights, Index total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<Index> out(weights.size(), 0);
  if (weights.empty() || total <= 0 || sum <= 0.0) return out;
  std::vector<double> rem(weights.size());
  Index assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / sum * static_cast<double>(total);
    // Guard against 59.99999999 style representation error.
    const double fl = std::floor(exact + 1e-9);
    out[i] = static_cast<Index>(fl);
    rem[i] = std::max(0.0, exact - fl);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    if (weights[order[k]] > 0.0) {
      ++out[order[k]];
      ++assigned;
    }
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Low-frequency texture: a gender stripe plus a race-specific plane wave.
// Frequencies stay at <= 2 cycles per image so the band is disjoint from the
// pixel-level forgery artifact.
Image group_texture(int group, Index h, Index w) {
  static constexpr std::array<std::array<double, 2>, kRaceCount> race_freq{{{0, 1}, {1, 1}, {2, 0}, {1, 2}}};
  const double gender_phase = gender_of(group) == Gender::Male ? 0.0 : std::numbers::pi;
  const auto& f = race_freq[static_cast<std::size_t>(race_of(group))];
  Image t(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(w);
      const double v = static_cast<double>(y) / static_cast<double>(h);
      t(y, x) = 0.5 * std::cos(kTwoPi * v + gender_phase) + 0.5 * std::cos(kTwoPi * (f[0] * u + f[1] * v));
    }
  return t;
}

// Blending-boundary artifact: a checkerboard patch at a random even offset,
// so its sign pattern is fixed relative to the pixel grid.
void add_artifact(Image& img, double amplitude, std::mt19937_64& rng) {
  const Index patch = std::min<Index>(8, std::min(img.rows(), img.cols()));
  std::uniform_int_distribution<Index> py(0, (img.rows() - patch) / 2), px(0, (img.cols() - patch) / 2);
  const Index oy = 2 * py(rng), ox = 2 * px(rng);
  for (Index y = 0; y < patch; ++y)
    for (Index x = 0; x < patch; ++x) img(oy + y, ox + x) += amplitude * (((y + x) % 2 == 0) ? 1.0 : -1.0);
}

}  // namespace

Dataset generate(const GenConfig& config) {
  config.validate();
  Dataset data;
  data.config = config;

  const std::vector<Index> group_counts = largest_remainder(config.proportions, config.count);
  std::vector<std::pair<int, int>> cells;  // (group, label)
  for (int g = 0; g < kGroupCount; ++g) {
    const Index n = group_counts[static_cast<std::size_t>(g)];
    const auto fakes = static_cast<Index>(std::floor(static_cast<double>(n) * config.fake_fraction + 0.5));
    for (Index i = 0; i < n; ++i) cells.emplace_back(g, i < fakes ? 1 : 0);
  }
  std::mt19937_64 order_rng(splitmix64(config.seed));
  std::shuffle(cells.begin(), cells.end(), order_rng);

  std::array<Image, kGroupCount> textures;
  for (int g = 0; g < kGroupCount; ++g) textures[static_cast<std::size_t>(g)] = group_texture(g, config.height, config.width);

  data.samples.resize(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto [group, label] = cells[i];
    std::mt19937_64 rng(splitmix64(config.seed ^ splitmix64(i + 1)));
    std::normal_distribution<double> noise(0.0, 1.0);
    Sample& s = data.samples[i];
    s.gender = gender_of(group);
    s.race = race_of(group);
    s.label = label;
    s.image = Image::Constant(config.height, config.width, 0.5);
    s.image += config.group_amplitude * textures[static_cast<std::size_t>(group)];
    for (Index p = 0; p < s.image.size(); ++p) s.image.data()[p] += config.noise_std * noise(rng);
    if (label == 1) {
      const double amp =
          config.artifact_amplitude * (1.0 + config.leakage * kGroupBias[static_cast<std::size_t>(group)]);
      add_artifact(s.image, amp, rng);
    }
    s.image = s.image.cwiseMax(0.0).cwiseMin(1.0);
  }
  return data;
}

const char* perturbation_name(Perturbation p) {
  switch (p) {
    case Perturbation::GaussianNoise: return "GN";
    case Perturbation::GaussianBlur: return "GB";
    case Perturbation::BlockWiseNoise: return "BWN";
  }
  return "?";
}

Perturbation parse_perturbation(const std::string& s) {
  if (s == "GN") return Perturbation::GaussianNoise;
  if (s == "GB") return Perturbation::GaussianBlur;
  if (s == "BWN") return Perturbation::BlockWiseNoise;
  throw UsageError("unknown perturbation kind '" + s + "' (expected GN, GB or BWN)");
}

namespace {

Index reflect(Index i, Index n) {
  // Mirror without repeating the edge: -1 -> 1, n -> n-2.
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image gaussian_blur(const Image& img, double sigma) {
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  Eigen::VectorXd k(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  k /= k.sum();
  Image tmp(img.rows(), img.cols()), out(img.rows(), img.cols());
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) {
      double acc = 0.0;
      for (Index i = -radius; i <= radius; ++i) acc += k[i + radius] * img(y, reflect(x + i, img.cols()));
      tmp(y, x) = acc;
    }
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) {
      double acc = 0.0;
      for (Index i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(reflect(y + i, img.rows()), x);
      out(y, x) = acc;
    }
  return out;
}

}  // namespace

Image perturb(const Image& image, Perturbation kind, double intensity, std::uint64_t seed) {
  if (!(intensity >= 0.0)) throw DomainError("perturbation intensity must be nonnegative");
  if (intensity == 0.0) return image;
  std::mt19937_64 rng(seed);
  switch (kind) {
    case Perturbation::GaussianNoise: {
      std::normal_distribution<double> noise(0.0, intensity);
      Image out = image;
      for (Index p = 0; p < out.size(); ++p) out.data()[p] += noise(rng);
      return out.cwiseMax(0.0).cwiseMin(1.0);
    }
    case Perturbation::GaussianBlur:
      return gaussian_blur(image, intensity);
    case Perturbation::BlockWiseNoise: {
      constexpr Index kBlock = 4;
      const Index by = std::max<Index>(1, image.rows() / kBlock), bx = std::max<Index>(1, image.cols() / kBlock);
      std::uniform_int_distribution<Index> pick(0, by * bx - 1);
      std::uniform_real_distribution<double> fill(0.0, 1.0);
      Image out = image;
      const auto blocks = static_cast<Index>(std::ceil(intensity));
      for (Index b = 0; b < blocks; ++b) {
        const Index cell = pick(rng);
        const Index y0 = (cell / bx) * kBlock, x0 = (cell % bx) * kBlock;
        for (Index y = y0; y < std::min(y0 + kBlock, out.rows()); ++y)
          for (Index x = x0; x < std::min(x0 + kBlock, out.cols()); ++x) out(y, x) = fill(rng);
      }
      return out;
    }
  }
  throw UsageError("unknown perturbation kind");
}

Split split_dataset(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed) {
  if (data.samples.empty()) throw DataError("cannot split an empty dataset");
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  std::array<std::vector<int>, kGroupCount> strata;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    strata[static_cast<std::size_t>(data.samples[i].intersection())].push_back(static_cast<int>(i));

  Split out;
  std::mt19937_64 rng(splitmix64(seed ^ 0x5EEDULL));
  for (auto& members : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    std::vector<Index> counts = largest_remainder(ratios, static_cast<Index>(members.size()));
    if (members.size() >= 5) {
      // Every sizeable stratum must reach every split with a positive ratio.
      for (std::size_t k = 0; k < 3; ++k) {
        if (ratios[k] > 0.0 && counts[k] == 0) {
          auto donor = std::max_element(counts.begin(), counts.end()) - counts.begin();
          --counts[static_cast<std::size_t>(donor)];
          ++counts[k];
        }
      }
    }
    auto it = members.begin();
    for (std::size_t k = 0; k < 3; ++k) {
      auto& dst = k == 0 ? out.train : k == 1 ? out.val : out.test;
      dst.insert(dst.end(), it, it + counts[k]);
      it += counts[k];
    }
  }
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

Tensor batch_images(const Dataset& data, std::span<const int> indices) {
  if (data.samples.empty()) throw DataError("empty dataset");
  const Index h = data.samples.front().image.rows(), w = data.samples.front().image.cols();
  Tensor out({static_cast<Index>(indices.size()), 1, h, w});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Image& img = data.samples.at(static_cast<std::size_t>(indices[b])).image;
    std::copy(img.data(), img.data() + h * w, out.data().data() + static_cast<Index>(b) * h * w);
  }
  return out;
}

std::vector<int> batch_labels(const Dataset& data, std::span<const int> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(data.samples.at(static_cast<std::size_t>(i)).label);
  return out;
}

std::vector<int> batch_groups(const Dataset& data, std::span<const int> indices, Axis axis) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(data.samples.at(static_cast<std::size_t>(i)).subgroup(axis));
  return out;
}

namespace {
constexpr char kDatasetMagic[9] = "FAIRDS01";
}

std::string gen_config_text(const GenConfig& c) { return to_text(c); }

void save_dataset(std::ostream& os, const Dataset& data) {
  io::put_magic(os, kDatasetMagic);
  io::put_string(os, gen_config_text(data.config));
  io::put<std::uint64_t>(os, data.samples.size());
  const Index h = data.samples.empty() ? data.config.height : data.samples.front().image.rows();
  const Index w = data.samples.empty() ? data.config.width : data.samples.front().image.cols();
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(h));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  const auto tags = data.split_tags();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.label));
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.gender));
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.race));
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(tags[i]));
    for (Index p = 0; p < h * w; ++p) io::put_f64(os, s.image.data()[p]);
  }
  if (!os) throw DataError("failed writing dataset");
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  save_dataset(os, data);
}

Dataset load_dataset(std::istream& is) {
  io::expect_magic(is, kDatasetMagic);
  Dataset data;
  {
    std::istringstream text(io::get_string(is));
    try {
      apply_gen_config(data.config, parse_key_values(text), true);
    } catch (const ConfigError& e) {
      throw DataError(std::string("dataset header: ") + e.what());
    }
  }
  const auto n = io::get<std::uint64_t>(is);
  const Index h = io::get<std::uint32_t>(is), w = io::get<std::uint32_t>(is);
  data.samples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Sample& s = data.samples[i];
    s.label = io::get<std::uint8_t>(is);
    const auto g = io::get<std::uint8_t>(is), r = io::get<std::uint8_t>(is);
    if (s.label > 1 || g >= kGenderCount || r >= kRaceCount) throw DataError("corrupt sample record");
    s.gender = static_cast<Gender>(g);
    s.race = static_cast<Race>(r);
    const auto tag = static_cast<SplitTag>(io::get<std::uint8_t>(is));
    s.image.resize(h, w);
    for (Index p = 0; p < h * w; ++p) s.image.data()[p] = io::get_f64(is);
    const int idx = static_cast<int>(i);
    switch (tag) {
      case SplitTag::Train: data.split.train.push_back(idx); break;
      case SplitTag::Val: data.split.val.push_back(idx); break;
      case SplitTag::Test: data.split.test.push_back(idx); break;
      case SplitTag::None: break;
      default: throw DataError("corrupt split tag");
    }
  }
  return data;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path);
  return load_dataset(is);
}

void write_manifest(std::ostream& os, const Dataset& data) {
  const auto tags = data.split_tags();
  os << "index,label,gender,race,split\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const char* split = tags[i] == SplitTag::Train ? "train"
                        : tags[i] == SplitTag::Val ? "val"
                        : tags[i] == SplitTag::Test ? "test"
                                                    : "none";
    os << i << ',' << s.label << ',' << gender_name(s.gender) << ',' << race_name(s.race) << ',' << split << '\n';
  }
}

}  // namespace fairdet
