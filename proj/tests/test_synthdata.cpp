#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fairdet/metrics.hpp"
#include "fairdet/synthdata.hpp"

using namespace fairdet;

namespace {

GenConfig small_config(std::uint64_t seed = 3) {
  GenConfig c;
  c.count = 400;
  c.seed = seed;
  return c;
}

// Logistic regression on raw pixels, full-batch gradient descent; returns
// test-split AUC.
double probe_auc(const Dataset& d) {
  const Index p = d.samples.front().image.size();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  double b = 0.0;
  const double n = static_cast<double>(d.split.train.size());
  for (int it = 0; it < 300; ++it) {
    Eigen::VectorXd gw = Eigen::VectorXd::Zero(p);
    double gb = 0.0;
    for (int i : d.split.train) {
      Eigen::Map<const Eigen::VectorXd> x(d.samples[static_cast<std::size_t>(i)].image.data(), p);
      const double r = 1.0 / (1.0 + std::exp(-(w.dot(x) + b))) - d.samples[static_cast<std::size_t>(i)].label;
      gw += r * x;
      gb += r;
    }
    w -= gw / n;
    b -= gb / n;
  }
  std::vector<double> s;
  std::vector<int> l;
  for (int i : d.split.test) {
    Eigen::Map<const Eigen::VectorXd> x(d.samples[static_cast<std::size_t>(i)].image.data(), p);
    s.push_back(w.dot(x) + b);
    l.push_back(d.samples[static_cast<std::size_t>(i)].label);
  }
  return auc(s, l);
}

// Projection on the pixel-grid checkerboard, where the artifact lives.
double checker(const Image& img) {
  double s = 0.0;
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) s += ((x + y) % 2 ? -1.0 : 1.0) * img(y, x);
  return s;
}

Dataset manual(const std::vector<std::pair<int, Index>>& strata) {
  Dataset d;
  for (const auto& [group, n] : strata)
    for (Index i = 0; i < n; ++i) {
      Sample s;
      s.image = Image::Zero(4, 4);
      s.gender = gender_of(group);
      s.race = race_of(group);
      s.label = static_cast<int>(i % 2);
      d.samples.push_back(s);
    }
  return d;
}

}  // namespace

TEST(Generate, DeterministicPerSeed) {
  const Dataset a = generate(small_config()), b = generate(small_config());
  ASSERT_EQ(a.size(), b.size());
  for (Index i = 0; i < a.size(); ++i) {
    const auto &x = a.samples[static_cast<std::size_t>(i)], &y = b.samples[static_cast<std::size_t>(i)];
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.label, y.label);
    EXPECT_EQ(x.intersection(), y.intersection());
  }
  EXPECT_NE(generate(small_config(4)).samples[0].image, a.samples[0].image);
}

TEST(Generate, InvariantsAndCounts) {
  const Dataset d = generate(small_config());
  EXPECT_EQ(d.size(), 400);
  std::array<Index, kGroupCount> counts{};
  Index fakes = 0;
  for (const auto& s : d.samples) {
    EXPECT_GE(s.image.minCoeff(), 0.0);
    EXPECT_LE(s.image.maxCoeff(), 1.0);
    EXPECT_EQ(s.intersection(), intersection_id(s.gender, s.race));
    ++counts[static_cast<std::size_t>(s.intersection())];
    fakes += s.label;
  }
  const auto want = largest_remainder(small_config().proportions, 400);
  for (int g = 0; g < kGroupCount; ++g) EXPECT_EQ(counts[static_cast<std::size_t>(g)], want[static_cast<std::size_t>(g)]);
  EXPECT_NEAR(static_cast<double>(fakes), 200.0, 4.0);
}

TEST(Generate, TwoGroupsHalfAndHalf) {
  GenConfig c = small_config();
  c.count = 100;
  c.proportions.fill(0.0);
  c.proportions[2] = 0.5;
  c.proportions[6] = 0.5;
  const Dataset d = generate(c);
  Index white_male = 0, white_female = 0;
  for (const auto& s : d.samples) (s.intersection() == 2 ? white_male : white_female) += 1;
  EXPECT_EQ(white_male, 50);
  EXPECT_EQ(white_female, 50);
}

TEST(Generate, ConfigErrors) {
  GenConfig c = small_config();
  c.proportions[0] += 0.1;
  EXPECT_THROW(generate(c), ConfigError);
  c = small_config();
  c.artifact_amplitude = -1.0;
  EXPECT_THROW(generate(c), ConfigError);
  c = small_config();
  c.leakage = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Generate, ZeroArtifactRemovesTheSignal) {
  GenConfig c = small_config();
  c.count = 2000;
  c.artifact_amplitude = 0.0;
  const Dataset flat = generate(c);
  c.artifact_amplitude = 0.08;
  const Dataset cued = generate(c);
  auto gap = [](const Dataset& d) {
    double sum[2] = {0.0, 0.0}, n[2] = {0.0, 0.0};
    for (const auto& s : d.samples) {
      sum[s.label] += checker(s.image);
      n[s.label] += 1.0;
    }
    return sum[1] / n[1] - sum[0] / n[0];
  };
  // Per-sample noise on the checkerboard projection has std about 0.08 * 16.
  const double se = 0.08 * 16.0 * std::sqrt(2.0 / 1000.0);
  EXPECT_LT(std::abs(gap(flat)), 4.0 * se);
  EXPECT_GT(std::abs(gap(cued)), 10.0 * se);
}

TEST(Generate, PixelProbeSeparatesClasses) {
  GenConfig c;
  c.leakage = 0.0;
  c.seed = 7;
  Dataset d = generate(c);
  d.split = split_dataset(d, {0.6, 0.2, 0.2}, 7);
  EXPECT_GE(probe_auc(d), 0.9);
}

TEST(LargestRemainder, Examples) {
  const std::vector<double> w{0.5, 0.5};
  EXPECT_EQ(largest_remainder(w, 100), (std::vector<Index>{50, 50}));
  const std::vector<double> thirds{1.0, 1.0, 1.0};
  EXPECT_EQ(largest_remainder(thirds, 10), (std::vector<Index>{4, 3, 3}));
  const std::vector<double> split{0.6, 0.2, 0.2};
  EXPECT_EQ(largest_remainder(split, 7), (std::vector<Index>{4, 2, 1}));
}

TEST(Perturb, ZeroIntensityIsIdentity) {
  const Dataset d = generate(small_config());
  const Image& img = d.samples[0].image;
  for (auto k : {Perturbation::GaussianNoise, Perturbation::GaussianBlur, Perturbation::BlockWiseNoise})
    EXPECT_EQ(perturb(img, k, 0.0, 9), img);
}

TEST(Perturb, BlurFixesConstantImages) {
  const Image img = Image::Constant(16, 16, 0.37);
  const Image out = perturb(img, Perturbation::GaussianBlur, 1.5, 0);
  EXPECT_LT((out - img).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Perturb, BlurPreservesMassAndSmooths) {
  Image img = Image::Zero(16, 16);
  img(8, 8) = 1.0;
  const Image out = perturb(img, Perturbation::GaussianBlur, 1.0, 0);
  EXPECT_NEAR(out.sum(), 1.0, 1e-12);
  EXPECT_LT(out.maxCoeff(), 0.5);
  EXPECT_NEAR(out(8, 7), out(8, 9), 1e-15);
  EXPECT_NEAR(out(7, 8), out(9, 8), 1e-15);
}

TEST(Perturb, GaussianNoiseMatchesRegeneratedNoise) {
  const Dataset d = generate(small_config());
  const Image& img = d.samples[1].image;
  const Image out = perturb(img, Perturbation::GaussianNoise, 0.05, 1234);
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (Index p = 0; p < img.size(); ++p) {
    const double want = std::clamp(img.data()[p] + noise(rng), 0.0, 1.0);
    EXPECT_NEAR(out.data()[p], want, 1e-12);
  }
}

TEST(Perturb, BlockNoiseTouchesAlignedBlocksOnly) {
  const Image img = Image::Constant(16, 16, 2.0);  // outside [0,1]: overwritten pixels stand out
  const Image out = perturb(img, Perturbation::BlockWiseNoise, 2.3, 5);
  int changed_blocks = 0;
  for (Index by = 0; by < 4; ++by)
    for (Index bx = 0; bx < 4; ++bx) {
      const auto block = out.block(by * 4, bx * 4, 4, 4);
      const bool all_new = (block.array() < 1.0).all(), all_old = (block.array() == 2.0).all();
      EXPECT_TRUE(all_new || all_old);
      changed_blocks += all_new ? 1 : 0;
    }
  EXPECT_GE(changed_blocks, 1);
  EXPECT_LE(changed_blocks, 3);
}

TEST(Perturb, Errors) {
  const Image img = Image::Zero(4, 4);
  EXPECT_THROW(perturb(img, Perturbation::GaussianNoise, -1.0, 0), DomainError);
  EXPECT_THROW(perturb(img, static_cast<Perturbation>(7), 1.0, 0), UsageError);
  EXPECT_THROW(parse_perturbation("IC"), UsageError);
  EXPECT_EQ(parse_perturbation("BWN"), Perturbation::BlockWiseNoise);
}

TEST(Split, AllTrain) {
  const Dataset d = generate(small_config());
  const Split s = split_dataset(d, {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(static_cast<Index>(s.train.size()), d.size());
  EXPECT_TRUE(s.val.empty());
  EXPECT_TRUE(s.test.empty());
}

TEST(Split, SingleStratumExactDivision) {
  const Split s = split_dataset(manual({{3, 100}}), {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(s.train.size(), 60u);
  EXPECT_EQ(s.val.size(), 20u);
  EXPECT_EQ(s.test.size(), 20u);
}

TEST(Split, TwoStrataMatchLargestRemainder) {
  const Dataset d = manual({{0, 70}, {5, 30}});
  const Split s = split_dataset(d, {0.6, 0.2, 0.2}, 2);
  const std::vector<double> r{0.6, 0.2, 0.2};
  for (auto [group, n] : {std::pair{0, 70}, std::pair{5, 30}}) {
    const auto want = largest_remainder(r, n);
    auto count = [&](const std::vector<int>& v) {
      return static_cast<Index>(std::count_if(v.begin(), v.end(), [&](int i) {
        return d.samples[static_cast<std::size_t>(i)].intersection() == group;
      }));
    };
    EXPECT_EQ(count(s.train), want[0]);
    EXPECT_EQ(count(s.val), want[1]);
    EXPECT_EQ(count(s.test), want[2]);
  }
}

TEST(Split, PartitionSeededAndCoversSmallStrata) {
  const Dataset d = generate(small_config());
  const Split a = split_dataset(d, {0.6, 0.2, 0.2}, 11), b = split_dataset(d, {0.6, 0.2, 0.2}, 11);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::vector<int> seen(static_cast<std::size_t>(d.size()), 0);
  for (const auto* v : {&a.train, &a.val, &a.test})
    for (int i : *v) ++seen[static_cast<std::size_t>(i)];
  for (int c : seen) EXPECT_EQ(c, 1);

  // A 5-member stratum would get (3,1,1); a 6-member one (4,1,1). Check 5 with skewed ratios.
  const Split t = split_dataset(manual({{1, 5}}), {0.9, 0.05, 0.05}, 3);
  EXPECT_EQ(t.val.size(), 1u);
  EXPECT_EQ(t.test.size(), 1u);
  EXPECT_EQ(t.train.size(), 3u);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_dataset(Dataset{}, {0.6, 0.2, 0.2}, 0), DataError);
  const Dataset d = manual({{0, 10}});
  EXPECT_THROW(split_dataset(d, {0.6, 0.2, 0.3}, 0), ConfigError);
  EXPECT_THROW(split_dataset(d, {1.2, -0.2, 0.0}, 0), ConfigError);
}

TEST(DatasetIo, RoundTripAndManifest) {
  Dataset d = generate(small_config());
  d.split = split_dataset(d, {0.6, 0.2, 0.2}, 4);
  std::stringstream ss;
  save_dataset(ss, d);
  const Dataset back = load_dataset(ss);
  EXPECT_EQ(back.config, d.config);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].image, d.samples[i].image);
    EXPECT_EQ(back.samples[i].label, d.samples[i].label);
    EXPECT_EQ(back.samples[i].intersection(), d.samples[i].intersection());
  }
  EXPECT_EQ(back.split.train, d.split.train);
  EXPECT_EQ(back.split.test, d.split.test);

  std::ostringstream m;
  write_manifest(m, d);
  std::istringstream is(m.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "index,label,gender,race,split");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 400);
}

TEST(DatasetIo, CorruptInputIsDataError) {
  std::stringstream bad("NOTADATASET");
  EXPECT_THROW(load_dataset(bad), DataError);
  Dataset d = generate(small_config());
  std::stringstream ss;
  save_dataset(ss, d);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream truncated(bytes);
  EXPECT_THROW(load_dataset(truncated), DataError);
  EXPECT_THROW(load_dataset("/nonexistent/data.bin"), DataError);
}
