#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bffnet/data.hpp"

using namespace bffnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("bffnet_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_on(const cv::Mat& m) {
  std::size_t n = 0;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) n += m.at<std::uint8_t>(r, c) != 0;
  return n;
}

ImageMaskPair disk_pair(int h, int w, int radius) {
  cv::Mat mask = cv::Mat::zeros(h, w, CV_8UC1);
  cv::circle(mask, {w / 2, h / 2}, radius, 255, cv::FILLED);
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(30, 60, 90));
  return pair_from_8bit(img, mask, "disk");
}

}  // namespace

TEST(Data, BinarizationThreshold) {
  cv::Mat m(1, 4, CV_8UC1);
  m.at<std::uint8_t>(0, 0) = 0;
  m.at<std::uint8_t>(0, 1) = 127;
  m.at<std::uint8_t>(0, 2) = 128;
  m.at<std::uint8_t>(0, 3) = 255;
  const auto b = binarize_mask(m);
  EXPECT_EQ(b.at<std::uint8_t>(0, 0), 0);
  EXPECT_EQ(b.at<std::uint8_t>(0, 1), 0);
  EXPECT_EQ(b.at<std::uint8_t>(0, 2), 1);
  EXPECT_EQ(b.at<std::uint8_t>(0, 3), 1);
}

TEST(Data, LoadPairFromDisk) {
  const auto dir = scratch("load_pair");
  cv::Mat img(40, 60, CV_8UC3, cv::Scalar(10, 20, 30));
  cv::Mat mask = cv::Mat::zeros(40, 60, CV_8UC1);
  mask(cv::Rect(5, 5, 10, 10)).setTo(200);
  cv::imwrite((dir / "a.png").string(), img);
  cv::imwrite((dir / "a_mask.png").string(), mask);
  const auto p = load_pair(dir / "a.png", dir / "a_mask.png");
  EXPECT_EQ(p.id, "a");
  EXPECT_EQ(p.rows(), p.mask.rows);
  EXPECT_EQ(p.cols(), p.mask.cols);
  EXPECT_EQ(p.image.type(), CV_32FC3);
  EXPECT_EQ(count_on(p.mask), 100u);
  // channels come back as RGB in [0,1]
  EXPECT_NEAR(p.image.at<cv::Vec3f>(0, 0)[0], 30 / 255.0, 1e-6);

  cv::imwrite((dir / "small_mask.png").string(), cv::Mat::zeros(20, 60, CV_8UC1));
  EXPECT_THROW(load_pair(dir / "a.png", dir / "small_mask.png"), ShapeMismatch);
  EXPECT_THROW(load_pair(dir / "none.png", dir / "a_mask.png"), DecodeError);
  std::ofstream(dir / "bad.png") << "garbage";
  EXPECT_THROW(load_pair(dir / "bad.png", dir / "a_mask.png"), DecodeError);
  cv::imwrite((dir / "rgb_mask.png").string(), img);
  EXPECT_THROW(load_pair(dir / "a.png", dir / "rgb_mask.png"), DecodeError);
  fs::remove_all(dir);
}

TEST(Data, ResizeIdentityAndConstantMask) {
  const auto p = disk_pair(320, 640, 50);
  const auto same = resize_pair(p, 320, 640);
  EXPECT_EQ(cv::norm(same.image, p.image, cv::NORM_INF), 0.0);
  EXPECT_EQ(cv::norm(same.mask, p.mask, cv::NORM_INF), 0.0);

  cv::Mat ones(50, 70, CV_8UC1, cv::Scalar(255));
  const auto full = pair_from_8bit(cv::Mat(50, 70, CV_8UC3, cv::Scalar(1, 2, 3)), ones, "full");
  const auto r = resize_pair(full, 96, 128);
  EXPECT_EQ(count_on(r.mask), 96u * 128u);
  EXPECT_THROW(resize_pair(full, 100, 128), InvalidTarget);
  EXPECT_THROW(resize_pair(full, 0, 128), InvalidTarget);
}

TEST(Data, ResizePreservesDiskAreaRatio) {
  const auto p = disk_pair(100, 200, 30);
  const auto r = resize_pair(p, 320, 640);
  double lo, hi;
  cv::minMaxLoc(r.mask, &lo, &hi);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  const double before = static_cast<double>(count_on(p.mask)) / (100.0 * 200.0);
  const double after = static_cast<double>(count_on(r.mask)) / (320.0 * 640.0);
  EXPECT_NEAR(after / before, 1.0, 0.05);
}

TEST(Data, ResizeRoundTripKeepsBlobs) {
  for (int radius : {8, 12, 20}) {
    const auto p = disk_pair(96, 160, radius);
    const auto back = resize_pair(resize_pair(p, 224, 352), 96, 160);
    const auto inter = count_on(p.mask & back.mask), uni = count_on(p.mask | back.mask);
    EXPECT_GT(static_cast<double>(inter) / static_cast<double>(uni), 0.95) << radius;
  }
}

TEST(Data, MultiscaleSizes) {
  const auto p = disk_pair(100, 200, 20);
  const auto s1 = multiscale_resize(p, 1.0);
  EXPECT_EQ(s1.rows(), 320);
  EXPECT_EQ(s1.cols(), 640);
  // 240 is 7.5 strides, so the nearest multiple of 32 (ties away from zero) is 256
  const auto s075 = multiscale_resize(p, 0.75);
  EXPECT_EQ(s075.rows(), 256);
  EXPECT_EQ(s075.cols(), 480);
  const auto s125 = multiscale_resize(p, 1.25);
  EXPECT_EQ(s125.rows(), 416);
  EXPECT_EQ(s125.cols(), 800);
  EXPECT_EQ(s125.mask.rows, 416);
  EXPECT_THROW(multiscale_resize(p, 1.5), InvalidScale);
  EXPECT_EQ(snapped_size(64, 1.25), 96);
  EXPECT_EQ(snapped_size(64, 0.75), 64);
  EXPECT_EQ(snapped_size(320, 0.75), 256);
}

TEST(Synthetic, DeterministicFiles) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  generate_synthetic_dataset(a, 1, 64, 128, 7);
  generate_synthetic_dataset(b, 1, 64, 128, 7);
  for (const auto* rel : {"images/synth_0000.png", "masks/synth_0000.png", "manifest_train.json"})
    EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
  const auto c = scratch("synth_c");
  generate_synthetic_dataset(c, 1, 64, 128, 8);
  EXPECT_NE(slurp(a / "masks/synth_0000.png"), slurp(c / "masks/synth_0000.png"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Synthetic, ForegroundFractionOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = synthesize_sample(320, 640, seed, 0);
    const double frac = static_cast<double>(count_on(s.mask8)) / (320.0 * 640.0);
    EXPECT_GT(frac, 0.02) << seed;
    EXPECT_LT(frac, 0.6) << seed;
    EXPECT_EQ(s.image_bgr8.size(), s.mask8.size());
  }
}

TEST(Manifest, RoundTripAndChecks) {
  const auto dir = scratch("manifest");
  const auto m = generate_synthetic_dataset(dir, 8, 320, 640, 1);
  std::set<std::string> ids;
  for (const auto& e : m.entries) ids.insert(e.id);
  EXPECT_EQ(ids.size(), 8u);

  const auto back = read_manifest(dir / "manifest_train.json");
  ASSERT_EQ(back.entries.size(), 8u);
  EXPECT_EQ(back.split, Split::train);
  const auto data = load_dataset(back);
  ASSERT_EQ(data.size(), 8u);
  EXPECT_EQ(data[3].id, "synth_0003");
  EXPECT_EQ(data[3].rows(), 320);

  auto dup = back;
  dup.entries[1].id = dup.entries[0].id;
  write_manifest(dup, dir / "dup.json");
  EXPECT_THROW(read_manifest(dir / "dup.json"), DataError);

  auto missing = back;
  missing.entries[0].image = "images/nope.png";
  write_manifest(missing, dir / "missing.json");
  EXPECT_THROW(read_manifest(dir / "missing.json"), DataError);
  EXPECT_THROW(read_manifest(dir / "absent.json"), DataError);

  // entry paths resolve against the data-root variable when it is set
  const auto other = scratch("manifest_elsewhere");
  fs::copy_file(dir / "manifest_train.json", other / "manifest_train.json");
  EXPECT_THROW(read_manifest(other / "manifest_train.json"), DataError);
  ::setenv(kDataRootEnv, dir.c_str(), 1);
  EXPECT_EQ(read_manifest(other / "manifest_train.json").entries.size(), 8u);
  ::unsetenv(kDataRootEnv);
  fs::remove_all(dir);
  fs::remove_all(other);
}

TEST(Batching, TensorsAndConversions) {
  const auto pairs = synthesize_pairs(3, 64, 128, 2);
  const auto b = to_batch(pairs);
  EXPECT_EQ(b.images.sizes(), (std::vector<int64_t>{3, 3, 64, 128}));
  EXPECT_EQ(b.masks.sizes(), (std::vector<int64_t>{3, 1, 64, 128}));
  EXPECT_EQ(b.masks.sum().item<double>(), static_cast<double>(count_on(pairs[0].mask) + count_on(pairs[1].mask) +
                                                              count_on(pairs[2].mask)));
  const auto m = tensor_to_mask(b.masks[1]);
  EXPECT_EQ(m.count(), count_on(pairs[1].mask));
  EXPECT_EQ(count_on(to_mat(m)), m.count());
  const auto norm = to_batch(pairs, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25});
  EXPECT_NEAR(norm.images[0][0][0][0].item<double>(), (b.images[0][0][0][0].item<double>() - 0.5) / 0.25, 1e-5);
  EXPECT_THROW(to_batch({pairs[0], resize_pair(pairs[1], 32, 64)}), ShapeMismatch);
}
