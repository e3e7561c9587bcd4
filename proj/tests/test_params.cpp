#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctxvec/params.hpp"

using namespace ctxvec;

namespace {

std::vector<std::string> words(std::size_t n) {
  std::vector<std::string> w;
  for (std::size_t i = 0; i < n; ++i) w.push_back("w" + std::to_string(i));
  return w;
}

std::filesystem::path tmp(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Init, SameSeedIdenticalStore) {
  InitSpec spec;
  spec.seed = 5;
  auto a = init_store<float>(words(10), {1, 3}, 4, 6, spec);
  auto b = init_store<float>(words(10), {1, 3}, 4, 6, spec);
  EXPECT_EQ(a, b);
  spec.seed = 6;
  EXPECT_FALSE(a == init_store<float>(words(10), {1, 3}, 4, 6, spec));
}

TEST(Init, ShapesAndObjectMap) {
  auto s = init_store<float>(words(10), {1, 3}, 4, 6, InitSpec{});
  EXPECT_EQ(s.T.rows(), 10u);
  EXPECT_EQ(s.V.rows(), 2u);
  EXPECT_EQ(s.N.rows(), 4u);
  EXPECT_EQ(s.N.cols(), 6u);
  EXPECT_EQ(s.M_concat.cols(), 8u);
  EXPECT_EQ(s.M_bilinear.rows(), 16u);
  EXPECT_EQ(s.object_row(3), 1);
  EXPECT_EQ(s.object_row(2), -1);
}

TEST(Init, UniformScaledRangeAndZeroU) {
  auto s = init_store<float>(words(50), {0}, 100, 3, InitSpec{});
  for (auto v : s.T.flat()) {
    EXPECT_GE(v, -0.005f);
    EXPECT_LE(v, 0.005f);
  }
  for (auto v : s.U.flat()) EXPECT_EQ(v, 0.0f);
}

TEST(Init, UniformScaledMeanWithinThreeSigma) {
  auto s = init_store<double>(words(200), {0}, 100, 3, InitSpec{});
  const double a = 0.5 / 100;
  const double n = double(s.T.flat().size());
  double sum = 0;
  for (auto v : s.T.flat()) sum += v;
  const double sigma = a / std::sqrt(3.0);  // std of U[-a, a]
  EXPECT_LE(std::fabs(sum / n), 3 * sigma / std::sqrt(n));
}

TEST(Init, ZerosContextZeroesV) {
  InitSpec spec;
  spec.mode = InitMode::ZerosContext;
  auto s = init_store<float>(words(5), {0, 1}, 4, 3, spec);
  for (auto v : s.V.flat()) EXPECT_EQ(v, 0.0f);
  for (auto v : s.U.flat()) EXPECT_EQ(v, 0.0f);
  EXPECT_NE(s.T(0, 0), 0.0f);
}

TEST(Init, FromPretrained) {
  auto path = tmp("ctxvec_pre.txt");
  {
    Matrix<float> m(3, 4);
    for (std::size_t i = 0; i < 12; ++i) m.flat()[i] = float(i);
    std::ofstream os(path);
    write_text_embeddings(os, {"w2", "w0", "w1"}, m);
  }
  InitSpec spec;
  spec.mode = InitMode::FromPretrained;
  spec.pretrained_path = path.string();
  auto s = init_store<float>(words(3), {}, 4, 2, spec);
  EXPECT_EQ(s.T(2, 0), 0.0f);
  EXPECT_EQ(s.T(0, 1), 5.0f);
  EXPECT_THROW(init_store<float>(words(3), {}, 5, 2, spec), InitError);
  EXPECT_THROW(init_store<float>(words(4), {}, 4, 2, spec), InitError);
  std::filesystem::remove(path);
}

TEST(Store, SaveLoadBitExact) {
  Rng rng(3);
  auto s = init_store<float>(words(7), {2, 4, 6}, 5, 9, InitSpec{});
  for (auto* m : {&s.T, &s.U, &s.V, &s.N, &s.M_concat, &s.M_bilinear})
    for (auto& v : m->flat()) v = float(rng.normal());
  auto path = tmp("ctxvec_store.bin");
  save_store(s, path.string());
  auto back = load_store<float>(path.string());
  EXPECT_EQ(back, s);
  EXPECT_EQ(back.object_row(4), 1);
  EXPECT_TRUE(is_store_file(path.string()));
  std::filesystem::remove(path);
}

TEST(Store, TruncatedAndBadMagic) {
  auto s = init_store<float>(words(3), {0}, 2, 2, InitSpec{});
  std::stringstream ss;
  write_store(ss, s);
  auto bytes = ss.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_store<float>(truncated), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  std::istringstream magic(bad);
  EXPECT_THROW(read_store<float>(magic), FormatError);
  auto wrong_version = bytes;
  wrong_version[4] = 9;
  std::istringstream version(wrong_version);
  EXPECT_THROW(read_store<float>(version), FormatError);
}

TEST(Store, ExportTargetsHeaderAndSixDigits) {
  Rng rng(4);
  auto s = init_store<float>(words(4), {1}, 3, 2, InitSpec{});
  for (auto& v : s.T.flat()) v = float(rng.normal());
  std::stringstream ss;
  export_targets(s, ss);
  std::string first;
  std::getline(ss, first);
  EXPECT_EQ(first, "4 3");
  ss.seekg(0);
  auto back = read_text_embeddings<float>(ss);
  EXPECT_EQ(back.words, s.words());
  for (std::size_t i = 0; i < s.T.flat().size(); ++i)
    EXPECT_NEAR(back.vectors.flat()[i], s.T.flat()[i], 1e-6 * std::fabs(s.T.flat()[i]) + 1e-12);
  std::stringstream objs;
  export_objects(s, objs);
  auto o = read_text_embeddings<float>(objs);
  EXPECT_EQ(o.words, std::vector<std::string>{"w1"});
}

TEST(Store, BilinearIndexing) {
  BasicParameterStore<double> s(words(2), {}, 3, 1);
  s.bilinear(2, 1, 0) = 7;
  EXPECT_EQ(s.M_bilinear(2 * 3 + 1, 0), 7);
}

TEST(Store, CastAndFiniteness) {
  auto s = init_store<float>(words(3), {0}, 2, 2, InitSpec{});
  auto d = s.cast<double>();
  EXPECT_EQ(d.T(1, 1), double(s.T(1, 1)));
  EXPECT_TRUE(s.all_finite());
  s.N(0, 0) = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(s.all_finite());
}
