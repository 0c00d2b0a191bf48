#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "iqt/error.hpp"
#include "iqt/hash.hpp"
#include "iqt/volume.hpp"

namespace {

using namespace iqt;
namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("iqt_volume_" + name); }

Volume ramp(Dims d, int channels, VolumeKind kind) {
  std::vector<float> data(d.voxels() * channels);
  std::iota(data.begin(), data.end(), 0.0f);
  return Volume(d, channels, 1.25, kind, std::move(data));
}

TEST(Volume, LayoutIsXFastestChannelSlowest) {
  const Volume v = ramp({3, 4, 5}, 2, VolumeKind::Generic);
  EXPECT_EQ(v.index(1, 2, 3), 1u + 3u * (2u + 4u * 3u));
  EXPECT_EQ(v.at(1, 2, 3, 1), static_cast<float>(60 + v.index(1, 2, 3)));
  EXPECT_EQ(v.channel(1)[0], 60.0f);
}

TEST(Volume, KindChannelContract) {
  EXPECT_THROW(Volume::zeros({2, 2, 2}, 5, 1.0, VolumeKind::DTI), ShapeError);
  EXPECT_THROW(Volume::zeros({2, 2, 2}, 2, 1.0, VolumeKind::T1w), ShapeError);
  EXPECT_THROW(Volume({2, 2, 2}, 1, 1.0, VolumeKind::Mask, std::vector<float>(8, 0.5f)), ShapeError);
  EXPECT_THROW(Volume({2, 2, 2}, 1, 0.0, VolumeKind::Generic, std::vector<float>(8)), ShapeError);
  EXPECT_THROW(Volume({2, 2, 2}, 1, 1.0, VolumeKind::Generic, std::vector<float>(7)), ShapeError);
}

TEST(Volume, RoundTripIsExact) {
  const Volume v = ramp({4, 3, 2}, 6, VolumeKind::DTI).with_effective_resolution(3.125);
  const auto path = temp_file("rt.vjf");
  write_volume(v, path);
  const Volume r = read_volume(path);
  EXPECT_EQ(r, v);
  ASSERT_TRUE(r.effective_resolution_mm());
  EXPECT_DOUBLE_EQ(*r.effective_resolution_mm(), 3.125);
  const std::string h1 = sha256_file(path);
  write_volume(r, path);
  EXPECT_EQ(sha256_file(path), h1);
  fs::remove(path);
}

TEST(Volume, TruncatedPayloadIsReported) {
  const auto path = temp_file("trunc.vjf");
  write_volume(ramp({4, 4, 4}, 1, VolumeKind::Generic), path);
  fs::resize_file(path, fs::file_size(path) - 3);
  EXPECT_THROW(read_volume(path), TruncationError);
  fs::remove(path);
}

TEST(Volume, HeaderErrorsNameTheKey) {
  const auto path = temp_file("bad.vjf");
  {
    std::ofstream out(path);
    out << "{\"magic\":\"VJF1\",\"dims\":[2,2],\"channels\":1,\"spacing_mm\":1,\"kind\":\"Generic\"}\n";
  }
  try {
    read_volume(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("dims"), std::string::npos);
  }
  EXPECT_THROW(read_volume(temp_file("missing.vjf")), IoError);
  fs::remove(path);
}

TEST(Volume, MaskHelpers) {
  const Volume v = ramp({2, 2, 1}, 2, VolumeKind::Generic);
  const Volume m = make_mask({2, 2, 1}, 1.25, {1, 0, 0, 1});
  EXPECT_EQ(mask_count(m), 2u);
  const Volume masked = apply_mask(v, m);
  EXPECT_EQ(std::vector<float>(masked.data().begin(), masked.data().end()), (std::vector<float>{0, 0, 0, 3, 4, 0, 0, 7}));
  const Volume c = extract_channel(v, 1);
  EXPECT_EQ(c.channels(), 1);
  EXPECT_EQ(c.data()[0], 4.0f);
  EXPECT_THROW(apply_mask(v, make_mask({1, 2, 2}, 1.25, {1, 1, 1, 1})), ShapeError);
}

TEST(Hash, KnownDigest) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::span(reinterpret_cast<const unsigned char*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
