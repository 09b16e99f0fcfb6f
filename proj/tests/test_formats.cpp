#include <gtest/gtest.h>

#include <filesystem>

#include "ovv/annotations.hpp"
#include "ovv/checkpoint.hpp"
#include "ovv/data_synth.hpp"
#include "ovv/tensor_file.hpp"
#include "ovv/video.hpp"
#include "test_util.hpp"

using namespace ovv;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ovv_test_formats";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(TensorFile, HeaderLayout) {
  const std::vector<float> v{1.0f, -2.5f};
  const auto bytes = encode_tensor_file(TensorRecord::from_f32({2}, v));
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 4 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "OVVT");
  EXPECT_EQ(bytes[4], 1);   // version
  EXPECT_EQ(bytes[8], 1);   // ndim
  EXPECT_EQ(bytes[12], 2);  // dims[0]
  EXPECT_EQ(bytes[20], 0);  // f32
}

TEST(TensorFile, RoundTripEachDtype) {
  const std::vector<double> d{1.0, 1e-300, -3.25, 7.0, 0.0, 2.0};
  const std::vector<std::uint8_t> u{0, 255, 7};
  for (const auto& rec : {TensorRecord::from_f64({2, 3}, d), TensorRecord::from_u8(u),
                          TensorRecord::from_f32({3, 1, 2}, std::vector<float>{1, 2, 3, 4, 5, 6})}) {
    const auto bytes = encode_tensor_file(rec);
    const TensorRecord back = decode_tensor_file(bytes);
    EXPECT_EQ(back, rec);
    EXPECT_EQ(encode_tensor_file(back), bytes);
  }
  EXPECT_EQ(decode_tensor_file(encode_tensor_file(TensorRecord::from_f64({2, 3}, d))).to_f64(), d);
}

TEST(TensorFile, RejectsCorruption) {
  auto bytes = encode_tensor_file(TensorRecord::from_f32({2}, std::vector<float>{1, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor_file(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_tensor_file(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_tensor_file(trailing), FormatError);
  auto bad_dtype = bytes;
  bad_dtype[20] = 9;
  EXPECT_THROW(decode_tensor_file(bad_dtype), FormatError);
}

TEST(TensorFile, ArchiveRoundTripOnDisk) {
  std::vector<NamedTensor> ts{{"a", TensorRecord::from_f32({1}, std::vector<float>{3})},
                              {"b.c", TensorRecord::from_u8(std::vector<std::uint8_t>{1, 2})}};
  const fs::path p = temp_path("archive.ovvt");
  write_tensor_archive(p, ts);
  const auto first = read_file_bytes(p);
  const auto back = read_tensor_archive(p);
  EXPECT_EQ(back, ts);
  write_tensor_archive(p, back);
  EXPECT_EQ(read_file_bytes(p), first);
}

TEST(Video, RoundTrip) {
  const auto clip = fixture::tiny_clip(3).video;
  const fs::path p = temp_path("clip.ovvt");
  write_video(p, clip);
  const auto bytes = read_file_bytes(p);
  EXPECT_EQ(read_video(p), clip);
  write_video(p, read_video(p));
  EXPECT_EQ(read_file_bytes(p), bytes);
}

TEST(Video, RejectsWrongRank) {
  const fs::path p = temp_path("rank.ovvt");
  write_tensor_file(p, TensorRecord::from_f32({4}, std::vector<float>{0, 0, 0, 0}));
  EXPECT_THROW(read_video(p), FormatError);
}

TEST(Annotations, OneDetectionOneLine) {
  const Detection d{2, Box{3.5, 4.0, 6.0, 5.0}, 1};
  EXPECT_EQ(annotation_line("vid", d), R"({"video_id":"vid","frame":2,"track":1,"cx":3.5,"cy":4.0,"w":6.0,"h":5.0})");
  DetectionTrackSet s{"vid", {{}, {}, {d}}, 2};
  const std::string text = encode_annotations(s);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
}

TEST(Annotations, NullTrack) {
  const Detection d{0, Box{1, 1, 2, 2}, std::nullopt};
  const std::string line = annotation_line("v", d);
  EXPECT_NE(line.find("\"track\":null"), std::string::npos);
  const auto set = decode_annotations(line + "\n");
  ASSERT_EQ(set.size(), 1u);
  EXPECT_FALSE(set.frames[0][0].track_id.has_value());
}

TEST(Annotations, GeneratedSetRoundTrip) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto tracks = fixture::tiny_clip(seed).tracks;
    const std::string text = encode_annotations(tracks);
    const auto back = decode_annotations(text);
    EXPECT_EQ(back, tracks);
    EXPECT_EQ(encode_annotations(back), text);
  }
}

TEST(Annotations, EmptySet) {
  const DetectionTrackSet empty;
  const fs::path p = temp_path("empty.jsonl");
  write_annotations(p, empty);
  EXPECT_EQ(fs::file_size(p), 0u);
  const auto back = read_annotations(p);
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.num_tracks, 0);
}

TEST(Annotations, ParseErrorsCarryLine) {
  const std::string good = annotation_line("v", Detection{0, Box{1, 1, 2, 2}, 0});
  try {
    decode_annotations(good + "\n{\"video_id\":\"v\",\"frame\":0}\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(decode_annotations("not json\n"), ParseError);
  EXPECT_THROW(decode_annotations(good + "\n" + annotation_line("w", Detection{0, Box{1, 1, 2, 2}, 1}) + "\n"),
               ParseError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const auto cfg = fixture::tiny_model();
  SamplerConfig sampler;
  sampler.fg_ratio = 50;
  sampler.bg_ratio = 25;
  const Checkpoint ckpt{cfg, sampler, init_params<float>(cfg, 9)};
  const fs::path p = temp_path("model.ckpt");
  save_checkpoint(p, ckpt);
  const auto bytes = read_file_bytes(p);
  const Checkpoint back = load_checkpoint(p);
  EXPECT_EQ(back.params.size(), ckpt.params.size());
  for (const auto& [name, m] : ckpt.params) EXPECT_EQ(back.params.at(name), m) << name;
  EXPECT_EQ(back.model.oam_layers, cfg.oam_layers);
  EXPECT_EQ(back.sampler.fg_ratio, 50);
  save_checkpoint(p, back);
  EXPECT_EQ(read_file_bytes(p), bytes);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  const auto cfg = fixture::tiny_model();
  Checkpoint ckpt{cfg, SamplerConfig{}, init_params<float>(cfg, 1)};
  ckpt.params["head.w"] = Matrix<float>::Zero(3, 3);
  EXPECT_THROW(checkpoint_from_tensors(checkpoint_tensors(ckpt)), FormatError);
}
