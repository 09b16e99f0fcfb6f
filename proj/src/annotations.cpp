#include "ovv/annotations.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ovv {

using ordered_json = nlohmann::ordered_json;

std::string annotation_line(const std::string& video_id, const Detection& d) {
  ordered_json j;
  j["video_id"] = video_id;
  j["frame"] = d.frame;
  j["track"] = d.track_id ? ordered_json(*d.track_id) : ordered_json(nullptr);
  j["cx"] = d.box.cx;
  j["cy"] = d.box.cy;
  j["w"] = d.box.w;
  j["h"] = d.box.h;
  return j.dump();
}

std::string encode_annotations(const DetectionTrackSet& set) {
  std::string out;
  for (const auto& frame : set.frames)
    for (const auto& d : frame) {
      out += annotation_line(set.video_id, d);
      out += '\n';
    }
  return out;
}

namespace {

double number_field(const ordered_json& j, const char* key, int line) {
  if (!j.contains(key) || !j[key].is_number()) throw ParseError(std::string("missing numeric field '") + key + "'", line);
  return j[key].get<double>();
}

}  // namespace

DetectionTrackSet decode_annotations(const std::string& text) {
  DetectionTrackSet set;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool have_id = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(line_no) + ": " + msg, line_no); };
    if (!j.is_object()) fail("expected a JSON object");
    if (!j.contains("video_id") || !j["video_id"].is_string()) fail("missing string field 'video_id'");
    if (!j.contains("frame") || !j["frame"].is_number_integer()) fail("missing integer field 'frame'");
    if (!j.contains("track")) fail("missing field 'track'");

    const auto video_id = j["video_id"].get<std::string>();
    if (have_id && video_id != set.video_id) fail("mixed video ids in one annotation file");
    set.video_id = video_id;
    have_id = true;

    Detection d;
    d.frame = j["frame"].get<int>();
    if (d.frame < 0) fail("negative frame index");
    if (j["track"].is_null()) {
      d.track_id.reset();
    } else if (j["track"].is_number_integer() && j["track"].get<int>() >= 0) {
      d.track_id = j["track"].get<int>();
      set.num_tracks = std::max(set.num_tracks, *d.track_id + 1);
    } else {
      fail("'track' must be a non-negative integer or null");
    }
    try {
      d.box = Box{number_field(j, "cx", line_no), number_field(j, "cy", line_no), number_field(j, "w", line_no),
                  number_field(j, "h", line_no)};
    } catch (const ParseError& e) {
      fail(e.what());
    }
    if (!(d.box.w > 0.0) || !(d.box.h > 0.0)) fail("box size must be positive");

    if (static_cast<std::size_t>(d.frame) >= set.frames.size()) set.frames.resize(static_cast<std::size_t>(d.frame) + 1);
    set.frames[static_cast<std::size_t>(d.frame)].push_back(d);
  }
  return set;
}

void write_annotations(const std::filesystem::path& path, const DetectionTrackSet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << encode_annotations(set);
}

DetectionTrackSet read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_annotations(ss.str());
}

}  // namespace ovv
