#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "ovv/detections.hpp"

namespace ovv {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// One JSON-lines record:
/// {"video_id":..,"frame":..,"track":..|null,"cx":..,"cy":..,"w":..,"h":..}
std::string annotation_line(const std::string& video_id, const Detection& detection);

std::string encode_annotations(const DetectionTrackSet& set);
DetectionTrackSet decode_annotations(const std::string& text);

void write_annotations(const std::filesystem::path& path, const DetectionTrackSet& set);
DetectionTrackSet read_annotations(const std::filesystem::path& path);

}  // namespace ovv
