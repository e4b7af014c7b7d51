#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/annotate.hpp"
#include "nvsed/classes.hpp"

namespace nvsed {

inline constexpr const char* kLabelFileName = "labels.jsonl";

// One line of a label file: {audio_path, class, segments: [[start, end], ...]}.
struct LabelRecord {
  std::string audio_path;
  std::string cls;
  std::vector<std::pair<int, int>> segments;
  std::optional<std::string> user;
};

nlohmann::json to_json(const LabelRecord& record);
LabelRecord label_record_from_json(const nlohmann::json& j);

std::vector<LabelRecord> read_label_file(const std::filesystem::path& path);
void write_label_file(const std::filesystem::path& path, std::span<const LabelRecord> records);

LabelRecord to_record(const LabeledClip& clip, const std::string& audio_path,
                      const ClassSet& classes = {});

// Writes <dir>/<name>.wav for every clip plus <dir>/labels.jsonl.
void write_corpus_dir(const std::filesystem::path& dir, std::span<const LabeledClip> clips,
                      const ClassSet& classes = {});

// Loads a directory written by write_corpus_dir (or any label file whose
// audio paths are relative to it): features are computed and targets
// rendered with `inflate` on sound clips.
std::vector<LabeledClip> load_corpus_dir(const std::filesystem::path& dir,
                                         int inflate = kLabelInflation,
                                         const ClassSet& classes = {});

}  // namespace nvsed
