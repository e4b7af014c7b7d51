#include "nvsed/corpus_io.hpp"

#include <fstream>
#include <set>

#include "nvsed/error.hpp"

namespace nvsed {

nlohmann::json to_json(const LabelRecord& r) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& [s, e] : r.segments) segs.push_back({s, e});
  nlohmann::json j = {{"audio_path", r.audio_path}, {"class", r.cls}, {"segments", segs}};
  if (r.user) j["user"] = *r.user;
  return j;
}

LabelRecord label_record_from_json(const nlohmann::json& j) {
  LabelRecord r;
  try {
    r.audio_path = j.at("audio_path").get<std::string>();
    r.cls = j.at("class").get<std::string>();
    for (const auto& s : j.at("segments")) {
      const int start = s.at(0).get<int>();
      const int end = s.at(1).get<int>();
      if (start < 0 || end < start) {
        throw Error(ErrorCode::kFormat, "segment [" + std::to_string(start) + ", " + std::to_string(end) +
                                            "] of " + r.audio_path + " is not a valid frame range");
      }
      r.segments.emplace_back(start, end);
    }
    if (j.contains("user") && !j.at("user").is_null()) r.user = j.at("user").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad label record: ") + e.what());
  }
  return r;
}

std::vector<LabelRecord> read_label_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<LabelRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": not valid JSON");
    }
    out.push_back(label_record_from_json(j));
  }
  return out;
}

void write_label_file(const std::filesystem::path& path, std::span<const LabelRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << "\n";
}

LabelRecord to_record(const LabeledClip& clip, const std::string& audio_path, const ClassSet& classes) {
  LabelRecord r;
  r.audio_path = audio_path;
  r.cls = classes.name(clip.clip_class);
  for (const auto& s : clip.segments) r.segments.emplace_back(s.start_frame, s.end_frame);
  if (!clip.user.empty()) r.user = clip.user;
  return r;
}

void write_corpus_dir(const std::filesystem::path& dir, std::span<const LabeledClip> clips,
                      const ClassSet& classes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::set<std::string> used;
  std::vector<LabelRecord> records;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::string stem = clips[i].clip.source.empty() ? "clip_" + std::to_string(i) : clips[i].clip.source;
    for (char& c : stem)
      if (c == '/' || c == '\\' || c == ' ') c = '_';
    if (used.count(stem)) stem += "_" + std::to_string(i);
    used.insert(stem);
    const std::string file = stem + ".wav";
    write_wav(dir / file, clips[i].clip);
    records.push_back(to_record(clips[i], file, classes));
  }
  write_label_file(dir / kLabelFileName, records);
}

std::vector<LabeledClip> load_corpus_dir(const std::filesystem::path& dir, int inflate, const ClassSet& classes) {
  const auto records = read_label_file(dir / kLabelFileName);
  std::vector<LabeledClip> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const int cls = classes.index_of(r.cls);
    const std::filesystem::path audio = std::filesystem::path(r.audio_path).is_absolute()
                                            ? std::filesystem::path(r.audio_path)
                                            : dir / r.audio_path;
    AudioClip clip = read_wav(audio);
    clip.source = std::filesystem::path(r.audio_path).stem().string();
    std::vector<Segment> segs;
    for (const auto& [s, e] : r.segments) segs.push_back({s, e, cls});
    LabeledClip lc = make_sound_clip(std::move(clip), cls, std::move(segs), is_sound_class(cls) ? inflate : 0);
    if (cls == kBackgroundClass) lc.kind = ClipKind::kBackground;
    if (cls == kSpeechClass) lc.kind = ClipKind::kSpeech;
    if (r.user) lc.user = *r.user;
    out.push_back(std::move(lc));
  }
  return out;
}

}  // namespace nvsed
