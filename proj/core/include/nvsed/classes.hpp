#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nvsed {

inline constexpr int kNumSoundClasses = 15;
inline constexpr int kBackgroundClass = 15;
inline constexpr int kSpeechClass = 16;
inline constexpr int kNumClasses = 17;

// Ordered output classes of the detector: 15 mouth sounds, background, speech.
class ClassSet {
 public:
  ClassSet();  // the default 17-entry list
  explicit ClassSet(std::vector<std::string> names);  // validates

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  const std::string& name(int index) const { return names_.at(index); }
  std::optional<int> find(std::string_view name) const;
  // Like find() but throws kInvalidArgument with the known names listed.
  int index_of(std::string_view name) const;

  friend bool operator==(const ClassSet&, const ClassSet&) = default;

 private:
  std::vector<std::string> names_;
};

const std::array<std::string_view, kNumClasses>& default_class_names();

inline bool is_sound_class(int c) { return c >= 0 && c < kNumSoundClasses; }

}  // namespace nvsed
