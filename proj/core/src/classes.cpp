#include "nvsed/classes.hpp"

#include <algorithm>
#include <set>

#include "nvsed/error.hpp"

namespace nvsed {

const std::array<std::string_view, kNumClasses>& default_class_names() {
  static const std::array<std::string_view, kNumClasses> names = {
      "click", "cluck", "pop", "p", "k", "t", "sh", "s", "eh",
      "uh", "oo", "mm", "ee", "la", "muh", "background", "speech"};
  return names;
}

ClassSet::ClassSet() {
  for (auto n : default_class_names()) names_.emplace_back(n);
}

ClassSet::ClassSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() != static_cast<std::size_t>(kNumClasses)) {
    throw Error(ErrorCode::kInvalidArgument,
                "class set needs 17 names, got " + std::to_string(names_.size()));
  }
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "class names must be unique");
  }
}

std::optional<int> ClassSet::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

int ClassSet::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  std::string known;
  for (const auto& n : names_) known += (known.empty() ? "" : ",") + n;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown class '" + std::string(name) + "' (known: " + known + ")");
}

}  // namespace nvsed
