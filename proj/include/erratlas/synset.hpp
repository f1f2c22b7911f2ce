#pragma once

#include <compare>
#include <functional>
#include <string>
#include <string_view>

#include "erratlas/error.hpp"

namespace erratlas {

// WordNet-style identifier: one lowercase letter followed by 8 digits.
inline bool is_valid_synset_id(std::string_view s) {
  if (s.size() != 9 || s[0] < 'a' || s[0] > 'z') return false;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

class SynsetId {
 public:
  SynsetId() = default;
  explicit SynsetId(std::string id) : id_(std::move(id)) {
    if (!is_valid_synset_id(id_)) fail(ErrorKind::Parse, "malformed synset id '" + id_ + "'");
  }

  const std::string& str() const noexcept { return id_; }

  friend auto operator<=>(const SynsetId&, const SynsetId&) = default;

 private:
  std::string id_;
};

using ImageId = std::string;

}  // namespace erratlas

template <>
struct std::hash<erratlas::SynsetId> {
  std::size_t operator()(const erratlas::SynsetId& s) const noexcept {
    return std::hash<std::string>{}(s.str());
  }
};
