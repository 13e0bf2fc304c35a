#include "engage/assets.hpp"

#include "engage/error.hpp"

namespace engage::assets {

const std::string& get(std::string_view name) {
  const auto& t = table();
  auto it = t.find(std::string(name));
  if (it == t.end()) throw Error(ErrorKind::IoError, "no embedded asset '" + std::string(name) + "'");
  return it->second;
}

}  // namespace engage::assets
