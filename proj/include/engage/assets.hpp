#pragma once

#include <map>
#include <string>
#include <string_view>

namespace engage::assets {

/// All text assets compiled from assets/prompts, keyed by file stem.
const std::map<std::string, std::string>& table();

/// Throws IoError when no asset of that name was embedded.
const std::string& get(std::string_view name);

}  // namespace engage::assets
