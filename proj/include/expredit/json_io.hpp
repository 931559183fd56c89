#pragma once

#include "json.hpp"

#include "expredit/networks.hpp"

namespace expredit {

void to_json(nlohmann::json& j, const ArchitectureSpec& s);
void from_json(const nlohmann::json& j, ArchitectureSpec& s);

}  // namespace expredit
