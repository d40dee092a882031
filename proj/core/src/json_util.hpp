#pragma once

// Internal JSON helpers shared between translation units. Not installed.

#include <nlohmann/json.hpp>

#include "ted/trajectory.hpp"

namespace ted::detail {

nlohmann::json sample_to_json(const TaskSample& sample);
TaskSample sample_from_json(const nlohmann::json& j);

}  // namespace ted::detail
