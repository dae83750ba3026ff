#pragma once

#include <string>
#include <string_view>

#include "priorstack/stacking.hpp"

namespace priorstack {

inline constexpr int kModelSchemaVersion = 1;

/// JSON document for a fitted model. Doubles are written in shortest
/// round-trip form, so reading the text back reproduces every value exactly.
std::string model_to_json(const StackedModel& model);

/// Throws DataError on malformed input or a newer schema version.
StackedModel model_from_json(std::string_view text);

}  // namespace priorstack
