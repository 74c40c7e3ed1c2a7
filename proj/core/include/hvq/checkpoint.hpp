#pragma once

#include <string>

#include "hvq/training.hpp"

namespace hvq {

/// Single-file archive: effective config, every parameter, every codebook's
/// entries and EMA accumulators, the backbone stub, and the RNG state.
void save_checkpoint(const std::string& path, const TrainedModel& tm);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace hvq
