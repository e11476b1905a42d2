#pragma once

#include <filesystem>
#include <ostream>

#include "tar2/core/redistribution.hpp"

namespace tar2::analysis {

// CSV with header "t,agent_0,...,agent_{N-1}"; each cell is the product of
// the temporal and agent weights, so row t sums to the temporal weight.
void write_weight_heatmap(const core::RedistributionWeights& w, std::ostream& out);
void export_weight_heatmap(const core::RedistributionWeights& w, const std::filesystem::path& path);

}  // namespace tar2::analysis
