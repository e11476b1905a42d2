#include "tar2/analysis/heatmap.hpp"

#include <fstream>
#include <iomanip>

#include "tar2/common/error.hpp"

namespace tar2::analysis {

void write_weight_heatmap(const core::RedistributionWeights& w, std::ostream& out) {
  const std::size_t T = w.temporal.size();
  require(w.agent.rows() == T, Errc::shape_mismatch, "weight heatmap: temporal and agent weights disagree on T");
  const std::size_t N = w.agent.cols();
  out << "t";
  for (std::size_t i = 0; i < N; ++i) out << ",agent_" << i;
  out << '\n' << std::setprecision(17);
  for (std::size_t t = 0; t < T; ++t) {
    out << t;
    for (std::size_t i = 0; i < N; ++i) out << ',' << w.temporal[t] * w.agent(t, i);
    out << '\n';
  }
}

void export_weight_heatmap(const core::RedistributionWeights& w, const std::filesystem::path& path) {
  std::ofstream f(path);
  require(f.good(), Errc::io, "weight heatmap: cannot open " + path.string());
  write_weight_heatmap(w, f);
  require(f.good(), Errc::io, "weight heatmap: write failed for " + path.string());
}

}  // namespace tar2::analysis
