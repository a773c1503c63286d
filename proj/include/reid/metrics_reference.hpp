#pragma once

#include "reid/metrics.hpp"

namespace reid::metrics {

struct ReferenceResult {
  std::vector<double> cmc;
  double mean_ap = 0.0;
  long evaluated = 0;
  long skipped = 0;
};

// Deliberately naive CMC/mAP implementation kept independent of evaluate():
// repeated minimum-selection instead of sorting, precision recounted from
// scratch at every relevant rank. Used as the oracle in randomized
// equivalence checks and by the `oracle-metrics` CLI command.
ReferenceResult brute_force_evaluate(const EvalSet& set, long max_rank = 20);

}  // namespace reid::metrics
