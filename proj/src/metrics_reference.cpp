#include "reid/metrics_reference.hpp"

#include <algorithm>
#include <limits>

namespace reid::metrics {

ReferenceResult brute_force_evaluate(const EvalSet& set, long max_rank) {
  set.validate();
  long nq = static_cast<long>(set.query.size());
  long ng = static_cast<long>(set.gallery.size());

  ReferenceResult res;
  double ap_sum = 0.0;
  std::vector<long> first_matches;
  long longest = 0;

  for (long qi = 0; qi < nq; ++qi) {
    std::vector<long> cand;
    for (long gi = 0; gi < ng; ++gi) {
      if (set.gallery_ids[static_cast<size_t>(gi)] == set.query_ids[static_cast<size_t>(qi)] &&
          set.gallery_cams[static_cast<size_t>(gi)] == set.query_cams[static_cast<size_t>(qi)]) {
        continue;
      }
      cand.push_back(gi);
    }
    long relevant_total = 0;
    for (long gi : cand) {
      if (set.gallery_ids[static_cast<size_t>(gi)] == set.query_ids[static_cast<size_t>(qi)]) {
        ++relevant_total;
      }
    }
    if (relevant_total == 0) {
      ++res.skipped;
      continue;
    }

    std::vector<double> d(cand.size());
    for (size_t c = 0; c < cand.size(); ++c) {
      double acc = 0.0;
      for (size_t k = 0; k < set.query[static_cast<size_t>(qi)].size(); ++k) {
        double diff = set.query[static_cast<size_t>(qi)][k] -
                      set.gallery[static_cast<size_t>(cand[c])][k];
        acc += diff * diff;
      }
      d[c] = acc;
    }

    // rank by repeated minimum selection; ties resolve to the lower gallery index
    std::vector<char> used(cand.size(), 0);
    std::vector<long> ranked;
    for (size_t step = 0; step < cand.size(); ++step) {
      long best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t c = 0; c < cand.size(); ++c) {
        if (used[c]) continue;
        if (d[c] < best_d || (d[c] == best_d && (best < 0 || cand[c] < cand[static_cast<size_t>(best)]))) {
          best_d = d[c];
          best = static_cast<long>(c);
        }
      }
      used[static_cast<size_t>(best)] = 1;
      ranked.push_back(cand[static_cast<size_t>(best)]);
    }

    long first = -1;
    double ap = 0.0;
    for (size_t r = 0; r < ranked.size(); ++r) {
      bool is_match = set.gallery_ids[static_cast<size_t>(ranked[r])] ==
                      set.query_ids[static_cast<size_t>(qi)];
      if (!is_match) continue;
      if (first < 0) first = static_cast<long>(r + 1);
      // precision at this rank, recounted from scratch
      long hits = 0;
      for (size_t rr = 0; rr <= r; ++rr) {
        if (set.gallery_ids[static_cast<size_t>(ranked[rr])] ==
            set.query_ids[static_cast<size_t>(qi)]) {
          ++hits;
        }
      }
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    ap_sum += ap / static_cast<double>(relevant_total);
    first_matches.push_back(first);
    ++res.evaluated;
    longest = std::max(longest, static_cast<long>(ranked.size()));
  }

  if (res.evaluated == 0) throw ContractError("brute_force_evaluate: no valid queries");
  res.mean_ap = ap_sum / static_cast<double>(res.evaluated);
  long K = std::min(max_rank, longest);
  res.cmc.assign(static_cast<size_t>(K), 0.0);
  for (long fm : first_matches) {
    for (long k = fm; k <= K; ++k) res.cmc[static_cast<size_t>(k - 1)] += 1.0;
  }
  for (double& v : res.cmc) v /= static_cast<double>(res.evaluated);
  return res;
}

}  // namespace reid::metrics
