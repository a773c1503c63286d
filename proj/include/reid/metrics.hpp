#pragma once

#include <random>
#include <string>
#include <vector>

#include "reid/errors.hpp"

namespace reid::metrics {

// Query/gallery embeddings with object and camera labels. Evaluation runs the
// cross-camera protocol: gallery entries sharing both the object id and the
// camera id with the query are excluded from that query's ranking.
struct EvalSet {
  std::vector<std::vector<double>> query;
  std::vector<long> query_ids;
  std::vector<long> query_cams;
  std::vector<std::vector<double>> gallery;
  std::vector<long> gallery_ids;
  std::vector<long> gallery_cams;

  void validate() const;
};

struct QueryRanking {
  bool valid = false;               // has at least one same-id candidate
  std::vector<long> order;          // candidate gallery indices, ascending distance
  std::vector<char> match;          // per-rank same-object flags
  long first_match = -1;            // 1-based rank of the first match
  double average_precision = 0.0;
};

struct EvalResult {
  std::vector<double> cmc;  // cmc[k-1] = CMC@k for k = 1..K
  double mean_ap = 0.0;
  long evaluated = 0;
  long skipped = 0;  // queries with no valid match
  std::vector<QueryRanking> rankings;
};

// Squared Euclidean distances, row-major (|Q| x |G|).
std::vector<double> pairwise_distances(const std::vector<std::vector<double>>& q,
                                       const std::vector<std::vector<double>>& g);

// CMC over ranks 1..max_rank (clipped to the longest candidate list) and mAP.
// Distance ties break toward the lower gallery index.
EvalResult evaluate(const EvalSet& set, long max_rank = 20);

// CSV schema: header "rank,cmc", one row per rank, final line "mAP,<value>".
// A minimal SVG line plot is written when svg_path is non-empty.
void export_curves(const EvalResult& result, const std::string& csv_path,
                   const std::string& svg_path = "");

struct ChanceEstimate {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> samples;  // mAP per shuffle trial
};

// Label-shuffle null model: permutes the gallery (object, camera) label pairs
// `trials` times and evaluates each permutation.
ChanceEstimate chance_baseline(const EvalSet& set, long trials, std::mt19937_64& rng,
                               long max_rank = 20);

}  // namespace reid::metrics
