#include "reid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace reid::metrics {

void EvalSet::validate() const {
  if (query.empty() || gallery.empty()) throw ContractError("eval set: empty query or gallery");
  size_t d = query[0].size();
  for (const auto& v : query) {
    if (v.size() != d) throw ShapeError("eval set: inconsistent query dimension");
  }
  for (const auto& v : gallery) {
    if (v.size() != d) throw ShapeError("eval set: gallery dimension differs from query");
  }
  if (query_ids.size() != query.size() || query_cams.size() != query.size() ||
      gallery_ids.size() != gallery.size() || gallery_cams.size() != gallery.size()) {
    throw ContractError("eval set: label count mismatch");
  }
}

std::vector<double> pairwise_distances(const std::vector<std::vector<double>>& q,
                                       const std::vector<std::vector<double>>& g) {
  if (q.empty() || g.empty()) throw ContractError("pairwise_distances: empty input");
  size_t d = q[0].size();
  for (const auto& v : q) {
    if (v.size() != d) throw ShapeError("pairwise_distances: inconsistent query dimension");
  }
  for (const auto& v : g) {
    if (v.size() != d) {
      throw ShapeError("pairwise_distances: dimension mismatch " + std::to_string(v.size()) +
                       " vs " + std::to_string(d));
    }
  }
  std::vector<double> out(q.size() * g.size());
  for (size_t i = 0; i < q.size(); ++i) {
    for (size_t j = 0; j < g.size(); ++j) {
      double acc = 0.0;
      for (size_t c = 0; c < d; ++c) {
        double diff = q[i][c] - g[j][c];
        acc += diff * diff;
      }
      out[i * g.size() + j] = acc;
    }
  }
  return out;
}

EvalResult evaluate(const EvalSet& set, long max_rank) {
  set.validate();
  if (max_rank < 1) throw ContractError("evaluate: max_rank must be >= 1");
  long nq = static_cast<long>(set.query.size());
  long ng = static_cast<long>(set.gallery.size());
  std::vector<double> dist = pairwise_distances(set.query, set.gallery);

  EvalResult res;
  res.rankings.resize(static_cast<size_t>(nq));
  long longest = 0;
  double ap_sum = 0.0;
  std::vector<long> first_matches;

  for (long qi = 0; qi < nq; ++qi) {
    QueryRanking& r = res.rankings[static_cast<size_t>(qi)];
    std::vector<long> cand;
    cand.reserve(static_cast<size_t>(ng));
    bool any_match = false;
    for (long gi = 0; gi < ng; ++gi) {
      bool same_id = set.gallery_ids[static_cast<size_t>(gi)] == set.query_ids[static_cast<size_t>(qi)];
      bool same_cam = set.gallery_cams[static_cast<size_t>(gi)] == set.query_cams[static_cast<size_t>(qi)];
      if (same_id && same_cam) continue;  // cross-camera protocol exclusion
      cand.push_back(gi);
      any_match = any_match || same_id;
    }
    if (!any_match) {
      r.valid = false;
      ++res.skipped;
      continue;
    }
    const double* drow = dist.data() + qi * ng;
    std::stable_sort(cand.begin(), cand.end(), [&](long a, long b) {
      if (drow[a] != drow[b]) return drow[a] < drow[b];
      return a < b;
    });
    r.valid = true;
    r.order = std::move(cand);
    r.match.resize(r.order.size());
    long hits = 0;
    double ap = 0.0;
    long relevant = 0;
    for (size_t k = 0; k < r.order.size(); ++k) {
      bool m = set.gallery_ids[static_cast<size_t>(r.order[k])] ==
               set.query_ids[static_cast<size_t>(qi)];
      r.match[k] = m ? 1 : 0;
      if (m) {
        ++relevant;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        if (r.first_match < 0) r.first_match = static_cast<long>(k + 1);
      }
    }
    r.average_precision = ap / static_cast<double>(relevant);
    ap_sum += r.average_precision;
    ++res.evaluated;
    first_matches.push_back(r.first_match);
    longest = std::max(longest, static_cast<long>(r.order.size()));
  }

  if (res.evaluated == 0) throw ContractError("evaluate: no valid queries");
  res.mean_ap = ap_sum / static_cast<double>(res.evaluated);
  long K = std::min(max_rank, longest);
  res.cmc.assign(static_cast<size_t>(K), 0.0);
  for (long fm : first_matches) {
    for (long k = fm; k <= K; ++k) res.cmc[static_cast<size_t>(k - 1)] += 1.0;
  }
  for (double& v : res.cmc) v /= static_cast<double>(res.evaluated);
  return res;
}

void export_curves(const EvalResult& result, const std::string& csv_path,
                   const std::string& svg_path) {
  std::ofstream out(csv_path);
  if (!out) throw IoError("export_curves: cannot write " + csv_path);
  out.precision(17);
  out << "rank,cmc\n";
  for (size_t k = 0; k < result.cmc.size(); ++k) {
    out << (k + 1) << ',' << result.cmc[k] << '\n';
  }
  out << "mAP," << result.mean_ap << '\n';
  if (!out) throw IoError("export_curves: write failure on " + csv_path);

  if (svg_path.empty()) return;
  std::ofstream svg(svg_path);
  if (!svg) throw IoError("export_curves: cannot write " + svg_path);
  const double w = 480.0, h = 320.0, ml = 50.0, mb = 40.0, mt = 20.0, mr = 20.0;
  double pw = w - ml - mr, ph = h - mt - mb;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << (h - mb)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << (h - mb) << "\" x2=\"" << (w - mr) << "\" y2=\""
      << (h - mb) << "\" stroke=\"black\"/>\n";
  size_t n = result.cmc.size();
  svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (size_t k = 0; k < n; ++k) {
    double x = ml + (n > 1 ? pw * static_cast<double>(k) / static_cast<double>(n - 1) : 0.0);
    double y = (h - mb) - ph * result.cmc[k];
    svg << x << ',' << y << ' ';
  }
  svg << "\"/>\n";
  svg << "<text x=\"" << (ml + 8) << "\" y=\"" << (mt + 14) << "\" font-size=\"12\">mAP = "
      << result.mean_ap << "</text>\n";
  svg << "<text x=\"" << (w / 2) << "\" y=\"" << (h - 8) << "\" font-size=\"12\">rank</text>\n";
  svg << "</svg>\n";
}

ChanceEstimate chance_baseline(const EvalSet& set, long trials, std::mt19937_64& rng,
                               long max_rank) {
  if (trials < 2) throw ContractError("chance_baseline: need at least 2 trials");
  EvalSet shuffled = set;
  long ng = static_cast<long>(set.gallery.size());
  std::vector<long> perm(static_cast<size_t>(ng));
  ChanceEstimate est;
  est.samples.reserve(static_cast<size_t>(trials));
  for (long t = 0; t < trials; ++t) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (long i = 0; i < ng; ++i) {
      shuffled.gallery_ids[static_cast<size_t>(i)] = set.gallery_ids[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      shuffled.gallery_cams[static_cast<size_t>(i)] = set.gallery_cams[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    est.samples.push_back(evaluate(shuffled, max_rank).mean_ap);
  }
  double sum = std::accumulate(est.samples.begin(), est.samples.end(), 0.0);
  est.mean = sum / static_cast<double>(trials);
  double sq = 0.0;
  for (double v : est.samples) sq += (v - est.mean) * (v - est.mean);
  est.stddev = std::sqrt(sq / static_cast<double>(trials));
  return est;
}

}  // namespace reid::metrics
