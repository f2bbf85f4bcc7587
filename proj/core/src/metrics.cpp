#include "clf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace clf {

GroupConfusion confusion_by_group(const std::vector<int>& predictions,
                                  const std::vector<Sample>& samples, AttributeKind attribute) {
  if (predictions.size() != samples.size()) {
    throw InputError("confusion_by_group: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(samples.size()) + " samples");
  }
  GroupConfusion conf;
  int a = static_cast<int>(attribute);
  for (size_t i = 0; i < samples.size(); ++i) {
    int pred = predictions[i];
    if (pred != 0 && pred != 1) throw InputError("confusion_by_group: prediction must be 0 or 1");
    GroupCounts& c = conf.groups[static_cast<size_t>(samples[i].groups[static_cast<size_t>(a)])];
    if (samples[i].label == 1) {
      pred == 1 ? ++c.tp : ++c.fn;
    } else {
      pred == 1 ? ++c.fp : ++c.tn;
    }
  }
  for (const GroupCounts& g : conf.groups) {
    conf.overall.tp += g.tp;
    conf.overall.fp += g.fp;
    conf.overall.tn += g.tn;
    conf.overall.fn += g.fn;
  }
  return conf;
}

namespace {

double fpr_of(const GroupCounts& c, const std::string& who) {
  int64_t negatives = c.fp + c.tn;
  if (negatives == 0) {
    throw InputError("fped: " + who + " has no negative samples, rate undefined");
  }
  return static_cast<double>(c.fp) / static_cast<double>(negatives);
}

}  // namespace

double fped(const GroupConfusion& confusion) {
  double overall = fpr_of(confusion.overall, "overall set");
  double sum = 0.0;
  for (size_t g = 0; g < confusion.groups.size(); ++g) {
    sum += std::abs(fpr_of(confusion.groups[g], "group " + std::to_string(g)) - overall);
  }
  return sum;
}

double aab(const std::array<double, kNumAttributes>& fpeds) {
  double sum = 0.0;
  for (double f : fpeds) sum += f;
  return sum / static_cast<double>(kNumAttributes);
}

double bias_change(const std::vector<std::array<double, kNumAttributes>>& history,
                   const TaskSequence& sequence) {
  size_t n = sequence.size();
  if (n < 2) throw InputError("bias_change: needs at least two stages");
  if (history.size() != n) {
    throw InputError("bias_change: history covers " + std::to_string(history.size()) +
                     " stages for a sequence of " + std::to_string(n));
  }
  double sum = 0.0;
  for (size_t i = 0; i < n - 1; ++i) {
    int attr = static_cast<int>(sequence[i]);
    sum += history[n - 1][static_cast<size_t>(attr)] - history[i][static_cast<size_t>(attr)];
  }
  return sum / static_cast<double>(n - 1);
}

std::vector<double> dto(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw InputError("dto: needs at least two methods");
  double perf_min = points[0].first, perf_max = points[0].first;
  double fair_min = points[0].second, fair_max = points[0].second;
  for (const auto& [perf, fair] : points) {
    perf_min = std::min(perf_min, perf);
    perf_max = std::max(perf_max, perf);
    fair_min = std::min(fair_min, fair);
    fair_max = std::max(fair_max, fair);
  }
  double perf_span = perf_max - perf_min;
  double fair_span = fair_max - fair_min;
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& [perf, fair] : points) {
    // utopia = (best performance, best fairness); degenerate axes drop out
    double dp = perf_span > 0.0 ? (perf_max - perf) / perf_span : 0.0;
    double df = fair_span > 0.0 ? (fair - fair_min) / fair_span : 0.0;
    out.push_back(std::hypot(dp, df));
  }
  return out;
}

ClassificationScore f1_macro_and_accuracy(const std::vector<int>& predictions,
                                          const std::vector<int>& labels) {
  if (predictions.empty()) throw InputError("f1_macro_and_accuracy: empty input");
  if (predictions.size() != labels.size()) {
    throw InputError("f1_macro_and_accuracy: size mismatch");
  }
  int64_t correct = 0;
  std::array<int64_t, 2> tp{}, fp{}, fn{};
  for (size_t i = 0; i < predictions.size(); ++i) {
    int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
      throw InputError("f1_macro_and_accuracy: labels and predictions must be 0 or 1");
    }
    if (p == y) {
      ++correct;
      ++tp[static_cast<size_t>(y)];
    } else {
      ++fp[static_cast<size_t>(p)];
      ++fn[static_cast<size_t>(y)];
    }
  }
  ClassificationScore score;
  score.accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());
  double f1_sum = 0.0;
  for (int c = 0; c < 2; ++c) {
    int64_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) {
      // class absent from both predictions and labels: F1 contributes 0
      score.missing_class_warning = true;
      continue;
    }
    f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  score.f1_macro = f1_sum / 2.0;
  return score;
}

AggregateReport aggregate(const std::vector<FairnessReport>& reports) {
  if (reports.empty()) throw InputError("aggregate: no reports");
  bool has_bc = reports.front().bc.has_value();
  for (const FairnessReport& r : reports) {
    if (r.bc.has_value() != has_bc) {
      throw InputError("aggregate: reports disagree on which fields are present");
    }
  }
  size_t n = reports.size();
  auto mean_var = [n](auto getter) -> std::pair<double, double> {
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += getter(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d = getter(i) - mean;
      var += d * d;
    }
    return {mean, var / static_cast<double>(n)};  // population variance
  };

  AggregateReport out;
  out.count = static_cast<int>(n);
  std::tie(out.mean.accuracy, out.variance.accuracy) =
      mean_var([&](size_t i) { return reports[i].accuracy; });
  std::tie(out.mean.f1_macro, out.variance.f1_macro) =
      mean_var([&](size_t i) { return reports[i].f1_macro; });
  for (int a = 0; a < kNumAttributes; ++a) {
    std::tie(out.mean.fped[a], out.variance.fped[a]) =
        mean_var([&](size_t i) { return reports[i].fped[static_cast<size_t>(a)]; });
  }
  std::tie(out.mean.aab, out.variance.aab) = mean_var([&](size_t i) { return reports[i].aab; });
  if (has_bc) {
    auto [m, v] = mean_var([&](size_t i) { return *reports[i].bc; });
    out.mean.bc = m;
    out.variance.bc = v;
  }
  return out;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("wilcoxon: paired lists must have equal length");
  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  size_t n = diffs.size();
  if (n < 5) {
    throw InputError("wilcoxon: fewer than 5 nonzero differences (" + std::to_string(n) + ")");
  }

  // mid-ranks of |d|
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t i, size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<double> ranks(n, 0.0);
  std::vector<double> tie_sizes;
  size_t pos = 0;
  while (pos < n) {
    size_t end = pos;
    while (end + 1 < n &&
           std::abs(diffs[order[end + 1]]) == std::abs(diffs[order[pos]])) {
      ++end;
    }
    double mid = (static_cast<double>(pos + 1) + static_cast<double>(end + 1)) / 2.0;
    for (size_t k = pos; k <= end; ++k) ranks[order[k]] = mid;
    tie_sizes.push_back(static_cast<double>(end - pos + 1));
    pos = end + 1;
  }

  double w_plus = 0.0, rank_total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    rank_total += ranks[i];
    if (diffs[i] > 0.0) w_plus += ranks[i];
  }
  double w_minus = rank_total - w_plus;

  WilcoxonResult res;
  res.n = static_cast<int>(n);
  res.statistic = std::min(w_plus, w_minus);

  if (n <= 20) {
    // exact: p = P(min(W+, W-) <= observed) over all sign assignments
    res.exact = true;
    uint64_t count = 0;
    uint64_t total = uint64_t{1} << n;
    double w_obs = res.statistic + 1e-12;  // absorb float noise in rank sums
    for (uint64_t mask = 0; mask < total; ++mask) {
      double wp = 0.0;
      for (size_t i = 0; i < n; ++i) {
        if (mask & (uint64_t{1} << i)) wp += ranks[i];
      }
      if (std::min(wp, rank_total - wp) <= w_obs) ++count;
    }
    res.p_value = static_cast<double>(count) / static_cast<double>(total);
  } else {
    res.exact = false;
    double nn = static_cast<double>(n);
    double mean = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    for (double t : tie_sizes) var -= (t * t * t - t) / 48.0;
    double z = (res.statistic - mean + 0.5) / std::sqrt(var);
    double p = std::erfc(-z / std::sqrt(2.0));  // Phi(z) * 2
    res.p_value = std::min(1.0, p);
  }
  return res;
}

}  // namespace clf
