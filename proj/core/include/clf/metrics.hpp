#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "clf/corpus.hpp"

namespace clf {

struct GroupCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

// Confusion counts split by the two groups of one attribute.
struct GroupConfusion {
  std::array<GroupCounts, 2> groups{};
  GroupCounts overall;
};

// predictions[i] is the predicted label for samples[i]
GroupConfusion confusion_by_group(const std::vector<int>& predictions,
                                  const std::vector<Sample>& samples, AttributeKind attribute);

// False Positive Equality Difference: sum over groups of
// |FPR_group - FPR_overall|. Every group needs at least one negative.
double fped(const GroupConfusion& confusion);

// Average Attribute Bias: mean FPED over the four attributes.
double aab(const std::array<double, kNumAttributes>& fpeds);

// Which per-stage bias table feeds bias_change: per-attribute FPED (the
// default reading) or the overall false positive rate, kept for
// sensitivity analysis.
enum class BcMetric { Fped, OverallFpr };

// Bias Change: mean over stages i = 1..n-1 of (bias of stage i's focus
// attribute after the final stage - the same bias right after stage i).
// history[t] holds the per-attribute bias values measured after stage t+1.
double bias_change(const std::vector<std::array<double, kNumAttributes>>& history,
                   const TaskSequence& sequence);

// Distance To Optimum per method. Points are (performance, fairness) with
// performance higher-better and fairness lower-better; both axes are
// min-max normalized over the set and measured against the utopia corner.
std::vector<double> dto(const std::vector<std::pair<double, double>>& points);

struct ClassificationScore {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  bool missing_class_warning = false;
};

ClassificationScore f1_macro_and_accuracy(const std::vector<int>& predictions,
                                          const std::vector<int>& labels);

struct FairnessReport {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  std::array<double, kNumAttributes> fped{};
  double aab = 0.0;
  std::optional<double> bc;
};

struct AggregateReport {
  FairnessReport mean;
  FairnessReport variance;  // population variance, field-wise
  int count = 0;
};

AggregateReport aggregate(const std::vector<FairnessReport>& reports);

struct WilcoxonResult {
  double statistic = 0.0;  // W = min(W+, W-)
  double p_value = 1.0;    // two-sided
  int n = 0;               // pairs remaining after dropping zero differences
  bool exact = false;      // exact enumeration vs normal approximation
};

// Two-sided Wilcoxon signed-rank test on paired observations. Zero
// differences are dropped; ties get mid-ranks. Exact p by enumerating all
// 2^n sign assignments for n <= 20, else a continuity-corrected normal
// approximation with tie-adjusted variance.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace clf
