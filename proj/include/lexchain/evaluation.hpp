#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lexchain/corpus.hpp"

namespace lexchain {

struct PredictedLabel {
  std::string doc_id;
  LabelId label;
};

/// Rows are gold labels, columns predicted labels, both in label-space order.
struct ConfusionMatrix {
  std::vector<LabelId> labels;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::size_t row_sum(std::size_t gold) const;
  std::size_t col_sum(std::size_t predicted) const;
};

struct LabelScores {
  LabelId label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  std::vector<LabelScores> per_label;  // label-space order
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t documents = 0;
};

/// Requires a one-to-one match between prediction ids and gold documents.
ConfusionMatrix confusion(const std::vector<PredictedLabel>& preds,
                          const std::vector<const Document*>& golds, const LabelSpace& space);

/// Matrix from gold/predicted label sequences already aligned by position.
ConfusionMatrix confusion_from_pairs(const std::vector<LabelId>& gold,
                                     const std::vector<LabelId>& predicted,
                                     const LabelSpace& space);

/// 0/0 precision, recall or F1 count as 0.
EvalReport score(const ConfusionMatrix& matrix);

struct LabelwiseRow {
  LabelId label;
  std::size_t support = 0;
  double f1 = 0.0;
};

/// Sorted by descending support (label-space order among equal supports).
std::vector<LabelwiseRow> labelwise(const ConfusionMatrix& matrix);

struct MajorityBaseline {};
struct MinorityBaseline {};
struct RandomBaseline {
  std::uint64_t seed = 0;
};

using BaselineKind = std::variant<MajorityBaseline, MinorityBaseline, RandomBaseline>;

/// Majority: most frequent training label (ties: earliest in label-space
/// order). Minority: least frequent present label. Random: uniform over the
/// whole label space, one draw per document.
std::vector<PredictedLabel> baseline(const BaselineKind& kind, const LabelHistogram& train_hist,
                                     const std::vector<const Document*>& eval_docs,
                                     const LabelSpace& space);

/// Recomputes the report over the documents named in `ids`.
EvalReport subset_eval(const std::vector<PredictedLabel>& preds,
                       const std::vector<const Document*>& golds, const LabelSpace& space,
                       const std::vector<std::string>& ids);

/// Half-up rounding of the stored binary value to 3 decimals.
double round3(double x);

nlohmann::json report_to_json(const EvalReport& report, const ConfusionMatrix& matrix);
/// Aligned text table: Precision, Recall, macro-F1, micro-F1, weighted-F1, Accuracy,
/// followed by the label-wise rows.
std::string report_to_text(const EvalReport& report, const ConfusionMatrix& matrix,
                           const std::string& title);
std::string confusion_to_csv(const ConfusionMatrix& matrix);

}  // namespace lexchain
