#include "lexchain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t gold) const {
  return std::accumulate(counts[gold].begin(), counts[gold].end(), std::size_t{0});
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::size_t s = 0;
  for (const auto& row : counts) s += row[predicted];
  return s;
}

namespace {

ConfusionMatrix empty_matrix(const LabelSpace& space) {
  ConfusionMatrix m;
  m.labels = space.labels();
  m.counts.assign(space.size(), std::vector<std::size_t>(space.size(), 0));
  return m;
}

std::size_t label_index(const LabelSpace& space, const LabelId& label, const std::string& doc_id) {
  auto idx = space.index_of(label);
  if (!idx) throw LabelError(label.name(), doc_id + ": ");
  return *idx;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix confusion(const std::vector<PredictedLabel>& preds,
                          const std::vector<const Document*>& golds, const LabelSpace& space) {
  std::map<std::string, const PredictedLabel*, std::less<>> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.doc_id, &p).second)
      throw AlignmentError("duplicate prediction for '" + p.doc_id + "'");
  }
  if (by_id.size() != golds.size()) {
    std::set<std::string_view> gold_ids;
    for (const Document* d : golds) gold_ids.insert(d->id);
    for (const auto& p : preds) {
      if (!gold_ids.count(p.doc_id))
        throw AlignmentError("prediction for unknown document '" + p.doc_id + "'");
    }
  }
  auto m = empty_matrix(space);
  for (const Document* d : golds) {
    auto it = by_id.find(d->id);
    if (it == by_id.end()) throw AlignmentError("no prediction for document '" + d->id + "'");
    ++m.counts[label_index(space, d->gold, d->id)][label_index(space, it->second->label, d->id)];
    by_id.erase(it);
  }
  if (!by_id.empty())
    throw AlignmentError("prediction for unknown document '" + by_id.begin()->first + "'");
  return m;
}

ConfusionMatrix confusion_from_pairs(const std::vector<LabelId>& gold,
                                     const std::vector<LabelId>& predicted,
                                     const LabelSpace& space) {
  if (gold.size() != predicted.size())
    throw AlignmentError("gold and predicted sequences differ in length");
  auto m = empty_matrix(space);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++m.counts[label_index(space, gold[i], "#" + std::to_string(i))]
              [label_index(space, predicted[i], "#" + std::to_string(i))];
  }
  return m;
}

EvalReport score(const ConfusionMatrix& m) {
  const std::size_t total = m.total();
  if (total == 0) throw PreconditionError("cannot score an empty confusion matrix");
  EvalReport r;
  r.documents = total;
  std::size_t trace = 0;
  const auto n = static_cast<double>(m.labels.size());
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    LabelScores s;
    s.label = m.labels[i];
    const std::size_t tp = m.counts[i][i];
    trace += tp;
    s.support = m.row_sum(i);
    s.precision = ratio(tp, m.col_sum(i));
    s.recall = ratio(tp, s.support);
    s.f1 = (s.precision + s.recall) == 0.0
               ? 0.0
               : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    r.macro_precision += s.precision / n;
    r.macro_recall += s.recall / n;
    r.macro_f1 += s.f1 / n;
    r.weighted_f1 += s.f1 * static_cast<double>(s.support) / static_cast<double>(total);
    r.per_label.push_back(std::move(s));
  }
  r.accuracy = ratio(trace, total);
  r.micro_f1 = r.accuracy;
  return r;
}

std::vector<LabelwiseRow> labelwise(const ConfusionMatrix& m) {
  const auto report = score(m);
  std::vector<LabelwiseRow> rows;
  for (const auto& s : report.per_label) rows.push_back({s.label, s.support, s.f1});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const LabelwiseRow& a, const LabelwiseRow& b) { return a.support > b.support; });
  return rows;
}

std::vector<PredictedLabel> baseline(const BaselineKind& kind, const LabelHistogram& train_hist,
                                     const std::vector<const Document*>& eval_docs,
                                     const LabelSpace& space) {
  if (train_hist.empty()) throw PreconditionError("baseline needs a non-empty training histogram");
  std::vector<PredictedLabel> out;
  out.reserve(eval_docs.size());

  if (const auto* random = std::get_if<RandomBaseline>(&kind)) {
    Rng rng(random->seed);
    for (const Document* d : eval_docs) {
      out.push_back({d->id, space.labels()[rng.below(space.size())]});
    }
    return out;
  }

  // The histogram may come from a caller, so order it by label space here.
  auto ordered = train_hist;
  std::stable_sort(ordered.begin(), ordered.end(), [&](const auto& a, const auto& b) {
    return space.index_of(a.first).value_or(space.size()) <
           space.index_of(b.first).value_or(space.size());
  });
  const bool majority = std::holds_alternative<MajorityBaseline>(kind);
  const auto* pick = &ordered.front();
  for (const auto& entry : ordered) {
    if (majority ? entry.second > pick->second : entry.second < pick->second) pick = &entry;
  }
  for (const Document* d : eval_docs) out.push_back({d->id, pick->first});
  return out;
}

EvalReport subset_eval(const std::vector<PredictedLabel>& preds,
                       const std::vector<const Document*>& golds, const LabelSpace& space,
                       const std::vector<std::string>& ids) {
  std::map<std::string, const PredictedLabel*, std::less<>> pred_by_id;
  for (const auto& p : preds) {
    if (!pred_by_id.emplace(p.doc_id, &p).second)
      throw AlignmentError("duplicate prediction for '" + p.doc_id + "'");
  }
  std::map<std::string, const Document*, std::less<>> gold_by_id;
  for (const Document* d : golds) gold_by_id.emplace(d->id, d);

  std::vector<PredictedLabel> sub_preds;
  std::vector<const Document*> sub_golds;
  std::set<std::string, std::less<>> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) continue;
    auto p = pred_by_id.find(id);
    auto g = gold_by_id.find(id);
    if (p == pred_by_id.end() || g == gold_by_id.end())
      throw AlignmentError("subset id '" + id + "' was not evaluated");
    sub_preds.push_back(*p->second);
    sub_golds.push_back(g->second);
  }
  return score(confusion(sub_preds, sub_golds, space));
}

double round3(double x) {
  const double scaled = std::floor(x * 1000.0);
  // Residual of the exact product, so values stored just below a half round down.
  const double residual = std::fma(x, 1000.0, -scaled);
  return (residual >= 0.5 ? scaled + 1.0 : scaled) / 1000.0;
}

nlohmann::json report_to_json(const EvalReport& r, const ConfusionMatrix& m) {
  nlohmann::json j;
  j["documents"] = r.documents;
  j["macro"] = {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}};
  j["micro_f1"] = r.micro_f1;
  j["weighted_f1"] = r.weighted_f1;
  j["accuracy"] = r.accuracy;
  auto& per = j["per_label"] = nlohmann::json::object();
  for (const auto& s : r.per_label) {
    per[s.label.name()] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  auto& cm = j["confusion"];
  cm["labels"] = nlohmann::json::array();
  for (const auto& l : m.labels) cm["labels"].push_back(l.name());
  cm["counts"] = m.counts;
  return j;
}

namespace {

std::string fmt3(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", round3(x));
  std::string s(buf);
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  return s;
}

std::string pad(std::string s, std::size_t width, bool right = false) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string report_to_text(const EvalReport& r, const ConfusionMatrix& m, const std::string& title) {
  std::ostringstream out;
  const std::size_t name_w = std::max<std::size_t>(title.size(), 24);
  out << pad("Model", name_w) << " | Precision | Recall | macro-F1 || micro-F1 | weighted-F1 | Accuracy\n";
  out << pad(title, name_w) << " | " << pad(fmt3(r.macro_precision), 9, true) << " | "
      << pad(fmt3(r.macro_recall), 6, true) << " | " << pad(fmt3(r.macro_f1), 8, true) << " || "
      << pad(fmt3(r.micro_f1), 8, true) << " | " << pad(fmt3(r.weighted_f1), 11, true) << " | "
      << pad(fmt3(r.accuracy), 8, true) << "\n\n";

  std::size_t label_w = 5;
  for (const auto& l : m.labels) label_w = std::max(label_w, l.name().size());
  out << pad("#", 3, true) << " | " << pad("Label", label_w) << " | # Samples | F1\n";
  std::size_t rank = 1;
  for (const auto& row : labelwise(m)) {
    char f1[16];
    std::snprintf(f1, sizeof f1, "%.3f", round3(row.f1));
    out << pad(std::to_string(rank++), 3, true) << " | " << pad(row.label.name(), label_w) << " | "
        << pad(std::to_string(row.support), 9, true) << " | " << f1 << "\n";
  }
  return out.str();
}

std::string confusion_to_csv(const ConfusionMatrix& m) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::ostringstream out;
  out << "gold\\predicted";
  for (const auto& l : m.labels) out << ',' << quote(l.name());
  out << '\n';
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out << quote(m.labels[i].name());
    for (std::size_t c : m.counts[i]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

}  // namespace lexchain
