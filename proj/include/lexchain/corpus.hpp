#pragma once

#include <compare>
#include <iosfwd>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lexchain {

/// Canonical label name as it appears in a LabelSpace ("YES", "Civil Rights").
class LabelId {
 public:
  LabelId() = default;
  explicit LabelId(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  friend auto operator<=>(const LabelId&, const LabelId&) = default;

 private:
  std::string name_;
};

enum class Split { train, dev, test };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

enum class TaskKind { binary, multiclass };

class LabelSpace {
 public:
  LabelSpace(std::string name, TaskKind task, std::vector<LabelId> labels);

  /// ECHR violation task: YES, NO.
  static LabelSpace echr();
  /// The 13 SCOTUS issue areas that occur in the data.
  static LabelSpace scotus();

  /// Loads a label-space config file ({"name", "task", "labels": [...]}).
  static LabelSpace from_file(const std::filesystem::path& path);
  /// Builtin name ("echr", "scotus") or a path to a config file.
  static LabelSpace resolve(const std::string& name_or_path);

  const std::string& name() const { return name_; }
  TaskKind task() const { return task_; }
  const std::vector<LabelId>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }

  /// Case-insensitive match after trimming whitespace.
  std::optional<LabelId> find(std::string_view raw) const;
  std::optional<std::size_t> index_of(const LabelId& label) const;
  bool contains(const LabelId& label) const { return index_of(label).has_value(); }

  LabelId yes() const;
  LabelId no() const;

 private:
  std::string name_;
  TaskKind task_;
  std::vector<LabelId> labels_;
};

struct Document {
  std::string id;
  std::string text;
  LabelId gold;
  Split split = Split::train;
  std::map<std::string, std::string> meta;
};

/// Immutable after load.
class Corpus {
 public:
  Corpus(LabelSpace label_space, std::vector<Document> documents);

  const LabelSpace& label_space() const { return label_space_; }
  const std::vector<Document>& documents() const { return documents_; }

  std::vector<const Document*> split(Split which) const;
  const Document* find(std::string_view id) const;

  /// Every split holds at least one document.
  bool complete() const;

 private:
  LabelSpace label_space_;
  std::vector<Document> documents_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

/// Label counts of one split, in label-space order, labels with zero count omitted.
using LabelHistogram = std::vector<std::pair<LabelId, std::size_t>>;

/// Reads JSON Lines records {id, text, label, split[, meta]}. For a binary
/// space `label` may also be the raw list of violated articles, which is
/// binarized on ingestion.
Corpus load_jsonl(const std::filesystem::path& path, const LabelSpace& label_space);
Corpus parse_jsonl(std::istream& in, const LabelSpace& label_space);

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);
void write_jsonl(const Corpus& corpus, std::ostream& out);

/// YES iff at least one article was violated.
LabelId binarize_echr(const std::vector<std::string>& violated_articles);

LabelHistogram label_histogram(const Corpus& corpus, Split split);
LabelHistogram label_histogram(const std::vector<const Document*>& docs,
                               const LabelSpace& space);

}  // namespace lexchain
