#include "lexchain/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view text) {
  const std::string s = to_lower(trim(text));
  if (s == "train") return Split::train;
  if (s == "dev" || s == "validation") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

LabelSpace::LabelSpace(std::string name, TaskKind task, std::vector<LabelId> labels)
    : name_(std::move(name)), task_(task), labels_(std::move(labels)) {
  if (labels_.empty()) throw ConfigError("label space '" + name_ + "' has no labels");
  std::set<std::string> seen;
  for (const auto& label : labels_) {
    if (!seen.insert(to_lower(trim(label.name()))).second)
      throw ConfigError("label space '" + name_ + "' repeats label '" + label.name() + "'");
  }
  if (task_ == TaskKind::binary) {
    if (labels_.size() != 2 || !find("YES") || !find("NO"))
      throw ConfigError("binary label space '" + name_ + "' must be exactly YES, NO");
  }
}

LabelSpace LabelSpace::echr() {
  return LabelSpace("echr", TaskKind::binary, {LabelId("YES"), LabelId("NO")});
}

LabelSpace LabelSpace::scotus() {
  std::vector<LabelId> areas;
  for (const char* name :
       {"Criminal Procedure", "Civil Rights", "First Amendment", "Due Process", "Privacy",
        "Attorneys", "Unions", "Economic Activity", "Judicial Power", "Federalism",
        "Interstate Relations", "Federal Taxation", "Miscellaneous"}) {
    areas.emplace_back(name);
  }
  return LabelSpace("scotus", TaskKind::multiclass, std::move(areas));
}

LabelSpace LabelSpace::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label space file " + path.string());
  json j;
  try {
    in >> j;
    const std::string task = j.at("task").get<std::string>();
    if (task != "binary" && task != "multiclass")
      throw ConfigError("label space task must be binary or multiclass, got '" + task + "'");
    std::vector<LabelId> labels;
    for (const auto& l : j.at("labels")) labels.emplace_back(l.get<std::string>());
    return LabelSpace(j.value("name", path.stem().string()),
                      task == "binary" ? TaskKind::binary : TaskKind::multiclass,
                      std::move(labels));
  } catch (const json::exception& e) {
    throw ConfigError("bad label space file " + path.string() + ": " + e.what());
  }
}

LabelSpace LabelSpace::resolve(const std::string& name_or_path) {
  const std::string lowered = to_lower(name_or_path);
  if (lowered == "echr" || lowered == "ecthr") return echr();
  if (lowered == "scotus") return scotus();
  return from_file(name_or_path);
}

std::optional<LabelId> LabelSpace::find(std::string_view raw) const {
  const std::string key = to_lower(trim(raw));
  for (const auto& label : labels_) {
    if (to_lower(label.name()) == key) return label;
  }
  return std::nullopt;
}

std::optional<std::size_t> LabelSpace::index_of(const LabelId& label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return i;
  }
  return std::nullopt;
}

LabelId LabelSpace::yes() const {
  auto l = find("YES");
  if (!l) throw ConfigError("label space '" + name_ + "' has no YES label");
  return *l;
}

LabelId LabelSpace::no() const {
  auto l = find("NO");
  if (!l) throw ConfigError("label space '" + name_ + "' has no NO label");
  return *l;
}

Corpus::Corpus(LabelSpace label_space, std::vector<Document> documents)
    : label_space_(std::move(label_space)), documents_(std::move(documents)) {
  for (std::size_t i = 0; i < documents_.size(); ++i) {
    const auto& doc = documents_[i];
    if (doc.text.empty()) throw Error("document '" + doc.id + "' has empty text");
    if (!label_space_.contains(doc.gold)) throw LabelError(doc.gold.name(), doc.id + ": ");
    if (!by_id_.emplace(doc.id, i).second)
      throw DuplicateError("duplicate document id '" + doc.id + "'");
  }
}

std::vector<const Document*> Corpus::split(Split which) const {
  std::vector<const Document*> out;
  for (const auto& doc : documents_) {
    if (doc.split == which) out.push_back(&doc);
  }
  return out;
}

const Document* Corpus::find(std::string_view id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &documents_[it->second];
}

bool Corpus::complete() const {
  return !split(Split::train).empty() && !split(Split::dev).empty() &&
         !split(Split::test).empty();
}

LabelId binarize_echr(const std::vector<std::string>& violated_articles) {
  return LabelId(violated_articles.empty() ? "NO" : "YES");
}

namespace {

LabelId parse_label_field(const json& field, const LabelSpace& space, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (field.is_array()) {
    if (space.task() != TaskKind::binary)
      throw ParseError(line, "article lists are only accepted for a binary label space");
    std::vector<std::string> articles;
    for (const auto& a : field) {
      articles.push_back(a.is_string() ? a.get<std::string>() : a.dump());
    }
    return *space.find(binarize_echr(articles).name());
  }
  if (!field.is_string()) throw ParseError(line, "field 'label' must be a string or list");
  const std::string raw = field.get<std::string>();
  auto label = space.find(raw);
  if (!label) throw LabelError(raw, where);
  return *label;
}

}  // namespace

Corpus parse_jsonl(std::istream& in, const LabelSpace& label_space) {
  std::vector<Document> docs;
  std::set<std::string, std::less<>> ids;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (trim(text).empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "record is not a JSON object");
    for (const char* key : {"id", "text", "label", "split"}) {
      if (!j.contains(key)) throw ParseError(line_no, std::string("missing field '") + key + "'");
    }
    Document doc;
    try {
      doc.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      doc.text = j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (trim(doc.text).empty()) throw ParseError(line_no, "empty text");
    doc.gold = parse_label_field(j.at("label"), label_space, line_no);
    if (!j.at("split").is_string()) throw ParseError(line_no, "field 'split' must be a string");
    auto split = parse_split(j.at("split").get<std::string>());
    if (!split) throw ParseError(line_no, "unknown split '" + j.at("split").get<std::string>() + "'");
    doc.split = *split;
    if (j.contains("meta") && j.at("meta").is_object()) {
      for (const auto& [k, v] : j.at("meta").items()) {
        doc.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    if (!ids.insert(doc.id).second)
      throw DuplicateError("line " + std::to_string(line_no) + ": duplicate id '" + doc.id + "'");
    docs.push_back(std::move(doc));
  }
  return Corpus(label_space, std::move(docs));
}

Corpus load_jsonl(const std::filesystem::path& path, const LabelSpace& label_space) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file " + path.string());
  return parse_jsonl(in, label_space);
}

void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& doc : corpus.documents()) {
    json j = {{"id", doc.id},
              {"text", doc.text},
              {"label", doc.gold.name()},
              {"split", std::string(to_string(doc.split))}};
    if (!doc.meta.empty()) j["meta"] = doc.meta;
    out << j.dump() << '\n';
  }
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_jsonl(corpus, out);
}

LabelHistogram label_histogram(const std::vector<const Document*>& docs,
                               const LabelSpace& space) {
  if (docs.empty()) throw EmptySplitError("split has no documents");
  std::vector<std::size_t> counts(space.size(), 0);
  for (const Document* doc : docs) {
    auto idx = space.index_of(doc->gold);
    if (!idx) throw LabelError(doc->gold.name(), doc->id + ": ");
    ++counts[*idx];
  }
  LabelHistogram hist;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) hist.emplace_back(space.labels()[i], counts[i]);
  }
  return hist;
}

LabelHistogram label_histogram(const Corpus& corpus, Split split) {
  auto docs = corpus.split(split);
  if (docs.empty())
    throw EmptySplitError("split '" + std::string(to_string(split)) + "' has no documents");
  return label_histogram(docs, corpus.label_space());
}

}  // namespace lexchain
