#include "lexchain/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

namespace {

const std::set<std::string>& allowed_placeholders() {
  static const std::set<std::string> allowed = {"input", "exemplars", "options", "target"};
  return allowed;
}

bool is_name_char(char c) {
  return std::islower(static_cast<unsigned char>(c)) || c == '_';
}

/// Calls on_text / on_placeholder over the body in order.
template <typename Text, typename Placeholder>
void scan(const std::string& body, Text on_text, Placeholder on_placeholder) {
  std::size_t i = 0;
  std::size_t literal = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      std::size_t j = i + 1;
      while (j < body.size() && is_name_char(body[j])) ++j;
      if (j < body.size() && body[j] == '}' && j > i + 1) {
        on_text(std::string_view(body).substr(literal, i - literal));
        on_placeholder(body.substr(i + 1, j - i - 1));
        i = j + 1;
        literal = i;
        continue;
      }
    }
    ++i;
  }
  on_text(std::string_view(body).substr(literal));
}

std::string one_line(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : trim(text)) {
    if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    if (c == ' ') {
      if (!space) out += c;
      space = true;
    } else {
      out += c;
      space = false;
    }
  }
  return out;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string name, std::string body)
    : name_(std::move(name)), body_(std::move(body)) {
  scan(
      body_, [](std::string_view) {},
      [&](const std::string& p) {
        if (!allowed_placeholders().count(p))
          throw TemplateError("template '" + name_ + "' uses unknown placeholder {" + p + "}");
        if (std::find(placeholders_.begin(), placeholders_.end(), p) == placeholders_.end())
          placeholders_.push_back(p);
      });
}

bool PromptTemplate::uses(const std::string& placeholder) const {
  return std::find(placeholders_.begin(), placeholders_.end(), placeholder) != placeholders_.end();
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  scan(
      body_, [&](std::string_view text) { out += text; },
      [&](const std::string& p) {
        auto it = values.find(p);
        if (it == values.end())
          throw TemplateError("template '" + name_ + "': unresolved placeholder {" + p + "}");
        out += it->second;
      });
  return out;
}

TemplateLibrary TemplateLibrary::builtin() {
  TemplateLibrary lib;
  lib.add(PromptTemplate("summarize_in_summary", "{input} In summary, "));
  lib.add(PromptTemplate("summarize_tldr", "{input} TLDR: "));
  lib.add(PromptTemplate("classify_fewshot",
                         "{exemplars}Options: {options}\nText: {target}\nLabel:"));
  return lib;
}

TemplateLibrary TemplateLibrary::parse(const std::string& text) {
  TemplateLibrary lib;
  std::istringstream in(text);
  std::string line;
  std::string name;
  std::vector<std::string> body;
  auto flush = [&] {
    if (!name.empty()) lib.add(PromptTemplate(name, join(body, "\n")));
    body.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      flush();
      name = line.substr(1, line.size() - 2);
      continue;
    }
    if (name.empty()) {
      if (trim(line).empty() || line.front() == '#') continue;
      throw TemplateError("template text before the first [name] header");
    }
    body.push_back(line);
  }
  flush();
  return lib;
}

TemplateLibrary TemplateLibrary::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const PromptTemplate& TemplateLibrary::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw TemplateError("no template named '" + name + "'");
  return it->second;
}

void TemplateLibrary::add(PromptTemplate t) {
  auto name = t.name();
  templates_.insert_or_assign(std::move(name), std::move(t));
}

std::vector<std::string> TemplateLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : templates_) out.push_back(name);
  return out;
}

nlohmann::json bundle_to_json(const PromptBundle& b) {
  nlohmann::ordered_json j;
  j["text"] = b.text;
  auto& ex = j["exemplars_used"] = nlohmann::ordered_json::array();
  for (const auto& e : b.exemplars_used) {
    ex.push_back({{"doc_id", e.doc_id}, {"label", e.label.name()}, {"similarity", e.similarity}});
  }
  auto& opts = j["options"] = nlohmann::ordered_json::array();
  for (const auto& o : b.options) opts.push_back(o.name());
  j["token_count"] = b.token_count;
  j["dropped_exemplars"] = b.dropped_exemplars;
  return nlohmann::json::parse(j.dump());
}

std::vector<LabelId> restrict_labels(const std::vector<NeighborHit>& neighbors,
                                     const LabelSpace& space) {
  if (space.task() == TaskKind::binary) return space.labels();
  std::vector<LabelId> order;
  std::vector<std::size_t> counts;
  for (const auto& n : neighbors) {
    if (!space.contains(n.label)) throw LabelError(n.label.name(), n.doc_id + ": ");
    auto it = std::find(order.begin(), order.end(), n.label);
    if (it == order.end()) {
      order.push_back(n.label);
      counts.push_back(1);
    } else {
      ++counts[static_cast<std::size_t>(it - order.begin())];
    }
  }
  std::vector<std::size_t> idx(order.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<LabelId> out;
  for (std::size_t i : idx) out.push_back(order[i]);
  return out;
}

PromptBundle build_fewshot(const Summary& target, const std::vector<Exemplar>& neighbors,
                           const LabelSpace& space, const PromptTemplate& tmpl,
                           const TokenBudget& budget, const TokenCounter& counter) {
  if (neighbors.empty() || neighbors.size() > kMaxExemplars)
    throw PreconditionError("build_fewshot needs between 1 and 8 neighbors, got " +
                            std::to_string(neighbors.size()));
  if (target.token_count > budget.summary_target)
    throw PreconditionError("target summary '" + target.doc_id + "' exceeds the summary target");
  for (const char* p : {"exemplars", "options", "target"}) {
    if (!tmpl.uses(p))
      throw TemplateError("classification template '" + tmpl.name() + "' lacks {" + p + "}");
  }
  if (tmpl.uses("input"))
    throw TemplateError("classification template '" + tmpl.name() + "' must not use {input}");
  if (budget.context_window <= kGenerationReserve)
    throw BudgetError("context window too small for the generation reserve");

  std::vector<NeighborHit> hits;
  for (const auto& n : neighbors) hits.push_back(n.hit);

  PromptBundle bundle;
  bundle.options = restrict_labels(hits, space);
  std::vector<std::string> option_names;
  for (const auto& o : bundle.options) option_names.push_back(o.name());
  const std::string options = join(option_names, ", ");
  const std::string target_text = one_line(target.text);
  const std::size_t limit = budget.context_window - kGenerationReserve;

  // neighbors[0] is the most similar; render in reverse so it comes last.
  for (std::size_t used = neighbors.size();; --used) {
    std::string block;
    std::vector<ExemplarUse> rendered;
    for (std::size_t i = used; i-- > 0;) {
      const auto& n = neighbors[i];
      block += "Text: " + one_line(n.summary) + "\nLabel: " + n.hit.label.name() + "\n";
      rendered.push_back({n.hit.doc_id, n.hit.label, n.hit.similarity});
    }
    std::string text =
        tmpl.render({{"exemplars", block}, {"options", options}, {"target", target_text}});
    const std::size_t tokens = counter.count(text);
    if (tokens <= limit) {
      bundle.text = std::move(text);
      bundle.exemplars_used = std::move(rendered);
      bundle.token_count = tokens;
      bundle.dropped_exemplars = neighbors.size() - used;
      return bundle;
    }
    if (used == 0)
      throw BudgetError("prompt for '" + target.doc_id + "' exceeds " + std::to_string(limit) +
                        " tokens even without exemplars");
  }
}

std::string render_summarization_prompt(const std::string& chunk_text, const PromptTemplate& tmpl) {
  for (const auto& p : tmpl.placeholders()) {
    if (p != "input")
      throw TemplateError("summarization template '" + tmpl.name() + "' may only use {input}, found {" +
                          p + "}");
  }
  if (!tmpl.uses("input"))
    throw TemplateError("summarization template '" + tmpl.name() + "' lacks {input}");
  return tmpl.render({{"input", chunk_text}});
}

std::string render_summarization_prompt(const Chunk& chunk, const PromptTemplate& tmpl) {
  return render_summarization_prompt(chunk.text(), tmpl);
}

}  // namespace lexchain
