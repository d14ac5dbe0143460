#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lexchain/chunking.hpp"
#include "lexchain/corpus.hpp"
#include "lexchain/index.hpp"

namespace lexchain {

/// Text with {input}, {exemplars}, {options} and {target} placeholders.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string body);

  const std::string& name() const { return name_; }
  const std::string& body() const { return body_; }
  /// Distinct placeholder names in order of first appearance.
  const std::vector<std::string>& placeholders() const { return placeholders_; }
  bool uses(const std::string& placeholder) const;

  /// Throws TemplateError when a placeholder in the body has no value.
  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  std::string name_;
  std::string body_;
  std::vector<std::string> placeholders_;
};

/// Templates keyed by name. File format: a line "[name]" starts a template,
/// the following lines up to the next header are its body (the newline
/// before the next header is not part of the body). Lines starting with
/// "#" before the first header are comments.
class TemplateLibrary {
 public:
  static TemplateLibrary builtin();
  static TemplateLibrary from_file(const std::filesystem::path& path);
  static TemplateLibrary parse(const std::string& text);

  const PromptTemplate& get(const std::string& name) const;
  void add(PromptTemplate t);
  std::vector<std::string> names() const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

struct ExemplarUse {
  std::string doc_id;
  LabelId label;
  double similarity = 0.0;
};

struct PromptBundle {
  std::string text;
  /// In rendered order (most similar last).
  std::vector<ExemplarUse> exemplars_used;
  std::vector<LabelId> options;
  std::size_t token_count = 0;
  std::size_t dropped_exemplars = 0;
};

nlohmann::json bundle_to_json(const PromptBundle& bundle);

/// A retrieved neighbor together with its training summary.
struct Exemplar {
  NeighborHit hit;
  std::string summary;
};

/// Tokens held back for the label completion.
inline constexpr std::size_t kGenerationReserve = 16;
inline constexpr std::size_t kMaxExemplars = 8;

/// Multiclass: distinct neighbor labels by descending count, ties by first
/// occurrence. Binary: every label of the space, in space order.
std::vector<LabelId> restrict_labels(const std::vector<NeighborHit>& neighbors,
                                     const LabelSpace& space);

/// Renders exemplars least-similar first so the nearest one sits next to the
/// target. Exemplars are dropped from the front until the prompt fits
/// budget.context_window minus kGenerationReserve.
/// `neighbors` must be ordered by descending similarity, as query returns them.
PromptBundle build_fewshot(const Summary& target, const std::vector<Exemplar>& neighbors,
                           const LabelSpace& space, const PromptTemplate& tmpl,
                           const TokenBudget& budget,
                           const TokenCounter& counter = default_counter());

std::string render_summarization_prompt(const Chunk& chunk, const PromptTemplate& tmpl);
std::string render_summarization_prompt(const std::string& chunk_text, const PromptTemplate& tmpl);

}  // namespace lexchain
