#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lexchain/backend.hpp"
#include "lexchain/chunking.hpp"
#include "lexchain/corpus.hpp"
#include "lexchain/index.hpp"
#include "lexchain/prompting.hpp"

namespace lexchain {

struct SelfConsistency {
  std::size_t samples = 5;
  double temperature = 0.7;
  std::uint64_t seed = 0;
};

using ChainDecoding = std::variant<GreedyDecoding, SelfConsistency>;

struct ChainConfig {
  std::size_t k_neighbors = 8;
  TokenBudget summary_budget;
  ChainDecoding decoding = GreedyDecoding{};
  /// Size of the prompt-development subset drawn from a dev split.
  std::size_t dev_sample_size = 40;
  std::size_t max_new_tokens = kGenerationReserve;
  /// Batch failure fraction above which the run counts as failed.
  double failure_threshold = 0.01;
  std::size_t workers = 4;

  void validate() const;
};

/// A document as the prompt path sees it: the gold label is not carried.
struct BlindDocument {
  std::string id;
  std::string text;
};

BlindDocument blind(const Document& doc);

struct Prediction {
  std::string doc_id;
  LabelId label;
  /// Present for self-consistency decoding only.
  std::optional<std::map<LabelId, std::size_t>> votes;
  bool parse_fallback = false;
  PromptBundle bundle;
  /// Raw generations, one per sample.
  std::vector<std::string> generations;
  /// Where the audit bundle was written (empty when auditing is off).
  std::string audit_path;
};

/// Persistent per-stage results keyed by content hash, so interrupted runs
/// resume without repeating backend calls.
class StageCache {
 public:
  explicit StageCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<nlohmann::json> get(const std::string& stage, const std::string& key) const;
  void put(const std::string& stage, const std::string& key, const nlohmann::json& value) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& stage, const std::string& key) const;
  std::filesystem::path dir_;
};

using SummaryMap = std::map<std::string, Summary, std::less<>>;

struct Backends {
  Backend& summarizer;
  Backend& embedder;
  Backend& generator;
};

/// Everything classify needs besides the document. All read-only.
struct ChainResources {
  const EmbeddingIndex& train_index;
  const SummaryMap& train_summaries;
  const LabelSpace& space;
  const PromptTemplate& classify_template;
  Backends backends;
  /// Summarization prompt template; nullptr sends chunks to the summarizer raw.
  const PromptTemplate* summarize_template = nullptr;
  /// Precomputed target summaries; documents not found here are summarized.
  const SummaryMap* target_summaries = nullptr;
  const StageCache* cache = nullptr;
  /// Audit bundles are written here when non-empty.
  std::filesystem::path audit_dir;
};

/// Summarize with caching; shared by the chain and the summarize command.
Summary summarize_document(const BlindDocument& doc, Backend& summarizer,
                           const TokenBudget& budget, const PromptTemplate* tmpl,
                           const StageCache* cache, std::size_t workers = 1);

EmbeddingVector embed_summary(const Summary& summary, Backend& embedder, const StageCache* cache);

/// summarize -> embed -> query -> restrict labels -> few-shot prompt ->
/// generate -> parse (-> vote). Stage failures surface as StageError.
Prediction classify(const Document& doc, const ChainResources& res, const ChainConfig& cfg);
Prediction classify(const BlindDocument& doc, const ChainResources& res, const ChainConfig& cfg);

struct ParsedLabel {
  LabelId label;
  bool fallback = false;
};

/// Normalizes the generation (trim, lowercase, drop punctuation). An exact
/// option match wins; otherwise the option occurring earliest as a
/// whole-word span; otherwise the nearest neighbor's label with fallback set.
ParsedLabel parse_label(std::string_view generated, const std::vector<LabelId>& options,
                        const LabelId& nearest_neighbor_label);

/// Most frequent label. Ties go to the nearest neighbor's label when it is
/// tied, else to the tied label generated first.
LabelId self_consistency_vote(const std::vector<LabelId>& labels,
                              const LabelId& nearest_neighbor_label);

struct BatchFailure {
  std::string doc_id;
  std::string stage;
  std::string message;
};

struct BatchResult {
  std::vector<Prediction> predictions;  // corpus order
  std::vector<BatchFailure> failures;   // corpus order
  std::size_t attempted = 0;

  double failure_fraction() const;
  bool breached(double threshold) const { return failure_fraction() > threshold; }
};

/// Reproducible subset of `n` documents drawn with `seed`, kept in corpus order.
std::vector<const Document*> sample_documents(const std::vector<const Document*>& docs,
                                              std::size_t n, std::uint64_t seed);

BatchResult run_batch(const std::vector<const Document*>& docs, const ChainResources& res,
                      const ChainConfig& cfg);
BatchResult run_batch(const Corpus& corpus, Split split, const ChainResources& res,
                      const ChainConfig& cfg);

/// JSON Lines {doc_id, label, votes?, fallback}.
void write_prediction_line(std::ostream& out, const Prediction& p);

struct PredictionRecord {
  std::string doc_id;
  LabelId label;
  bool fallback = false;
};

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace lexchain
