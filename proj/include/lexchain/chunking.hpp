#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lexchain/corpus.hpp"

namespace lexchain {

/// Strategy for estimating how many model tokens a text occupies.
class TokenCounter {
 public:
  virtual ~TokenCounter() = default;
  virtual std::size_t count(std::string_view text) const = 0;
  /// Upper bound on count(a + " " + b) - count(a) - count(b).
  virtual std::size_t join_overhead() const { return 0; }
  virtual std::string name() const = 0;
};

/// One token per whitespace-separated word.
class WhitespaceCounter final : public TokenCounter {
 public:
  std::size_t count(std::string_view text) const override;
  std::string name() const override { return "whitespace"; }
};

/// ceil(words * 4 / 3): the usual subword inflation for English text.
class HeuristicCounter final : public TokenCounter {
 public:
  std::size_t count(std::string_view text) const override;
  std::string name() const override { return "heuristic"; }
};

/// Uses counts reported by an inference service when available and falls
/// back to the heuristic otherwise.
class ReportedCounter final : public TokenCounter {
 public:
  using Probe = std::function<std::optional<std::size_t>(std::string_view)>;
  explicit ReportedCounter(Probe probe) : probe_(std::move(probe)) {}
  std::size_t count(std::string_view text) const override;
  std::string name() const override { return "reported"; }

 private:
  Probe probe_;
  HeuristicCounter fallback_;
};

const TokenCounter& default_counter();

std::size_t count_tokens(std::string_view text, const TokenCounter& counter = default_counter());

/// Longest word-boundary prefix of `text` whose count is <= max_tokens.
std::string truncate_to_tokens(std::string_view text, std::size_t max_tokens,
                               const TokenCounter& counter = default_counter());

struct TokenBudget {
  std::size_t context_window = 2048;
  std::size_t summary_target = 128;
  std::size_t max_rounds = 8;
  /// Held back from the window for the summarization instruction.
  std::size_t prompt_reserve = 24;

  std::size_t chunk_capacity() const { return context_window - prompt_reserve; }
  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

struct Chunk {
  std::vector<std::string> sentences;
  std::size_t token_count = 0;
  /// Set when a single sentence exceeded the capacity and was cut.
  bool truncated = false;

  std::string text() const;
};

struct Summary {
  std::string doc_id;
  std::string text;
  std::size_t token_count = 0;
  std::size_t rounds = 0;
  /// Budget reached through the max_rounds hard-truncation fallback.
  bool truncated = false;
};

/// Splits on . ? ! followed by whitespace and an uppercase letter or digit,
/// except after known abbreviations (Art., No., v., U.S., ...).
std::vector<std::string> segment_sentences(std::string_view text);

/// Greedy in-order packing into chunks of at most budget.chunk_capacity() tokens.
std::vector<Chunk> pack_chunks(const std::vector<std::string>& sentences,
                               const TokenBudget& budget,
                               const TokenCounter& counter = default_counter());

using ChunkSummarizer = std::function<std::string(const std::string& chunk_text)>;

/// Summarize chunks, join the chunk summaries, repeat until the text fits
/// summary_target or max_rounds passes were made (then hard-truncate).
/// BackendErrors are rethrown with the round and chunk index attached.
Summary iterative_summarize(const std::string& doc_id, const std::string& text,
                            const ChunkSummarizer& summarizer, const TokenBudget& budget,
                            const TokenCounter& counter = default_counter(),
                            std::size_t workers = 1);

Summary iterative_summarize(const Document& doc, const ChunkSummarizer& summarizer,
                            const TokenBudget& budget,
                            const TokenCounter& counter = default_counter(),
                            std::size_t workers = 1);

/// JSON Lines {doc_id, text, token_count, rounds, truncated[, split]}.
void write_summary_line(std::ostream& out, const Summary& summary,
                        std::optional<Split> split = std::nullopt);

struct SummaryRecord {
  Summary summary;
  std::optional<Split> split;
};

std::vector<SummaryRecord> read_summaries(const std::filesystem::path& path);

}  // namespace lexchain
