#include "lexchain/chunking.hpp"

#include <array>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

std::size_t WhitespaceCounter::count(std::string_view text) const {
  return split_whitespace(text).size();
}

std::size_t HeuristicCounter::count(std::string_view text) const {
  const std::size_t words = split_whitespace(text).size();
  return (words * 4 + 2) / 3;
}

std::size_t ReportedCounter::count(std::string_view text) const {
  if (probe_) {
    if (auto reported = probe_(text)) return *reported;
  }
  return fallback_.count(text);
}

const TokenCounter& default_counter() {
  static const HeuristicCounter counter;
  return counter;
}

std::size_t count_tokens(std::string_view text, const TokenCounter& counter) {
  return counter.count(text);
}

std::string truncate_to_tokens(std::string_view text, std::size_t max_tokens,
                               const TokenCounter& counter) {
  text = trim(text);
  if (counter.count(text) <= max_tokens) return std::string(text);
  const auto words = split_whitespace(text);
  auto prefix = [&](std::size_t n) -> std::string_view {
    if (n == 0) return {};
    const char* end = words[n - 1].data() + words[n - 1].size();
    return text.substr(0, static_cast<std::size_t>(end - text.data()));
  };
  // Largest n with count(prefix(n)) <= max_tokens, assuming monotone counts.
  std::size_t lo = 0;
  std::size_t hi = words.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (counter.count(prefix(mid)) <= max_tokens) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  while (lo > 0 && counter.count(prefix(lo)) > max_tokens) --lo;
  return std::string(prefix(lo));
}

void TokenBudget::validate() const {
  if (context_window == 0) throw ConfigError("context_window must be positive");
  if (summary_target == 0 || summary_target >= context_window)
    throw ConfigError("summary_target must be positive and below context_window");
  if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
  if (prompt_reserve >= context_window)
    throw ConfigError("prompt_reserve must be below context_window");
}

std::string Chunk::text() const { return join(sentences, " "); }

namespace {

constexpr std::array kAbbreviations = {
    "Art.",  "Arts.", "art.",  "arts.", "No.",  "Nos.",  "no.",  "nos.",  "v.",    "vs.",
    "§",     "§§",    "Mr.",   "Mrs.",  "Ms.",  "Dr.",   "Prof.", "St.",  "Jr.",   "Sr.",
    "U.S.",  "U.K.",  "e.g.",  "i.e.",  "cf.",  "Cf.",   "para.", "paras.", "Para.", "p.",
    "pp.",   "Vol.",  "vol.",  "Ltd.",  "Inc.", "Co.",   "Corp.", "Ct.",   "S.Ct.", "Cir.",
    "Sec.",  "sec.",  "ch.",   "cl.",   "seq.", "al.",   "App.",  "Rev.",  "Stat.", "Supp.",
    "Fed.",  "Reg.",  "Dept.", "Gov.",  "Nr.",  "op.",   "cit.",  "ibid.", "Id.",   "id."};

bool is_abbreviation(std::string_view token) {
  while (!token.empty() && (token.front() == '(' || token.front() == '"' || token.front() == '\''))
    token.remove_prefix(1);
  for (std::string_view abbr : kAbbreviations) {
    if (token == abbr) return true;
  }
  return false;
}

bool is_terminator(char c) { return c == '.' || c == '?' || c == '!'; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool starts_sentence(std::string_view rest) {
  std::size_t i = 0;
  while (i < rest.size() && (rest[i] == '"' || rest[i] == '\'' || rest[i] == '(')) ++i;
  if (i == rest.size()) return false;
  const auto c = static_cast<unsigned char>(rest[i]);
  // Non-ASCII leading bytes (e.g. accented capitals, "§") count as a start.
  return std::isupper(c) || std::isdigit(c) || c >= 0x80;
}

}  // namespace

std::vector<std::string> segment_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < text.size() && is_terminator(text[end])) ++end;
    while (end < text.size() && is_closer(text[end])) ++end;
    if (end == text.size()) break;
    if (!is_space(text[end])) {
      i = end;
      continue;
    }
    std::size_t next = end;
    while (next < text.size() && is_space(text[next])) ++next;

    bool boundary = next == text.size() || starts_sentence(text.substr(next));
    if (boundary && text[i] == '.' && end == i + 1) {
      std::size_t word_start = i;
      while (word_start > start && !is_space(text[word_start - 1])) --word_start;
      if (is_abbreviation(text.substr(word_start, end - word_start))) boundary = false;
    }
    if (boundary) {
      auto sentence = trim(text.substr(start, end - start));
      if (!sentence.empty()) out.emplace_back(sentence);
      start = next;
    }
    i = next;
  }
  auto tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

std::vector<Chunk> pack_chunks(const std::vector<std::string>& sentences,
                               const TokenBudget& budget, const TokenCounter& counter) {
  const std::size_t capacity = budget.chunk_capacity();
  std::vector<Chunk> chunks;
  Chunk current;
  std::string current_text;

  auto flush = [&] {
    if (current.sentences.empty()) return;
    chunks.push_back(std::move(current));
    current = Chunk{};
    current_text.clear();
  };

  for (const auto& sentence : sentences) {
    const std::size_t alone = counter.count(sentence);
    if (alone > capacity) {
      flush();
      Chunk oversize;
      oversize.sentences.push_back(truncate_to_tokens(sentence, capacity, counter));
      oversize.token_count = counter.count(oversize.sentences.front());
      oversize.truncated = true;
      chunks.push_back(std::move(oversize));
      continue;
    }
    std::string candidate = current_text.empty() ? sentence : current_text + " " + sentence;
    const std::size_t tokens = counter.count(candidate);
    if (!current.sentences.empty() && tokens > capacity) {
      flush();
      candidate = sentence;
      current.token_count = alone;
    } else {
      current.token_count = tokens;
    }
    current.sentences.push_back(sentence);
    current_text = std::move(candidate);
  }
  flush();
  return chunks;
}

Summary iterative_summarize(const std::string& doc_id, const std::string& text,
                            const ChunkSummarizer& summarizer, const TokenBudget& budget,
                            const TokenCounter& counter, std::size_t workers) {
  budget.validate();
  if (trim(text).empty()) throw PreconditionError("document '" + doc_id + "' has empty text");

  Summary summary;
  summary.doc_id = doc_id;
  std::string current(trim(text));
  for (std::size_t round = 1; round <= budget.max_rounds; ++round) {
    auto chunks = pack_chunks(segment_sentences(current), budget, counter);
    std::vector<std::string> pieces(chunks.size());
    parallel_for(chunks.size(), workers, [&](std::size_t c) {
      try {
        pieces[c] = std::string(trim(summarizer(chunks[c].text())));
      } catch (BackendError& e) {
        e.add_context("round " + std::to_string(round) + ", chunk " + std::to_string(c));
        throw;
      }
    });
    std::vector<std::string> kept;
    for (auto& p : pieces) {
      if (!p.empty()) kept.push_back(std::move(p));
    }
    if (!kept.empty()) current = join(kept, " ");
    summary.rounds = round;
    if (counter.count(current) <= budget.summary_target) {
      summary.text = current;
      summary.token_count = counter.count(current);
      return summary;
    }
  }
  summary.text = truncate_to_tokens(current, budget.summary_target, counter);
  if (summary.text.empty()) {
    // A single word can exceed the target under exotic counters; keep it anyway.
    summary.text = std::string(split_whitespace(current).front());
  }
  summary.token_count = counter.count(summary.text);
  summary.truncated = true;
  return summary;
}

Summary iterative_summarize(const Document& doc, const ChunkSummarizer& summarizer,
                            const TokenBudget& budget, const TokenCounter& counter,
                            std::size_t workers) {
  return iterative_summarize(doc.id, doc.text, summarizer, budget, counter, workers);
}

void write_summary_line(std::ostream& out, const Summary& summary, std::optional<Split> split) {
  nlohmann::ordered_json j = {{"doc_id", summary.doc_id},
                              {"text", summary.text},
                              {"token_count", summary.token_count},
                              {"rounds", summary.rounds},
                              {"truncated", summary.truncated}};
  if (split) j["split"] = std::string(to_string(*split));
  out << j.dump() << '\n';
}

std::vector<SummaryRecord> read_summaries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open summaries file " + path.string());
  std::vector<SummaryRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SummaryRecord rec;
      rec.summary.doc_id = j.at("doc_id").get<std::string>();
      rec.summary.text = j.at("text").get<std::string>();
      rec.summary.token_count = j.at("token_count").get<std::size_t>();
      rec.summary.rounds = j.at("rounds").get<std::size_t>();
      rec.summary.truncated = j.value("truncated", false);
      if (j.contains("split")) {
        rec.split = parse_split(j.at("split").get<std::string>());
        if (!rec.split) throw ParseError(line_no, "unknown split in summaries file");
      }
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lexchain
