#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <string>

#include "lexchain/chunking.hpp"
#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

using namespace lexchain;

namespace {

std::string words(std::size_t n, const std::string& w = "word") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += w;
  }
  return out;
}

/// Sentence of exactly `tokens` heuristic tokens (tokens must be a multiple of 4).
std::string sentence_of_tokens(std::size_t tokens, std::size_t tag) {
  const std::size_t n = tokens * 3 / 4;
  return "S" + std::to_string(tag) + " " + words(n - 1) + ".";
}

std::string first_sentence(const std::string& text) { return segment_sentences(text).front(); }

bool same_modulo_whitespace(const std::vector<std::string>& parts, const std::string& text) {
  std::string a, b;
  for (const auto& p : parts)
    for (char c : p)
      if (!std::isspace(static_cast<unsigned char>(c))) a += c;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) b += c;
  return a == b;
}

}  // namespace

TEST_CASE("segment_sentences canonical cases") {
  CHECK(segment_sentences("A. B? C!") == std::vector<std::string>{"A.", "B?", "C!"});
  CHECK(segment_sentences("No terminator here") == std::vector<std::string>{"No terminator here"});
  CHECK(segment_sentences("See Art. 6 § 1. Next sentence.") ==
        std::vector<std::string>{"See Art. 6 § 1.", "Next sentence."});
}

TEST_CASE("segment_sentences on a legal mini-corpus") {
  // Expected splits written by hand before settling the abbreviation list.
  struct Case {
    std::string text;
    std::vector<std::string> expected;
  };
  const std::vector<Case> cases = {
      {"The applicant relied on Art. 6 § 1 of the Convention. The Government contested that argument.",
       {"The applicant relied on Art. 6 § 1 of the Convention.",
        "The Government contested that argument."}},
      {"Application No. 12345/06 was lodged on 3 May 2006. It was communicated in 2008.",
       {"Application No. 12345/06 was lodged on 3 May 2006.", "It was communicated in 2008."}},
      {"See Miranda v. Arizona, 384 U.S. 436 (1966). The judgment was reversed.",
       {"See Miranda v. Arizona, 384 U.S. 436 (1966).", "The judgment was reversed."}},
      {"Mr. Smith testified. Dr. Jones did not.", {"Mr. Smith testified.", "Dr. Jones did not."}},
      {"The court cited paras. 12-14. Was that correct? \"No,\" said the Government.",
       {"The court cited paras. 12-14.", "Was that correct?", "\"No,\" said the Government."}},
      {"He said \"stop.\" Then he left.", {"He said \"stop.\"", "Then he left."}},
      {"Damages of 3.5 million were awarded. 2010 saw an appeal.",
       {"Damages of 3.5 million were awarded.", "2010 saw an appeal."}},
      {"the lower-case continuation. does not split here", {"the lower-case continuation. does not split here"}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.text);
    CHECK(segment_sentences(c.text) == c.expected);
  }
}

TEST_CASE("count_tokens") {
  WhitespaceCounter ws;
  CHECK(count_tokens("") == 0);
  CHECK(count_tokens("", ws) == 0);
  CHECK(count_tokens("one two three", ws) == 3);
  CHECK(count_tokens(words(512)) == 683);  // ceil(512 * 4 / 3)
  CHECK(count_tokens(words(3)) == 4);
  CHECK(count_tokens(words(1)) == 2);

  ReportedCounter reported([](std::string_view t) -> std::optional<std::size_t> {
    if (t == "magic") return 42;
    return std::nullopt;
  });
  CHECK(reported.count("magic") == 42);
  CHECK(reported.count("one two three") == 4);
}

TEST_CASE("property: counters are subadditive under a space join") {
  Rng rng(3);
  HeuristicCounter h;
  WhitespaceCounter w;
  for (int i = 0; i < 500; ++i) {
    const auto a = words(rng.below(40), "a");
    const auto b = words(rng.below(40), "b");
    for (const TokenCounter* c : {static_cast<const TokenCounter*>(&h), static_cast<const TokenCounter*>(&w)}) {
      CHECK(c->count(a + " " + b) <= c->count(a) + c->count(b) + c->join_overhead());
      CHECK(c->count(a) == c->count(a));
    }
  }
}

TEST_CASE("truncate_to_tokens") {
  const auto text = words(300);
  const auto cut = truncate_to_tokens(text, 128);
  CHECK(count_tokens(cut) <= 128);
  CHECK(count_tokens(cut + " word") > 128);
  CHECK(text.rfind(cut, 0) == 0);
  CHECK(truncate_to_tokens("short text", 128) == "short text");
}

TEST_CASE("pack_chunks examples") {
  TokenBudget budget;
  budget.context_window = 1024;
  budget.prompt_reserve = 24;

  std::vector<std::string> ten;
  for (std::size_t i = 0; i < 10; ++i) ten.push_back(sentence_of_tokens(100, i));
  REQUIRE(count_tokens(ten.front()) == 100);
  auto chunks = pack_chunks(ten, budget);
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].sentences.size() == 10);
  CHECK(chunks[0].token_count == 1000);

  std::vector<std::string> thirty;
  for (std::size_t i = 0; i < 30; ++i) thirty.push_back(sentence_of_tokens(100, i));
  chunks = pack_chunks(thirty, budget);
  REQUIRE(chunks.size() == 3);
  for (const auto& c : chunks) CHECK(c.sentences.size() == 10);

  TokenBudget wide;
  wide.context_window = 2048;
  chunks = pack_chunks({words(2250)}, wide);  // 3000 tokens
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].truncated);
  CHECK(chunks[0].token_count <= wide.chunk_capacity());
}

TEST_CASE("property: pack_chunks preserves order and respects the budget") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    TokenBudget budget;
    budget.context_window = 64 + rng.below(512);
    budget.prompt_reserve = 24;
    budget.summary_target = 32;
    std::vector<std::string> sentences;
    const std::size_t n = 1 + rng.below(80);
    for (std::size_t i = 0; i < n; ++i) sentences.push_back("T" + std::to_string(i) + " " + words(rng.below(60)));
    const auto chunks = pack_chunks(sentences, budget);
    std::vector<std::string> flat;
    for (const auto& c : chunks) {
      CHECK_FALSE(c.sentences.empty());
      CHECK(c.token_count <= budget.chunk_capacity());
      CHECK(c.token_count == count_tokens(c.text()));
      for (const auto& s : c.sentences) flat.push_back(s);
    }
    REQUIRE(flat.size() == sentences.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool truncated_single = std::any_of(chunks.begin(), chunks.end(), [&](const Chunk& c) {
        return c.truncated && c.sentences.front() == flat[i];
      });
      if (truncated_single) {
        CHECK(sentences[i].rfind(flat[i], 0) == 0);
      } else {
        CHECK(flat[i] == sentences[i]);
      }
    }
  }
}

TEST_CASE("property: segmentation round-trips modulo whitespace") {
  Rng rng(5);
  const std::vector<std::string> pieces = {"The", "Court", "Art.", "No.", "v.", "6", "§", "1.",
                                           "held", "that", "it.", "Why?", "Stop!", "U.S.", "2.5", "(a)"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) text += rng.below(5) == 0 ? "  \n" : " ";
      text += pieces[rng.below(pieces.size())];
    }
    const auto sentences = segment_sentences(text);
    CHECK(same_modulo_whitespace(sentences, text));
    for (const auto& s : sentences) {
      CHECK_FALSE(s.empty());
      CHECK(s == std::string(trim(s)));
    }
  }
}

TEST_CASE("iterative_summarize base case") {
  TokenBudget budget;
  const std::string text = "The applicant complained about the length of the proceedings.";
  std::size_t calls = 0;
  const auto summary = iterative_summarize(
      "d1", text, [&](const std::string& chunk) { ++calls; return first_sentence(chunk); }, budget);
  CHECK(summary.text == text);
  CHECK(summary.rounds == 1);
  CHECK(calls == 1);
  CHECK_FALSE(summary.truncated);
}

TEST_CASE("iterative_summarize converges on a 5000-token document") {
  // Trace frozen from tests/oracles/summarize_trace_oracle.py.
  std::string doc;
  for (int i = 0; i < 125; ++i) {
    if (i) doc += ' ';
    doc += "Paragraph " + std::to_string(i) + " " + words(27, "filler") + " end.";
  }
  REQUIRE(count_tokens(doc) == 5000);
  TokenBudget budget;
  budget.context_window = 1024;
  const auto summary = iterative_summarize("long", doc, first_sentence, budget);
  CHECK(summary.rounds == 2);
  CHECK(summary.rounds <= 3);
  CHECK(summary.token_count == 40);
  CHECK(summary.token_count <= 128);
  CHECK(summary.text.rfind("Paragraph 0 filler", 0) == 0);
  CHECK_FALSE(summary.truncated);
}

TEST_CASE("iterative_summarize with an echo summarizer hits max_rounds") {
  TokenBudget budget;
  budget.context_window = 1024;
  std::atomic<std::size_t> calls{0};
  const auto summary = iterative_summarize(
      "echo", words(1000) + ".", [&](const std::string& c) { ++calls; return c; }, budget,
      default_counter(), 4);
  CHECK(summary.rounds == budget.max_rounds);
  CHECK(summary.truncated);
  CHECK(summary.token_count <= 128);
  CHECK(calls.load() > 0);
}

TEST_CASE("iterative_summarize attaches round and chunk to backend errors") {
  TokenBudget budget;
  budget.context_window = 1024;
  std::string doc;
  for (int i = 0; i < 125; ++i) doc += "Paragraph " + std::to_string(i) + " " + words(27) + " end. ";
  int call = 0;
  try {
    iterative_summarize(
        "d", doc,
        [&](const std::string& c) -> std::string {
          if (++call == 3) throw TransportError("connection refused");
          return first_sentence(c);
        },
        budget);
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(std::string(e.what()).find("round 1, chunk 2") != std::string::npos);
  }
}

TEST_CASE("TokenBudget validation") {
  TokenBudget b;
  b.summary_target = b.context_window;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  TokenBudget c;
  c.max_rounds = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
