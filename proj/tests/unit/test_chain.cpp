#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lexchain/chain.hpp"
#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

using namespace lexchain;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lexchain_chain_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::unique_ptr<Backend> stub(BackendKind kind, const std::string& endpoint = "stub") {
  auto d = default_descriptor(kind);
  d.endpoint = endpoint;
  return make_backend(d);
}

/// Summaries, vectors and index for the training split, built through the
/// same calls the command line uses.
struct Fixture {
  Corpus corpus;
  std::unique_ptr<Backend> summarizer = stub(BackendKind::summarize);
  std::unique_ptr<Backend> embedder = stub(BackendKind::embed);
  std::unique_ptr<Backend> generator;
  SummaryMap train_summaries;
  std::optional<EmbeddingIndex> index;
  PromptTemplate classify_template = TemplateLibrary::builtin().get("classify_fewshot");
  ChainConfig cfg;

  explicit Fixture(Corpus c, const std::string& generator_endpoint = "stub", IndexMode mode = ExactMode{})
      : corpus(std::move(c)), generator(stub(BackendKind::generate, generator_endpoint)) {
    std::vector<IndexEntry> entries;
    for (const auto* d : corpus.split(Split::train)) {
      auto s = summarize_document(blind(*d), *summarizer, cfg.summary_budget, nullptr, nullptr);
      entries.push_back({d->id, embed_summary(s, *embedder, nullptr), d->gold});
      train_summaries.emplace(d->id, std::move(s));
    }
    index = EmbeddingIndex::build(std::move(entries), mode);
  }

  ChainResources resources(const std::filesystem::path& audit = {}) const {
    return ChainResources{*index,  train_summaries, corpus.label_space(), classify_template,
                          Backends{*summarizer, *embedder, *generator},
                          nullptr, nullptr, nullptr, audit};
  }
};

Document doc(std::string id, std::string text, const char* label, Split split) {
  Document d;
  d.id = std::move(id);
  d.text = std::move(text);
  d.gold = LabelId(label);
  d.split = split;
  return d;
}

/// Eight training cases close to "dev-1" (6 YES, 2 NO) and ten unrelated NO cases.
Corpus neighbourhood_corpus() {
  std::vector<Document> docs;
  const char* near_labels[] = {"YES", "NO", "YES", "YES", "NO", "YES", "YES", "YES"};
  for (int i = 0; i < 8; ++i)
    docs.push_back(doc("near-" + std::to_string(i),
                       "Detention review delayed applicant " + std::to_string(i) + ". Later details follow.",
                       near_labels[i], Split::train));
  for (int i = 0; i < 10; ++i)
    docs.push_back(doc("far-" + std::to_string(i), "Pension taxation dispute " + std::to_string(100 + i) + ".",
                       "NO", Split::train));
  docs.push_back(doc("dev-1", "Detention review delayed applicant. Other material.", "NO", Split::dev));
  return Corpus(LabelSpace::echr(), std::move(docs));
}

/// Synthetic corpus where each label owns a vocabulary.
Corpus synthetic_corpus(std::size_t train, std::size_t dev, std::uint64_t seed) {
  const std::vector<std::string> yes_words = {"violation", "detention", "torture", "delay", "unfair"};
  const std::vector<std::string> no_words = {"inadmissible", "remedy", "manifestly", "struck", "domestic"};
  Rng rng(seed);
  std::vector<Document> docs;
  auto make = [&](const std::string& id, Split split) {
    const bool yes = rng.below(10) < 7;
    const auto& vocab = yes ? yes_words : no_words;
    std::string text = "Case " + id;
    for (int w = 0; w < 12; ++w) text += " " + vocab[rng.below(vocab.size())];
    text += ". The court considered the file.";
    docs.push_back(doc(id, text, yes ? "YES" : "NO", split));
  };
  for (std::size_t i = 0; i < train; ++i) make("t" + std::to_string(i), Split::train);
  for (std::size_t i = 0; i < dev; ++i) make("d" + std::to_string(i), Split::dev);
  return Corpus(LabelSpace::echr(), std::move(docs));
}

std::vector<LabelId> ids(std::initializer_list<const char*> names) {
  std::vector<LabelId> out;
  for (const char* n : names) out.emplace_back(n);
  return out;
}

}  // namespace

TEST_CASE("parse_label") {
  const auto yn = ids({"YES", "NO"});
  CHECK(parse_label("YES", yn, LabelId("NO")).label == LabelId("YES"));
  CHECK_FALSE(parse_label("YES", yn, LabelId("NO")).fallback);
  CHECK(parse_label(" no.\n", yn, LabelId("YES")).label == LabelId("NO"));

  const auto scotus = LabelSpace::scotus().labels();
  const auto p = parse_label(" civil rights.\n", scotus, LabelId("Unions"));
  CHECK(p.label == LabelId("Civil Rights"));
  CHECK_FALSE(p.fallback);

  const auto fb = parse_label("I cannot determine this", ids({"A", "B"}), LabelId("B"));
  CHECK(fb.label == LabelId("B"));
  CHECK(fb.fallback);

  // Chatty output: the earliest whole-word mention wins.
  CHECK(parse_label("The answer is NO, not yes", yn, LabelId("YES")).label == LabelId("NO"));
  // A word that merely contains an option does not count.
  CHECK(parse_label("nothing", yn, LabelId("YES")).fallback);
  // Longer option preferred when two start at the same word.
  CHECK(parse_label("first amendment issues", ids({"First", "First Amendment"}), LabelId("First")).label ==
        LabelId("First Amendment"));
}

TEST_CASE("self_consistency_vote") {
  CHECK(self_consistency_vote(ids({"A", "A", "B"}), LabelId("B")) == LabelId("A"));
  CHECK(self_consistency_vote(ids({"A", "B"}), LabelId("B")) == LabelId("B"));
  CHECK(self_consistency_vote(ids({"A", "B", "B", "A", "C"}), LabelId("C")) == LabelId("A"));
  CHECK(self_consistency_vote(ids({"B", "A", "B", "A"}), LabelId("Z")) == LabelId("B"));
  CHECK_THROWS_AS(self_consistency_vote(ids({"A"}), LabelId("A")), PreconditionError);
  CHECK_THROWS_AS(self_consistency_vote(std::vector<LabelId>(11, LabelId("A")), LabelId("A")), PreconditionError);
}

TEST_CASE("property: the vote is a most frequent member of the input") {
  Rng rng(8);
  const auto pool = ids({"A", "B", "C", "D"});
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<LabelId> labels;
    const std::size_t n = 2 + rng.below(9);
    for (std::size_t i = 0; i < n; ++i) labels.push_back(pool[rng.below(pool.size())]);
    const auto nearest = pool[rng.below(pool.size())];
    const auto v = self_consistency_vote(labels, nearest);
    const auto count = [&](const LabelId& l) { return std::count(labels.begin(), labels.end(), l); };
    CHECK(count(v) > 0);
    for (const auto& l : labels) CHECK(count(v) >= count(l));
  }
}

TEST_CASE("classify: 6 YES / 2 NO neighbourhood predicts YES") {
  Fixture f(neighbourhood_corpus());
  const auto res = f.resources();
  const auto& target = *f.corpus.find("dev-1");
  const auto pred = classify(target, res, f.cfg);
  CHECK(pred.label == LabelId("YES"));
  CHECK_FALSE(pred.parse_fallback);
  REQUIRE(pred.bundle.exemplars_used.size() == 8);
  std::size_t yes = 0;
  for (const auto& e : pred.bundle.exemplars_used) {
    CHECK(e.doc_id.rfind("near-", 0) == 0);
    yes += e.label == LabelId("YES");
  }
  CHECK(yes == 6);
  CHECK(pred.bundle.options == ids({"YES", "NO"}));
  CHECK_FALSE(pred.votes);
}

TEST_CASE("classify: the gold label of the target is never consulted") {
  Fixture f(neighbourhood_corpus());
  const auto res = f.resources();
  Document relabelled = *f.corpus.find("dev-1");
  const auto a = classify(relabelled, res, f.cfg);
  relabelled.gold = LabelId("YES");
  const auto b = classify(relabelled, res, f.cfg);
  CHECK(a.label == b.label);
  CHECK(a.bundle.text == b.bundle.text);
  CHECK(a.bundle.text.find("dev-1") == std::string::npos);
}

TEST_CASE("classify: self-retrieval is refused") {
  Fixture f(neighbourhood_corpus());
  CHECK_THROWS_AS(classify(*f.corpus.find("near-0"), f.resources(), f.cfg), PreconditionError);
}

TEST_CASE("classify: a one-document training set still works") {
  Fixture f(Corpus(LabelSpace::echr(), {doc("t", "Only training case.", "NO", Split::train),
                                        doc("d", "Target case.", "YES", Split::dev)}));
  const auto pred = classify(*f.corpus.find("d"), f.resources(), f.cfg);
  CHECK(pred.bundle.exemplars_used.size() == 1);
  CHECK(pred.label == LabelId("NO"));
}

TEST_CASE("classify: self-consistency") {
  Fixture f(neighbourhood_corpus());
  f.cfg.decoding = SelfConsistency{5, 0.7, 11};
  const auto res = f.resources();
  const auto pred = classify(*f.corpus.find("dev-1"), res, f.cfg);
  REQUIRE(pred.votes);
  REQUIRE(pred.generations.size() == 5);
  std::size_t total = 0;
  for (const auto& [label, n] : *pred.votes) total += n;
  CHECK(total == 5);
  const auto again = classify(*f.corpus.find("dev-1"), res, f.cfg);
  CHECK(again.generations == pred.generations);
  CHECK(again.label == pred.label);

  SUBCASE("unanimous neighbours make sampling equal greedy") {
    Fixture g(synthetic_corpus(1, 5, 3));
    g.cfg.decoding = SelfConsistency{5, 0.7, 1};
    ChainConfig greedy = g.cfg;
    greedy.decoding = GreedyDecoding{};
    const auto res2 = g.resources();
    for (const auto* d : g.corpus.split(Split::dev)) {
      const auto sc = classify(*d, res2, g.cfg);
      CHECK(sc.votes->size() == 1);
      CHECK(sc.label == classify(*d, res2, greedy).label);
    }
  }
}

TEST_CASE("classify: refusing generator falls back to the nearest label") {
  Fixture f(neighbourhood_corpus(), "stub:refuse");
  const auto pred = classify(*f.corpus.find("dev-1"), f.resources(), f.cfg);
  CHECK(pred.parse_fallback);
  // The nearest exemplar is rendered last.
  CHECK(pred.label == pred.bundle.exemplars_used.back().label);
}

TEST_CASE("classify writes an audit bundle") {
  Fixture f(neighbourhood_corpus());
  const auto dir = scratch("audit");
  const auto pred = classify(*f.corpus.find("dev-1"), f.resources(dir), f.cfg);
  REQUIRE_FALSE(pred.audit_path.empty());
  std::ifstream in(pred.audit_path);
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("doc_id") == "dev-1");
  CHECK(j.at("label") == "YES");
  CHECK(j.at("text") == pred.bundle.text);
  CHECK(j.at("exemplars_used").size() == 8);
}

TEST_CASE("stage cache avoids repeated backend calls") {
  const auto dir = scratch("cache");
  StageCache cache(dir);
  auto summarizer = stub(BackendKind::summarize);
  auto embedder = stub(BackendKind::embed);
  const BlindDocument d{"x", "First sentence here. Second one."};
  TokenBudget budget;
  const auto s1 = summarize_document(d, *summarizer, budget, nullptr, &cache);
  const auto v1 = embed_summary(s1, *embedder, &cache);
  const auto calls = summarizer->calls() + embedder->calls();
  const auto s2 = summarize_document(d, *summarizer, budget, nullptr, &cache);
  const auto v2 = embed_summary(s2, *embedder, &cache);
  CHECK(summarizer->calls() + embedder->calls() == calls);
  CHECK(s1.text == s2.text);
  CHECK(v1 == v2);
  CHECK(cache.get("nothing", "here") == std::nullopt);
}

TEST_CASE("run_batch is deterministic and ordered") {
  Fixture f(synthetic_corpus(60, 10, 5), "stub", ForestMode{10, 8, 3});
  f.cfg.workers = 4;
  const auto res = f.resources();
  const auto a = run_batch(f.corpus, Split::dev, res, f.cfg);
  const auto b = run_batch(f.corpus, Split::dev, res, f.cfg);
  CHECK(a.attempted == 10);
  CHECK(a.failures.empty());
  REQUIRE(a.predictions.size() == 10);
  const auto dev = f.corpus.split(Split::dev);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(a.predictions[i].doc_id == dev[i]->id);
    CHECK(a.predictions[i].label == b.predictions[i].label);
    CHECK(a.predictions[i].bundle.text == b.predictions[i].bundle.text);
  }
  CHECK_FALSE(a.breached(f.cfg.failure_threshold));

  std::ostringstream out;
  for (const auto& p : a.predictions) write_prediction_line(out, p);
  const auto dir = scratch("preds");
  {
    std::ofstream file(dir / "p.jsonl");
    file << out.str();
  }
  const auto back = read_predictions(dir / "p.jsonl");
  REQUIRE(back.size() == 10);
  CHECK(back[3].doc_id == a.predictions[3].doc_id);
  CHECK(back[3].label == a.predictions[3].label);
}

TEST_CASE("run_batch with a downed generator reports every document") {
  Fixture f(synthetic_corpus(20, 6, 9), "stub:down");
  const auto result = run_batch(f.corpus, Split::dev, f.resources(), f.cfg);
  CHECK(result.predictions.empty());
  REQUIRE(result.failures.size() == 6);
  for (const auto& failure : result.failures) {
    CHECK(failure.stage == "generate");
    CHECK(failure.message.find("transport") != std::string::npos);
  }
  CHECK(result.failure_fraction() == 1.0);
  CHECK(result.breached(0.01));
}

TEST_CASE("sample_documents") {
  std::vector<Document> storage;
  for (int i = 0; i < 1000; ++i) storage.push_back(doc("d" + std::to_string(i), "x", "YES", Split::dev));
  std::vector<const Document*> docs;
  for (const auto& d : storage) docs.push_back(&d);

  const auto a = sample_documents(docs, 40, 123);
  const auto b = sample_documents(docs, 40, 123);
  const auto c = sample_documents(docs, 40, 124);
  REQUIRE(a.size() == 40);
  CHECK(a == b);
  CHECK(a != c);
  std::set<const Document*> distinct(a.begin(), a.end());
  CHECK(distinct.size() == 40);
  CHECK(std::is_sorted(a.begin(), a.end()));  // corpus order == storage order
  CHECK(sample_documents(docs, 5000, 1).size() == 1000);
}

TEST_CASE("ChainConfig validation") {
  ChainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.k_neighbors = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.k_neighbors = 8;
  cfg.decoding = SelfConsistency{1, 0.7, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.decoding = SelfConsistency{5, 0.0, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
