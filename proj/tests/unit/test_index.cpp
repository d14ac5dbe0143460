#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lexchain/error.hpp"
#include "lexchain/index.hpp"
#include "lexchain/util.hpp"

using namespace lexchain;

namespace {

EmbeddingVector gaussian_unit(Rng& rng, std::size_t dim) {
  EmbeddingVector v(dim);
  double norm = 0;
  for (auto& x : v) {
    const double u1 = rng.uniform(), u2 = rng.uniform();
    x = std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(6.283185307179586 * u2);
    norm += x * x;
  }
  for (auto& x : v) x /= std::sqrt(norm);
  return v;
}

std::vector<IndexEntry> random_entries(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<IndexEntry> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"doc" + std::to_string(i), gaussian_unit(rng, dim), LabelId(i % 3 ? "YES" : "NO")});
  return out;
}

/// Independent brute-force oracle: sort every entry by cosine, then id.
std::vector<std::string> oracle_top_k(const std::vector<IndexEntry>& entries, const EmbeddingVector& q,
                                      std::size_t k) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& e : entries) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      dot += e.vector[i] * q[i];
      na += e.vector[i] * e.vector[i];
      nb += q[i] * q[i];
    }
    scored.emplace_back(dot / std::sqrt(na * nb), e.doc_id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lexchain_index_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("cosine similarity") {
  const std::vector<double> a = {1, 0, 0}, b = {0, 1, 0}, c = {2, 0, 0};
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1, 0}), DimensionError);

  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const auto x = gaussian_unit(rng, 16), y = gaussian_unit(rng, 16);
    const double s = cosine_similarity(x, y);
    CHECK(s == cosine_similarity(y, x));
    CHECK(s >= -1.0 - 1e-12);
    CHECK(s <= 1.0 + 1e-12);
  }
}

TEST_CASE("build validation") {
  CHECK_THROWS_AS(EmbeddingIndex::build({{"a", {1, 0}, LabelId("YES")}, {"b", {1, 0, 0}, LabelId("NO")}},
                                        ExactMode{}),
                  DimensionError);
  CHECK_THROWS_AS(
      EmbeddingIndex::build({{"a", {1, 0}, LabelId("YES")}, {"a", {0, 1}, LabelId("NO")}}, ExactMode{}),
      DuplicateError);
  CHECK_THROWS_AS(EmbeddingIndex::build({{"a", {NAN, 0}, LabelId("YES")}}, ExactMode{}), DimensionError);
  // A zero vector (an empty summary under the stub) is kept and scores 0 against everything.
  const auto zero = EmbeddingIndex::build({{"z", {0, 0}, LabelId("YES")}}, ExactMode{});
  CHECK(zero.query(std::vector<double>{1, 0}, 1).front().similarity == 0.0);

  const auto idx = EmbeddingIndex::build({{"a", {1, 0}, LabelId("YES")}}, ExactMode{});
  CHECK_THROWS_AS(idx.query(std::vector<double>{1, 0, 0}, 1), DimensionError);
  CHECK_THROWS_AS(idx.query(std::vector<double>{1, 0}, 0), PreconditionError);
}

TEST_CASE("exact query matches the brute-force oracle") {
  const auto entries = random_entries(300, 24, 5);
  const auto idx = EmbeddingIndex::build(entries, ExactMode{});
  Rng rng(77);
  for (int q = 0; q < 50; ++q) {
    const auto v = gaussian_unit(rng, 24);
    for (std::size_t k : {1u, 8u, 300u, 500u}) {
      const auto hits = idx.query(v, k);
      std::vector<std::string> ids;
      for (const auto& h : hits) ids.push_back(h.doc_id);
      CHECK(ids == oracle_top_k(entries, v, k));
      for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].similarity >= hits[i].similarity);
    }
  }
}

TEST_CASE("ties are broken by ascending doc id") {
  const auto idx = EmbeddingIndex::build(
      {{"c", {1, 0}, LabelId("YES")}, {"a", {2, 0}, LabelId("NO")}, {"b", {0, 1}, LabelId("NO")}}, ExactMode{});
  const auto hits = idx.query(std::vector<double>{1, 0}, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].doc_id == "a");
  CHECK(hits[1].doc_id == "c");
  CHECK(hits[2].doc_id == "b");
  CHECK(hits[0].label == LabelId("NO"));
}

TEST_CASE("forest leaves partition the entries") {
  const auto entries = random_entries(1000, 64, 1);
  const auto idx = EmbeddingIndex::build(entries, ForestMode{50, 16, 7});
  REQUIRE(idx.tree_count() == 50);
  for (std::size_t t = 0; t < idx.tree_count(); ++t) {
    std::vector<int> seen(1000, 0);
    for (const auto& leaf : idx.leaves(t)) {
      CHECK_FALSE(leaf.empty());
      CHECK(leaf.size() <= 16);
      for (auto id : leaf) ++seen[id];
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("forest handles identical vectors") {
  std::vector<IndexEntry> entries;
  for (int i = 0; i < 40; ++i) entries.push_back({"same" + std::to_string(i), {1, 1, 0}, LabelId("YES")});
  const auto idx = EmbeddingIndex::build(entries, ForestMode{4, 4, 1});
  const auto hits = idx.query(std::vector<double>{1, 1, 0}, 8);
  REQUIRE(hits.size() == 8);
  CHECK(hits[0].doc_id == "same0");
}

TEST_CASE("forest recall on random unit vectors") {
  const auto entries = random_entries(1000, 64, 2024);
  const auto forest = EmbeddingIndex::build(entries, ForestMode{50, 16, 7});
  Rng rng(4242);
  double recall = 0;
  for (int q = 0; q < 100; ++q) {
    const auto v = gaussian_unit(rng, 64);
    const auto truth = oracle_top_k(entries, v, 8);
    const std::set<std::string> want(truth.begin(), truth.end());
    std::size_t found = 0;
    for (const auto& h : forest.query(v, 8)) found += want.count(h.doc_id);
    recall += found / 8.0;
  }
  CHECK(recall / 100 >= 0.95);
}

TEST_CASE("forest returns k results even from tiny leaves") {
  const auto entries = random_entries(50, 8, 3);
  const auto idx = EmbeddingIndex::build(entries, ForestMode{1, 1, 3, 1});
  CHECK(idx.query(entries[0].vector, 10).size() == 10);
  CHECK(idx.query(entries[0].vector, 80).size() == 50);
}

TEST_CASE("same seed, same forest") {
  const auto entries = random_entries(200, 16, 8);
  const auto a = EmbeddingIndex::build(entries, ForestMode{10, 8, 99});
  const auto b = EmbeddingIndex::build(entries, ForestMode{10, 8, 99});
  for (std::size_t t = 0; t < 10; ++t) CHECK(a.leaves(t) == b.leaves(t));
  std::ostringstream sa, sb;
  a.write(sa);
  b.write(sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("save and load round trip") {
  const auto entries = random_entries(120, 12, 4);
  for (IndexMode mode : {IndexMode{ExactMode{}}, IndexMode{ForestMode{8, 8, 5}}}) {
    const auto idx = EmbeddingIndex::build(entries, mode);
    const auto path = temp_file("round_trip.bin");
    idx.save(path);
    const auto loaded = EmbeddingIndex::load(path);
    CHECK(loaded.size() == idx.size());
    CHECK(loaded.dim() == idx.dim());
    CHECK(loaded.mode().index() == idx.mode().index());
    Rng rng(6);
    for (int q = 0; q < 20; ++q) {
      const auto v = gaussian_unit(rng, 12);
      const auto x = idx.query(v, 5), y = loaded.query(v, 5);
      REQUIRE(x.size() == y.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x[i].doc_id == y[i].doc_id);
        CHECK(x[i].similarity == y[i].similarity);
        CHECK(x[i].label == y[i].label);
      }
    }
  }
}

TEST_CASE("damaged index files are rejected") {
  const auto idx = EmbeddingIndex::build(random_entries(30, 6, 2), ForestMode{3, 4, 1});
  std::ostringstream out;
  idx.write(out);
  const std::string bytes = out.str();

  SUBCASE("truncated") {
    std::istringstream in(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(EmbeddingIndex::read(in), FormatError);
  }
  SUBCASE("flipped byte") {
    std::string bad = bytes;
    bad[bad.size() / 2] ^= 0x40;
    std::istringstream in(bad);
    CHECK_THROWS_AS(EmbeddingIndex::read(in), FormatError);
  }
  SUBCASE("wrong magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream in(bad);
    CHECK_THROWS_AS(EmbeddingIndex::read(in), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(EmbeddingIndex::load(temp_file("does_not_exist.bin")), FormatError);
  }
}

TEST_CASE("embedding dump round trip") {
  const auto entries = random_entries(10, 4, 1);
  const auto path = temp_file("embeddings.jsonl");
  write_embeddings_jsonl(path, entries);
  const auto back = read_embeddings_jsonl(path);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].doc_id == entries[i].doc_id);
    CHECK(back[i].label == entries[i].label);
    CHECK(back[i].vector == entries[i].vector);
  }
}
