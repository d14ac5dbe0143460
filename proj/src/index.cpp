#include "lexchain/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> normalized(std::span<const double> v) {
  const double norm = std::sqrt(dot(v, v));
  std::vector<double> out(v.begin(), v.end());
  if (norm > 0.0) {
    for (double& x : out) x /= norm;
  }
  return out;
}

void sort_hits(std::vector<NeighborHit>& hits) {
  std::sort(hits.begin(), hits.end(), [](const NeighborHit& a, const NeighborHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.doc_id < b.doc_id;
  });
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine of vectors with different lengths");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

EmbeddingIndex EmbeddingIndex::build(std::vector<IndexEntry> entries, IndexMode mode) {
  if (entries.empty()) throw Error("cannot build an index without entries");
  const std::size_t dim = entries.front().vector.size();
  if (dim == 0) throw DimensionError("embedding dimension must be positive");
  if (const auto* f = std::get_if<ForestMode>(&mode)) {
    if (f->n_trees < 1) throw ConfigError("forest needs n_trees >= 1");
    if (f->leaf_size < 1) throw ConfigError("forest needs leaf_size >= 1");
  }

  std::vector<std::string> ids;
  std::vector<LabelId> labels;
  std::vector<double> data;
  std::set<std::string, std::less<>> seen;
  ids.reserve(entries.size());
  data.reserve(entries.size() * dim);
  for (auto& e : entries) {
    if (e.vector.size() != dim)
      throw DimensionError("entry '" + e.doc_id + "' has dimension " +
                           std::to_string(e.vector.size()) + ", expected " + std::to_string(dim));
    for (double x : e.vector) {
      if (!std::isfinite(x)) throw DimensionError("entry '" + e.doc_id + "' is not finite");
    }
    if (!seen.insert(e.doc_id).second) throw DuplicateError("duplicate doc_id '" + e.doc_id + "'");
    auto unit = normalized(e.vector);
    data.insert(data.end(), unit.begin(), unit.end());
    ids.push_back(std::move(e.doc_id));
    labels.push_back(std::move(e.label));
  }
  return from_normalized(std::move(ids), std::move(labels), std::move(data), dim, mode);
}

EmbeddingIndex EmbeddingIndex::from_normalized(std::vector<std::string> ids,
                                               std::vector<LabelId> labels,
                                               std::vector<double> data, std::size_t dim,
                                               IndexMode mode) {
  EmbeddingIndex index;
  index.dim_ = dim;
  index.mode_ = mode;
  index.ids_ = std::move(ids);
  index.labels_ = std::move(labels);
  index.data_ = std::move(data);
  if (std::holds_alternative<ForestMode>(mode)) index.build_forest();
  return index;
}

void EmbeddingIndex::build_forest() {
  const auto& f = std::get<ForestMode>(mode_);
  trees_.resize(f.n_trees);
  const std::size_t workers = std::max(1U, std::thread::hardware_concurrency());
  parallel_for(f.n_trees, workers, [&](std::size_t t) { trees_[t] = build_tree(t); });
}

EmbeddingIndex::Tree EmbeddingIndex::build_tree(std::size_t tree_index) const {
  const auto& f = std::get<ForestMode>(mode_);
  Rng rng(mix_seed(f.seed, tree_index));
  Tree tree;

  struct Pending {
    std::size_t node;
    std::vector<std::uint32_t> ids;
  };
  std::vector<std::uint32_t> all(size());
  std::iota(all.begin(), all.end(), 0U);
  tree.nodes.emplace_back();
  std::vector<Pending> stack;
  stack.push_back({0, std::move(all)});

  auto make_leaf = [&](std::size_t node, const std::vector<std::uint32_t>& ids) {
    Node& n = tree.nodes[node];
    n.leaf = true;
    n.begin = tree.leaf_ids.size();
    tree.leaf_ids.insert(tree.leaf_ids.end(), ids.begin(), ids.end());
    n.end = tree.leaf_ids.size();
  };
  auto same = [&](std::uint32_t a, std::uint32_t b) {
    return std::equal(vector(a).begin(), vector(a).end(), vector(b).begin());
  };

  while (!stack.empty()) {
    Pending job = std::move(stack.back());
    stack.pop_back();
    const auto& ids = job.ids;
    if (ids.size() <= f.leaf_size) {
      make_leaf(job.node, ids);
      continue;
    }
    const std::uint32_t a = ids[rng.below(ids.size())];
    std::optional<std::uint32_t> b;
    for (int attempt = 0; attempt < 32 && !b; ++attempt) {
      const std::uint32_t c = ids[rng.below(ids.size())];
      if (!same(a, c)) b = c;
    }
    if (!b) {
      for (std::uint32_t c : ids) {
        if (!same(a, c)) {
          b = c;
          break;
        }
      }
    }
    if (!b) {  // fewer than two distinct points
      make_leaf(job.node, ids);
      continue;
    }

    std::vector<double> diff(dim_);
    for (std::size_t d = 0; d < dim_; ++d) diff[d] = vector(a)[d] - vector(*b)[d];
    auto normal = normalized(diff);
    const std::size_t plane = tree.planes.size();
    tree.planes.insert(tree.planes.end(), normal.begin(), normal.end());

    std::vector<std::uint32_t> left;
    std::vector<std::uint32_t> right;
    for (std::uint32_t id : ids) {
      (dot(normal, vector(id)) > 0.0 ? left : right).push_back(id);
    }
    if (left.empty() || right.empty()) {
      // Degenerate projection (near-identical points): split by position.
      left.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(ids.size() / 2));
      right.assign(ids.begin() + static_cast<std::ptrdiff_t>(ids.size() / 2), ids.end());
      tree.planes.resize(plane);
      tree.nodes[job.node].plane = std::numeric_limits<std::size_t>::max();
    } else {
      tree.nodes[job.node].plane = plane;
    }

    const auto left_node = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    const auto right_node = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[job.node].left = left_node;
    tree.nodes[job.node].right = right_node;
    stack.push_back({right_node, std::move(right)});
    stack.push_back({left_node, std::move(left)});
  }
  return tree;
}

double EmbeddingIndex::side(const Tree& tree, const Node& node, std::span<const double> v) const {
  if (node.plane == std::numeric_limits<std::size_t>::max()) return 0.0;
  return dot(std::span<const double>(tree.planes.data() + node.plane, dim_), v);
}

bool EmbeddingIndex::contains(std::string_view doc_id) const {
  return std::find(ids_.begin(), ids_.end(), doc_id) != ids_.end();
}

std::vector<NeighborHit> EmbeddingIndex::rank(std::span<const double> unit_query,
                                              const std::vector<std::uint32_t>& candidates,
                                              std::size_t k) const {
  std::vector<NeighborHit> hits;
  hits.reserve(candidates.size());
  for (std::uint32_t id : candidates) {
    hits.push_back({ids_[id], std::clamp(dot(unit_query, vector(id)), -1.0, 1.0), labels_[id]});
  }
  sort_hits(hits);
  if (hits.size() > k) hits.resize(k);
  return hits;
}

std::vector<NeighborHit> EmbeddingIndex::exact_query(std::span<const double> v,
                                                     std::size_t k) const {
  if (v.size() != dim_)
    throw DimensionError("query has dimension " + std::to_string(v.size()) + ", index has " +
                         std::to_string(dim_));
  if (k == 0) throw PreconditionError("k must be >= 1");
  std::vector<std::uint32_t> all(size());
  std::iota(all.begin(), all.end(), 0U);
  return rank(normalized(v), all, k);
}

std::vector<NeighborHit> EmbeddingIndex::query(std::span<const double> v, std::size_t k) const {
  if (std::holds_alternative<ExactMode>(mode_)) return exact_query(v, k);
  if (v.size() != dim_)
    throw DimensionError("query has dimension " + std::to_string(v.size()) + ", index has " +
                         std::to_string(dim_));
  if (k == 0) throw PreconditionError("k must be >= 1");
  const auto q = normalized(v);
  const std::size_t want = std::min(k, size());

  std::vector<char> seen(size(), 0);
  std::vector<std::uint32_t> candidates;
  auto take_leaf = [&](const Tree& tree, const Node& node) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const auto id = tree.leaf_ids[i];
      if (!seen[id]) {
        seen[id] = 1;
        candidates.push_back(id);
      }
    }
  };

  // Best-first frontier of subtrees not taken on the greedy descent, keyed
  // by how far the query sits from the splitting plane.
  struct Frontier {
    double priority;
    std::size_t tree;
    std::uint32_t node;
    bool operator<(const Frontier& o) const {
      if (priority != o.priority) return priority < o.priority;
      if (tree != o.tree) return tree > o.tree;
      return node > o.node;
    }
  };
  std::priority_queue<Frontier> frontier;

  for (std::size_t t = 0; t < trees_.size(); ++t) {
    const Tree& tree = trees_[t];
    std::uint32_t at = 0;
    double priority = std::numeric_limits<double>::infinity();
    while (!tree.nodes[at].leaf) {
      const Node& node = tree.nodes[at];
      const double margin = side(tree, node, q);
      const bool go_left = margin > 0.0;
      frontier.push({std::min(priority, -std::abs(margin)), t, go_left ? node.right : node.left});
      at = go_left ? node.left : node.right;
    }
    take_leaf(tree, tree.nodes[at]);
  }

  const auto& f = std::get<ForestMode>(mode_);
  const std::size_t budget = std::max(want, f.search_k ? f.search_k : f.n_trees * f.leaf_size);
  while (candidates.size() < budget && !frontier.empty()) {
    const auto f = frontier.top();
    frontier.pop();
    const Tree& tree = trees_[f.tree];
    const Node& node = tree.nodes[f.node];
    if (node.leaf) {
      take_leaf(tree, node);
      continue;
    }
    const double margin = side(tree, node, q);
    frontier.push({std::min(f.priority, margin), f.tree, node.left});
    frontier.push({std::min(f.priority, -margin), f.tree, node.right});
  }
  return rank(q, candidates, k);
}

std::vector<std::vector<std::size_t>> EmbeddingIndex::leaves(std::size_t tree_index) const {
  std::vector<std::vector<std::size_t>> out;
  const Tree& tree = trees_.at(tree_index);
  for (const Node& n : tree.nodes) {
    if (n.leaf) out.emplace_back(tree.leaf_ids.begin() + static_cast<std::ptrdiff_t>(n.begin),
                                 tree.leaf_ids.begin() + static_cast<std::ptrdiff_t>(n.end));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format (little-endian):
//   "LEXCHIDX" | u8 version | u32 dim | u8 mode [| u32 n_trees | u32 leaf_size | u64 search_k | u64 seed]
//   | u64 count | count x (u32 len, id bytes, u32 len, label bytes, dim x f64)
//   | u64 fnv1a64 of all preceding bytes
// Forest trees are rebuilt from the seed on load.

namespace {

constexpr char kMagic[8] = {'L', 'E', 'X', 'C', 'H', 'I', 'D', 'X'};
constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
  void put_f64(double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    put(bits);
  }
  void put_str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double get_f64() {
    const auto bits = get<std::uint64_t>();
    double x;
    std::memcpy(&x, &bits, sizeof x);
    return x;
  }
  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("index file is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void EmbeddingIndex::write(std::ostream& out) const {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(dim_));
  if (const auto* f = std::get_if<ForestMode>(&mode_)) {
    w.put(std::uint8_t{1});
    w.put(static_cast<std::uint32_t>(f->n_trees));
    w.put(static_cast<std::uint32_t>(f->leaf_size));
    w.put(static_cast<std::uint64_t>(f->search_k));
    w.put(f->seed);
  } else {
    w.put(std::uint8_t{0});
  }
  w.put(static_cast<std::uint64_t>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    w.put_str(ids_[i]);
    w.put_str(labels_[i].name());
    for (double x : vector(i)) w.put_f64(x);
  }
  const auto checksum = fnv1a64(w.bytes());
  w.put(checksum);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw FormatError("failed writing index");
}

EmbeddingIndex EmbeddingIndex::read(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < sizeof kMagic + 8) throw FormatError("index file is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not an index file (bad magic)");

  Reader trailer(std::string_view(bytes).substr(bytes.size() - 8));
  const auto stored = trailer.get<std::uint64_t>();
  const std::string_view body = std::string_view(bytes).substr(0, bytes.size() - 8);

  Reader r(body);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint8_t>();
  if (version != kVersion)
    throw FormatError("unsupported index version " + std::to_string(version));
  if (fnv1a64(body) != stored) throw FormatError("index checksum mismatch (corrupt or truncated)");

  const auto dim = r.get<std::uint32_t>();
  if (dim == 0) throw FormatError("index dimension is zero");
  const auto mode_tag = r.get<std::uint8_t>();
  IndexMode mode = ExactMode{};
  if (mode_tag == 1) {
    ForestMode f;
    f.n_trees = r.get<std::uint32_t>();
    f.leaf_size = r.get<std::uint32_t>();
    f.search_k = r.get<std::uint64_t>();
    f.seed = r.get<std::uint64_t>();
    if (f.n_trees == 0 || f.leaf_size == 0) throw FormatError("bad forest parameters");
    mode = f;
  } else if (mode_tag != 0) {
    throw FormatError("unknown index mode " + std::to_string(mode_tag));
  }
  const auto count = r.get<std::uint64_t>();
  if (count == 0) throw FormatError("index has no entries");
  std::vector<std::string> ids;
  std::vector<LabelId> labels;
  std::vector<double> data;
  for (std::uint64_t i = 0; i < count; ++i) {
    ids.push_back(r.get_str());
    labels.emplace_back(r.get_str());
    for (std::uint32_t d = 0; d < dim; ++d) data.push_back(r.get_f64());
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in index file");
  return from_normalized(std::move(ids), std::move(labels), std::move(data), dim, mode);
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write index file " + path.string());
  write(out);
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open index file " + path.string());
  return read(in);
}

void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<IndexEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j = {
        {"doc_id", e.doc_id}, {"label", e.label.name()}, {"vector", e.vector}};
    out << j.dump() << '\n';
  }
}

std::vector<IndexEntry> read_embeddings_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embeddings file " + path.string());
  std::vector<IndexEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("doc_id").get<std::string>(), j.at("vector").get<EmbeddingVector>(),
                     LabelId(j.at("label").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lexchain
