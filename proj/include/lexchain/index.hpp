#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lexchain/backend.hpp"
#include "lexchain/corpus.hpp"

namespace lexchain {

struct IndexEntry {
  std::string doc_id;
  EmbeddingVector vector;
  LabelId label;
};

struct ExactMode {};

struct ForestMode {
  std::size_t n_trees = 50;
  std::size_t leaf_size = 16;
  std::uint64_t seed = 0;
  /// Candidates gathered before exact re-ranking; 0 means n_trees * leaf_size.
  std::size_t search_k = 0;
};

using IndexMode = std::variant<ExactMode, ForestMode>;

struct NeighborHit {
  std::string doc_id;
  double similarity = 0.0;
  LabelId label;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Cosine-similarity kNN over immutable entries. Vectors are normalized on
/// insert. Hits come back by descending similarity, ties by ascending doc_id.
class EmbeddingIndex {
 public:
  static EmbeddingIndex build(std::vector<IndexEntry> entries, IndexMode mode);

  /// Exact mode: brute force. Forest mode: the query's leaf in every tree,
  /// then further leaves best-first by plane margin until search_k distinct
  /// candidates are gathered, re-ranked by exact cosine.
  std::vector<NeighborHit> query(std::span<const double> v, std::size_t k) const;
  std::vector<NeighborHit> exact_query(std::span<const double> v, std::size_t k) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const IndexMode& mode() const { return mode_; }
  bool contains(std::string_view doc_id) const;

  const std::string& doc_id(std::size_t i) const { return ids_[i]; }
  const LabelId& label(std::size_t i) const { return labels_[i]; }
  std::span<const double> vector(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }

  /// Leaves of one forest tree as lists of entry positions.
  std::vector<std::vector<std::size_t>> leaves(std::size_t tree) const;
  std::size_t tree_count() const { return trees_.size(); }

  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  static EmbeddingIndex read(std::istream& in);

 private:
  struct Node {
    bool leaf = false;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::size_t plane = 0;  // offset into Tree::planes
    std::size_t begin = 0;  // leaf range into Tree::leaf_ids
    std::size_t end = 0;
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<double> planes;
    std::vector<std::uint32_t> leaf_ids;
  };

  EmbeddingIndex() = default;
  static EmbeddingIndex from_normalized(std::vector<std::string> ids, std::vector<LabelId> labels,
                                        std::vector<double> data, std::size_t dim,
                                        IndexMode mode);
  void build_forest();
  Tree build_tree(std::size_t tree_index) const;
  std::vector<NeighborHit> rank(std::span<const double> unit_query,
                                const std::vector<std::uint32_t>& candidates,
                                std::size_t k) const;
  double side(const Tree& tree, const Node& node, std::span<const double> v) const;

  std::size_t dim_ = 0;
  IndexMode mode_ = ExactMode{};
  std::vector<std::string> ids_;
  std::vector<LabelId> labels_;
  std::vector<double> data_;
  std::vector<Tree> trees_;
};

/// JSON Lines vector dump {doc_id, label, vector}.
void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<IndexEntry>& entries);
std::vector<IndexEntry> read_embeddings_jsonl(const std::filesystem::path& path);

}  // namespace lexchain
