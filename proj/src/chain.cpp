#include "lexchain/chain.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

using nlohmann::json;
namespace fs = std::filesystem;

void ChainConfig::validate() const {
  if (k_neighbors < 1 || k_neighbors > kMaxExemplars)
    throw ConfigError("k_neighbors must be in [1, 8]");
  summary_budget.validate();
  if (const auto* sc = std::get_if<SelfConsistency>(&decoding)) {
    if (sc->samples < 2 || sc->samples > 10)
      throw ConfigError("self-consistency samples must be in [2, 10]");
    if (!(sc->temperature > 0.0)) throw ConfigError("temperature must be positive");
  }
  if (dev_sample_size == 0) throw ConfigError("dev_sample_size must be positive");
  if (max_new_tokens == 0 || max_new_tokens > kGenerationReserve)
    throw ConfigError("max_new_tokens must be in [1, " + std::to_string(kGenerationReserve) + "]");
  if (failure_threshold < 0.0 || failure_threshold > 1.0)
    throw ConfigError("failure_threshold must be in [0, 1]");
  if (workers == 0) throw ConfigError("workers must be positive");
}

BlindDocument blind(const Document& doc) { return {doc.id, doc.text}; }

// ---------------------------------------------------------------------------

fs::path StageCache::path_for(const std::string& stage, const std::string& key) const {
  return dir_ / stage / (key + ".json");
}

std::optional<json> StageCache::get(const std::string& stage, const std::string& key) const {
  std::ifstream in(path_for(stage, key));
  if (!in) return std::nullopt;
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception&) {
    return std::nullopt;  // partial write from an interrupted run
  }
}

void StageCache::put(const std::string& stage, const std::string& key, const json& value) const {
  const auto path = path_for(stage, key);
  fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp" + hex64(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << value.dump();
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------

namespace {

std::string summary_cache_key(const std::string& text, const Backend& summarizer,
                              const TokenBudget& b, const PromptTemplate* tmpl) {
  std::string material = text;
  material += '\x1f' + summarizer.descriptor().endpoint;
  material += '\x1f' + std::to_string(summarizer.descriptor().context_window);
  material += '\x1f' + std::to_string(b.context_window) + "/" + std::to_string(b.summary_target) +
              "/" + std::to_string(b.max_rounds) + "/" + std::to_string(b.prompt_reserve);
  if (tmpl) material += '\x1f' + tmpl->body();
  return hex64(fnv1a64(material));
}

json summary_to_json(const Summary& s) {
  return {{"doc_id", s.doc_id},       {"text", s.text},     {"token_count", s.token_count},
          {"rounds", s.rounds},       {"truncated", s.truncated}};
}

Summary summary_from_json(const json& j) {
  Summary s;
  s.doc_id = j.at("doc_id").get<std::string>();
  s.text = j.at("text").get<std::string>();
  s.token_count = j.at("token_count").get<std::size_t>();
  s.rounds = j.at("rounds").get<std::size_t>();
  s.truncated = j.at("truncated").get<bool>();
  return s;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const BudgetError*>(&e)) return "budget";
  if (dynamic_cast<const TransportError*>(&e)) return "transport";
  if (dynamic_cast<const ServiceError*>(&e)) return "service";
  if (dynamic_cast<const TemplateError*>(&e)) return "template";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
  return "error";
}

template <typename Fn>
auto stage(const std::string& name, const std::string& doc_id, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, doc_id, error_kind(e) + ": " + e.what());
  }
}

std::string safe_filename(const std::string& id) {
  std::string out;
  for (char c : id) {
    const auto u = static_cast<unsigned char>(c);
    out += (std::isalnum(u) || c == '-' || c == '_' || c == '.') ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  if (out != id) out += "-" + hex64(fnv1a64(id)).substr(0, 8);
  return out;
}

std::vector<std::string> normalized_words(std::string_view text) {
  std::string cleaned;
  for (char c : trim(text)) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned += static_cast<char>(std::tolower(u));
  }
  std::vector<std::string> words;
  for (auto w : split_whitespace(cleaned)) words.emplace_back(w);
  return words;
}

}  // namespace

Summary summarize_document(const BlindDocument& doc, Backend& summarizer,
                           const TokenBudget& budget, const PromptTemplate* tmpl,
                           const StageCache* cache, std::size_t workers) {
  std::string key;
  if (cache) {
    key = summary_cache_key(doc.text, summarizer, budget, tmpl);
    if (auto hit = cache->get("summaries", key)) {
      auto s = summary_from_json(*hit);
      s.doc_id = doc.id;
      return s;
    }
  }
  ChunkSummarizer fn = [&](const std::string& chunk) {
    return summarizer.summarize(tmpl ? render_summarization_prompt(chunk, *tmpl) : chunk);
  };
  auto summary =
      iterative_summarize(doc.id, doc.text, fn, budget, summarizer.token_counter(), workers);
  if (cache) cache->put("summaries", key, summary_to_json(summary));
  return summary;
}

EmbeddingVector embed_summary(const Summary& summary, Backend& embedder, const StageCache* cache) {
  std::string key;
  if (cache) {
    key = hex64(fnv1a64(summary.text + '\x1f' + embedder.descriptor().endpoint + '\x1f' +
                        std::to_string(embedder.descriptor().embedding_dim)));
    if (auto hit = cache->get("embeddings", key)) return hit->get<EmbeddingVector>();
  }
  auto v = embedder.embed(summary.text);
  if (cache) cache->put("embeddings", key, json(v));
  return v;
}

ParsedLabel parse_label(std::string_view generated, const std::vector<LabelId>& options,
                        const LabelId& nearest_neighbor_label) {
  if (options.empty()) throw PreconditionError("parse_label needs at least one option");
  const auto gen = normalized_words(generated);
  std::vector<std::vector<std::string>> opts;
  for (const auto& o : options) opts.push_back(normalized_words(o.name()));

  for (std::size_t i = 0; i < options.size(); ++i) {
    if (!opts[i].empty() && gen == opts[i]) return {options[i], false};
  }

  std::optional<std::size_t> best;
  std::size_t best_pos = 0;
  for (std::size_t i = 0; i < options.size(); ++i) {
    const auto& o = opts[i];
    if (o.empty() || o.size() > gen.size()) continue;
    for (std::size_t pos = 0; pos + o.size() <= gen.size(); ++pos) {
      if (!std::equal(o.begin(), o.end(), gen.begin() + static_cast<std::ptrdiff_t>(pos))) continue;
      if (!best || pos < best_pos || (pos == best_pos && o.size() > opts[*best].size())) {
        best = i;
        best_pos = pos;
      }
      break;
    }
  }
  if (best) return {options[*best], false};
  return {nearest_neighbor_label, true};
}

LabelId self_consistency_vote(const std::vector<LabelId>& labels,
                              const LabelId& nearest_neighbor_label) {
  if (labels.size() < 2 || labels.size() > 10)
    throw PreconditionError("self-consistency vote needs 2 to 10 labels, got " +
                            std::to_string(labels.size()));
  std::vector<LabelId> order;  // first-generation order
  std::vector<std::size_t> counts;
  for (const auto& l : labels) {
    auto it = std::find(order.begin(), order.end(), l);
    if (it == order.end()) {
      order.push_back(l);
      counts.push_back(1);
    } else {
      ++counts[static_cast<std::size_t>(it - order.begin())];
    }
  }
  const std::size_t top = *std::max_element(counts.begin(), counts.end());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (counts[i] == top && order[i] == nearest_neighbor_label) return order[i];
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (counts[i] == top) return order[i];
  }
  return order.front();
}

Prediction classify(const Document& doc, const ChainResources& res, const ChainConfig& cfg) {
  return classify(blind(doc), res, cfg);
}

Prediction classify(const BlindDocument& doc, const ChainResources& res, const ChainConfig& cfg) {
  if (res.train_index.contains(doc.id))
    throw PreconditionError("document '" + doc.id + "' is part of the training index");

  const Summary summary = stage("summarize", doc.id, [&] {
    if (res.target_summaries) {
      auto it = res.target_summaries->find(doc.id);
      if (it != res.target_summaries->end()) return it->second;
    }
    return summarize_document(doc, res.backends.summarizer, cfg.summary_budget,
                              res.summarize_template, res.cache);
  });

  const auto vector =
      stage("embed", doc.id, [&] { return embed_summary(summary, res.backends.embedder, res.cache); });

  const auto exemplars = stage("retrieve", doc.id, [&] {
    auto hits = res.train_index.query(vector, cfg.k_neighbors);
    std::vector<Exemplar> out;
    for (auto& hit : hits) {
      auto it = res.train_summaries.find(hit.doc_id);
      if (it == res.train_summaries.end())
        throw PreconditionError("no training summary for neighbor '" + hit.doc_id + "'");
      out.push_back({std::move(hit), it->second.text});
    }
    if (out.empty()) throw PreconditionError("retrieval returned no neighbors");
    return out;
  });

  Prediction pred;
  pred.doc_id = doc.id;
  pred.bundle = stage("prompt", doc.id, [&] {
    TokenBudget window;
    window.context_window = res.backends.generator.descriptor().context_window;
    window.summary_target = cfg.summary_budget.summary_target;
    return build_fewshot(summary, exemplars, res.space, res.classify_template, window,
                         res.backends.generator.token_counter());
  });

  const LabelId& nearest = exemplars.front().hit.label;
  stage("generate", doc.id, [&] {
    if (const auto* sc = std::get_if<SelfConsistency>(&cfg.decoding)) {
      std::vector<LabelId> labels;
      std::map<LabelId, std::size_t> votes;
      for (std::size_t i = 0; i < sc->samples; ++i) {
        GenerationRequest req{pred.bundle.text, cfg.max_new_tokens,
                              SampleDecoding{sc->temperature, sc->seed + i}};
        pred.generations.push_back(res.backends.generator.generate(req));
        auto parsed = parse_label(pred.generations.back(), pred.bundle.options, nearest);
        pred.parse_fallback = pred.parse_fallback || parsed.fallback;
        labels.push_back(parsed.label);
        ++votes[parsed.label];
      }
      pred.label = self_consistency_vote(labels, nearest);
      pred.votes = std::move(votes);
    } else {
      GenerationRequest req{pred.bundle.text, cfg.max_new_tokens, GreedyDecoding{}};
      pred.generations.push_back(res.backends.generator.generate(req));
      auto parsed = parse_label(pred.generations.back(), pred.bundle.options, nearest);
      pred.label = parsed.label;
      pred.parse_fallback = parsed.fallback;
    }
    return 0;
  });

  if (!res.audit_dir.empty()) {
    stage("audit", doc.id, [&] {
      fs::create_directories(res.audit_dir);
      const auto path = res.audit_dir / (safe_filename(doc.id) + ".json");
      json j = bundle_to_json(pred.bundle);
      j["doc_id"] = doc.id;
      j["summary"] = summary.text;
      j["generations"] = pred.generations;
      j["label"] = pred.label.name();
      j["fallback"] = pred.parse_fallback;
      std::ofstream out(path, std::ios::trunc);
      out << j.dump(2) << '\n';
      if (!out) throw Error("cannot write " + path.string());
      pred.audit_path = path.string();
      return 0;
    });
  }
  return pred;
}

double BatchResult::failure_fraction() const {
  return attempted == 0 ? 0.0
                        : static_cast<double>(failures.size()) / static_cast<double>(attempted);
}

std::vector<const Document*> sample_documents(const std::vector<const Document*>& docs,
                                              std::size_t n, std::uint64_t seed) {
  if (n >= docs.size()) return docs;
  std::vector<std::size_t> idx(docs.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<const Document*> out;
  for (std::size_t i : idx) out.push_back(docs[i]);
  return out;
}

BatchResult run_batch(const std::vector<const Document*>& docs, const ChainResources& res,
                      const ChainConfig& cfg) {
  cfg.validate();
  std::vector<std::optional<Prediction>> slots(docs.size());
  std::vector<std::optional<BatchFailure>> errors(docs.size());
  parallel_for(docs.size(), cfg.workers, [&](std::size_t i) {
    const BlindDocument doc = blind(*docs[i]);
    try {
      slots[i] = classify(doc, res, cfg);
    } catch (const StageError& e) {
      errors[i] = BatchFailure{doc.id, e.stage(), e.what()};
    } catch (const std::exception& e) {
      errors[i] = BatchFailure{doc.id, error_kind(e), e.what()};
    }
  });
  BatchResult result;
  result.attempted = docs.size();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (slots[i]) result.predictions.push_back(std::move(*slots[i]));
    if (errors[i]) result.failures.push_back(std::move(*errors[i]));
  }
  return result;
}

BatchResult run_batch(const Corpus& corpus, Split split, const ChainResources& res,
                      const ChainConfig& cfg) {
  return run_batch(corpus.split(split), res, cfg);
}

void write_prediction_line(std::ostream& out, const Prediction& p) {
  nlohmann::ordered_json j;
  j["doc_id"] = p.doc_id;
  j["label"] = p.label.name();
  if (p.votes) {
    nlohmann::ordered_json votes = nlohmann::ordered_json::object();
    for (const auto& [label, count] : *p.votes) votes[label.name()] = count;
    j["votes"] = votes;
  }
  j["fallback"] = p.parse_fallback;
  out << j.dump() << '\n';
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open predictions file " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      out.push_back({j.at("doc_id").get<std::string>(), LabelId(j.at("label").get<std::string>()),
                     j.value("fallback", false)});
    } catch (const json::exception& e) {
      throw ParseError(line_no, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lexchain
