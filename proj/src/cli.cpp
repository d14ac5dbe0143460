#include "lexchain/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lexchain/chunking.hpp"
#include "lexchain/corpus.hpp"
#include "lexchain/error.hpp"
#include "lexchain/evaluation.hpp"
#include "lexchain/prompting.hpp"
#include "lexchain/util.hpp"

namespace lexchain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void RunConfig::propagate_seed() {
  if (auto* f = std::get_if<ForestMode>(&index_mode)) f->seed = seed;
  if (auto* sc = std::get_if<SelfConsistency>(&chain.decoding)) sc->seed = seed;
}

void RunConfig::validate() const {
  if (corpus.empty()) throw ConfigError("config: 'corpus' is required");
  if (!fs::is_regular_file(corpus)) throw ConfigError("corpus file not found: " + corpus.string());
  (void)LabelSpace::resolve(label_space);
  summarize.validate();
  embed.validate();
  generate.validate();
  chain.validate();
  if (chain.summary_budget.context_window != summarize.context_window)
    throw ConfigError("summary budget window must match the summarize backend window");
  if (const auto* f = std::get_if<ForestMode>(&index_mode)) {
    if (f->n_trees == 0 || f->leaf_size == 0)
      throw ConfigError("index: n_trees and leaf_size must be positive");
  }
  if (!templates.empty() && !fs::is_regular_file(templates))
    throw ConfigError("template file not found: " + templates.string());
  const auto lib = templates.empty() ? TemplateLibrary::builtin() : TemplateLibrary::from_file(templates);
  (void)lib.get(classify_template);
  if (!summarize_template.empty()) (void)lib.get(summarize_template);
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };

  RunConfig c;
  try {
    c.corpus = resolve(j.value("corpus", std::string()));
    c.label_space = j.value("label_space", c.label_space);
    if (c.label_space.find('/') != std::string::npos || c.label_space.ends_with(".json"))
      c.label_space = resolve(c.label_space).string();
    c.output_dir = resolve(j.value("output_dir", std::string("run")));
    c.seed = j.value("seed", std::uint64_t{0});
    c.templates = resolve(j.value("templates", std::string()));
    c.summarize_template = j.value("summarize_template", std::string());
    c.classify_template = j.value("classify_template", c.classify_template);

    const json backends = j.value("backends", json::object());
    c.summarize = descriptor_from_json(backends.value("summarize", json::object()), BackendKind::summarize);
    c.embed = descriptor_from_json(backends.value("embed", json::object()), BackendKind::embed);
    c.generate = descriptor_from_json(backends.value("generate", json::object()), BackendKind::generate);

    const json chain = j.value("chain", json::object());
    c.chain.k_neighbors = chain.value("k_neighbors", c.chain.k_neighbors);
    c.chain.summary_budget.summary_target = chain.value("summary_target", std::size_t{128});
    c.chain.summary_budget.max_rounds = chain.value("max_rounds", std::size_t{8});
    c.chain.summary_budget.prompt_reserve = chain.value("prompt_reserve", std::size_t{24});
    c.chain.dev_sample_size = chain.value("dev_sample_size", c.chain.dev_sample_size);
    c.chain.max_new_tokens = chain.value("max_new_tokens", c.chain.max_new_tokens);
    c.chain.failure_threshold = chain.value("failure_threshold", c.chain.failure_threshold);
    c.chain.workers = j.value("workers", c.chain.workers);
    const std::string decoding = chain.value("decoding", std::string("greedy"));
    if (decoding == "self_consistency") {
      SelfConsistency sc;
      sc.samples = chain.value("samples", sc.samples);
      sc.temperature = chain.value("temperature", sc.temperature);
      c.chain.decoding = sc;
    } else if (decoding != "greedy") {
      throw ConfigError("chain.decoding must be greedy or self_consistency");
    }

    const json index = j.value("index", json::object());
    const std::string mode = index.value("mode", std::string("forest"));
    if (mode == "exact") {
      c.index_mode = ExactMode{};
    } else if (mode == "forest") {
      ForestMode f;
      f.n_trees = index.value("n_trees", f.n_trees);
      f.leaf_size = index.value("leaf_size", f.leaf_size);
      f.search_k = index.value("search_k", f.search_k);
      c.index_mode = f;
    } else {
      throw ConfigError("index.mode must be exact or forest");
    }
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  apply_env_overrides(c.summarize);
  apply_env_overrides(c.embed);
  apply_env_overrides(c.generate);
  c.chain.summary_budget.context_window = c.summarize.context_window;
  c.propagate_seed();
  return c;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Options {
  std::string config;
  std::string split = "dev";
  std::optional<std::size_t> limit;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string subset;
  std::vector<std::string> backend_overrides;
  std::string output;
  std::string predictions;
  std::string summaries;
  std::string kind = "majority";
  bool allow_partial = false;
  bool sample = false;
};

class Runner {
 public:
  Runner(RunConfig cfg, std::ostream& out, std::ostream& err)
      : cfg_(std::move(cfg)),
        out_(out),
        err_(err),
        space_(LabelSpace::resolve(cfg_.label_space)),
        corpus_(load_jsonl(cfg_.corpus, space_)),
        templates_(cfg_.templates.empty() ? TemplateLibrary::builtin()
                                          : TemplateLibrary::from_file(cfg_.templates)),
        cache_(cfg_.output_dir / "cache") {
    fs::create_directories(cfg_.output_dir);
  }

  int summarize(const std::string& split_name) {
    for (Split split : splits_for(split_name)) {
      if (int rc = summarize_split(split); rc != kOk) return rc;
    }
    return kOk;
  }

  int index(const std::string& summaries_override) {
    const fs::path path = summaries_override.empty() ? summaries_path(Split::train)
                                                     : fs::path(summaries_override);
    if (!fs::exists(path)) throw ConfigError("training summaries not found: " + path.string());
    const auto records = read_summaries(path);
    if (records.empty()) throw ConfigError("no summaries in " + path.string());
    for (const auto& rec : records) {
      if (rec.split && *rec.split != Split::train)
        throw ConfigError("summary '" + rec.summary.doc_id + "' is tagged " +
                          std::string(to_string(*rec.split)) + "; the index takes training summaries only");
      const Document* doc = corpus_.find(rec.summary.doc_id);
      if (!doc) throw ConfigError("summary '" + rec.summary.doc_id + "' is not in the corpus");
      if (doc->split != Split::train)
        throw ConfigError("summary '" + rec.summary.doc_id + "' belongs to the " +
                          std::string(to_string(doc->split)) + " split, not train");
    }

    auto embedder = make_backend(cfg_.embed);
    std::vector<IndexEntry> entries(records.size());
    std::vector<std::optional<std::string>> errors(records.size());
    parallel_for(records.size(), cfg_.chain.workers, [&](std::size_t i) {
      const auto& s = records[i].summary;
      try {
        entries[i] = {s.doc_id, embed_summary(s, *embedder, &cache_), corpus_.find(s.doc_id)->gold};
      } catch (const BackendError& e) {
        errors[i] = e.what();
      }
    });
    std::vector<BatchFailure> failures;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (errors[i]) failures.push_back({records[i].summary.doc_id, "embed", *errors[i]});
    }
    if (!failures.empty()) {
      write_failures("index_train", failures);
      err_ << "index: " << failures.size() << " embedding failures\n";
      return kBackend;
    }

    auto index = EmbeddingIndex::build(std::move(entries), cfg_.index_mode);
    index.save(index_path());
    std::vector<IndexEntry> dump;
    for (std::size_t i = 0; i < index.size(); ++i) {
      auto v = index.vector(i);
      dump.push_back({index.doc_id(i), EmbeddingVector(v.begin(), v.end()), index.label(i)});
    }
    fs::create_directories(cfg_.output_dir / "embeddings");
    write_embeddings_jsonl(cfg_.output_dir / "embeddings" / "train.jsonl", dump);
    out_ << "index: " << index.size() << " entries, dim " << index.dim() << " -> "
         << index_path().string() << "\n";
    return kOk;
  }

  int classify(const std::string& split_name, std::optional<std::size_t> limit) {
    const Split split = single_split(split_name);
    if (!fs::exists(index_path())) throw ConfigError("index not found: " + index_path().string());
    const auto index = EmbeddingIndex::load(index_path());
    const auto train = load_summary_map(summaries_path(Split::train));
    if (train.empty()) throw ConfigError("training summaries not found");
    SummaryMap targets;
    if (fs::exists(summaries_path(split))) targets = load_summary_map(summaries_path(split));

    auto summarizer = make_backend(cfg_.summarize);
    auto embedder = make_backend(cfg_.embed);
    auto generator = make_backend(cfg_.generate);
    const PromptTemplate* sum_tmpl =
        cfg_.summarize_template.empty() ? nullptr : &templates_.get(cfg_.summarize_template);
    const fs::path audit = cfg_.output_dir / "audit" / std::string(to_string(split));
    ChainResources res{index,
                       train,
                       space_,
                       templates_.get(cfg_.classify_template),
                       Backends{*summarizer, *embedder, *generator},
                       sum_tmpl,
                       &targets,
                       &cache_,
                       audit};

    auto docs = corpus_.split(split);
    if (docs.empty()) throw EmptySplitError("split '" + split_name + "' has no documents");
    if (limit) docs = sample_documents(docs, *limit, cfg_.seed);
    const auto result = run_batch(docs, res, cfg_.chain);

    fs::create_directories(cfg_.output_dir / "predictions");
    const fs::path pred_path = predictions_path(split);
    {
      std::ofstream out(pred_path, std::ios::trunc);
      for (const auto& p : result.predictions) write_prediction_line(out, p);
    }
    std::size_t fallbacks = 0;
    for (const auto& p : result.predictions) fallbacks += p.parse_fallback ? 1 : 0;
    out_ << "classify: " << result.predictions.size() << " predictions, " << result.failures.size()
         << " failures, " << fallbacks << " parse fallbacks -> " << pred_path.string() << "\n";
    if (!result.failures.empty()) write_failures("classify_" + split_name, result.failures);
    if (result.breached(cfg_.chain.failure_threshold)) {
      err_ << "classify: failure fraction " << result.failure_fraction() << " exceeds threshold "
           << cfg_.chain.failure_threshold << "\n";
      return kQuality;
    }
    return kOk;
  }

  int eval(const std::string& split_name, const std::string& predictions,
           const std::string& subset, bool allow_partial) {
    const Split split = single_split(split_name);
    const fs::path pred_path = predictions.empty() ? predictions_path(split) : fs::path(predictions);
    std::vector<PredictedLabel> preds;
    for (auto& r : read_predictions(pred_path)) preds.push_back({r.doc_id, r.label});
    auto golds = corpus_.split(split);
    if (allow_partial) golds = restrict_to(golds, preds);

    const auto matrix = confusion(preds, golds, space_);
    std::string stem = pred_path.stem().string();
    EvalReport report;
    ConfusionMatrix shown = matrix;
    if (!subset.empty()) {
      const auto ids = read_id_list(subset);
      report = subset_eval(preds, golds, space_, ids);
      std::set<std::string> keep(ids.begin(), ids.end());
      std::vector<PredictedLabel> sub_preds;
      std::vector<const Document*> sub_golds;
      for (const auto& p : preds) {
        if (keep.count(p.doc_id)) sub_preds.push_back(p);
      }
      for (const Document* d : golds) {
        if (keep.count(d->id)) sub_golds.push_back(d);
      }
      shown = confusion(sub_preds, sub_golds, space_);
      stem += "_subset";
    } else {
      report = score(matrix);
    }
    write_report(stem, report, shown);
    return kOk;
  }

  int baseline_cmd(const std::string& split_name, const std::string& kind_name) {
    const Split split = single_split(split_name);
    BaselineKind kind;
    if (kind_name == "majority") {
      kind = MajorityBaseline{};
    } else if (kind_name == "minority") {
      kind = MinorityBaseline{};
    } else if (kind_name == "random") {
      kind = RandomBaseline{cfg_.seed};
    } else {
      throw ConfigError("--kind must be majority, minority or random");
    }
    const auto hist = label_histogram(corpus_, Split::train);
    const auto docs = corpus_.split(split);
    if (docs.empty()) throw EmptySplitError("split '" + split_name + "' has no documents");
    const auto preds = baseline(kind, hist, docs, space_);

    fs::create_directories(cfg_.output_dir / "predictions");
    const std::string stem = "baseline_" + kind_name + "_" + split_name;
    {
      std::ofstream out(cfg_.output_dir / "predictions" / (stem + ".jsonl"), std::ios::trunc);
      for (const auto& p : preds) {
        nlohmann::ordered_json j = {{"doc_id", p.doc_id}, {"label", p.label.name()}, {"fallback", false}};
        out << j.dump() << '\n';
      }
    }
    const auto matrix = confusion(preds, docs, space_);
    write_report(stem, score(matrix), matrix);
    return kOk;
  }

  int pipeline(const std::string& split_name, std::optional<std::size_t> limit) {
    const Split split = single_split(split_name);
    if (split == Split::train) throw ConfigError("pipeline evaluates dev or test, not train");
    if (int rc = summarize_split(Split::train); rc != kOk) return rc;
    if (int rc = index(""); rc != kOk) return rc;
    if (!limit) {
      if (int rc = summarize_split(split); rc != kOk) return rc;
    }
    const int rc = classify(split_name, limit);
    if (rc != kOk && rc != kQuality) return rc;
    if (read_predictions(predictions_path(split)).empty()) {
      err_ << "pipeline: no predictions to evaluate\n";
      return rc != kOk ? rc : kQuality;
    }
    const int eval_rc = eval(split_name, "", "", true);
    return rc != kOk ? rc : eval_rc;
  }

 private:
  std::vector<Split> splits_for(const std::string& name) const {
    if (name == "all") return {Split::train, Split::dev, Split::test};
    return {single_split(name)};
  }

  static Split single_split(const std::string& name) {
    auto s = parse_split(name);
    if (!s) throw ConfigError("unknown split '" + name + "'");
    return *s;
  }

  fs::path summaries_path(Split s) const {
    return cfg_.output_dir / "summaries" / (std::string(to_string(s)) + ".jsonl");
  }
  fs::path predictions_path(Split s) const {
    return cfg_.output_dir / "predictions" / (std::string(to_string(s)) + ".jsonl");
  }
  fs::path index_path() const { return cfg_.output_dir / "index.bin"; }

  int summarize_split(Split split) {
    const auto docs = corpus_.split(split);
    if (docs.empty())
      throw EmptySplitError("split '" + std::string(to_string(split)) + "' has no documents");
    auto summarizer = make_backend(cfg_.summarize);
    const PromptTemplate* tmpl =
        cfg_.summarize_template.empty() ? nullptr : &templates_.get(cfg_.summarize_template);

    std::vector<std::optional<Summary>> done(docs.size());
    std::vector<std::optional<std::string>> errors(docs.size());
    parallel_for(docs.size(), cfg_.chain.workers, [&](std::size_t i) {
      try {
        done[i] = summarize_document(blind(*docs[i]), *summarizer, cfg_.chain.summary_budget, tmpl,
                                     &cache_);
      } catch (const BackendError& e) {
        errors[i] = e.what();
      }
    });

    fs::create_directories(cfg_.output_dir / "summaries");
    std::vector<BatchFailure> failures;
    {
      std::ofstream out(summaries_path(split), std::ios::trunc);
      for (std::size_t i = 0; i < docs.size(); ++i) {
        if (done[i]) write_summary_line(out, *done[i], split);
        if (errors[i]) failures.push_back({docs[i]->id, "summarize", *errors[i]});
      }
    }
    out_ << "summarize[" << to_string(split) << "]: " << (docs.size() - failures.size())
         << " summaries, " << summarizer->calls() << " backend calls -> "
         << summaries_path(split).string() << "\n";
    if (!failures.empty()) {
      write_failures("summarize_" + std::string(to_string(split)), failures);
      err_ << "summarize: " << failures.size() << " documents failed\n";
      return kBackend;
    }
    return kOk;
  }

  SummaryMap load_summary_map(const fs::path& path) const {
    SummaryMap out;
    if (!fs::exists(path)) return out;
    for (auto& rec : read_summaries(path)) out.emplace(rec.summary.doc_id, std::move(rec.summary));
    return out;
  }

  void write_failures(const std::string& name, const std::vector<BatchFailure>& failures) const {
    fs::create_directories(cfg_.output_dir / "failures");
    json j = json::array();
    for (const auto& f : failures) j.push_back({{"doc_id", f.doc_id}, {"stage", f.stage}, {"error", f.message}});
    std::ofstream out(cfg_.output_dir / "failures" / (name + ".json"), std::ios::trunc);
    out << j.dump(2) << '\n';
  }

  void write_report(const std::string& stem, const EvalReport& report, const ConfusionMatrix& m) const {
    const fs::path dir = cfg_.output_dir / "reports";
    fs::create_directories(dir);
    std::ofstream(dir / (stem + ".json"), std::ios::trunc) << report_to_json(report, m).dump(2) << '\n';
    const auto table = report_to_text(report, m, stem);
    std::ofstream(dir / (stem + ".txt"), std::ios::trunc) << table;
    std::ofstream(dir / (stem + "_confusion.csv"), std::ios::trunc) << confusion_to_csv(m);
    out_ << table;
  }

  static std::vector<const Document*> restrict_to(const std::vector<const Document*>& golds,
                                                  const std::vector<PredictedLabel>& preds) {
    std::set<std::string, std::less<>> ids;
    for (const auto& p : preds) ids.insert(p.doc_id);
    std::vector<const Document*> out;
    for (const Document* d : golds) {
      if (ids.count(d->id)) out.push_back(d);
    }
    return out;
  }

  static std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open subset file " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty() && t.front() != '#') ids.emplace_back(t);
    }
    return ids;
  }

  RunConfig cfg_;
  std::ostream& out_;
  std::ostream& err_;
  LabelSpace space_;
  Corpus corpus_;
  TemplateLibrary templates_;
  StageCache cache_;
};

void apply_overrides(RunConfig& cfg, const Options& opt) {
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.workers) cfg.chain.workers = *opt.workers;
  if (!opt.output.empty()) cfg.output_dir = opt.output;
  for (const auto& o : opt.backend_overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--backend-override expects kind=endpoint, got '" + o + "'");
    const auto kind = parse_backend_kind(o.substr(0, eq));
    if (!kind) throw ConfigError("--backend-override: unknown kind '" + o.substr(0, eq) + "'");
    const std::string endpoint = o.substr(eq + 1);
    switch (*kind) {
      case BackendKind::summarize: cfg.summarize.endpoint = endpoint; break;
      case BackendKind::embed: cfg.embed.endpoint = endpoint; break;
      case BackendKind::generate: cfg.generate.endpoint = endpoint; break;
    }
  }
  cfg.propagate_seed();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const BackendError*>(&e)) return kBackend;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const LabelError*>(&e) || dynamic_cast<const DuplicateError*>(&e) ||
      dynamic_cast<const AlignmentError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const FormatError*>(&e) || dynamic_cast<const TemplateError*>(&e) ||
      dynamic_cast<const EmptySplitError*>(&e) || dynamic_cast<const PreconditionError*>(&e))
    return kConfig;
  return kInternal;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-chaining pipeline for long legal document classification"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config, "Run config file (JSON)")->required();
    cmd->add_option("--seed", opt.seed, "Global seed (overrides config)");
    cmd->add_option("--workers", opt.workers, "Concurrent documents");
    cmd->add_option("--backend-override", opt.backend_overrides, "kind=endpoint, repeatable");
    cmd->add_option("--output", opt.output, "Output directory (overrides config)");
  };

  auto* summarize = app.add_subcommand("summarize", "Summarize a split (train|dev|test|all)");
  add_common(summarize);
  summarize->add_option("--split", opt.split, "Split to summarize")->capture_default_str();

  auto* index = app.add_subcommand("index", "Embed training summaries and build the index");
  add_common(index);
  index->add_option("--summaries", opt.summaries, "Training summaries file (default: run output)");

  auto* classify = app.add_subcommand("classify", "Run the prompt chain over a split");
  add_common(classify);
  classify->add_option("--split", opt.split)->capture_default_str();
  classify->add_option("--limit", opt.limit, "Classify a seeded random sample of this size");
  classify->add_flag("--sample", opt.sample, "Classify the seeded prompt-development sample (chain.dev_sample_size)");

  auto* eval = app.add_subcommand("eval", "Score a predictions file");
  add_common(eval);
  eval->add_option("--split", opt.split)->capture_default_str();
  eval->add_option("--predictions", opt.predictions, "Predictions JSON Lines file");
  eval->add_option("--subset", opt.subset, "File of document ids to restrict the report to");
  eval->add_flag("--allow-partial", opt.allow_partial,
                 "Evaluate only the split documents that have predictions");

  auto* base = app.add_subcommand("baseline", "Majority / minority / random baselines");
  add_common(base);
  base->add_option("--split", opt.split)->capture_default_str();
  base->add_option("--kind", opt.kind, "majority | minority | random")->capture_default_str();

  auto* pipeline = app.add_subcommand("pipeline", "summarize -> index -> classify -> eval");
  add_common(pipeline);
  pipeline->add_option("--split", opt.split)->capture_default_str();
  pipeline->add_option("--limit", opt.limit, "Classify a seeded random sample of this size");
  pipeline->add_flag("--sample", opt.sample, "Classify the seeded prompt-development sample (chain.dev_sample_size)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int rc = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return rc == 0 ? kOk : kConfig;
  }

  try {
    RunConfig cfg = load_config(opt.config);
    apply_overrides(cfg, opt);
    cfg.validate();
    if (opt.sample) {
      if (opt.limit) throw ConfigError("--sample and --limit are mutually exclusive");
      opt.limit = cfg.chain.dev_sample_size;
    }
    Runner runner(std::move(cfg), out, err);
    if (*summarize) return runner.summarize(opt.split);
    if (*index) return runner.index(opt.summaries);
    if (*classify) return runner.classify(opt.split, opt.limit);
    if (*eval) return runner.eval(opt.split, opt.predictions, opt.subset, opt.allow_partial);
    if (*base) return runner.baseline_cmd(opt.split, opt.kind);
    if (*pipeline) return runner.pipeline(opt.split, opt.limit);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kInternal;
}

}  // namespace lexchain::cli
