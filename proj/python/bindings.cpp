#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "lexchain/chain.hpp"
#include "lexchain/chunking.hpp"
#include "lexchain/cli.hpp"
#include "lexchain/error.hpp"
#include "lexchain/evaluation.hpp"
#include "lexchain/index.hpp"

namespace py = pybind11;
using namespace lexchain;

namespace {

std::vector<LabelId> to_labels(const std::vector<std::string>& names) {
  return {names.begin(), names.end()};
}

LabelId canonical(const LabelSpace& space, const std::string& raw) {
  auto found = space.find(raw);
  if (!found) throw LabelError(raw, "");
  return *found;
}

py::dict evaluate(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                  const std::string& space_name) {
  const auto space = LabelSpace::resolve(space_name);
  std::vector<LabelId> g, p;
  for (const auto& s : gold) g.push_back(canonical(space, s));
  for (const auto& s : predicted) p.push_back(canonical(space, s));
  const auto matrix = confusion_from_pairs(g, p, space);
  const auto json = report_to_json(score(matrix), matrix);
  return py::module_::import("json").attr("loads")(json.dump());
}

}  // namespace

PYBIND11_MODULE(_lexchain, m) {
  m.doc() = "Native core of the lexchain package";

  py::register_exception<Error>(m, "LexchainError", PyExc_RuntimeError);

  py::class_<TokenBudget>(m, "TokenBudget")
      .def(py::init([](std::size_t context_window, std::size_t summary_target, std::size_t max_rounds,
                       std::size_t prompt_reserve) {
             TokenBudget b{context_window, summary_target, max_rounds, prompt_reserve};
             b.validate();
             return b;
           }),
           py::arg("context_window") = 2048, py::arg("summary_target") = 128, py::arg("max_rounds") = 8,
           py::arg("prompt_reserve") = 24)
      .def_readonly("context_window", &TokenBudget::context_window)
      .def_readonly("summary_target", &TokenBudget::summary_target)
      .def_readonly("max_rounds", &TokenBudget::max_rounds)
      .def_readonly("prompt_reserve", &TokenBudget::prompt_reserve)
      .def_property_readonly("chunk_capacity", &TokenBudget::chunk_capacity);

  py::class_<Chunk>(m, "Chunk")
      .def_readonly("sentences", &Chunk::sentences)
      .def_readonly("token_count", &Chunk::token_count)
      .def_readonly("truncated", &Chunk::truncated)
      .def_property_readonly("text", &Chunk::text);

  py::class_<Summary>(m, "Summary")
      .def_readonly("doc_id", &Summary::doc_id)
      .def_readonly("text", &Summary::text)
      .def_readonly("token_count", &Summary::token_count)
      .def_readonly("rounds", &Summary::rounds)
      .def_readonly("truncated", &Summary::truncated)
      .def("__repr__", [](const Summary& s) {
        return "<Summary " + s.doc_id + " tokens=" + std::to_string(s.token_count) +
               " rounds=" + std::to_string(s.rounds) + ">";
      });

  m.def("count_tokens", [](std::string_view text) { return count_tokens(text); }, py::arg("text"),
        "Heuristic token count: ceil(words * 4 / 3).");
  m.def("segment_sentences", &segment_sentences, py::arg("text"));
  m.def("pack_chunks",
        [](const std::vector<std::string>& sentences, const TokenBudget& budget) {
          return pack_chunks(sentences, budget);
        },
        py::arg("sentences"), py::arg("budget") = TokenBudget{});
  m.def("iterative_summarize",
        [](const std::string& doc_id, const std::string& text, const ChunkSummarizer& summarizer,
           const TokenBudget& budget) { return iterative_summarize(doc_id, text, summarizer, budget); },
        py::arg("doc_id"), py::arg("text"), py::arg("summarizer"), py::arg("budget") = TokenBudget{},
        "Summarize chunk by chunk with summarizer(str) -> str until the text fits the target.");

  m.def("label_space",
        [](const std::string& name) {
          const auto space = LabelSpace::resolve(name);
          std::vector<std::string> out;
          for (const auto& l : space.labels()) out.push_back(l.name());
          return out;
        },
        py::arg("name"), "Label names of 'echr', 'scotus' or a label-space JSON file.");
  m.def("evaluate", &evaluate, py::arg("gold"), py::arg("predicted"), py::arg("label_space"),
        "Scores aligned gold/predicted label lists; returns the report as a dict.");
  m.def("round3", &round3, py::arg("x"));
  m.def("vote",
        [](const std::vector<std::string>& labels, const std::string& nearest) {
          return self_consistency_vote(to_labels(labels), LabelId(nearest)).name();
        },
        py::arg("labels"), py::arg("nearest"));
  m.def("parse_label",
        [](std::string_view generated, const std::vector<std::string>& options, const std::string& nearest) {
          const auto r = parse_label(generated, to_labels(options), LabelId(nearest));
          return py::make_tuple(r.label.name(), r.fallback);
        },
        py::arg("generated"), py::arg("options"), py::arg("nearest"),
        "Returns (label, fallback_used).");

  py::class_<NeighborHit>(m, "Hit")
      .def_readonly("doc_id", &NeighborHit::doc_id)
      .def_readonly("similarity", &NeighborHit::similarity)
      .def_property_readonly("label", [](const NeighborHit& h) { return h.label.name(); })
      .def("__repr__", [](const NeighborHit& h) {
        std::ostringstream s;
        s << "<Hit " << h.doc_id << " " << h.similarity << " " << h.label.name() << ">";
        return s.str();
      });

  py::class_<EmbeddingIndex>(m, "Index")
      .def_static(
          "build",
          [](const std::vector<std::string>& ids, const std::vector<std::vector<double>>& vectors,
             const std::vector<std::string>& labels, const std::string& mode, std::size_t n_trees,
             std::size_t leaf_size, std::uint64_t seed, std::size_t search_k) {
            if (ids.size() != vectors.size() || ids.size() != labels.size())
              throw py::value_error("ids, vectors and labels must have equal length");
            std::vector<IndexEntry> entries;
            for (std::size_t i = 0; i < ids.size(); ++i) entries.push_back({ids[i], vectors[i], LabelId(labels[i])});
            IndexMode m;
            if (mode == "exact") {
              m = ExactMode{};
            } else if (mode == "forest") {
              m = ForestMode{.n_trees = n_trees, .leaf_size = leaf_size, .seed = seed, .search_k = search_k};
            } else {
              throw py::value_error("mode must be 'exact' or 'forest'");
            }
            return EmbeddingIndex::build(std::move(entries), m);
          },
          py::arg("ids"), py::arg("vectors"), py::arg("labels"), py::arg("mode") = "exact",
          py::arg("n_trees") = 50, py::arg("leaf_size") = 16, py::arg("seed") = 0, py::arg("search_k") = 0)
      .def_static("load", &EmbeddingIndex::load, py::arg("path"))
      .def("save", &EmbeddingIndex::save, py::arg("path"))
      .def("query",
           [](const EmbeddingIndex& idx, const std::vector<double>& v, std::size_t k) { return idx.query(v, k); },
           py::arg("vector"), py::arg("k"))
      .def_property_readonly("dim", &EmbeddingIndex::dim)
      .def("__len__", &EmbeddingIndex::size)
      .def("__contains__", [](const EmbeddingIndex& idx, const std::string& id) { return idx.contains(id); });

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::vector<std::string> full{"lexchain"};
          full.insert(full.end(), args.begin(), args.end());
          std::vector<const char*> argv;
          for (const auto& a : full) argv.push_back(a.c_str());
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
