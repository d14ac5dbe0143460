#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lexchain/chunking.hpp"

namespace lexchain {

enum class BackendKind { generate, summarize, embed };

std::string_view to_string(BackendKind kind);
std::optional<BackendKind> parse_backend_kind(std::string_view text);

struct GreedyDecoding {};

struct SampleDecoding {
  double temperature = 0.7;
  std::uint64_t seed = 0;
};

using Decoding = std::variant<GreedyDecoding, SampleDecoding>;

struct GenerationRequest {
  std::string prompt;
  std::size_t max_new_tokens = 16;
  Decoding decoding = GreedyDecoding{};
};

/// Where and how to reach one model service.
///
/// `endpoint` is either an http:// base URL or one of the offline stubs:
///   stub          compliant behaviour (see StubBackend)
///   stub:echo     summarizer returns its input verbatim
///   stub:chatty   generator wraps the label in a sentence
///   stub:refuse   generator never names a label
///   stub:down     every call fails with a TransportError
struct BackendDescriptor {
  BackendKind kind = BackendKind::generate;
  std::string endpoint = "stub";
  std::size_t context_window = 2048;
  std::size_t embedding_dim = 0;
  std::chrono::milliseconds timeout{60'000};
  std::size_t max_retries = 3;
  std::size_t max_in_flight = 8;
  std::chrono::milliseconds backoff{200};
  std::string api_key;
  /// Ask the service for exact token counts via POST {endpoint}/tokenize.
  bool remote_token_counts = false;

  bool is_stub() const { return endpoint.rfind("stub", 0) == 0; }
  void validate() const;
};

/// Stub descriptor of the given kind (embed: 256 dimensions).
BackendDescriptor default_descriptor(BackendKind kind);

/// Parses a descriptor object; unspecified fields keep their defaults.
BackendDescriptor descriptor_from_json(const nlohmann::json& j, BackendKind kind);
nlohmann::json descriptor_to_json(const BackendDescriptor& desc);

/// Applies LEXCHAIN_<KIND>_ENDPOINT and LEXCHAIN_API_KEY when set.
void apply_env_overrides(BackendDescriptor& desc);

using EmbeddingVector = std::vector<double>;

/// Client for one service. Checks kind and budget preconditions, then
/// dispatches to the transport. Safe to share between threads.
class Backend {
 public:
  explicit Backend(BackendDescriptor desc);
  virtual ~Backend() = default;

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  const BackendDescriptor& descriptor() const { return desc_; }

  std::string generate(const GenerationRequest& req);
  std::string summarize(const std::string& text);
  EmbeddingVector embed(const std::string& text);

  /// Token counter used for budget checks against this backend.
  const TokenCounter& token_counter() const { return *counter_; }

  /// Number of requests dispatched to the transport so far.
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual std::string do_generate(const GenerationRequest& req) = 0;
  virtual std::string do_summarize(const std::string& text) = 0;
  virtual EmbeddingVector do_embed(const std::string& text) = 0;
  virtual std::optional<std::size_t> reported_tokens(std::string_view) { return std::nullopt; }

 private:
  void require_kind(BackendKind kind) const;

  BackendDescriptor desc_;
  std::unique_ptr<TokenCounter> counter_;
  std::atomic<std::size_t> calls_{0};
};

/// Deterministic offline backend.
///
/// generate: reads the last "Options:" line and the "Label: X" exemplar
/// lines of the prompt. Greedy decoding returns the plurality exemplar label
/// (ties go to the exemplar closest to the end of the prompt); sampling draws
/// from the exemplar label counts raised to 1/temperature with a generator
/// seeded from (seed, prompt).
/// summarize: first sentence of the text.
/// embed: lowercased word unigrams hashed into embedding_dim buckets, L2-normalized.
class StubBackend final : public Backend {
 public:
  explicit StubBackend(BackendDescriptor desc);

 protected:
  std::string do_generate(const GenerationRequest& req) override;
  std::string do_summarize(const std::string& text) override;
  EmbeddingVector do_embed(const std::string& text) override;

 private:
  std::string mode_;
};

/// JSON-over-HTTP client:
///   POST {base}/generate  {"prompt", "params": {...}} -> {"text"}
///   POST {base}/summarize {"text", "params": {}}      -> {"text"}
///   POST {base}/embed     {"text", "params": {}}      -> {"vector": [...]}
///   POST {base}/tokenize  {"text"}                     -> {"count"}
/// Transport failures are retried with exponential backoff; non-2xx
/// responses are not.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendDescriptor desc);
  ~HttpBackend() override;

 protected:
  std::string do_generate(const GenerationRequest& req) override;
  std::string do_summarize(const std::string& text) override;
  EmbeddingVector do_embed(const std::string& text) override;
  std::optional<std::size_t> reported_tokens(std::string_view text) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<Backend> make_backend(const BackendDescriptor& desc);

/// Stub embedding of `text` (exposed for tests and tooling).
EmbeddingVector stub_embedding(std::string_view text, std::size_t dim);
/// Bucket a single lowercased word maps to under stub_embedding.
std::size_t stub_bucket(std::string_view word, std::size_t dim);

}  // namespace lexchain
