#include "lexchain/backend.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lexchain/error.hpp"
#include "lexchain/util.hpp"

namespace lexchain {

using nlohmann::json;

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::generate: return "generate";
    case BackendKind::summarize: return "summarize";
    case BackendKind::embed: return "embed";
  }
  return "generate";
}

std::optional<BackendKind> parse_backend_kind(std::string_view text) {
  const std::string s = to_lower(trim(text));
  if (s == "generate") return BackendKind::generate;
  if (s == "summarize") return BackendKind::summarize;
  if (s == "embed") return BackendKind::embed;
  return std::nullopt;
}

void BackendDescriptor::validate() const {
  const std::string name(to_string(kind));
  if (context_window == 0) throw ConfigError(name + " backend: context_window must be positive");
  if (kind == BackendKind::embed && embedding_dim == 0)
    throw ConfigError("embed backend: embedding_dim must be positive");
  if (max_in_flight == 0) throw ConfigError(name + " backend: max_in_flight must be positive");
  if (endpoint.empty()) throw ConfigError(name + " backend: empty endpoint");
  if (is_stub()) {
    static const std::vector<std::string> modes = {"stub", "stub:echo", "stub:chatty",
                                                   "stub:refuse", "stub:down"};
    if (std::find(modes.begin(), modes.end(), endpoint) == modes.end())
      throw ConfigError(name + " backend: unknown stub '" + endpoint + "'");
  } else if (endpoint.rfind("http://", 0) != 0) {
    throw ConfigError(name + " backend: endpoint must be http://... or a stub, got '" +
                      endpoint + "'");
  }
}

BackendDescriptor default_descriptor(BackendKind kind) {
  BackendDescriptor d;
  d.kind = kind;
  if (kind == BackendKind::embed) d.embedding_dim = 256;
  return d;
}

BackendDescriptor descriptor_from_json(const json& j, BackendKind kind) {
  BackendDescriptor d = default_descriptor(kind);
  try {
    if (j.contains("kind")) {
      auto k = parse_backend_kind(j.at("kind").get<std::string>());
      if (!k || *k != kind)
        throw ConfigError("backend kind mismatch: expected " + std::string(to_string(kind)));
    }
    d.endpoint = j.value("endpoint", d.endpoint);
    d.context_window = j.value("context_window", d.context_window);
    d.embedding_dim = j.value("embedding_dim", d.embedding_dim);
    d.timeout = std::chrono::milliseconds(
        static_cast<long long>(j.value("timeout_s", 60.0) * 1000.0));
    d.max_retries = j.value("max_retries", d.max_retries);
    d.max_in_flight = j.value("max_in_flight", d.max_in_flight);
    d.backoff = std::chrono::milliseconds(j.value("backoff_ms", 200));
    d.api_key = j.value("api_key", std::string());
    d.remote_token_counts = j.value("remote_token_counts", false);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(to_string(kind)) + " backend: " + e.what());
  }
  return d;
}

json descriptor_to_json(const BackendDescriptor& d) {
  return {{"kind", std::string(to_string(d.kind))},
          {"endpoint", d.endpoint},
          {"context_window", d.context_window},
          {"embedding_dim", d.embedding_dim},
          {"timeout_s", static_cast<double>(d.timeout.count()) / 1000.0},
          {"max_retries", d.max_retries},
          {"max_in_flight", d.max_in_flight},
          {"backoff_ms", d.backoff.count()},
          {"remote_token_counts", d.remote_token_counts}};
}

void apply_env_overrides(BackendDescriptor& desc) {
  std::string var = "LEXCHAIN_" + std::string(to_string(desc.kind)) + "_ENDPOINT";
  for (char& c : var) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (const char* endpoint = std::getenv(var.c_str()); endpoint && *endpoint)
    desc.endpoint = endpoint;
  if (const char* key = std::getenv("LEXCHAIN_API_KEY"); key && *key) desc.api_key = key;
}

// ---------------------------------------------------------------------------

Backend::Backend(BackendDescriptor desc) : desc_(std::move(desc)) {
  desc_.validate();
  if (desc_.remote_token_counts) {
    counter_ = std::make_unique<ReportedCounter>(
        [this](std::string_view text) { return reported_tokens(text); });
  } else {
    counter_ = std::make_unique<HeuristicCounter>();
  }
}

void Backend::require_kind(BackendKind kind) const {
  if (desc_.kind != kind)
    throw PreconditionError("backend '" + desc_.endpoint + "' is a " +
                            std::string(to_string(desc_.kind)) + " backend, not " +
                            std::string(to_string(kind)));
}

std::string Backend::generate(const GenerationRequest& req) {
  require_kind(BackendKind::generate);
  if (req.max_new_tokens == 0) throw PreconditionError("max_new_tokens must be positive");
  const std::size_t prompt_tokens = counter_->count(req.prompt);
  if (prompt_tokens + req.max_new_tokens > desc_.context_window)
    throw BudgetError("prompt of " + std::to_string(prompt_tokens) + " tokens + " +
                      std::to_string(req.max_new_tokens) + " new tokens exceeds window of " +
                      std::to_string(desc_.context_window));
  ++calls_;
  return do_generate(req);
}

std::string Backend::summarize(const std::string& text) {
  require_kind(BackendKind::summarize);
  const std::size_t tokens = counter_->count(text);
  if (tokens > desc_.context_window)
    throw BudgetError("summarization input of " + std::to_string(tokens) +
                      " tokens exceeds window of " + std::to_string(desc_.context_window));
  ++calls_;
  auto out = do_summarize(text);
  if (trim(out).empty()) throw ServiceError(200, "empty summary returned");
  return out;
}

EmbeddingVector Backend::embed(const std::string& text) {
  require_kind(BackendKind::embed);
  ++calls_;
  auto v = do_embed(text);
  if (v.size() != desc_.embedding_dim)
    throw ServiceError(200, "embedding has dimension " + std::to_string(v.size()) +
                                ", expected " + std::to_string(desc_.embedding_dim));
  for (double x : v) {
    if (!std::isfinite(x)) throw ServiceError(200, "embedding contains non-finite values");
  }
  return v;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> stub_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

struct ParsedPrompt {
  std::vector<std::string> options;
  std::vector<std::string> exemplar_labels;  // in prompt order, mapped onto options
};

ParsedPrompt parse_prompt(const std::string& prompt) {
  ParsedPrompt parsed;
  std::vector<std::string> raw_labels;
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.rfind("Options:", 0) == 0) {
      parsed.options.clear();
      std::string rest(t.substr(8));
      std::istringstream items(rest);
      std::string item;
      while (std::getline(items, item, ',')) {
        auto name = trim(item);
        if (!name.empty()) parsed.options.emplace_back(name);
      }
    } else if (t.rfind("Label:", 0) == 0) {
      auto value = trim(t.substr(6));
      if (!value.empty()) raw_labels.emplace_back(value);
    }
  }
  for (const auto& raw : raw_labels) {
    for (const auto& opt : parsed.options) {
      if (to_lower(opt) == to_lower(raw)) {
        parsed.exemplar_labels.push_back(opt);
        break;
      }
    }
  }
  return parsed;
}

std::string stub_label(const std::string& prompt, const Decoding& decoding) {
  auto parsed = parse_prompt(prompt);
  if (parsed.options.empty()) {
    auto sentences = segment_sentences(prompt);
    return sentences.empty() ? std::string("") : sentences.front();
  }
  if (parsed.exemplar_labels.empty()) return parsed.options.front();

  // Categories in order of first occurrence; last_seen for the greedy tie rule.
  std::vector<std::string> cats;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> last_seen;
  for (std::size_t i = 0; i < parsed.exemplar_labels.size(); ++i) {
    const auto& l = parsed.exemplar_labels[i];
    auto it = std::find(cats.begin(), cats.end(), l);
    if (it == cats.end()) {
      cats.push_back(l);
      counts.push_back(1);
      last_seen.push_back(i);
    } else {
      const auto k = static_cast<std::size_t>(it - cats.begin());
      ++counts[k];
      last_seen[k] = i;
    }
  }

  if (const auto* sample = std::get_if<SampleDecoding>(&decoding)) {
    const double inv_t = 1.0 / sample->temperature;
    std::vector<double> weights;
    double total = 0.0;
    for (std::size_t c : counts) {
      weights.push_back(std::pow(static_cast<double>(c), inv_t));
      total += weights.back();
    }
    Rng rng(mix_seed(sample->seed, fnv1a64(prompt)));
    double u = rng.uniform() * total;
    for (std::size_t k = 0; k < cats.size(); ++k) {
      if (u < weights[k]) return cats[k];
      u -= weights[k];
    }
    return cats.back();
  }

  std::size_t best = 0;
  for (std::size_t k = 1; k < cats.size(); ++k) {
    if (counts[k] > counts[best] || (counts[k] == counts[best] && last_seen[k] > last_seen[best]))
      best = k;
  }
  return cats[best];
}

}  // namespace

std::size_t stub_bucket(std::string_view word, std::size_t dim) {
  return static_cast<std::size_t>(fnv1a64(word) % dim);
}

EmbeddingVector stub_embedding(std::string_view text, std::size_t dim) {
  EmbeddingVector v(dim, 0.0);
  auto words = stub_words(text);
  if (words.empty()) words.emplace_back();
  for (const auto& w : words) v[stub_bucket(w, dim)] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

StubBackend::StubBackend(BackendDescriptor desc) : Backend(std::move(desc)) {
  mode_ = descriptor().endpoint == "stub" ? "" : descriptor().endpoint.substr(5);
}

std::string StubBackend::do_generate(const GenerationRequest& req) {
  if (mode_ == "down") throw TransportError("stub backend is down");
  if (mode_ == "refuse") return "I cannot determine this from the text provided.";
  auto label = stub_label(req.prompt, req.decoding);
  if (mode_ == "chatty") return " The most fitting answer here is " + label + ".\n";
  return label;
}

std::string StubBackend::do_summarize(const std::string& text) {
  if (mode_ == "down") throw TransportError("stub backend is down");
  if (mode_ == "echo") return text;
  auto sentences = segment_sentences(text);
  return sentences.empty() ? text : sentences.front();
}

EmbeddingVector StubBackend::do_embed(const std::string& text) {
  if (mode_ == "down") throw TransportError("stub backend is down");
  return stub_embedding(text, descriptor().embedding_dim);
}

// ---------------------------------------------------------------------------

namespace {

using Semaphore = std::counting_semaphore<>;

/// One in-flight limiter per (kind, endpoint), shared by every client.
std::shared_ptr<Semaphore> limiter_for(const BackendDescriptor& d) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<Semaphore>> limiters;
  const std::string key = std::string(to_string(d.kind)) + "|" + d.endpoint;
  std::lock_guard lock(mu);
  auto& slot = limiters[key];
  if (!slot) slot = std::make_shared<Semaphore>(static_cast<std::ptrdiff_t>(d.max_in_flight));
  return slot;
}

class SlotGuard {
 public:
  explicit SlotGuard(Semaphore& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  Semaphore& s_;
};

}  // namespace

struct HttpBackend::Impl {
  std::string host;  // scheme://host:port
  std::string base_path;
  std::shared_ptr<Semaphore> limiter;
  std::atomic<bool> tokenize_unsupported{false};

  json post(const BackendDescriptor& d, const std::string& route, const json& body) {
    SlotGuard slot(*limiter);
    httplib::Client client(host);
    const auto secs = d.timeout.count() / 1000;
    const auto usecs = (d.timeout.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!d.api_key.empty()) headers.emplace("Authorization", "Bearer " + d.api_key);

    const std::string path = base_path + route;
    const std::string payload = body.dump();
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= d.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(d.backoff * (1LL << (attempt - 1)));
      auto res = client.Post(path, headers, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw ServiceError(res->status, route + ": " + res->body.substr(0, 200));
      try {
        return json::parse(res->body);
      } catch (const json::parse_error&) {
        throw ServiceError(res->status, route + ": response is not JSON");
      }
    }
    throw TransportError(host + path + ": " + last_error + " after " +
                         std::to_string(d.max_retries + 1) + " attempts");
  }
};

namespace {

std::string text_field(const json& j, const std::string& route) {
  if (!j.is_object() || !j.contains("text") || !j.at("text").is_string())
    throw ServiceError(200, route + ": response lacks string field 'text'");
  return j.at("text").get<std::string>();
}

}  // namespace

HttpBackend::HttpBackend(BackendDescriptor desc)
    : Backend(std::move(desc)), impl_(std::make_unique<Impl>()) {
  const std::string& url = descriptor().endpoint;
  const auto after_scheme = url.find("://") + 3;
  const auto slash = url.find('/', after_scheme);
  impl_->host = url.substr(0, slash);
  impl_->base_path = slash == std::string::npos ? "" : url.substr(slash);
  while (!impl_->base_path.empty() && impl_->base_path.back() == '/') impl_->base_path.pop_back();
  impl_->limiter = limiter_for(descriptor());
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::do_generate(const GenerationRequest& req) {
  json params = {{"max_new_tokens", req.max_new_tokens}};
  if (const auto* s = std::get_if<SampleDecoding>(&req.decoding)) {
    params["decoding"] = "sample";
    params["temperature"] = s->temperature;
    params["seed"] = s->seed;
  } else {
    params["decoding"] = "greedy";
  }
  return text_field(impl_->post(descriptor(), "/generate", {{"prompt", req.prompt}, {"params", params}}),
                    "/generate");
}

std::string HttpBackend::do_summarize(const std::string& text) {
  return text_field(
      impl_->post(descriptor(), "/summarize", {{"text", text}, {"params", json::object()}}),
      "/summarize");
}

EmbeddingVector HttpBackend::do_embed(const std::string& text) {
  auto j = impl_->post(descriptor(), "/embed", {{"text", text}, {"params", json::object()}});
  if (!j.is_object() || !j.contains("vector") || !j.at("vector").is_array())
    throw ServiceError(200, "/embed: response lacks array field 'vector'");
  EmbeddingVector v;
  for (const auto& x : j.at("vector")) {
    if (!x.is_number()) throw ServiceError(200, "/embed: non-numeric vector entry");
    v.push_back(x.get<double>());
  }
  return v;
}

std::optional<std::size_t> HttpBackend::reported_tokens(std::string_view text) {
  if (impl_->tokenize_unsupported) return std::nullopt;
  try {
    auto j = impl_->post(descriptor(), "/tokenize", {{"text", std::string(text)}});
    if (j.is_object() && j.contains("count") && j.at("count").is_number_unsigned())
      return j.at("count").get<std::size_t>();
  } catch (const ServiceError& e) {
    if (e.status() == 404) impl_->tokenize_unsupported = true;
  } catch (const TransportError&) {
  }
  return std::nullopt;
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor& desc) {
  if (desc.is_stub()) return std::make_unique<StubBackend>(desc);
  return std::make_unique<HttpBackend>(desc);
}

}  // namespace lexchain
