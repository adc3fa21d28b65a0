#pragma once

// JSON-over-HTTP clients for the model services.
//
//   POST /v1/chat       {model, prompt, temperature, max_tokens, seed} -> {text}
//   POST /v1/fill-mask  {text, mask_token, top}                        -> {candidates: [{token, score}]}
//   POST /v1/infill     {text, span_token_prefix, spans}               -> {fills: [string]}
//   POST /v1/detect     {text}                                         -> {p_ai}
//   POST /v1/score      {text}                                         -> {score}
//
// Any endpoint may answer {error: {kind, message}}. Connection failures and
// 5xx statuses are transport errors; malformed bodies are contract errors.

#include <chrono>
#include <optional>
#include <string>

#include "evasion/generation.hpp"
#include "evasion/harness.hpp"
#include "evasion/perturbation.hpp"
#include "json.hpp"

namespace evasion {

struct Endpoint {
  std::string url;  // "http://host:port", optionally with a base path
  std::optional<std::string> bearer_token;
  std::chrono::milliseconds timeout{60000};
};

/// POSTs `body` to endpoint.url + path and returns the decoded JSON reply.
nlohmann::json post_json(const Endpoint& endpoint, const std::string& path, const nlohmann::json& body);

class HttpChatProvider final : public GenerationProvider {
 public:
  explicit HttpChatProvider(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string generate(const GenerationRequest& request) override;

 private:
  Endpoint endpoint_;
};

class HttpFillMask final : public FillMaskProvider {
 public:
  explicit HttpFillMask(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<MaskCandidate> predict(std::string_view masked_text, int top) override;

 private:
  Endpoint endpoint_;
};

class HttpInfill final : public InfillProvider {
 public:
  explicit HttpInfill(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<std::string> infill(std::string_view text_with_spans, int span_count) override;

 private:
  Endpoint endpoint_;
};

class HttpDetector final : public DetectorClient {
 public:
  HttpDetector(std::string name, Endpoint endpoint)
      : name_(std::move(name)), endpoint_(std::move(endpoint)) {}
  double detect(std::string_view text) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Endpoint endpoint_;
};

class HttpScorer final : public ScorerClient {
 public:
  HttpScorer(std::string name, Endpoint endpoint)
      : name_(std::move(name)), endpoint_(std::move(endpoint)) {}
  double score(std::string_view text) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Endpoint endpoint_;
};

}  // namespace evasion
