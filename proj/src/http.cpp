#include "evasion/http.hpp"

#include "evasion/error.hpp"
#include "httplib.h"

namespace evasion {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("endpoint URL needs a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http") throw InvalidArgument("only http:// endpoints are supported: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) out.base_path = url.substr(path_start);
  while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  return out;
}

[[noreturn]] void throw_reply_error(const nlohmann::json& err, const std::string& where) {
  auto kind = ProviderErrorKind::kContract;
  std::string message = "unspecified error";
  if (err.is_object()) {
    if (err.contains("kind") && err.at("kind").is_string()) {
      try {
        kind = provider_error_kind_from_string(err.at("kind").get<std::string>());
      } catch (const InvalidArgument&) {
        kind = ProviderErrorKind::kContract;
      }
    }
    if (err.contains("message") && err.at("message").is_string()) message = err.at("message").get<std::string>();
  }
  throw ProviderError(kind, where + ": " + message);
}

template <typename T>
T field(const nlohmann::json& reply, const char* key, const std::string& where) {
  if (!reply.is_object() || !reply.contains(key)) {
    throw ProviderError(ProviderErrorKind::kContract, where + ": reply lacks '" + key + "'");
  }
  try {
    return reply.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProviderError(ProviderErrorKind::kContract, where + ": '" + key + "' has the wrong type");
  }
}

}  // namespace

nlohmann::json post_json(const Endpoint& endpoint, const std::string& path, const nlohmann::json& body) {
  const auto url = split_url(endpoint.url);
  const auto where = "POST " + endpoint.url + path;
  httplib::Client client(url.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (endpoint.bearer_token && !endpoint.bearer_token->empty()) {
    headers.emplace("Authorization", "Bearer " + *endpoint.bearer_token);
  }

  auto res = client.Post(url.base_path + path, headers, body.dump(), "application/json");
  if (!res) {
    throw ProviderError(ProviderErrorKind::kTransport, where + ": " + httplib::to_string(res.error()));
  }

  nlohmann::json reply;
  bool parsed = true;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    parsed = false;
  }
  if (parsed && reply.is_object() && reply.contains("error")) {
    if (res->status >= 500) {
      // A 5xx stays retryable even when the body names a kind.
      std::string message = reply.at("error").is_object() ? reply.at("error").value("message", "") : "";
      throw ProviderError(ProviderErrorKind::kTransport,
                          where + ": HTTP " + std::to_string(res->status) + " " + message);
    }
    throw_reply_error(reply.at("error"), where);
  }
  if (res->status >= 500) {
    throw ProviderError(ProviderErrorKind::kTransport, where + ": HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError(ProviderErrorKind::kContract, where + ": HTTP " + std::to_string(res->status));
  }
  if (!parsed) throw ProviderError(ProviderErrorKind::kContract, where + ": reply is not JSON");
  return reply;
}

std::string HttpChatProvider::generate(const GenerationRequest& request) {
  nlohmann::json body;
  body["model"] = request.model_name;
  body["prompt"] = request.prompt.serialize();
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  body["seed"] = request.seed ? nlohmann::json(*request.seed) : nlohmann::json(nullptr);
  const auto reply = post_json(endpoint_, "/v1/chat", body);
  auto text = field<std::string>(reply, "text", "/v1/chat");
  if (text.empty()) throw ProviderError(ProviderErrorKind::kEmpty, "/v1/chat: empty text");
  return text;
}

std::vector<MaskCandidate> HttpFillMask::predict(std::string_view masked_text, int top) {
  nlohmann::json body;
  body["text"] = std::string(masked_text);
  body["mask_token"] = std::string(kMaskToken);
  body["top"] = top;
  const auto reply = post_json(endpoint_, "/v1/fill-mask", body);
  const auto list = field<nlohmann::json>(reply, "candidates", "/v1/fill-mask");
  if (!list.is_array()) throw ProviderError(ProviderErrorKind::kContract, "/v1/fill-mask: candidates is not an array");
  std::vector<MaskCandidate> out;
  for (const auto& c : list) {
    out.push_back({field<std::string>(c, "token", "/v1/fill-mask"), field<double>(c, "score", "/v1/fill-mask")});
  }
  return out;
}

std::vector<std::string> HttpInfill::infill(std::string_view text_with_spans, int span_count) {
  nlohmann::json body;
  body["text"] = std::string(text_with_spans);
  body["span_token_prefix"] = std::string(kSpanTokenPrefix);
  body["spans"] = span_count;
  const auto reply = post_json(endpoint_, "/v1/infill", body);
  return field<std::vector<std::string>>(reply, "fills", "/v1/infill");
}

double HttpDetector::detect(std::string_view text) {
  const auto reply = post_json(endpoint_, "/v1/detect", {{"text", std::string(text)}});
  return field<double>(reply, "p_ai", "/v1/detect");
}

double HttpScorer::score(std::string_view text) {
  const auto reply = post_json(endpoint_, "/v1/score", {{"text", std::string(text)}});
  return field<double>(reply, "score", "/v1/score");
}

}  // namespace evasion
