#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "echo/prompt.hpp"

namespace echo {

struct CompletionRequest {
    std::string model;
    std::string prompt;
    DecodeParams decode;
    std::string tag;  // transcript correlation id, excluded from cache keys
};

enum class FinishReason { stop, length, error };
std::string to_string(FinishReason r);
FinishReason finish_reason_from_string(const std::string& name);

struct CompletionResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    bool cached = false;
};

// Stable content hash over (model, prompt, max_tokens, temperature,
// stop_sequences); identical across processes and platforms.
std::string cache_key(const CompletionRequest& request);

class Backend {
  public:
    virtual ~Backend() = default;

    CompletionResponse complete(const CompletionRequest& request) {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return do_complete(request);
    }

    // Number of completions served by this backend, for request accounting.
    std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

  private:
    virtual CompletionResponse do_complete(const CompletionRequest& request) = 0;
    std::atomic<std::size_t> calls_{0};
};

struct ScriptEntry {
    enum class Matcher { exact, substring };
    Matcher matcher = Matcher::substring;
    std::string pattern;
    std::string response;
};

std::vector<ScriptEntry> load_script(const std::string& path);

/// Deterministic mock: first entry whose pattern matches the prompt wins.
/// Stop sequences are applied to the scripted text, emulating decoding.
class ScriptedBackend : public Backend {
  public:
    explicit ScriptedBackend(std::vector<ScriptEntry> script);

  private:
    CompletionResponse do_complete(const CompletionRequest& request) override;
    std::vector<ScriptEntry> script_;
};

struct HttpOptions {
    std::string endpoint;     // full URL of the completions(-compatible) route
    std::string api_key_env;  // env var holding the bearer token; may be empty
    int max_attempts = 5;
    int base_delay_ms = 1000;  // doubles per attempt, +-20% jitter
    int timeout_seconds = 120;
};

/// Speaks the plain-text completions shape; endpoints whose path contains
/// "/chat/" get the prompt wrapped as a single user message.  Retries only on
/// 429, 5xx and transport timeouts.
class HttpBackend : public Backend {
  public:
    explicit HttpBackend(HttpOptions options);

  private:
    CompletionResponse do_complete(const CompletionRequest& request) override;
    HttpOptions options_;
};

/// Content-addressed read-through cache, one write-once file per key.
/// Corrupt entries fail loudly instead of being recomputed.
class CachedBackend : public Backend {
  public:
    CachedBackend(Backend& inner, std::string cache_dir);
    CachedBackend(std::unique_ptr<Backend> inner, std::string cache_dir);

  private:
    CompletionResponse do_complete(const CompletionRequest& request) override;
    Backend* inner_;
    std::unique_ptr<Backend> owned_;
    std::string dir_;
};

/// Serves exclusively from a cache directory; a miss is an error.
class ReplayBackend : public Backend {
  public:
    explicit ReplayBackend(std::string cache_dir);

  private:
    CompletionResponse do_complete(const CompletionRequest& request) override;
    std::string dir_;
};

enum class BackendKind { http, scripted, replay };

struct BackendSpec {
    BackendKind kind = BackendKind::scripted;
    std::optional<std::string> endpoint;
    std::optional<std::vector<ScriptEntry>> script;
    std::optional<std::string> cache_dir;
    std::string api_key_env;
};

std::unique_ptr<Backend> make_backend(const BackendSpec& spec);

// Positionally aligned responses with at most max_in_flight outstanding
// requests; an individual failure becomes an error response at its index.
std::vector<CompletionResponse> complete_many(Backend& backend,
                                              const std::vector<CompletionRequest>& requests,
                                              int max_in_flight);

}  // namespace echo
