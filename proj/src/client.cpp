#include "echo/client.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "httplib.h"
#include "json.hpp"

namespace echo {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    throw std::logic_error("unknown finish reason");
}

FinishReason finish_reason_from_string(const std::string& name) {
    if (name == "stop") return FinishReason::stop;
    if (name == "length") return FinishReason::length;
    if (name == "error") return FinishReason::error;
    throw std::runtime_error("unknown finish reason: " + name);
}

namespace {

// Compact SHA-256 (FIPS 180-4); cache keys must be stable across processes
// and platforms, which rules out std::hash.
class Sha256 {
  public:
    Sha256() { reset(); }

    void update(const void* data, std::size_t len) {
        const auto* bytes = static_cast<const std::uint8_t*>(data);
        total_ += len;
        while (len > 0) {
            std::size_t take = std::min<std::size_t>(64 - buffer_len_, len);
            std::memcpy(buffer_ + buffer_len_, bytes, take);
            buffer_len_ += take;
            bytes += take;
            len -= take;
            if (buffer_len_ == 64) {
                process(buffer_);
                buffer_len_ = 0;
            }
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    std::string hex_digest() {
        std::uint64_t bit_len = total_ * 8;
        std::uint8_t pad = 0x80;
        update(&pad, 1);
        std::uint8_t zero = 0;
        while (buffer_len_ != 56) update(&zero, 1);
        std::uint8_t len_bytes[8];
        for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::uint8_t>(bit_len >> (56 - 8 * i));
        update(len_bytes, 8);

        static const char* hex = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (std::uint32_t word : state_) {
            for (int shift = 28; shift >= 0; shift -= 4) out.push_back(hex[(word >> shift) & 0xF]);
        }
        return out;
    }

  private:
    void reset() {
        state_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                  0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
        buffer_len_ = 0;
        total_ = 0;
    }

    static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void process(const std::uint8_t* chunk) {
        static constexpr std::uint32_t k[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
            0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
            0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
            0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
            0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
            0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
            0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
            0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
            0xc67178f2};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i) {
            w[i] = (std::uint32_t(chunk[4 * i]) << 24) | (std::uint32_t(chunk[4 * i + 1]) << 16) |
                   (std::uint32_t(chunk[4 * i + 2]) << 8) | std::uint32_t(chunk[4 * i + 3]);
        }
        for (int i = 16; i < 64; ++i) {
            std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        auto [a, b, c, d, e, f, g, h] =
            std::tuple{state_[0], state_[1], state_[2], state_[3],
                       state_[4], state_[5], state_[6], state_[7]};
        for (int i = 0; i < 64; ++i) {
            std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t temp1 = h + s1 + ch + k[i] + w[i];
            std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t temp2 = s0 + maj;
            h = g;
            g = f;
            f = e;
            e = d + temp1;
            d = c;
            c = b;
            b = a;
            a = temp1 + temp2;
        }
        state_[0] += a;
        state_[1] += b;
        state_[2] += c;
        state_[3] += d;
        state_[4] += e;
        state_[5] += f;
        state_[6] += g;
        state_[7] += h;
    }

    std::array<std::uint32_t, 8> state_;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
    std::uint64_t total_ = 0;
};

std::string format_temperature(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", t);
    return buf;
}

int approx_tokens(const std::string& text) {
    int count = 0;
    bool in_token = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!space && !in_token) ++count;
        in_token = !space;
    }
    return count;
}

// Emulates decoding: cut the response at the first stop sequence.
std::string apply_stops(const std::string& text, const std::vector<std::string>& stops) {
    std::size_t cut = std::string::npos;
    for (const auto& stop : stops) {
        if (stop.empty()) continue;
        auto pos = text.find(stop);
        if (pos != std::string::npos) cut = std::min(cut, pos);
    }
    return cut == std::string::npos ? text : text.substr(0, cut);
}

}  // namespace

std::string cache_key(const CompletionRequest& request) {
    Sha256 h;
    h.update(request.model);
    h.update("\x1f", 1);
    h.update(request.prompt);
    h.update("\x1f", 1);
    h.update(std::to_string(request.decode.max_tokens));
    h.update("\x1f", 1);
    h.update(format_temperature(request.decode.temperature));
    h.update("\x1f", 1);
    for (const auto& stop : request.decode.stop_sequences) {
        h.update(stop);
        h.update("\x1e", 1);
    }
    return h.hex_digest();
}

std::vector<ScriptEntry> load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open script file: " + path);
    std::vector<ScriptEntry> script;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            json rec = json::parse(line);
            ScriptEntry entry;
            entry.matcher = rec.value("matcher", std::string("substring")) == "exact"
                                ? ScriptEntry::Matcher::exact
                                : ScriptEntry::Matcher::substring;
            entry.pattern = rec.at("pattern").get<std::string>();
            entry.response = rec.at("response").get<std::string>();
            script.push_back(std::move(entry));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return script;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> script) : script_(std::move(script)) {}

CompletionResponse ScriptedBackend::do_complete(const CompletionRequest& request) {
    for (const auto& entry : script_) {
        const bool hit = entry.matcher == ScriptEntry::Matcher::exact
                             ? request.prompt == entry.pattern
                             : request.prompt.find(entry.pattern) != std::string::npos;
        if (!hit) continue;
        CompletionResponse resp;
        resp.text = apply_stops(entry.response, request.decode.stop_sequences);
        resp.finish_reason = FinishReason::stop;
        resp.prompt_tokens = approx_tokens(request.prompt);
        resp.completion_tokens = approx_tokens(resp.text);
        return resp;
    }
    throw std::runtime_error("no script entry matches prompt: " + request.prompt.substr(0, 80));
}

namespace {

struct ParsedUrl {
    std::string base;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::runtime_error("endpoint URL lacks a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable_status(int status) { return status == 429 || (status >= 500 && status < 600); }

json request_body(const CompletionRequest& request, bool chat) {
    json body;
    body["model"] = request.model;
    if (chat) {
        body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
    } else {
        body["prompt"] = request.prompt;
    }
    body["max_tokens"] = request.decode.max_tokens;
    body["temperature"] = request.decode.temperature;
    if (!request.decode.stop_sequences.empty()) body["stop"] = request.decode.stop_sequences;
    return body;
}

CompletionResponse parse_http_response(const json& doc, bool chat) {
    CompletionResponse resp;
    const auto& choice = doc.at("choices").at(0);
    if (chat) {
        resp.text = choice.at("message").at("content").get<std::string>();
    } else {
        resp.text = choice.at("text").get<std::string>();
    }
    std::string reason = choice.value("finish_reason", std::string("stop"));
    resp.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
    if (doc.contains("usage")) {
        resp.prompt_tokens = doc.at("usage").value("prompt_tokens", 0);
        resp.completion_tokens = doc.at("usage").value("completion_tokens", 0);
    }
    return resp;
}

}  // namespace

HttpBackend::HttpBackend(HttpOptions options) : options_(std::move(options)) {
    if (options_.endpoint.empty()) throw std::runtime_error("http backend needs an endpoint");
}

CompletionResponse HttpBackend::do_complete(const CompletionRequest& request) {
    const ParsedUrl url = parse_url(options_.endpoint);
    const bool chat = url.path.find("/chat/") != std::string::npos;

    httplib::Client client(url.base);
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);

    httplib::Headers headers = {{"Content-Type", "application/json"}};
    if (!options_.api_key_env.empty()) {
        if (const char* key = std::getenv(options_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const std::string body = request_body(request, chat).dump();
    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};

    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
        if (attempt > 0) {
            double delay = options_.base_delay_ms * std::pow(2.0, attempt - 1);
            double factor = 0.8 + 0.4 * (static_cast<double>(jitter_rng() % 1001) / 1000.0);
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long long>(delay * factor)));
        }
        auto result = client.Post(url.path, headers, body, "application/json");
        if (!result) continue;  // transport failure or timeout, retry
        if (result->status == 200) {
            try {
                return parse_http_response(json::parse(result->body), chat);
            } catch (const std::exception&) {
                break;  // unparseable success body, do not hammer the endpoint
            }
        }
        if (!retryable_status(result->status)) break;  // 4xx other than 429
    }
    CompletionResponse resp;
    resp.finish_reason = FinishReason::error;
    return resp;
}

namespace {

json response_to_json(const CompletionResponse& resp) {
    return {{"text", resp.text},
            {"finish_reason", to_string(resp.finish_reason)},
            {"prompt_tokens", resp.prompt_tokens},
            {"completion_tokens", resp.completion_tokens}};
}

CompletionResponse response_from_json(const json& doc) {
    CompletionResponse resp;
    resp.text = doc.at("text").get<std::string>();
    resp.finish_reason = finish_reason_from_string(doc.at("finish_reason").get<std::string>());
    resp.prompt_tokens = doc.at("prompt_tokens").get<int>();
    resp.completion_tokens = doc.at("completion_tokens").get<int>();
    return resp;
}

std::optional<CompletionResponse> read_cache_entry(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        CompletionResponse resp = response_from_json(json::parse(buffer.str()));
        resp.cached = true;
        return resp;
    } catch (const std::exception& e) {
        // Never silently recompute over a corrupt entry.
        throw std::runtime_error("corrupt cache entry " + path.string() + ": " + e.what());
    }
}

// Write-once: publish via rename so concurrent writers of identical content
// stay benign and readers never see partial files.
void write_cache_entry(const fs::path& path, const CompletionResponse& resp) {
    if (fs::exists(path)) return;  // first writer won
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(
        std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp);
        out << response_to_json(resp).dump();
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fs::remove(tmp, ec);
}

}  // namespace

CachedBackend::CachedBackend(Backend& inner, std::string cache_dir)
    : inner_(&inner), dir_(std::move(cache_dir)) {
    fs::create_directories(dir_);
}

CachedBackend::CachedBackend(std::unique_ptr<Backend> inner, std::string cache_dir)
    : inner_(inner.get()), owned_(std::move(inner)), dir_(std::move(cache_dir)) {
    fs::create_directories(dir_);
}

CompletionResponse CachedBackend::do_complete(const CompletionRequest& request) {
    const fs::path path = fs::path(dir_) / (cache_key(request) + ".json");
    if (auto hit = read_cache_entry(path)) return *hit;
    CompletionResponse resp = inner_->complete(request);
    if (resp.finish_reason != FinishReason::error) write_cache_entry(path, resp);
    return resp;
}

ReplayBackend::ReplayBackend(std::string cache_dir) : dir_(std::move(cache_dir)) {}

CompletionResponse ReplayBackend::do_complete(const CompletionRequest& request) {
    const fs::path path = fs::path(dir_) / (cache_key(request) + ".json");
    if (auto hit = read_cache_entry(path)) return *hit;
    throw std::runtime_error("replay cache miss for prompt: " + request.prompt.substr(0, 80));
}

std::unique_ptr<Backend> make_backend(const BackendSpec& spec) {
    std::unique_ptr<Backend> base;
    switch (spec.kind) {
        case BackendKind::scripted:
            if (!spec.script) throw std::runtime_error("scripted backend needs a script");
            base = std::make_unique<ScriptedBackend>(*spec.script);
            break;
        case BackendKind::http: {
            if (!spec.endpoint) throw std::runtime_error("http backend needs an endpoint");
            HttpOptions options;
            options.endpoint = *spec.endpoint;
            options.api_key_env = spec.api_key_env;
            base = std::make_unique<HttpBackend>(options);
            break;
        }
        case BackendKind::replay:
            if (!spec.cache_dir) throw std::runtime_error("replay backend needs a cache_dir");
            return std::make_unique<ReplayBackend>(*spec.cache_dir);
    }
    if (spec.cache_dir) return std::make_unique<CachedBackend>(std::move(base), *spec.cache_dir);
    return base;
}

std::vector<CompletionResponse> complete_many(Backend& backend,
                                              const std::vector<CompletionRequest>& requests,
                                              int max_in_flight) {
    if (max_in_flight < 1) throw std::runtime_error("max_in_flight must be >= 1");
    std::vector<CompletionResponse> responses(requests.size());
    if (requests.empty()) return responses;

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= requests.size()) return;
            try {
                responses[i] = backend.complete(requests[i]);
            } catch (const std::exception&) {
                responses[i] = CompletionResponse{};
                responses[i].finish_reason = FinishReason::error;
            }
        }
    };

    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), requests.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return responses;
}

}  // namespace echo
