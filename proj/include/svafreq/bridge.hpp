#pragma once

#include "svafreq/error.hpp"
#include "svafreq/scorer.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace svafreq::bridge {

/// Line-delimited JSON spoken with an external scorer process over its
/// standard streams.
///
///   child -> {"hello": 1, "model": "<id>"}
///   core  -> {"id": 7, "tokens": [...], "mask_index": 3, "candidates": ["runs", "run"]}
///   child -> {"id": 7, "scores": [-1.2, -3.4]}   or   {"id": 7, "error": "..."}
///
/// Responses may arrive in any order.
constexpr int kProtocolVersion = 1;

struct Hello {
    int version = kProtocolVersion;
    std::string model;

    bool operator==(const Hello&) const = default;
};

struct WireRequest {
    std::int64_t id = 0;
    std::vector<std::string> tokens;
    std::size_t maskIndex = 0;
    std::vector<std::string> candidates;

    bool operator==(const WireRequest&) const = default;
};

struct WireResponse {
    std::int64_t id = 0;
    std::vector<double> scores;
    std::optional<std::string> error;

    bool operator==(const WireResponse&) const = default;
};

/// Encoders return a single line without the trailing newline.
/// Decoders throw ProtocolError on malformed input.
std::string encode_hello(const Hello& hello);
Hello decode_hello(std::string_view line);
std::string encode_request(const WireRequest& request);
WireRequest decode_request(std::string_view line);
std::string encode_response(const WireResponse& response);
WireResponse decode_response(std::string_view line);

class ProtocolError : public Error {
public:
    using Error::Error;
};

/// The child died, closed its output or timed out.
class TransportError : public Error {
public:
    using Error::Error;
};

/// The child answered a request with an error object.
class BridgeScoringError : public Error {
public:
    BridgeScoringError(std::int64_t id, const std::string& message)
        : Error("bridge error for request " + std::to_string(id) + ": " + message), id_(id) {}
    std::int64_t id() const noexcept { return id_; }

private:
    std::int64_t id_;
};

struct BridgeOptions {
    /// Executable followed by its arguments; looked up on PATH.
    std::vector<std::string> command;
    /// Maximum number of requests in flight.
    std::size_t window = 32;
    std::chrono::milliseconds timeout{60000};
};

/// Scorer backed by a child process speaking the wire protocol.
class BridgeScorer final : public scorer::Scorer {
public:
    /// Spawns the child and waits for the handshake.
    explicit BridgeScorer(BridgeOptions options);
    ~BridgeScorer() override;

    BridgeScorer(const BridgeScorer&) = delete;
    BridgeScorer& operator=(const BridgeScorer&) = delete;

    std::string id() const override { return "bridge:" + hello_.model; }
    std::vector<double> score(const scorer::ScoreRequest& request) const override;

    /// Pipelines the requests and returns scores in request order.
    std::vector<std::vector<double>> score_batch(std::span<const scorer::ScoreRequest> requests) const;

    const Hello& hello() const noexcept { return hello_; }

    /// Closes the child's input and waits for it. Returns its exit status.
    int shutdown();

private:
    struct Process;

    std::string read_line() const;
    void write_line(const std::string& line) const;

    BridgeOptions options_;
    std::unique_ptr<Process> proc_;
    Hello hello_;
    mutable std::mutex mutex_;
    mutable std::int64_t nextId_ = 0;
};

} // namespace svafreq::bridge
