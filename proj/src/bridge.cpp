#include "svafreq/bridge.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <map>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace svafreq::bridge {

using json = nlohmann::ordered_json;

namespace {

json parse_object(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("malformed JSON line: ") + e.what());
    }
    if (!j.is_object()) {
        throw ProtocolError("expected a JSON object");
    }
    return j;
}

template <class T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) {
        throw ProtocolError(std::string("missing field '") + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ProtocolError(std::string("field '") + key + "' has the wrong type");
    }
}

std::int64_t id_field(const json& j) {
    if (!j.contains("id") || !j["id"].is_number_integer()) {
        throw ProtocolError("missing or non-integer 'id'");
    }
    return j["id"].get<std::int64_t>();
}

} // namespace

std::string encode_hello(const Hello& hello) {
    return json{{"hello", hello.version}, {"model", hello.model}}.dump();
}

Hello decode_hello(std::string_view line) {
    const auto j = parse_object(line);
    return Hello{field<int>(j, "hello"), field<std::string>(j, "model")};
}

std::string encode_request(const WireRequest& r) {
    return json{{"id", r.id}, {"tokens", r.tokens}, {"mask_index", r.maskIndex}, {"candidates", r.candidates}}.dump();
}

WireRequest decode_request(std::string_view line) {
    const auto j = parse_object(line);
    WireRequest r;
    r.id = id_field(j);
    r.tokens = field<std::vector<std::string>>(j, "tokens");
    r.maskIndex = field<std::size_t>(j, "mask_index");
    r.candidates = field<std::vector<std::string>>(j, "candidates");
    return r;
}

std::string encode_response(const WireResponse& r) {
    json j{{"id", r.id}};
    if (r.error) {
        j["error"] = *r.error;
    } else {
        j["scores"] = r.scores;
    }
    return j.dump();
}

WireResponse decode_response(std::string_view line) {
    const auto j = parse_object(line);
    WireResponse r;
    r.id = id_field(j);
    if (j.contains("error")) {
        r.error = field<std::string>(j, "error");
    } else {
        const auto& s = j.contains("scores") ? j["scores"] : json();
        if (!s.is_array()) {
            throw ProtocolError("response has neither 'scores' nor 'error'");
        }
        for (const auto& v : s) {
            if (!v.is_number()) {
                throw ProtocolError("non-numeric score in response " + std::to_string(r.id));
            }
            r.scores.push_back(v.get<double>());
        }
    }
    return r;
}

// ---------------------------------------------------------------------------

struct BridgeScorer::Process {
    pid_t pid = -1;
    int in = -1;   // child's stdin
    int out = -1;  // child's stdout
    std::string buffer;
    bool exited = false;
    int status = 0;
};

BridgeScorer::BridgeScorer(BridgeOptions options) : options_(std::move(options)), proc_(std::make_unique<Process>()) {
    if (options_.command.empty()) {
        throw ValidationError("bridge: empty command");
    }
    if (options_.window == 0) {
        throw ValidationError("bridge: window must be positive");
    }
    int toChild[2];
    int fromChild[2];
    if (pipe2(toChild, O_CLOEXEC) != 0 || pipe2(fromChild, O_CLOEXEC) != 0) {
        throw TransportError(std::string("bridge: pipe failed: ") + std::strerror(errno));
    }
    std::vector<char*> argv;
    for (auto& a : options_.command) argv.push_back(a.data());
    argv.push_back(nullptr);

    const pid_t pid = fork();
    if (pid < 0) {
        throw TransportError(std::string("bridge: fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
        dup2(toChild[0], STDIN_FILENO);
        dup2(fromChild[1], STDOUT_FILENO);
        execvp(argv[0], argv.data());
        _exit(127);
    }
    close(toChild[0]);
    close(fromChild[1]);
    proc_->pid = pid;
    proc_->in = toChild[1];
    proc_->out = fromChild[0];

    try {
        hello_ = decode_hello(read_line());
    } catch (const ProtocolError& e) {
        shutdown();
        throw TransportError(std::string("bridge: bad handshake: ") + e.what());
    } catch (...) {
        shutdown();
        throw;
    }
    if (hello_.version != kProtocolVersion) {
        shutdown();
        throw TransportError("bridge: protocol version " + std::to_string(hello_.version) + ", expected " +
                             std::to_string(kProtocolVersion));
    }
}

BridgeScorer::~BridgeScorer() {
    try {
        shutdown();
    } catch (...) {
    }
}

int BridgeScorer::shutdown() {
    if (proc_->in >= 0) {
        close(proc_->in);
        proc_->in = -1;
    }
    if (proc_->out >= 0) {
        close(proc_->out);
        proc_->out = -1;
    }
    if (proc_->pid > 0 && !proc_->exited) {
        int status = 0;
        while (waitpid(proc_->pid, &status, 0) < 0 && errno == EINTR) {
        }
        proc_->exited = true;
        proc_->status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    }
    return proc_->status;
}

std::string BridgeScorer::read_line() const {
    auto& p = *proc_;
    const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
    for (;;) {
        if (auto nl = p.buffer.find('\n'); nl != std::string::npos) {
            std::string line = p.buffer.substr(0, nl);
            p.buffer.erase(0, nl + 1);
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            throw TransportError("bridge: timed out after " + std::to_string(options_.timeout.count()) + " ms");
        }
        pollfd fd{p.out, POLLIN, 0};
        const int rc = poll(&fd, 1, static_cast<int>(left.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("bridge: poll failed: ") + std::strerror(errno));
        }
        if (rc == 0) continue;
        char chunk[4096];
        const ssize_t n = read(p.out, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("bridge: read failed: ") + std::strerror(errno));
        }
        if (n == 0) {
            throw TransportError("bridge: child closed its output");
        }
        p.buffer.append(chunk, static_cast<std::size_t>(n));
    }
}

void BridgeScorer::write_line(const std::string& line) const {
    // Keep a dead child from killing us with SIGPIPE; the EPIPE is reported instead.
    sigset_t block;
    sigset_t old;
    sigemptyset(&block);
    sigaddset(&block, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &block, &old);
    const std::string data = line + "\n";
    std::size_t off = 0;
    int err = 0;
    while (off < data.size()) {
        const ssize_t n = write(proc_->in, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            err = errno;
            break;
        }
        off += static_cast<std::size_t>(n);
    }
    if (err == EPIPE) {
        timespec zero{0, 0};
        sigtimedwait(&block, nullptr, &zero);
    }
    pthread_sigmask(SIG_SETMASK, &old, nullptr);
    if (err != 0) {
        throw TransportError(std::string("bridge: write failed: ") + std::strerror(err));
    }
}

std::vector<double> BridgeScorer::score(const scorer::ScoreRequest& request) const {
    return score_batch(std::span(&request, 1)).front();
}

std::vector<std::vector<double>> BridgeScorer::score_batch(std::span<const scorer::ScoreRequest> requests) const {
    std::lock_guard lock(mutex_);
    if (proc_->in < 0) {
        throw TransportError("bridge: session is closed");
    }
    for (const auto& r : requests) r.validate();

    std::vector<std::vector<double>> out(requests.size());
    std::map<std::int64_t, std::size_t> inFlight;
    std::size_t sent = 0;
    std::size_t done = 0;
    while (done < requests.size()) {
        while (sent < requests.size() && inFlight.size() < options_.window) {
            const auto& r = requests[sent];
            const std::int64_t id = nextId_++;
            write_line(encode_request(WireRequest{id, r.tokens, r.maskIndex, r.candidates}));
            inFlight.emplace(id, sent++);
        }
        WireResponse resp;
        try {
            resp = decode_response(read_line());
        } catch (const ProtocolError& e) {
            throw TransportError(std::string("bridge: ") + e.what());
        }
        auto it = inFlight.find(resp.id);
        if (it == inFlight.end()) {
            throw TransportError("bridge: response for unknown request id " + std::to_string(resp.id));
        }
        const std::size_t slot = it->second;
        inFlight.erase(it);
        if (resp.error) {
            throw BridgeScoringError(resp.id, *resp.error);
        }
        if (resp.scores.size() != requests[slot].candidates.size()) {
            throw TransportError("bridge: response " + std::to_string(resp.id) + " has " +
                                 std::to_string(resp.scores.size()) + " scores for " +
                                 std::to_string(requests[slot].candidates.size()) + " candidates");
        }
        for (double s : resp.scores) {
            if (!std::isfinite(s)) {
                throw TransportError("bridge: non-finite score in response " + std::to_string(resp.id));
            }
        }
        out[slot] = std::move(resp.scores);
        ++done;
    }
    return out;
}

} // namespace svafreq::bridge
