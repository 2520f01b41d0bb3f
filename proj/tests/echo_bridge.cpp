// Test double for the scorer bridge. Scores each candidate by its length.
//
//   --reverse N     buffer N requests, then answer them in reverse order
//   --renumber      answer with id + 1000
//   --die-after N   exit without answering after N requests
//   --oov TOKEN     answer with an error object when TOKEN is a candidate
//   --short         drop the last score of every response
//   --no-hello      skip the handshake

#include "svafreq/bridge.hpp"

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

using namespace svafreq::bridge;

int main(int argc, char** argv) {
    std::size_t reverse = 0;
    bool renumber = false, shortReply = false, hello = true;
    long dieAfter = -1;
    std::string oov;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--reverse" && i + 1 < argc) reverse = std::strtoul(argv[++i], nullptr, 10);
        else if (a == "--renumber") renumber = true;
        else if (a == "--short") shortReply = true;
        else if (a == "--no-hello") hello = false;
        else if (a == "--die-after" && i + 1 < argc) dieAfter = std::atol(argv[++i]);
        else if (a == "--oov" && i + 1 < argc) oov = argv[++i];
    }
    if (hello) std::cout << encode_hello(Hello{kProtocolVersion, "echo"}) << std::endl;

    std::vector<std::string> pending;
    std::string line;
    long seen = 0;
    while (std::getline(std::cin, line)) {
        if (dieAfter >= 0 && seen >= dieAfter) return 0;
        ++seen;
        WireResponse resp;
        try {
            const auto req = decode_request(line);
            resp.id = renumber ? req.id + 1000 : req.id;
            bool bad = false;
            for (const auto& c : req.candidates) {
                if (c == oov) bad = true;
                resp.scores.push_back(static_cast<double>(c.size()));
            }
            if (bad) {
                resp.scores.clear();
                resp.error = "unknown token " + oov;
            } else if (shortReply && !resp.scores.empty()) {
                resp.scores.pop_back();
            }
        } catch (const ProtocolError& e) {
            resp.id = -1;
            resp.error = e.what();
        }
        if (reverse > 0) {
            pending.push_back(encode_response(resp));
            if (pending.size() == reverse) {
                for (auto it = pending.rbegin(); it != pending.rend(); ++it) std::cout << *it << '\n';
                std::cout.flush();
                pending.clear();
            }
        } else {
            std::cout << encode_response(resp) << std::endl;
        }
    }
    for (auto it = pending.rbegin(); it != pending.rend(); ++it) std::cout << *it << '\n';
    std::cout.flush();
    return 0;
}
