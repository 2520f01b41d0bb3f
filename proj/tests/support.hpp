#pragma once

#include "svafreq/types.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace svafreq::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("svafreq-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Lexeme noun(const std::string& sg, const std::string& pl) {
    return Lexeme{sg, sg, pl, PartOfSpeech::Noun, false, std::nullopt};
}

inline Lexeme verb(const std::string& lemma, const std::string& sg, const std::string& pl, bool transitive = true) {
    return Lexeme{lemma, sg, pl, PartOfSpeech::Verb, transitive, std::nullopt};
}

inline std::filesystem::path data_dir() {
    return SVAFREQ_DATA_DIR;
}

inline std::filesystem::path golden_dir() {
    return SVAFREQ_GOLDEN_DIR;
}

} // namespace svafreq::testing
