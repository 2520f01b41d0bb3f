#include "svafreq/hash.hpp"

#include "svafreq/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

namespace svafreq {

namespace {

struct DigestContext {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

    DigestContext() {
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
            throw Error("sha256: digest initialisation failed");
        }
    }

    void update(const void* data, std::size_t size) {
        if (EVP_DigestUpdate(ctx.get(), data, size) != 1) {
            throw Error("sha256: digest update failed");
        }
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
            throw Error("sha256: digest finalisation failed");
        }
        static constexpr char kDigits[] = "0123456789abcdef";
        std::string out;
        out.reserve(len * 2);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(kDigits[md[i] >> 4]);
            out.push_back(kDigits[md[i] & 0xF]);
        }
        return out;
    }
};

} // namespace

std::string sha256_hex(std::string_view data) {
    DigestContext d;
    d.update(data.data(), data.size());
    return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string() + " for hashing");
    }
    DigestContext d;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) {
            d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    return d.hex();
}

} // namespace svafreq
