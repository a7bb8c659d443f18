#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lms {

/// Incremental SHA-256 used for every content digest the pipeline records.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free)
    {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("sha256: init failed");
    }

    Sha256& update(std::span<const std::uint8_t> bytes)
    {
        if (!bytes.empty())
            EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
        return *this;
    }

    Sha256& update(std::string_view text)
    {
        return update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }

    template <class T>
    Sha256& update_pod(const T& value)
    {
        return update(std::span(reinterpret_cast<const std::uint8_t*>(&value), sizeof(T)));
    }

    std::string hex()
    {
        std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string s;
        s.reserve(2 * len);
        for (unsigned i = 0; i < len; ++i) {
            s.push_back(digits[out[i] >> 4]);
            s.push_back(digits[out[i] & 0xF]);
        }
        return s;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view text)
{
    return Sha256().update(text).hex();
}

} // namespace lms
