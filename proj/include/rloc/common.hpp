#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rloc {

// Error categories map 1:1 onto CLI exit codes (see tools/).
enum class errc { config = 2, data = 3, training = 4 };

class error : public std::runtime_error {
public:
    error(errc kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    errc kind() const noexcept { return kind_; }

private:
    errc kind_;
};

struct config_error : error {
    explicit config_error(const std::string& what) : error(errc::config, what) {}
};

struct data_error : error {
    explicit data_error(const std::string& what) : error(errc::data, what) {}
};

struct training_error : error {
    explicit training_error(const std::string& what) : error(errc::training, what) {}
};

// Station identity is the (rnc, cell) pair; neither field alone is unique.
struct StationId {
    std::int32_t rnc = 0;
    std::int32_t cell = 0;

    friend auto operator<=>(const StationId&, const StationId&) = default;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

} // namespace rloc
