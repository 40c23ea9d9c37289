#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace attriprompt {

// Minimal incremental SHA-256 (FIPS 180-4). Used to fingerprint the frozen
// backbone buffers; self-contained so the numeric library stays free of
// external crypto dependencies.
class Sha256 {
  public:
    Sha256();
    void update(const void* data, std::size_t len);
    // Finalizes and returns the digest as lowercase hex. The object must not
    // be updated afterwards.
    std::string hex_digest();

  private:
    void process_block(const std::uint8_t* block);

    std::uint32_t state_[8];
    std::uint64_t total_len_ = 0;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
    bool finalized_ = false;
};

std::string sha256_hex(const void* data, std::size_t len);

}  // namespace attriprompt
