#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace pcvault {

// Injectable randomness. Every key, nonce and share in the library is drawn
// from one of these.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  virtual void fill(std::span<std::uint8_t> out) = 0;

  std::uint64_t next_u64();
};

// OS entropy via libsodium. Throws EntropyUnavailable if libsodium cannot
// initialise.
class SystemRandom final : public RandomSource {
 public:
  SystemRandom();
  void fill(std::span<std::uint8_t> out) override;
};

// Deterministic ChaCha20 keystream keyed by a 64-bit seed. Tests only.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed);
  void fill(std::span<std::uint8_t> out) override;

 private:
  std::array<std::uint8_t, 32> key_{};
  std::uint64_t counter_ = 0;
};

RandomSource& system_random();

// Calls sodium_init() once; throws EntropyUnavailable on failure.
void ensure_sodium();

}  // namespace pcvault
