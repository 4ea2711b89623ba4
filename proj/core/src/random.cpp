#include "pcvault/random.hpp"

#include <sodium.h>

#include "pcvault/bytes.hpp"
#include "pcvault/error.hpp"

namespace pcvault {

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error(Errc::EntropyUnavailable, "libsodium failed to initialise");
}

std::uint64_t RandomSource::next_u64() {
  std::array<std::uint8_t, 8> b{};
  fill(b);
  return load_le<std::uint64_t>(b.data());
}

SystemRandom::SystemRandom() { ensure_sodium(); }

void SystemRandom::fill(std::span<std::uint8_t> out) { randombytes_buf(out.data(), out.size()); }

SeededRandom::SeededRandom(std::uint64_t seed) {
  ensure_sodium();
  std::array<std::uint8_t, 8> s{};
  store_le(s.data(), seed);
  crypto_generichash(key_.data(), key_.size(), s.data(), s.size(), nullptr, 0);
}

void SeededRandom::fill(std::span<std::uint8_t> out) {
  std::array<std::uint8_t, crypto_stream_chacha20_NONCEBYTES> nonce{};
  store_le(nonce.data(), counter_++);
  crypto_stream_chacha20(out.data(), out.size(), nonce.data(), key_.data());
}

RandomSource& system_random() {
  static SystemRandom instance;
  return instance;
}

}  // namespace pcvault
