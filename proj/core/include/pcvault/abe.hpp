#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "pcvault/bytes.hpp"
#include "pcvault/policy.hpp"
#include "pcvault/random.hpp"

namespace pcvault::abe {

inline constexpr std::string_view kReferenceScheme = "pcvault-ref-v1";

using Secret = std::array<std::uint8_t, 32>;
using VerifyKey = std::array<std::uint8_t, 32>;
using Signature = std::array<std::uint8_t, 64>;
using Nonce = std::array<std::uint8_t, 24>;
using Tag = std::array<std::uint8_t, 16>;

// Public parameters. In the reference backend the attribute-key root is the
// encryptor's capability: it is present on the origin/authority side and
// stripped (client_view) before parameters are handed to players.
struct PublicParams {
  std::string scheme;
  Secret salt{};
  VerifyKey verify_key{};
  std::optional<Secret> attribute_root;

  PublicParams client_view() const {
    PublicParams p = *this;
    p.attribute_root.reset();
    return p;
  }
  bool operator==(const PublicParams&) const = default;
};

struct MasterKey {
  Secret root{};
  bool operator==(const MasterKey&) const = default;
};

struct UserKey {
  std::string scheme;
  AttributeSet attributes;
  std::map<std::string, Secret> secrets;  // one per tag / numeric bit-tag
  std::uint64_t key_id = 0;
  std::uint64_t issued_at = 0;            // unix seconds
  std::optional<std::uint64_t> expiry;    // mirrors the numeric "exp" attribute
  Signature signature{};

  bool operator==(const UserKey&) const = default;
};

// Self-describing ciphertext: the policy travels in clear, the content key
// is split over the compiled policy tree, one wrapped share per leaf.
struct CiphertextBlob {
  std::string scheme;
  std::string policy;
  Nonce nonce{};
  std::vector<Secret> shares;
  Bytes ciphertext;
  Tag tag{};

  bool operator==(const CiphertextBlob&) const = default;
};

struct KeyPair {
  PublicParams public_params;
  MasterKey master_key;
};

// Pluggable ABE backend.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string_view scheme() const = 0;
  virtual KeyPair setup(RandomSource& rng) const = 0;
  virtual UserKey keygen(const PublicParams& pp, const MasterKey& mk, const AttributeSet& attrs,
                         RandomSource& rng, std::uint64_t issued_at) const = 0;
  // Appends the wire-format blob to `out`.
  virtual void encrypt(const PublicParams& pp, const PolicyTree& policy, ByteView payload, RandomSource& rng,
                       Bytes& out) const = 0;
  virtual Bytes decrypt(const UserKey& key, ByteView wire) const = 0;
  virtual bool verify(const PublicParams& pp, const UserKey& key) const = 0;
  // Exact wire length of a blob for `policy` over `payload_size` bytes.
  virtual std::size_t blob_size(const PolicyTree& policy, std::size_t payload_size) const = 0;
};

// Policy-gated envelope encryption: XChaCha20-Poly1305 over the payload, the
// content key XOR-split across And gates and duplicated across Or gates,
// each leaf share wrapped under an attribute key derived from the master
// key. Not collusion resistant: attribute keys are global, so two users can
// pool their secrets.
const Backend& reference_backend();

KeyPair setup(RandomSource& rng = system_random());
UserKey keygen(const PublicParams& pp, const MasterKey& mk, const AttributeSet& attrs,
               RandomSource& rng = system_random());
CiphertextBlob encrypt(const PublicParams& pp, const PolicyTree& policy, ByteView payload,
                       RandomSource& rng = system_random());
Bytes decrypt(const UserKey& key, const CiphertextBlob& blob);
Bytes decrypt(const UserKey& key, ByteView wire);
bool verify_user_key(const PublicParams& pp, const UserKey& key);

Bytes serialize(const CiphertextBlob& blob);
CiphertextBlob parse_blob(ByteView wire);
Bytes serialize(const UserKey& key);
UserKey parse_user_key(ByteView wire);
Bytes serialize(const PublicParams& pp);
PublicParams parse_public_params(ByteView wire);
Bytes serialize(const MasterKey& mk);
MasterKey parse_master_key(ByteView wire);

}  // namespace pcvault::abe
