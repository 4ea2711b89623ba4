#include "pcvault/abe.hpp"

#include <sodium.h>

#include <chrono>
#include <limits>

namespace pcvault::abe {
namespace {

constexpr std::string_view kBlobMagic = "PCVC";
constexpr std::string_view kUserKeyMagic = "PCVK";
constexpr std::string_view kParamsMagic = "PCVP";
constexpr std::string_view kMasterMagic = "PCVM";
constexpr std::uint16_t kVersion = 1;

Secret hmac(const Secret& key, ByteView msg) {
  Secret out{};
  crypto_auth_hmacsha256(out.data(), msg.data(), msg.size(), key.data());
  return out;
}

Secret hmac(const Secret& key, std::string_view label, ByteView extra = {}) {
  Bytes msg(label.begin(), label.end());
  msg.insert(msg.end(), extra.begin(), extra.end());
  return hmac(key, msg);
}

void xor_into(Secret& dst, const Secret& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] ^= src[i];
}

struct IssuerKeys {
  VerifyKey verify{};
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> sign{};
};

Secret derive_attribute_root(const MasterKey& mk, const Secret& salt) {
  return hmac(mk.root, "pcvault-ref-v1|attribute-root|", salt);
}

IssuerKeys derive_issuer(const MasterKey& mk, const Secret& salt) {
  Secret seed = hmac(mk.root, "pcvault-ref-v1|issuer|", salt);
  IssuerKeys k;
  crypto_sign_seed_keypair(k.verify.data(), k.sign.data(), seed.data());
  sodium_memzero(seed.data(), seed.size());
  return k;
}

Secret attribute_secret(const Secret& root, std::string_view tag) { return hmac(root, "attr|", as_bytes(tag)); }

Secret wrap_pad(const Secret& attr_secret, const Nonce& nonce, std::uint32_t leaf) {
  Bytes msg(nonce.begin(), nonce.end());
  ByteWriter(msg).put(leaf);
  return hmac(attr_secret, msg);
}

std::size_t leaf_count(const PolicyNode& n) {
  if (n.kind == PolicyNode::Kind::And || n.kind == PolicyNode::Kind::Or) {
    std::size_t c = 0;
    for (const auto& ch : n.children) c += leaf_count(ch);
    return c;
  }
  return 1;
}

struct ShareLayer {
  const Secret& root;
  const Nonce& nonce;
  RandomSource& rng;
  std::vector<Secret>& out;

  void assign(const PolicyNode& n, const Secret& share) {
    switch (n.kind) {
      case PolicyNode::Kind::Tag: {
        Secret wrapped = share;
        xor_into(wrapped, wrap_pad(attribute_secret(root, n.name), nonce, static_cast<std::uint32_t>(out.size())));
        out.push_back(wrapped);
        return;
      }
      case PolicyNode::Kind::True:
        out.push_back(share);
        return;
      case PolicyNode::Kind::False: {
        Secret junk{};
        rng.fill(junk);
        out.push_back(junk);
        return;
      }
      case PolicyNode::Kind::Or:
        for (const auto& c : n.children) assign(c, share);
        return;
      case PolicyNode::Kind::And: {
        Secret last = share;
        for (std::size_t i = 0; i + 1 < n.children.size(); ++i) {
          Secret s{};
          rng.fill(s);
          xor_into(last, s);
          assign(n.children[i], s);
        }
        assign(n.children.back(), last);
        return;
      }
      case PolicyNode::Kind::Numeric:
        throw Error(Errc::InvalidArgument, "numeric leaf in a compiled tree");
    }
  }
};

struct ShareRecovery {
  const UserKey& key;
  const Nonce& nonce;
  const std::uint8_t* shares;

  Secret share_at(std::size_t i) const {
    Secret s{};
    std::copy_n(shares + 32 * i, 32, s.begin());
    return s;
  }

  std::optional<Secret> recover(const PolicyNode& n, std::size_t first) const {
    switch (n.kind) {
      case PolicyNode::Kind::Tag: {
        auto it = key.secrets.find(n.name);
        if (it == key.secrets.end()) return std::nullopt;
        Secret s = share_at(first);
        xor_into(s, wrap_pad(it->second, nonce, static_cast<std::uint32_t>(first)));
        return s;
      }
      case PolicyNode::Kind::True: return share_at(first);
      case PolicyNode::Kind::False: return std::nullopt;
      case PolicyNode::Kind::Or: {
        std::size_t at = first;
        for (const auto& c : n.children) {
          if (auto s = recover(c, at)) return s;
          at += leaf_count(c);
        }
        return std::nullopt;
      }
      case PolicyNode::Kind::And: {
        Secret acc{};
        std::size_t at = first;
        for (const auto& c : n.children) {
          auto s = recover(c, at);
          if (!s) return std::nullopt;
          xor_into(acc, *s);
          at += leaf_count(c);
        }
        return acc;
      }
      case PolicyNode::Kind::Numeric: return std::nullopt;
    }
    return std::nullopt;
  }
};

// Non-owning view of a blob on the wire.
struct BlobView {
  std::string_view policy;
  std::string_view scheme;
  const std::uint8_t* nonce = nullptr;
  std::size_t share_count = 0;
  const std::uint8_t* shares = nullptr;
  ByteView ciphertext;
  const std::uint8_t* tag = nullptr;
  ByteView associated;  // everything before the ciphertext bytes
};

BlobView view_blob(ByteView wire) {
  ByteReader r(wire, Errc::IntegrityFailure);
  if (as_chars(r.take(4)) != kBlobMagic) throw Error(Errc::IntegrityFailure, "bad blob magic");
  if (r.get<std::uint16_t>() != kVersion) throw Error(Errc::SchemeMismatch, "unsupported blob version");
  BlobView v;
  v.policy = as_chars(r.take(r.get<std::uint32_t>()));
  const auto share_len = r.get<std::uint32_t>();
  ByteReader s(r.take(share_len), Errc::IntegrityFailure);
  v.scheme = as_chars(s.take(s.get<std::uint8_t>()));
  v.nonce = s.take(24).data();
  v.share_count = s.get<std::uint16_t>();
  v.shares = s.take(32 * v.share_count).data();
  if (!s.done()) throw Error(Errc::IntegrityFailure, "trailing bytes in share section");
  const auto ct_len = r.get<std::uint32_t>();
  v.associated = wire.first(r.position());
  v.ciphertext = r.take(ct_len);
  v.tag = r.take(16).data();
  if (!r.done()) throw Error(Errc::IntegrityFailure, "trailing bytes after blob");
  return v;
}

Bytes key_body(const UserKey& k) {
  Bytes out;
  ByteWriter w(out);
  w.put_string(kUserKeyMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint8_t>(k.scheme.size()));
  w.put_string(k.scheme);
  w.put(k.key_id);
  w.put(k.issued_at);
  w.put(static_cast<std::uint8_t>(k.expiry.has_value()));
  w.put(k.expiry.value_or(0));
  w.put(static_cast<std::uint16_t>(k.attributes.size()));
  for (const auto& [name, value] : k.attributes.entries()) {
    w.put(static_cast<std::uint8_t>(name.size()));
    w.put_string(name);
    w.put(static_cast<std::uint8_t>(value.has_value()));
    w.put(value.value_or(0));
  }
  w.put(static_cast<std::uint32_t>(k.secrets.size()));
  for (const auto& [tag, secret] : k.secrets) {
    w.put(static_cast<std::uint8_t>(tag.size()));
    w.put_string(tag);
    w.put_bytes(secret);
  }
  return out;
}

class ReferenceBackend final : public Backend {
 public:
  std::string_view scheme() const override { return kReferenceScheme; }

  KeyPair setup(RandomSource& rng) const override {
    ensure_sodium();
    KeyPair kp;
    rng.fill(kp.master_key.root);
    kp.public_params.scheme = std::string(kReferenceScheme);
    rng.fill(kp.public_params.salt);
    kp.public_params.verify_key = derive_issuer(kp.master_key, kp.public_params.salt).verify;
    kp.public_params.attribute_root = derive_attribute_root(kp.master_key, kp.public_params.salt);
    return kp;
  }

  UserKey keygen(const PublicParams& pp, const MasterKey& mk, const AttributeSet& attrs, RandomSource& rng,
                 std::uint64_t issued_at) const override {
    ensure_sodium();
    check_scheme(pp.scheme);
    const IssuerKeys issuer = derive_issuer(mk, pp.salt);
    if (issuer.verify != pp.verify_key) throw Error(Errc::KeyMismatch, "master key does not match public parameters");
    const Secret root = derive_attribute_root(mk, pp.salt);

    UserKey k;
    k.scheme = std::string(kReferenceScheme);
    k.attributes = attrs;
    for (const auto& tag : expand_attributes(attrs)) k.secrets.emplace(tag, attribute_secret(root, tag));
    k.key_id = rng.next_u64();
    k.issued_at = issued_at;
    k.expiry = attrs.numeric("exp");
    const Bytes body = key_body(k);
    crypto_sign_detached(k.signature.data(), nullptr, body.data(), body.size(), issuer.sign.data());
    return k;
  }

  void encrypt(const PublicParams& pp, const PolicyTree& policy, ByteView payload, RandomSource& rng,
               Bytes& out) const override {
    ensure_sodium();
    check_scheme(pp.scheme);
    if (!pp.attribute_root) {
      throw Error(Errc::KeyMismatch, "public parameters lack the attribute root needed to encrypt");
    }
    if (payload.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(Errc::InvalidArgument, "payload exceeds 4 GiB");
    }
    const PolicyNode compiled = compile_policy(policy);
    const std::string policy_text = policy.to_string();

    Secret content_key{};
    Nonce nonce{};
    rng.fill(content_key);
    rng.fill(nonce);
    std::vector<Secret> shares;
    ShareLayer{*pp.attribute_root, nonce, rng, shares}.assign(compiled, content_key);

    const std::size_t start = out.size();
    out.reserve(start + blob_size(policy, payload.size()));
    ByteWriter w(out);
    w.put_string(kBlobMagic);
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(policy_text.size()));
    w.put_string(policy_text);
    w.put(static_cast<std::uint32_t>(share_section_size(shares.size())));
    w.put(static_cast<std::uint8_t>(kReferenceScheme.size()));
    w.put_string(kReferenceScheme);
    w.put_bytes(nonce);
    w.put(static_cast<std::uint16_t>(shares.size()));
    for (const auto& s : shares) w.put_bytes(s);
    w.put(static_cast<std::uint32_t>(payload.size()));

    const std::size_t ct_at = out.size();
    out.resize(ct_at + payload.size() + crypto_aead_xchacha20poly1305_ietf_ABYTES);
    unsigned long long mac_len = 0;
    crypto_aead_xchacha20poly1305_ietf_encrypt_detached(
        out.data() + ct_at, out.data() + ct_at + payload.size(), &mac_len, payload.data(), payload.size(),
        out.data() + start, ct_at - start, nullptr, nonce.data(), content_key.data());
    sodium_memzero(content_key.data(), content_key.size());
  }

  Bytes decrypt(const UserKey& key, ByteView wire) const override {
    ensure_sodium();
    const BlobView v = view_blob(wire);
    if (v.scheme != kReferenceScheme || key.scheme != kReferenceScheme) {
      throw Error(Errc::SchemeMismatch, "blob scheme '" + std::string(v.scheme) + "' is not " +
                                            std::string(kReferenceScheme));
    }
    std::optional<PolicyTree> policy;
    try {
      policy = parse_policy(v.policy);
    } catch (const Error&) {
      throw Error(Errc::IntegrityFailure, "embedded policy does not parse");
    }
    if (!eval_policy(*policy, key.attributes)) {
      throw Error(Errc::PolicyNotSatisfied, "key attributes do not satisfy '" + policy->to_string() + "'");
    }
    PolicyNode compiled;
    try {
      compiled = compile_policy(*policy);
    } catch (const Error&) {
      throw Error(Errc::IntegrityFailure, "embedded policy does not compile");
    }
    if (leaf_count(compiled) != v.share_count) throw Error(Errc::IntegrityFailure, "share count does not match policy");

    Nonce nonce{};
    std::copy_n(v.nonce, nonce.size(), nonce.begin());
    auto content_key = ShareRecovery{key, nonce, v.shares}.recover(compiled, 0);
    if (!content_key) throw Error(Errc::PolicyNotSatisfied, "key holds no satisfying share path");

    Bytes plain(v.ciphertext.size());
    const int rc = crypto_aead_xchacha20poly1305_ietf_decrypt_detached(
        plain.data(), nullptr, v.ciphertext.data(), v.ciphertext.size(), v.tag, v.associated.data(),
        v.associated.size(), nonce.data(), content_key->data());
    sodium_memzero(content_key->data(), content_key->size());
    if (rc != 0) throw Error(Errc::IntegrityFailure, "authentication tag mismatch");
    return plain;
  }

  bool verify(const PublicParams& pp, const UserKey& key) const override {
    ensure_sodium();
    if (pp.scheme != kReferenceScheme || key.scheme != kReferenceScheme) return false;
    const Bytes body = key_body(key);
    if (crypto_sign_verify_detached(key.signature.data(), body.data(), body.size(), pp.verify_key.data()) != 0) {
      return false;
    }
    std::set<std::string> expected;
    try {
      expected = expand_attributes(key.attributes);
    } catch (const Error&) {
      return false;
    }
    if (expected.size() != key.secrets.size()) return false;
    for (const auto& [tag, secret] : key.secrets) {
      if (!expected.count(tag)) return false;
      if (pp.attribute_root && attribute_secret(*pp.attribute_root, tag) != secret) return false;
    }
    return true;
  }

  std::size_t blob_size(const PolicyTree& policy, std::size_t payload_size) const override {
    const std::size_t leaves = leaf_count(compile_policy(policy));
    return 4 + 2 + 4 + policy.to_string().size() + 4 + share_section_size(leaves) + 4 + payload_size + 16;
  }

 private:
  static std::size_t share_section_size(std::size_t leaves) { return 1 + kReferenceScheme.size() + 24 + 2 + 32 * leaves; }

  static void check_scheme(std::string_view s) {
    if (s != kReferenceScheme) throw Error(Errc::SchemeMismatch, "unsupported scheme '" + std::string(s) + "'");
  }
};

std::uint64_t unix_now() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count());
}

}  // namespace

const Backend& reference_backend() {
  static const ReferenceBackend backend;
  return backend;
}

KeyPair setup(RandomSource& rng) { return reference_backend().setup(rng); }

UserKey keygen(const PublicParams& pp, const MasterKey& mk, const AttributeSet& attrs, RandomSource& rng) {
  return reference_backend().keygen(pp, mk, attrs, rng, unix_now());
}

CiphertextBlob encrypt(const PublicParams& pp, const PolicyTree& policy, ByteView payload, RandomSource& rng) {
  Bytes wire;
  reference_backend().encrypt(pp, policy, payload, rng, wire);
  return parse_blob(wire);
}

Bytes decrypt(const UserKey& key, const CiphertextBlob& blob) { return reference_backend().decrypt(key, serialize(blob)); }

Bytes decrypt(const UserKey& key, ByteView wire) { return reference_backend().decrypt(key, wire); }

bool verify_user_key(const PublicParams& pp, const UserKey& key) { return reference_backend().verify(pp, key); }

Bytes serialize(const CiphertextBlob& blob) {
  Bytes out;
  ByteWriter w(out);
  w.put_string(kBlobMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(blob.policy.size()));
  w.put_string(blob.policy);
  w.put(static_cast<std::uint32_t>(1 + blob.scheme.size() + 24 + 2 + 32 * blob.shares.size()));
  w.put(static_cast<std::uint8_t>(blob.scheme.size()));
  w.put_string(blob.scheme);
  w.put_bytes(blob.nonce);
  w.put(static_cast<std::uint16_t>(blob.shares.size()));
  for (const auto& s : blob.shares) w.put_bytes(s);
  w.put(static_cast<std::uint32_t>(blob.ciphertext.size()));
  w.put_bytes(blob.ciphertext);
  w.put_bytes(blob.tag);
  return out;
}

CiphertextBlob parse_blob(ByteView wire) {
  const BlobView v = view_blob(wire);
  CiphertextBlob b;
  b.scheme = std::string(v.scheme);
  b.policy = std::string(v.policy);
  std::copy_n(v.nonce, b.nonce.size(), b.nonce.begin());
  b.shares.resize(v.share_count);
  for (std::size_t i = 0; i < v.share_count; ++i) std::copy_n(v.shares + 32 * i, 32, b.shares[i].begin());
  b.ciphertext.assign(v.ciphertext.begin(), v.ciphertext.end());
  std::copy_n(v.tag, b.tag.size(), b.tag.begin());
  return b;
}

Bytes serialize(const UserKey& key) {
  Bytes out = key_body(key);
  ByteWriter(out).put_bytes(key.signature);
  return out;
}

UserKey parse_user_key(ByteView wire) {
  ByteReader r(wire, Errc::MalformedKey);
  if (as_chars(r.take(4)) != kUserKeyMagic) throw Error(Errc::MalformedKey, "bad user key magic");
  if (r.get<std::uint16_t>() != kVersion) throw Error(Errc::MalformedKey, "unsupported user key version");
  UserKey k;
  k.scheme = r.take_string(r.get<std::uint8_t>());
  k.key_id = r.get<std::uint64_t>();
  k.issued_at = r.get<std::uint64_t>();
  const bool has_expiry = r.get<std::uint8_t>() != 0;
  const auto expiry = r.get<std::uint64_t>();
  if (has_expiry) k.expiry = expiry;
  const auto n_attrs = r.get<std::uint16_t>();
  try {
    for (std::uint16_t i = 0; i < n_attrs; ++i) {
      auto name = r.take_string(r.get<std::uint8_t>());
      const bool numeric = r.get<std::uint8_t>() != 0;
      const auto value = r.get<std::uint64_t>();
      if (numeric) {
        k.attributes.add_numeric(std::move(name), value);
      } else {
        k.attributes.add_tag(std::move(name));
      }
    }
  } catch (const Error& e) {
    if (e.code() == Errc::InvalidAttribute) throw Error(Errc::MalformedKey, e.what());
    throw;
  }
  const auto n_secrets = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_secrets; ++i) {
    auto tag = r.take_string(r.get<std::uint8_t>());
    Secret s{};
    const auto bytes = r.take(32);
    std::copy(bytes.begin(), bytes.end(), s.begin());
    k.secrets.emplace(std::move(tag), s);
  }
  const auto sig = r.take(64);
  std::copy(sig.begin(), sig.end(), k.signature.begin());
  if (!r.done()) throw Error(Errc::MalformedKey, "trailing bytes after user key");
  return k;
}

Bytes serialize(const PublicParams& pp) {
  Bytes out;
  ByteWriter w(out);
  w.put_string(kParamsMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint8_t>(pp.scheme.size()));
  w.put_string(pp.scheme);
  w.put_bytes(pp.salt);
  w.put_bytes(pp.verify_key);
  w.put(static_cast<std::uint8_t>(pp.attribute_root.has_value()));
  if (pp.attribute_root) w.put_bytes(*pp.attribute_root);
  return out;
}

PublicParams parse_public_params(ByteView wire) {
  ByteReader r(wire, Errc::MalformedKey);
  if (as_chars(r.take(4)) != kParamsMagic) throw Error(Errc::MalformedKey, "bad public parameter magic");
  if (r.get<std::uint16_t>() != kVersion) throw Error(Errc::MalformedKey, "unsupported public parameter version");
  PublicParams pp;
  pp.scheme = r.take_string(r.get<std::uint8_t>());
  auto copy = [&](auto& dst) {
    const auto b = r.take(dst.size());
    std::copy(b.begin(), b.end(), dst.begin());
  };
  copy(pp.salt);
  copy(pp.verify_key);
  if (r.get<std::uint8_t>() != 0) {
    Secret root{};
    copy(root);
    pp.attribute_root = root;
  }
  if (!r.done()) throw Error(Errc::MalformedKey, "trailing bytes after public parameters");
  return pp;
}

Bytes serialize(const MasterKey& mk) {
  Bytes out;
  ByteWriter w(out);
  w.put_string(kMasterMagic);
  w.put(kVersion);
  w.put_bytes(mk.root);
  return out;
}

MasterKey parse_master_key(ByteView wire) {
  ByteReader r(wire, Errc::MalformedKey);
  if (as_chars(r.take(4)) != kMasterMagic) throw Error(Errc::MalformedKey, "bad master key magic");
  if (r.get<std::uint16_t>() != kVersion) throw Error(Errc::MalformedKey, "unsupported master key version");
  MasterKey mk;
  const auto b = r.take(32);
  std::copy(b.begin(), b.end(), mk.root.begin());
  if (!r.done()) throw Error(Errc::MalformedKey, "trailing bytes after master key");
  return mk;
}

}  // namespace pcvault::abe
