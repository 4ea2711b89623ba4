#include "pcvault/codec.hpp"

#include <algorithm>
#include <array>
#include <cstring>

namespace pcvault::codec {
namespace {

constexpr std::size_t kCoordWidth = 8;

struct Segment {
  std::uint32_t offset;
  std::uint32_t length;
};

// Per-record copy plan. For each of the 8 axis masks, the byte ranges of a
// record that survive removal, in record order.
class RecordPlan {
 public:
  RecordPlan(const ply::VertexSchema& schema, const Pattern& pattern) : width_(schema.record_width()) {
    for (int a = 0; a < 3; ++a) {
      coord_[a] = static_cast<std::uint32_t>(schema.coordinate_offset(static_cast<Axis>(a)));
      stride_[a] = pattern.stride(static_cast<Axis>(a)).value_or(0);
    }
    for (unsigned mask = 0; mask < 8; ++mask) {
      std::vector<bool> removed(width_, false);
      for (int a = 0; a < 3; ++a) {
        if (mask & (1U << a)) std::fill_n(removed.begin() + coord_[a], kCoordWidth, true);
      }
      auto& segs = segments_[mask];
      for (std::uint32_t i = 0; i < width_;) {
        if (removed[i]) {
          ++i;
          continue;
        }
        std::uint32_t j = i;
        while (j < width_ && !removed[j]) ++j;
        segs.push_back({i, j - i});
        i = j;
      }
    }
  }

  std::size_t width() const { return width_; }
  std::uint32_t coord(int a) const { return coord_[a]; }
  const std::vector<Segment>& kept(unsigned mask) const { return segments_[mask]; }

  // Walks vertex masks in index order; phase convention: index % stride == 0.
  class Cursor {
   public:
    explicit Cursor(const RecordPlan& plan) : stride_(plan.stride_) {}
    unsigned next() {
      unsigned mask = 0;
      for (int a = 0; a < 3; ++a) {
        if (stride_[a] == 0) continue;
        if (phase_[a] == 0) mask |= 1U << a;
        if (++phase_[a] == stride_[a]) phase_[a] = 0;
      }
      return mask;
    }

   private:
    std::array<std::uint32_t, 3> stride_;
    std::array<std::uint32_t, 3> phase_{0, 0, 0};
  };

 private:
  std::size_t width_;
  std::array<std::uint32_t, 3> coord_{};
  std::array<std::uint32_t, 3> stride_{};
  std::array<std::vector<Segment>, 8> segments_;
};

// Splits `body` into reduced records and the removal buffer.
void split(const RecordPlan& plan, std::size_t count, const std::uint8_t* body, std::uint8_t* reduced,
           std::uint8_t* buffer) {
  RecordPlan::Cursor cursor(plan);
  const std::size_t w = plan.width();
  for (std::size_t i = 0; i < count; ++i, body += w) {
    const unsigned mask = cursor.next();
    if (mask == 0) {
      std::memcpy(reduced, body, w);
      reduced += w;
      continue;
    }
    for (const auto& s : plan.kept(mask)) {
      std::memcpy(reduced, body + s.offset, s.length);
      reduced += s.length;
    }
    for (int a = 0; a < 3; ++a) {
      if (mask & (1U << a)) {
        std::memcpy(buffer, body + plan.coord(a), kCoordWidth);
        buffer += kCoordWidth;
      }
    }
  }
}

// Inverse of split. A null `buffer` writes +0.0 into targeted slots.
void restore(const RecordPlan& plan, std::size_t count, const std::uint8_t* reduced, const std::uint8_t* buffer,
             std::uint8_t* body) {
  RecordPlan::Cursor cursor(plan);
  const std::size_t w = plan.width();
  for (std::size_t i = 0; i < count; ++i, body += w) {
    const unsigned mask = cursor.next();
    if (mask == 0) {
      std::memcpy(body, reduced, w);
      reduced += w;
      continue;
    }
    for (const auto& s : plan.kept(mask)) {
      std::memcpy(body + s.offset, reduced, s.length);
      reduced += s.length;
    }
    for (int a = 0; a < 3; ++a) {
      if (!(mask & (1U << a))) continue;
      if (buffer) {
        std::memcpy(body + plan.coord(a), buffer, kCoordWidth);
        buffer += kCoordWidth;
      } else {
        std::memset(body + plan.coord(a), 0, kCoordWidth);
      }
    }
  }
}

struct PlainFrame {
  ply::Header header;
  ByteView body;
};

PlainFrame read_plain(ByteView ply) {
  ply::Header h = ply::read_header(ply);
  const std::size_t w = h.schema.record_width();
  const std::size_t avail = ply.size() - h.size;
  if (h.vertex_count > avail / w) throw Error(Errc::TruncatedBody, "body shorter than declared vertex count");
  const std::size_t len = h.vertex_count * w;
  if (avail != len) {
    throw Error(Errc::UnsupportedFrame, "frame carries " + std::to_string(avail - len) +
                                            " trailing bytes (already encrypted?)");
  }
  auto body = ply.subspan(h.size, len);
  return PlainFrame{std::move(h), body};
}

void write_marker(Bytes& out, Mode mode, std::string_view pattern, std::uint64_t blob_length) {
  ByteWriter w(out);
  w.put_string(kMarkerMagic);
  w.put(kMarkerVersion);
  w.put(static_cast<std::uint8_t>(mode));
  w.put(static_cast<std::uint16_t>(pattern.size()));
  w.put_string(pattern);
  w.put(blob_length);
}

std::optional<Marker> read_marker(ByteView at) {
  try {
    ByteReader r(at, Errc::MarkerNotFound);
    if (as_chars(r.take(4)) != kMarkerMagic) return std::nullopt;
    if (r.get<std::uint16_t>() != kMarkerVersion) return std::nullopt;
    const auto mode = r.get<std::uint8_t>();
    if (mode > 1) return std::nullopt;
    Marker m;
    m.mode = static_cast<Mode>(mode);
    m.pattern = r.take_string(r.get<std::uint16_t>());
    m.blob_length = r.get<std::uint64_t>();
    if (m.blob_length != r.remaining()) return std::nullopt;
    return m;
  } catch (const Error&) {
    return std::nullopt;
  }
}

Pattern selective_pattern(const Marker& m) {
  try {
    return Pattern::parse(m.pattern);
  } catch (const Error&) {
    throw Error(Errc::MarkerNotFound, "marker pattern '" + m.pattern + "' does not parse");
  }
}

}  // namespace

FrameView inspect_frame(ByteView enc) {
  if (enc.size() >= kMarkerMagic.size() && as_chars(enc.first(kMarkerMagic.size())) == kMarkerMagic) {
    auto m = read_marker(enc);
    if (!m || m->mode != Mode::Full) throw Error(Errc::MarkerNotFound, "malformed leading marker");
    FrameView v;
    v.marker = std::move(*m);
    v.blob = enc.subspan(v.marker.size());
    return v;
  }

  ply::Header h = [&] {
    try {
      return ply::read_header(enc);
    } catch (const Error& e) {
      if (e.code() != Errc::MalformedHeader) throw;
      throw Error(Errc::MarkerNotFound, "neither a FULL marker nor a PLY header");
    }
  }();
  const std::size_t w = h.schema.record_width();
  const std::size_t n = h.vertex_count;
  // Every selective pattern removes between 0 and 3 coordinates per vertex,
  // so the marker sits in [header + n*(w-24), header + n*w].
  const std::size_t lo = h.size + n * (w - 3 * kCoordWidth);
  const std::size_t hi = h.size + n * w;
  if (lo >= enc.size()) throw Error(Errc::MarkerNotFound, "frame ends before any possible marker position");
  const std::string_view text = as_chars(enc);
  for (std::size_t c = text.find(kMarkerMagic, lo); c != std::string_view::npos && c <= hi;
       c = text.find(kMarkerMagic, c + 1)) {
    auto m = read_marker(enc.subspan(c));
    if (!m || m->mode != Mode::Selective) continue;
    Pattern p;
    try {
      p = Pattern::parse(m->pattern);
    } catch (const Error&) {
      continue;
    }
    if (c != hi - kCoordWidth * p.targeted_count(n)) continue;
    FrameView v;
    v.reduced_body = enc.subspan(h.size, c - h.size);
    v.marker_offset = c;
    v.blob = enc.subspan(c + m->size());
    v.marker = std::move(*m);
    v.header = std::move(h);
    return v;
  }
  throw Error(Errc::MarkerNotFound, "no encryption marker after the frame body");
}

Bytes removal_buffer(ByteView ply, const Pattern& pattern) {
  const PlainFrame f = read_plain(ply);
  const RecordPlan plan(f.header.schema, pattern);
  const std::size_t n = f.header.vertex_count;
  Bytes reduced(n * plan.width() - kCoordWidth * pattern.targeted_count(n));
  Bytes buffer(kCoordWidth * pattern.targeted_count(n));
  split(plan, n, f.body.data(), reduced.data(), buffer.data());
  return buffer;
}

Bytes encrypt_frame(ByteView ply, const Granularity& granularity, const abe::PublicParams& pp,
                    const abe::PolicyTree& policy, RandomSource& rng) {
  const auto& backend = abe::reference_backend();
  const PlainFrame f = read_plain(ply);

  if (std::holds_alternative<FullFrame>(granularity)) {
    Bytes out;
    const std::size_t blob_len = backend.blob_size(policy, ply.size());
    out.reserve(Marker{Mode::Full, "FULL", 0}.size() + blob_len);
    write_marker(out, Mode::Full, "FULL", blob_len);
    backend.encrypt(pp, policy, ply, rng, out);
    return out;
  }

  const Pattern& pattern = std::get<Pattern>(granularity);
  const std::string text = pattern.canonical_text();
  const RecordPlan plan(f.header.schema, pattern);
  const std::size_t n = f.header.vertex_count;
  const std::size_t removed = kCoordWidth * pattern.targeted_count(n);
  const std::size_t reduced_len = f.body.size() - removed;
  const std::size_t blob_len = backend.blob_size(policy, removed);

  Bytes out;
  out.reserve(f.header.size + reduced_len + Marker{Mode::Selective, text, 0}.size() + blob_len);
  out.resize(f.header.size + reduced_len);
  std::memcpy(out.data(), ply.data(), f.header.size);
  Bytes buffer(removed);
  split(plan, n, f.body.data(), out.data() + f.header.size, buffer.data());

  write_marker(out, Mode::Selective, text, blob_len);
  backend.encrypt(pp, policy, buffer, rng, out);
  return out;
}

Bytes decrypt_frame(ByteView enc, const abe::UserKey& key) {
  const FrameView v = inspect_frame(enc);
  const auto& backend = abe::reference_backend();
  if (v.marker.mode == Mode::Full) return backend.decrypt(key, v.blob);

  const Pattern pattern = selective_pattern(v.marker);
  const ply::Header& h = *v.header;
  const std::size_t n = h.vertex_count;
  const Bytes buffer = backend.decrypt(key, v.blob);
  if (buffer.size() != kCoordWidth * pattern.targeted_count(n)) {
    throw Error(Errc::BufferLengthMismatch, "decrypted " + std::to_string(buffer.size()) + " bytes, pattern " +
                                                pattern.canonical_text() + " needs " +
                                                std::to_string(kCoordWidth * pattern.targeted_count(n)));
  }
  const RecordPlan plan(h.schema, pattern);
  Bytes out(h.size + n * plan.width());
  std::memcpy(out.data(), enc.data(), h.size);
  restore(plan, n, v.reduced_body.data(), buffer.data(), out.data() + h.size);
  return out;
}

Bytes zero_fill(ByteView enc) {
  const FrameView v = inspect_frame(enc);
  if (v.marker.mode == Mode::Full) {
    throw Error(Errc::UnsupportedFrame, "FULL frames carry no clear geometry to zero-fill");
  }
  const Pattern pattern = selective_pattern(v.marker);
  const ply::Header& h = *v.header;
  const RecordPlan plan(h.schema, pattern);
  Bytes out(h.size + h.vertex_count * plan.width());
  std::memcpy(out.data(), enc.data(), h.size);
  restore(plan, h.vertex_count, v.reduced_body.data(), nullptr, out.data() + h.size);
  return out;
}

std::size_t encrypted_size(ByteView ply, const Granularity& granularity, const abe::PolicyTree& policy) {
  const auto& backend = abe::reference_backend();
  if (std::holds_alternative<FullFrame>(granularity)) {
    return Marker{Mode::Full, "FULL", 0}.size() + backend.blob_size(policy, ply.size());
  }
  const PlainFrame f = read_plain(ply);
  const Pattern& pattern = std::get<Pattern>(granularity);
  const std::size_t removed = kCoordWidth * pattern.targeted_count(f.header.vertex_count);
  return ply.size() - removed + Marker{Mode::Selective, pattern.canonical_text(), 0}.size() +
         backend.blob_size(policy, removed);
}

}  // namespace pcvault::codec
