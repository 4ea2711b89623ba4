#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pcvault {

enum class Errc {
  // ply-io
  MalformedHeader,
  TruncatedBody,
  UnsupportedProperty,
  // pattern
  EmptyPattern,
  UnknownSymbol,
  DuplicateAxis,
  ZeroStride,
  // policy / abe
  EntropyUnavailable,
  InvalidAttribute,
  SyntaxError,
  ValueOutOfRange,
  PolicyNotSatisfied,
  IntegrityFailure,
  SchemeMismatch,
  KeyMismatch,
  MalformedKey,
  // codec
  MarkerNotFound,
  BufferLengthMismatch,
  UnsupportedFrame,
  // geometry
  EmptySet,
  // manifest
  SchemaViolation,
  BadTemplate,
  IndexOutOfRange,
  // delivery
  BindFailure,
  UpstreamUnreachable,
  EmptyLog,
  // player
  ManifestError,
  HttpError,
  DecryptError,
  LevelMismatch,
  // harness
  ScenarioError,
  ServiceStartFailure,
  IoError,
  InvalidArgument,
};

std::string_view errc_name(Errc code);

// Every failure surfaced by the library. `detail` carries a code-specific
// integer: the byte offset for SyntaxError, the HTTP status for HttpError.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::int64_t detail = -1)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  std::int64_t detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::int64_t detail_;
};

}  // namespace pcvault
