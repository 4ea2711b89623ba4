#include "pcvault/error.hpp"

namespace pcvault {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::TruncatedBody: return "TruncatedBody";
    case Errc::UnsupportedProperty: return "UnsupportedProperty";
    case Errc::EmptyPattern: return "EmptyPattern";
    case Errc::UnknownSymbol: return "UnknownSymbol";
    case Errc::DuplicateAxis: return "DuplicateAxis";
    case Errc::ZeroStride: return "ZeroStride";
    case Errc::EntropyUnavailable: return "EntropyUnavailable";
    case Errc::InvalidAttribute: return "InvalidAttribute";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::ValueOutOfRange: return "ValueOutOfRange";
    case Errc::PolicyNotSatisfied: return "PolicyNotSatisfied";
    case Errc::IntegrityFailure: return "IntegrityFailure";
    case Errc::SchemeMismatch: return "SchemeMismatch";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::MalformedKey: return "MalformedKey";
    case Errc::MarkerNotFound: return "MarkerNotFound";
    case Errc::BufferLengthMismatch: return "BufferLengthMismatch";
    case Errc::UnsupportedFrame: return "UnsupportedFrame";
    case Errc::EmptySet: return "EmptySet";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::BadTemplate: return "BadTemplate";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::BindFailure: return "BindFailure";
    case Errc::UpstreamUnreachable: return "UpstreamUnreachable";
    case Errc::EmptyLog: return "EmptyLog";
    case Errc::ManifestError: return "ManifestError";
    case Errc::HttpError: return "HttpError";
    case Errc::DecryptError: return "DecryptError";
    case Errc::LevelMismatch: return "LevelMismatch";
    case Errc::ScenarioError: return "ScenarioError";
    case Errc::ServiceStartFailure: return "ServiceStartFailure";
    case Errc::IoError: return "IoError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace pcvault
