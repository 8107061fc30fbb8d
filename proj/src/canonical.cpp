#include "acnbp/canonical.hpp"

#include <cmath>

namespace acnbp {

const char* to_string(Err e) {
    switch (e) {
        case Err::StaleTimestamp: return "StaleTimestamp";
        case Err::DuplicateNonce: return "DuplicateNonce";
        case Err::NonMonotoneSequence: return "NonMonotoneSequence";
        case Err::SignatureInvalid: return "SignatureInvalid";
        case Err::MalformedKey: return "MalformedKey";
        case Err::UnencodableValue: return "UnencodableValue";
        case Err::IncompatibleVersions: return "IncompatibleVersions";
        case Err::CredentialFailure: return "CredentialFailure";
        case Err::CapabilityValidationError: return "CapabilityValidationError";
        case Err::PowRejected: return "PowRejected";
        case Err::RateLimited: return "RateLimited";
        case Err::DuplicateRegistration: return "DuplicateRegistration";
        case Err::UnknownAgent: return "UnknownAgent";
        case Err::IllegalPhase: return "IllegalPhase";
        case Err::DowngradeDetected: return "DowngradeDetected";
        case Err::KeyConfirmationFailed: return "KeyConfirmationFailed";
        case Err::ConsistencyNotVerified: return "ConsistencyNotVerified";
        case Err::TermsMismatch: return "TermsMismatch";
        case Err::ExecutionFailure: return "ExecutionFailure";
        case Err::SlotMismatch: return "SlotMismatch";
        case Err::DeadlineExceeded: return "DeadlineExceeded";
        case Err::ParseError: return "ParseError";
        case Err::SchemaViolation: return "SchemaViolation";
        case Err::ScenarioInvalid: return "ScenarioInvalid";
    }
    return "UnknownError";
}

std::string hex_encode(std::span<const std::uint8_t> data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

static int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

Bytes hex_decode(std::string_view hex) {
    if (hex.size() % 2 != 0) throw std::invalid_argument("odd-length hex string");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_nibble(hex[i]);
        int lo = hex_nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) throw std::invalid_argument("non-hex character");
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    return out;
}

namespace canonical {

static void reject_non_finite(const json& v) {
    switch (v.type()) {
        case json::value_t::number_float: {
            double d = v.get<double>();
            if (!std::isfinite(d)) throw DomainError(Err::UnencodableValue, "non-finite real");
            break;
        }
        case json::value_t::array:
            for (const auto& e : v) reject_non_finite(e);
            break;
        case json::value_t::object:
            for (const auto& [k, e] : v.items()) reject_non_finite(e);
            break;
        default:
            break;
    }
}

std::string encode(const json& value) {
    reject_non_finite(value);
    return value.dump();
}

Result<json> parse(std::string_view text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return Result<json>::failure(Err::ParseError, "invalid JSON");
    return v;
}

}  // namespace canonical
}  // namespace acnbp
