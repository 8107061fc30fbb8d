#pragma once

#include <nlohmann/json.hpp>

#include "acnbp/bytes.hpp"
#include "acnbp/errors.hpp"

namespace acnbp {

// std::map-backed json: object keys iterate sorted by code point, which is
// what the canonical wire format requires.
using json = nlohmann::json;

namespace canonical {

// Deterministic text encoding used as the wire format and every signing
// preimage: sorted keys, no insignificant whitespace, minimal-decimal
// integers, shortest round-trip reals, byte fields as lowercase hex strings.
// Throws DomainError{UnencodableValue} on NaN or infinite reals.
std::string encode(const json& value);

inline Bytes encode_bytes(const json& value) { return to_bytes(encode(value)); }

// Parse canonical (or any valid JSON) text back into a value.
Result<json> parse(std::string_view text);

}  // namespace canonical
}  // namespace acnbp
