#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace acnbp {

enum class Err {
    // envelope / replay
    StaleTimestamp,
    DuplicateNonce,
    NonMonotoneSequence,
    SignatureInvalid,
    MalformedKey,
    UnencodableValue,
    IncompatibleVersions,
    // registry
    CredentialFailure,
    CapabilityValidationError,
    PowRejected,
    RateLimited,
    DuplicateRegistration,
    UnknownAgent,
    // negotiation
    IllegalPhase,
    DowngradeDetected,
    KeyConfirmationFailed,
    ConsistencyNotVerified,
    TermsMismatch,
    ExecutionFailure,
    SlotMismatch,
    DeadlineExceeded,
    // scenario / cli
    ParseError,
    SchemaViolation,
    ScenarioInvalid,
};

const char* to_string(Err e);

// The replay window rejections, as a category (handle_* ops surface them
// as "ReplayRejected" per the protocol contract).
inline bool is_replay_rejection(Err e) {
    return e == Err::StaleTimestamp || e == Err::DuplicateNonce ||
           e == Err::NonMonotoneSequence;
}

struct Error {
    Err code;
    std::string detail;

    std::string message() const {
        std::string m = to_string(code);
        if (!detail.empty()) {
            m += ": ";
            m += detail;
        }
        return m;
    }
};

// Thrown only for contract violations where no result channel exists
// (wrong-size keys, NaN in canonical input).
struct DomainError : std::runtime_error {
    Err code;
    explicit DomainError(Err c, const std::string& detail = "")
        : std::runtime_error(Error{c, detail}.message()), code(c) {}
};

template <typename T>
class Result {
public:
    Result(T value) : v_(std::move(value)) {}
    Result(Error err) : v_(std::move(err)) {}

    static Result failure(Err code, std::string detail = {}) {
        return Result(Error{code, std::move(detail)});
    }

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    const T& value() const& { return std::get<T>(v_); }
    T& value() & { return std::get<T>(v_); }
    T&& value() && { return std::get<T>(std::move(v_)); }
    const T& operator*() const& { return value(); }
    const T* operator->() const { return &value(); }

    const Error& error() const { return std::get<Error>(v_); }
    Err code() const { return error().code; }

private:
    std::variant<T, Error> v_;
};

struct Unit {};
using Status = Result<Unit>;

inline Status ok_status() { return Status(Unit{}); }

}  // namespace acnbp
