#pragma once

#include <stdexcept>
#include <string>

namespace perfact {

// Exit codes follow the BSD sysexits convention where one exists.
enum class ExitCode : int {
    Ok = 0,
    Partial = 2,
    Usage = 64,
    DataFormat = 65,
    MissingInput = 66,
    LlmUnreachable = 69,
    Internal = 70,
};

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message, ExitCode code = ExitCode::Internal)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)), code_(code) {}

    const std::string& kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(code_); }

private:
    std::string kind_;
    ExitCode code_;
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("IoError", msg, ExitCode::MissingInput) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("FormatError", msg, ExitCode::DataFormat) {}
};

struct VersionMismatch : Error {
    explicit VersionMismatch(const std::string& msg) : Error("VersionMismatch", msg, ExitCode::DataFormat) {}
};

struct CorruptIndex : Error {
    explicit CorruptIndex(const std::string& msg) : Error("CorruptIndex", msg, ExitCode::DataFormat) {}
};

}  // namespace perfact
