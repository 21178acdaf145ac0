#pragma once

#include <stdexcept>
#include <string>

namespace residprop {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct TooShort : Error {
    explicit TooShort(const std::string& msg) : Error(msg) {}
};

struct TooSmall : Error {
    explicit TooSmall(const std::string& msg) : Error(msg) {}
};

struct BadKernel : Error {
    explicit BadKernel(const std::string& msg) : Error(msg) {}
};

struct ZeroKernel : Error {
    explicit ZeroKernel(const std::string& msg) : Error(msg) {}
};

struct NonFinite : Error {
    explicit NonFinite(const std::string& msg) : Error(msg) {}
};

struct OutOfRing : Error {
    explicit OutOfRing(const std::string& msg) : Error(msg) {}
};

struct SizeMismatch : Error {
    explicit SizeMismatch(const std::string& msg) : Error(msg) {}
};

struct EmptyInput : Error {
    explicit EmptyInput(const std::string& msg) : Error(msg) {}
};

struct OutOfRange : Error {
    explicit OutOfRange(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct BadMagic : Error {
    explicit BadMagic(const std::string& msg) : Error(msg) {}
};

struct VersionMismatch : Error {
    explicit VersionMismatch(const std::string& msg) : Error(msg) {}
};

struct BadSpec : Error {
    explicit BadSpec(const std::string& msg) : Error(msg) {}
};

struct ManifestError : Error {
    explicit ManifestError(const std::string& msg) : Error(msg) {}
};

struct EmptyClass : Error {
    explicit EmptyClass(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace residprop
