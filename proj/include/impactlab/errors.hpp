#pragma once

#include <stdexcept>
#include <string>

namespace impactlab {

// Root of every error raised by the library. Validation-type errors derive
// from InputError so the CLI can map them to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class MalformedLine : public InputError {
public:
    explicit MalformedLine(std::string text)
        : InputError("malformed syslog line: '" + text + "'"), text_(std::move(text)) {}
    const std::string& text() const noexcept { return text_; }

private:
    std::string text_;
};

class EmptyWindow : public InputError {
public:
    using InputError::InputError;
};

class UnknownTemplate : public InputError {
public:
    using InputError::InputError;
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

class ScenarioOutOfRange : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

class WindowTooLong : public InputError {
public:
    using InputError::InputError;
};

class ShapeError : public InputError {
public:
    using InputError::InputError;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class GraphStateError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public InputError {
public:
    using InputError::InputError;
};

class DatasetError : public InputError {
public:
    using InputError::InputError;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(int epoch, const std::string& why)
        : Error("training diverged at epoch " + std::to_string(epoch) + ": " + why), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace impactlab
