#pragma once

#include <exception>
#include <string>
#include <utility>

namespace lexchain {

/// Base class of every error the library raises. Context strings can be
/// attached while the error propagates up through the pipeline stages.
class Error : public std::exception {
 public:
  explicit Error(std::string message) : message_(std::move(message)) {}

  const char* what() const noexcept override { return message_.c_str(); }

  void add_context(const std::string& context) {
    message_ = context + ": " + message_;
  }

 private:
  std::string message_;
};

// corpus
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class LabelError : public Error {
 public:
  LabelError(std::string value, const std::string& where)
      : Error(where + "unknown label '" + value + "'"), value_(std::move(value)) {}
  const std::string& value() const { return value_; }

 private:
  std::string value_;
};

class DuplicateError : public Error {
  using Error::Error;
};

class EmptySplitError : public Error {
  using Error::Error;
};

// backend
class BackendError : public Error {
  using Error::Error;
};

/// Prompt plus generation budget exceeds the backend context window.
class BudgetError : public BackendError {
  using BackendError::BackendError;
};

/// Connection-level failure that survived every retry.
class TransportError : public BackendError {
  using BackendError::BackendError;
};

class ServiceError : public BackendError {
 public:
  ServiceError(int status, const std::string& what)
      : BackendError("service error (status " + std::to_string(status) + "): " + what),
        status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

// index
class DimensionError : public Error {
  using Error::Error;
};

class FormatError : public Error {
  using Error::Error;
};

// prompting
class TemplateError : public Error {
  using Error::Error;
};

// chain / evaluation
class PreconditionError : public Error {
  using Error::Error;
};

class AlignmentError : public Error {
  using Error::Error;
};

class StageError : public Error {
 public:
  StageError(std::string stage, std::string doc_id, const std::string& what)
      : Error("[" + stage + "] " + doc_id + ": " + what),
        stage_(std::move(stage)),
        doc_id_(std::move(doc_id)) {}
  const std::string& stage() const { return stage_; }
  const std::string& doc_id() const { return doc_id_; }

 private:
  std::string stage_;
  std::string doc_id_;
};

class ConfigError : public Error {
  using Error::Error;
};

}  // namespace lexchain
