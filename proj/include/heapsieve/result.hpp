#pragma once

#include <cassert>
#include <string>
#include <utility>
#include <variant>

namespace heapsieve {

struct Error {
  std::string message;
};

/// Minimal success-or-error carrier. We stay on C++20, so no std::expected;
/// this covers the handful of shapes the simulator needs.
template <typename T>
class Result {
 public:
  Result(T value) : v_(std::move(value)) {}
  Result(Error err) : v_(std::move(err)) {}

  static Result failure(std::string msg) { return Result(Error{std::move(msg)}); }

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }

  const T& value() const {
    assert(ok());
    return std::get<T>(v_);
  }
  T& value() {
    assert(ok());
    return std::get<T>(v_);
  }
  const Error& error() const {
    assert(!ok());
    return std::get<Error>(v_);
  }

 private:
  std::variant<T, Error> v_;
};

/// Result<void> stand-in.
struct Unit {};

}  // namespace heapsieve
