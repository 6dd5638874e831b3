// Copyright 2026 The mpinfer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace mpinfer {

// Base of every error the engine raises. Each subclass maps to one failure
// family so callers (and the CLI) can pick exit codes and messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Inconsistent plans, modes, head counts, tasks.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad or missing quantization scales.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Archive content does not match its manifest.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes or documents on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Token/segment ids outside their tables.
class InputError : public Error {
 public:
  using Error::Error;
};

// No profile point satisfies a threshold.
class InfeasibleError : public Error {
 public:
  InfeasibleError(std::string msg, double bound)
      : Error(std::move(msg)), bound_(bound) {}
  double bound() const noexcept { return bound_; }

 private:
  double bound_;
};

// Dataset parse failures; carries the 1-based line number.
class DatasetError : public Error {
 public:
  DatasetError(const std::string& msg, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail
}  // namespace mpinfer
