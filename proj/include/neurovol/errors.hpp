/*
 * NeuroVol
 *
 * Copyright 2026 The NeuroVol Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace neurovol {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed file contents (bad magic, bad header fields, unsupported layout).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Header declares a voxel datatype the reader does not handle.
class UnsupportedDatatypeError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File ended before the declared payload was complete.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level read/write failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Two grids that must share geometry do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data empty or otherwise unusable (empty mask, all-zero volume, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Fewer distinct values than clusters, or similar degeneracy.
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

/// A mixture class lost all posterior mass during EM.
class ClassCollapseError : public Error {
 public:
  using Error::Error;
};

/// Brain extraction produced an empty mask.
class ExtractionError : public Error {
 public:
  using Error::Error;
};

/// Longitudinal series shorter than the minimum of three visits.
class SeriesTooShortError : public InputError {
 public:
  using InputError::InputError;
};

/// Phantom specification violates its nesting/ordering constraints.
class SpecError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

/// Series cannot be max-scaled (all zero).
class ScaleError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace neurovol
