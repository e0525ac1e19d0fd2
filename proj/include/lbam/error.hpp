#pragma once

#include <stdexcept>
#include <string>

namespace lbam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Archive content is truncated or fails its checksum.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

/// Archive was written by a newer (or unknown) format version.
class VersionError : public Error {
 public:
  VersionError(const std::string& what, int found, int supported)
      : Error(what), found_(found), supported_(supported) {}
  int found() const noexcept { return found_; }
  int supported() const noexcept { return supported_; }

 private:
  int found_;
  int supported_;
};

/// Invalid configuration value or malformed request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace lbam
