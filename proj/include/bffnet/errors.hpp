#pragma once

#include <stdexcept>
#include <string>

namespace bffnet {

// Every error raised by the library carries a stable kind string so the CLI
// can print a machine-readable line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define BFFNET_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(#Name, what) {}  \
  };

BFFNET_DEFINE_ERROR(DecodeError)
BFFNET_DEFINE_ERROR(ShapeMismatch)
BFFNET_DEFINE_ERROR(InvalidTarget)
BFFNET_DEFINE_ERROR(InvalidScale)
BFFNET_DEFINE_ERROR(ShapeError)
BFFNET_DEFINE_ERROR(ConfigError)
BFFNET_DEFINE_ERROR(FormatError)
BFFNET_DEFINE_ERROR(VersionError)
BFFNET_DEFINE_ERROR(DataError)
BFFNET_DEFINE_ERROR(CheckpointError)
BFFNET_DEFINE_ERROR(ResumeMismatch)

#undef BFFNET_DEFINE_ERROR

}  // namespace bffnet
