#pragma once

#include <stdexcept>
#include <string>

namespace dagvae {

// Base of every error raised by the library. The `kind()` string is what the
// CLI prints in front of the message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)), message_(what) {}
  const std::string& kind() const noexcept { return kind_; }
  // Message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string kind_;
  std::string message_;
};

#define DAGVAE_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

DAGVAE_DEFINE_ERROR(ShapeError)
DAGVAE_DEFINE_ERROR(NumericsError)
DAGVAE_DEFINE_ERROR(ContractError)
DAGVAE_DEFINE_ERROR(DomainError)
DAGVAE_DEFINE_ERROR(CycleError)
DAGVAE_DEFINE_ERROR(DuplicateVertexError)
DAGVAE_DEFINE_ERROR(DanglingEdgeError)
DAGVAE_DEFINE_ERROR(LookupError)
DAGVAE_DEFINE_ERROR(ParseError)
DAGVAE_DEFINE_ERROR(DimensionMismatchError)
DAGVAE_DEFINE_ERROR(ConfigError)
DAGVAE_DEFINE_ERROR(VersionError)
DAGVAE_DEFINE_ERROR(CorruptionError)

#undef DAGVAE_DEFINE_ERROR

}  // namespace dagvae
