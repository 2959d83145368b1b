#pragma once

#include <stdexcept>
#include <string>

namespace ctxattr {

// Base of every error the toolkit throws. `kind()` is a stable tag used in
// diagnostics and tests.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CTXATTR_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

CTXATTR_DEFINE_ERROR(IoError);
CTXATTR_DEFINE_ERROR(DecodeError);
CTXATTR_DEFINE_ERROR(ShapeError);
CTXATTR_DEFINE_ERROR(FormatError);
CTXATTR_DEFINE_ERROR(DomainError);
CTXATTR_DEFINE_ERROR(IndexError);
CTXATTR_DEFINE_ERROR(LayerKindError);
CTXATTR_DEFINE_ERROR(ParamError);
CTXATTR_DEFINE_ERROR(PoolError);
CTXATTR_DEFINE_ERROR(ZeroAttributionError);
CTXATTR_DEFINE_ERROR(EmptyGroupError);
CTXATTR_DEFINE_ERROR(MissingVariantError);
CTXATTR_DEFINE_ERROR(SchemaError);
CTXATTR_DEFINE_ERROR(MissingMapError);
CTXATTR_DEFINE_ERROR(OrphanRecordError);
CTXATTR_DEFINE_ERROR(FilterEmptied);

#undef CTXATTR_DEFINE_ERROR

}  // namespace ctxattr
