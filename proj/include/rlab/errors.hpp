#pragma once

#include <stdexcept>
#include <string>

namespace rlab {

// Base of everything the library throws. The CLI maps the three families
// below onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a precondition or a configuration value is out of range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A configured size or length cap was exceeded.
class ResourceCapError : public Error {
 public:
  using Error::Error;
};

#define RLAB_DEFINE_ERROR(Name, Base)                 \
  class Name : public Base {                          \
   public:                                            \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {} \
  };

RLAB_DEFINE_ERROR(NonFiniteEntry, ValidationError)
RLAB_DEFINE_ERROR(DegenerateVertex, ValidationError)
RLAB_DEFINE_ERROR(InvalidTriangle, ValidationError)
RLAB_DEFINE_ERROR(HypothesisViolated, ValidationError)
RLAB_DEFINE_ERROR(MissingGeodesics, ValidationError)
RLAB_DEFINE_ERROR(ClearanceInfeasible, ValidationError)
RLAB_DEFINE_ERROR(ConstraintViolated, ValidationError)
RLAB_DEFINE_ERROR(OutOfMeshRange, ValidationError)
RLAB_DEFINE_ERROR(ChartSingularity, Error)
RLAB_DEFINE_ERROR(ShootingDivergence, Error)
RLAB_DEFINE_ERROR(RankDeficient, Error)
RLAB_DEFINE_ERROR(ScaleBelowResolution, ValidationError)
RLAB_DEFINE_ERROR(FormatError, ValidationError)
RLAB_DEFINE_ERROR(MissingBuild, ValidationError)
RLAB_DEFINE_ERROR(ScheduleOverflow, ResourceCapError)
RLAB_DEFINE_ERROR(SizeCap, ResourceCapError)
RLAB_DEFINE_ERROR(ResourceCap, ResourceCapError)

#undef RLAB_DEFINE_ERROR

}  // namespace rlab
