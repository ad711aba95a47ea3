#pragma once

#include <stdexcept>
#include <string>

namespace punchline {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PUNCHLINE_ERROR(Name)            \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

PUNCHLINE_ERROR(SegmentationError);
PUNCHLINE_ERROR(LinkerUnavailable);
PUNCHLINE_ERROR(EndpointUnavailable);
PUNCHLINE_ERROR(MalformedResponse);
PUNCHLINE_ERROR(UnknownTokenError);
PUNCHLINE_ERROR(LengthError);
PUNCHLINE_ERROR(DivergenceError);
PUNCHLINE_ERROR(ConfigMismatch);
PUNCHLINE_ERROR(CheckpointError);
PUNCHLINE_ERROR(LineCountMismatch);
PUNCHLINE_ERROR(ConfigError);
PUNCHLINE_ERROR(DataError);

#undef PUNCHLINE_ERROR

}  // namespace punchline
