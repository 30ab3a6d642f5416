#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace russ {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RUSS_DEFINE_ERROR(Name)                      \
  class Name : public Error {                        \
   public:                                           \
    explicit Name(const std::string& what)           \
        : Error(std::string(#Name ": ") + what) {}   \
  }

// guideline store
RUSS_DEFINE_ERROR(FormatError);
RUSS_DEFINE_ERROR(SchemaError);
RUSS_DEFINE_ERROR(ReferenceError);
RUSS_DEFINE_ERROR(EmptyStore);
RUSS_DEFINE_ERROR(NoSweepYet);

// tool registry
RUSS_DEFINE_ERROR(UnknownTool);
RUSS_DEFINE_ERROR(ConfigError);

// simulated world
RUSS_DEFINE_ERROR(UnknownFixture);
RUSS_DEFINE_ERROR(UnknownLandmark);
RUSS_DEFINE_ERROR(DegenerateTrajectory);
RUSS_DEFINE_ERROR(InvalidArgument);
RUSS_DEFINE_ERROR(UnknownTrajectory);
RUSS_DEFINE_ERROR(SpeedOutOfRange);
RUSS_DEFINE_ERROR(ProbeNotPlaced);
RUSS_DEFINE_ERROR(UnknownSweep);
RUSS_DEFINE_ERROR(RefineImpossible);

// agent runtime
RUSS_DEFINE_ERROR(MalformedResponse);
RUSS_DEFINE_ERROR(NoCurrentStep);
RUSS_DEFINE_ERROR(TraceFormatError);

// remote policy
RUSS_DEFINE_ERROR(EndpointUnreachable);
RUSS_DEFINE_ERROR(BadPayload);
RUSS_DEFINE_ERROR(Timeout);
RUSS_DEFINE_ERROR(PortInUse);

// scoring
RUSS_DEFINE_ERROR(ReferenceInvalid);
RUSS_DEFINE_ERROR(UnknownStepIndex);
RUSS_DEFINE_ERROR(EmptyInput);

#undef RUSS_DEFINE_ERROR

class BadStatus : public Error {
 public:
  explicit BadStatus(int code)
      : Error("BadStatus: HTTP " + std::to_string(code)), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

/// Raised by replay when the re-executed world stops matching the recording.
class ReplayDivergence : public Error {
 public:
  ReplayDivergence(std::size_t turn, const std::string& detail)
      : Error("ReplayDivergence at turn " + std::to_string(turn) + ": " + detail),
        turn_(turn) {}
  std::size_t turn() const noexcept { return turn_; }

 private:
  std::size_t turn_;
};

}  // namespace russ
