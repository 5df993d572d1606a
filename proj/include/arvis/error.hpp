// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace arvis {

// Root of every error the library throws. `kind()` is the stable one-line
// prefix the CLI prints before the message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ARVIS_DEFINE_ERROR(Name, Base, tag)                               \
  class Name : public Base {                                              \
   public:                                                                \
    explicit Name(const std::string& what) : Base(tag, what) {}           \
                                                                          \
   protected:                                                             \
    Name(std::string kind, const std::string& what)                       \
        : Base(std::move(kind), what) {}                                  \
  };

ARVIS_DEFINE_ERROR(DimensionError, Error, "dimension error")
ARVIS_DEFINE_ERROR(ParameterError, Error, "parameter error")
ARVIS_DEFINE_ERROR(ConfigError, Error, "config error")
ARVIS_DEFINE_ERROR(VocabularyError, Error, "vocabulary error")
ARVIS_DEFINE_ERROR(CapacityError, Error, "capacity error")
ARVIS_DEFINE_ERROR(CacheError, Error, "cache error")
ARVIS_DEFINE_ERROR(OutOfBlocksError, Error, "out of memory")
ARVIS_DEFINE_ERROR(InvalidHandleError, Error, "invalid handle")
ARVIS_DEFINE_ERROR(DegenerateDistributionError, Error, "degenerate distribution")
ARVIS_DEFINE_ERROR(ProgressStallError, Error, "progress stall")
ARVIS_DEFINE_ERROR(DegenerateBatchError, Error, "degenerate batch")
ARVIS_DEFINE_ERROR(DivergenceError, Error, "training divergence")
ARVIS_DEFINE_ERROR(RolloutStateError, Error, "rollout state error")
ARVIS_DEFINE_ERROR(VerifierError, Error, "verifier error")
ARVIS_DEFINE_ERROR(RenderError, Error, "render error")
ARVIS_DEFINE_ERROR(PipelineError, Error, "pipeline error")
ARVIS_DEFINE_ERROR(MissingPrerequisiteError, PipelineError,
                   "missing prerequisite checkpoint")
ARVIS_DEFINE_ERROR(IoError, Error, "io error")

ARVIS_DEFINE_ERROR(CheckpointError, Error, "checkpoint error")
ARVIS_DEFINE_ERROR(CheckpointMagicError, CheckpointError, "checkpoint magic error")
ARVIS_DEFINE_ERROR(CheckpointVersionError, CheckpointError,
                   "checkpoint version error")
ARVIS_DEFINE_ERROR(CheckpointTruncatedError, CheckpointError,
                   "checkpoint truncated")
ARVIS_DEFINE_ERROR(CheckpointConsistencyError, CheckpointError,
                   "checkpoint consistency error")

#undef ARVIS_DEFINE_ERROR

}  // namespace arvis
