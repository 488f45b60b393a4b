#pragma once

#include <iosfwd>
#include <memory>
#include <string_view>

#include "maskforge/model.hpp"

namespace maskforge::cli {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kModelFailure = 3,
  kIoFailure = 4,
};

/// Runs the maskforge command line. argv[0] is the program name. Reports go
/// to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Builds a model from a selector:
///   builtin:planted:TOP,LEFT,H,W[,SHARPNESS]
///   builtin:linear[:SEED]
///   builtin:constant[:VALUE]
///   builtin:tinyconv[:SEED]
///   bridge:<endpoint>
/// Built-in models take `shape`; bridge models report their own.
std::unique_ptr<ScoreModel> make_model(std::string_view selector, InputShape shape);

}  // namespace maskforge::cli
