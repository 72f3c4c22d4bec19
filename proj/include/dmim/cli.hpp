#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dmim {

// Process exit codes. Failures also print one line to stderr:
//   dmim-error code=<n> kind=<kind> message="<json-escaped text>"
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,      // unexpected internal error
  kExitUsage = 2,        // unknown flag, missing or malformed argument
  kExitConfig = 3,       // config schema violation
  kExitMissingFile = 4,  // an input path does not exist
  kExitIo = 5,           // read/write failure on an existing path
  kExitData = 6,         // invalid image, dataset, or degradation input
  kExitTrain = 7,        // training aborted or invariant violated
};

std::string version();

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dmim
