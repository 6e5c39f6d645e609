#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtbd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // bad input or usage
inline constexpr int kExitNumerical = 2;

inline constexpr const char* kConfigSchema = "mtbd.config/1";

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Names of the subcommands, and the full default configuration of one of them
// as JSON text.
std::vector<std::string> commands();
std::string default_config(const std::string& command);

}  // namespace mtbd::cli
