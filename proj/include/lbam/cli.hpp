#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lbam {

/// Entry point of the `lbam` tool. Subcommands: train, eval, infer, serve,
/// genmasks, visualize. Options may also come from LBAM_<OPTION> environment
/// variables (e.g. LBAM_PORT, LBAM_CHECKPOINT).
int cli_main(int argc, char** argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lbam
