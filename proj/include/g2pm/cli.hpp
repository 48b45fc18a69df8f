#pragma once

namespace g2pm::cli {

// Runs one subcommand. Returns 0 on success, 1 on a runtime failure and 2 on a
// usage error (unknown flag or configuration key). `envp` supplies G2PM_*
// overrides and may be null.
int cli_main(int argc, char** argv, char** envp);

}  // namespace g2pm::cli
