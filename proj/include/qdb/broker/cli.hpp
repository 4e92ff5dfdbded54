#pragma once

#include <iosfwd>

namespace qdb::broker {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

// qdb [--data DIR | --connect ADDR] [--config FILE] [--json] <group> <cmd> [flags]
//
// Embedded mode opens the engine in-process and drives it through the same
// request encoding the broker uses, so both modes share one code path above
// the transport. `txn` reads one command per line from `in`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in);

}  // namespace qdb::broker
