// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <iosfwd>

namespace mspnf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `mspnf` tool. Errors go to `err` as one `error: ...` line.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mspnf
