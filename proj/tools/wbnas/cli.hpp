// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace wbnas::cli {

/// Runs one command line (without the program name). Returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used for output digests in manifests.
std::uint64_t fnv1a64(std::string_view bytes);

inline constexpr std::string_view kManifestSchema = "wbnas.manifest/1";
inline constexpr std::string_view kManifestFile = "manifest.json";

}  // namespace wbnas::cli
