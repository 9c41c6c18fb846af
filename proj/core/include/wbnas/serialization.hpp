// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "wbnas/cost_model.hpp"
#include "wbnas/search_space.hpp"

namespace wbnas {

// JSON forms of spaces and sub-network specs. Parsers throw
// std::invalid_argument with the offending field in the message.

std::string space_to_json(const SearchSpace& space, int indent = 2);
SearchSpace space_from_json(std::string_view text);

/// A builtin preset name or a path to a JSON space file.
SearchSpace load_space(const std::string& preset_or_path);

std::string spec_to_json(const SubNetworkSpec& spec, int indent = -1);
SubNetworkSpec spec_from_json(std::string_view text);

/// Named reference specs ("hrnet-w32-reference") or a path to a JSON spec.
SubNetworkSpec load_spec(const std::string& preset_or_path, const SearchSpace& space);
std::vector<std::string> builtin_spec_names();

/// HRNet-W32 shaped bodynet (384 x 288, dense convs) with 64 x 64 heads fed
/// from the stem.
SubNetworkSpec hrnet_w32_reference(const SearchSpace& space);

std::string cost_to_json(const CostReport& report);

std::string read_text_file(const std::string& path);

}  // namespace wbnas
