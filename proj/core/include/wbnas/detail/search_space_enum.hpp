// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>
#include <vector>

namespace wbnas {
namespace detail {

template <typename Visitor>
bool enumerate_from(const SearchSpace& space, const std::vector<Dimension>& dims,
                    std::size_t pos, SubNetworkSpec& spec, Visitor& visit) {
  if (pos == dims.size()) return visit(static_cast<const SubNetworkSpec&>(spec));
  for (int v : dimension_choices(space, dims[pos], spec)) {
    set_dimension(spec, dims[pos], v);
    if (!enumerate_from(space, dims, pos + 1, spec, visit)) return false;
  }
  return true;
}

}  // namespace detail

template <typename Visitor>
void for_each_spec(const SearchSpace& space, Visitor&& visit) {
  const std::vector<Dimension> dims = dimensions(space);
  SubNetworkSpec spec = make_empty_spec(space);
  detail::enumerate_from(space, dims, 0, spec, visit);
}

}  // namespace wbnas
