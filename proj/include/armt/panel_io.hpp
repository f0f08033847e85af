#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "armt/ar_core.hpp"

namespace armt {

/// Splits one delimited row on commas, trimming surrounding whitespace.
std::vector<std::string> split_row(std::string_view line);

/// Reads `unit_id,time,value` rows (header required; lines starting with '#'
/// are provenance comments and skipped). Rows for a unit may appear in any
/// order; they are sorted by time. Units shorter than `min_length` are dropped.
SeriesPanel read_panel(std::istream& in, int min_length = 1);
SeriesPanel read_panel(const std::filesystem::path& path, int min_length = 1);

/// Writes the panel in the same format. `preamble` lines are emitted as
/// '#'-prefixed comments ahead of the header.
void write_panel(std::ostream& out, const SeriesPanel& panel, const std::vector<std::string>& preamble = {});

} // namespace armt
