#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "ptmm/numeric.hpp"

namespace ptmm {

/// Comma-separated numeric matrix. A first line that does not parse as
/// numbers is taken as a header. Throws ParseError on ragged or
/// non-numeric rows.
Matrix parse_csv_matrix(std::string_view text);
Matrix read_csv_matrix(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename, so readers never see a
/// partial file.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

/// Entry point for the `ptmm` executable. Exit codes: 0 success, 1 usage or
/// validation error, 2 numerical or fit failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ptmm
