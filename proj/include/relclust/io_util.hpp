#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "relclust/encoder.hpp"

namespace relclust {

/// Shortest round-trip decimal form; independent of the C locale.
std::string format_double(double value);
double parse_double(std::string_view text);

std::vector<std::string> split_csv_line(std::string_view line);

/// Table of labelled feature rows as read from or written to CSV.
struct FeatureTable {
  std::vector<std::string> ids;
  FeatureMatrix values;
  std::vector<std::string> comments;  // '#' lines, without the marker
};

/// Writes comment lines, a header `id,f0,...` and one row per point.
void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path);
/// Reads `id,v0,v1,...` rows; '#' lines are comments and a first row
/// whose numeric columns do not parse is taken as a header. Ragged rows throw.
FeatureTable read_feature_csv(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace relclust
