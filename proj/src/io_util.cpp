#include "relclust/io_util.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace relclust {

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : table.comments) out << '#' << c << '\n';
  out << "id";
  for (Eigen::Index k = 0; k < table.values.cols(); ++k) out << ",f" << k;
  out << '\n';
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    out << table.ids[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < table.values.cols(); ++k) {
      out << ',' << format_double(table.values(i, k));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  FeatureTable table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      table.comments.push_back(line.substr(1));
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() < 2) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected id and values");
    }
    std::vector<double> values;
    values.reserve(fields.size() - 1);
    try {
      for (std::size_t k = 1; k < fields.size(); ++k) values.push_back(parse_double(fields[k]));
    } catch (const std::invalid_argument& e) {
      if (first_data_line) {
        first_data_line = false;
        continue;  // header row
      }
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
    first_data_line = false;
    if (rows.empty()) {
      width = values.size();
    } else if (values.size() != width) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": ragged row with " +
                                  std::to_string(values.size()) + " values, expected " +
                                  std::to_string(width));
    }
    table.ids.push_back(fields[0]);
    rows.push_back(std::move(values));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < width; ++k) {
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  return table;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace relclust
