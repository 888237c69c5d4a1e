#include "sae/csv.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sae::csv {

int Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

int Table::require_column(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw std::runtime_error("missing required CSV column '" + name + "'");
  return c;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

Table parse(const std::string& text, const std::string& origin) {
  Table t;
  std::vector<std::string> cells;
  std::string field;
  bool in_quotes = false;
  bool row_has_content = false;
  std::size_t line_no = 1;

  auto end_field = [&]() {
    cells.push_back(field);
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (cells.size() == 1 && cells[0].empty() && !row_has_content) {
      cells.clear();
      return;  // blank line
    }
    if (cells.size() == 1 && !cells[0].empty() && cells[0][0] == '#') {
      t.comments.push_back(cells[0]);
    } else if (t.header.empty()) {
      t.header = cells;
    } else {
      if (cells.size() != t.header.size())
        throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(t.header.size()) + " fields, got " +
                                 std::to_string(cells.size()));
      t.rows.push_back(cells);
    }
    cells.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
        if (c == '\n') ++line_no;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line_no;
        break;
      default:
        field.push_back(c);
        row_has_content = true;
    }
  }
  if (in_quotes) throw std::runtime_error(origin + ": unterminated quoted field");
  if (row_has_content || !field.empty()) end_row();
  if (t.header.empty()) throw std::runtime_error(origin + ": no header row");
  return t;
}

double to_double(const std::string& cell, const std::string& context) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0' || errno == ERANGE)
    throw std::runtime_error("invalid number '" + cell + "' in " + context);
  return v;
}

long long to_int(const std::string& cell, const std::string& context) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(cell.c_str(), &end, 10);
  if (end == cell.c_str() || *end != '\0' || errno == ERANGE)
    throw std::runtime_error("invalid integer '" + cell + "' in " + context);
  return v;
}

bool to_bool(const std::string& cell, const std::string& context) {
  if (cell == "true" || cell == "1") return true;
  if (cell == "false" || cell == "0") return false;
  throw std::runtime_error("invalid boolean '" + cell + "' in " + context);
}

std::string escape_field(const std::string& field) {
  const bool needs = field.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

Writer::Writer(std::string path) : path_(std::move(path)) {}

void Writer::comment(const std::string& line) { buf_ += "# " + line + "\n"; }

void Writer::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buf_.push_back(',');
    buf_ += escape_field(cells[i]);
  }
  buf_.push_back('\n');
}

void Writer::close() {
  if (closed_) return;
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path_);
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw std::runtime_error("write failed for " + path_);
  closed_ = true;
}

Writer::~Writer() {
  try {
    close();
  } catch (...) {
  }
}

}  // namespace sae::csv
