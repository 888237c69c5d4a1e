#pragma once

#include <optional>
#include <string>
#include <vector>

namespace sae::csv {

/// Parsed CSV: header names plus string cells. Leading '#' lines are
/// treated as comments (the writers put provenance metadata there).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;

  int column(const std::string& name) const;          // -1 if absent
  int require_column(const std::string& name) const;  // throws if absent
};

Table read_file(const std::string& path);
Table parse(const std::string& text, const std::string& origin);

double to_double(const std::string& cell, const std::string& context);
long long to_int(const std::string& cell, const std::string& context);
bool to_bool(const std::string& cell, const std::string& context);

/// RFC 4180 writer. Fields containing separators or quotes are quoted with
/// doubled inner quotes. Rows are written in the order given.
class Writer {
 public:
  explicit Writer(std::string path);
  void comment(const std::string& line);  // emitted as "# line"
  void row(const std::vector<std::string>& cells);
  void close();  // flush + fsync-free close; throws on I/O failure
  ~Writer();

 private:
  std::string path_;
  std::string buf_;
  bool closed_ = false;
};

std::string escape_field(const std::string& field);

}  // namespace sae::csv
