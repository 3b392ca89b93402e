#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfkd {

/// Formats a double with 17 significant digits (lossless for IEEE doubles).
std::string fmt_double(double x);

std::vector<std::string> split_csv_line(const std::string& line);

double parse_double(const std::string& s);
long parse_long(const std::string& s);

/// Minimal CSV writer: caller provides header once, then rows of cells.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path);
    void header(const std::vector<std::string>& names);
    void comment(const std::string& text);  // emitted as "# text"
    void row(const std::vector<std::string>& cells);
    void close();

  private:
    std::ofstream out_;
    std::string path_;
};

/// Reads a CSV file: first non-comment line is the header, '#' lines skipped.
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const;  // throws if absent
};

CsvTable read_csv(const std::string& path);

/// Plain-text key=value configuration file ('#' comments, blank lines ok).
struct KeyValueConfig {
    std::vector<std::pair<std::string, std::string>> entries;

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_long(const std::string& key, long fallback) const;
};

KeyValueConfig load_key_value_config(const std::string& path);

}  // namespace sfkd
