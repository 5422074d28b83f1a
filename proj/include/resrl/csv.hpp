#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace resrl {

// Doubles are written with %.17g so every logged value round-trips exactly;
// reruns with the same config and seed produce byte-identical files.
std::string format_double(double v);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  CsvWriter& field(double v);
  CsvWriter& field(int v);
  CsvWriter& field(long v);
  CsvWriter& field(const std::string& v);
  void end_row();

  const std::string& path() const { return path_; }

 private:
  void sep();
  std::ofstream out_;
  std::string path_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::string& path);

}  // namespace resrl
