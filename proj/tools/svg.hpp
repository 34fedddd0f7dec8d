#pragma once

#include <string>
#include <vector>

namespace signalopt::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static line chart. `header` goes into an XML comment at the top.
std::string line_chart(const std::string& title, const std::string& xlabel,
                       const std::string& ylabel, const std::vector<Series>& series,
                       const std::string& header);

std::string bar_chart(const std::string& title, const std::string& ylabel,
                      const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& header);

}  // namespace signalopt::plot
