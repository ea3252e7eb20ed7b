#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "piddm/metrics.hpp"

namespace piddm {

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

// Minimal line chart / histogram emitters for the report and jensen verbs.
void write_svg_lines(const std::filesystem::path& path, const std::vector<SvgSeries>& series,
                     const std::string& x_label, const std::string& y_label);
void write_svg_histogram(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, Histogram>>& hists);

}  // namespace piddm
