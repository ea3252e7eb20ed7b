#include "piddm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace piddm {

namespace {

constexpr int kWidth = 640, kHeight = 400, kMargin = 50;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    void pad() {
        if (!(hi > lo)) hi = lo + 1.0;
        const double p = 0.05 * (hi - lo);
        lo -= p, hi += p;
    }
    double map(double v, double px_lo, double px_hi) const {
        return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
    }
};

void svg_header(std::ofstream& os) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void svg_axes(std::ofstream& os, const Range& rx, const Range& ry, const std::string& xl,
              const std::string& yl) {
    os << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
       << kWidth - kMargin << "\" y2=\"" << kHeight - kMargin
       << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
       << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10
       << "\" font-size=\"12\" text-anchor=\"middle\">" << xl << "</text>\n";
    os << "<text x=\"15\" y=\"" << kHeight / 2
       << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
       << kHeight / 2 << ")\">" << yl << "</text>\n";
    os.precision(4);
    for (int i = 0; i <= 4; ++i) {
        const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
        const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
        os << "<text x=\"" << rx.map(fx, kMargin, kWidth - kMargin) << "\" y=\""
           << kHeight - kMargin + 15 << "\" font-size=\"10\" text-anchor=\"middle\">" << fx
           << "</text>\n";
        os << "<text x=\"" << kMargin - 5 << "\" y=\""
           << ry.map(fy, kHeight - kMargin, kMargin) << "\" font-size=\"10\" text-anchor=\"end\">"
           << fy << "</text>\n";
    }
    os.precision(17);
}

}  // namespace

void write_svg_lines(const std::filesystem::path& path, const std::vector<SvgSeries>& series,
                     const std::string& x_label, const std::string& y_label) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    Range rx, ry;
    for (const auto& s : series) {
        for (double v : s.x) rx.add(v);
        for (double v : s.y) ry.add(v);
    }
    rx.pad(), ry.pad();
    svg_header(os);
    svg_axes(os, rx, ry, x_label, y_label);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill=\"none\" stroke=\"" << kColors[si % 6]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << rx.map(s.x[i], kMargin, kWidth - kMargin) << ','
               << ry.map(s.y[i], kHeight - kMargin, kMargin) << ' ';
        os << "\"/>\n";
        os << "<text x=\"" << kWidth - kMargin - 5 << "\" y=\"" << kMargin + 15 * (si + 1)
           << "\" font-size=\"11\" text-anchor=\"end\" fill=\"" << kColors[si % 6] << "\">"
           << s.label << "</text>\n";
    }
    os << "</svg>\n";
}

void write_svg_histogram(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, Histogram>>& hists) {
    std::vector<SvgSeries> series;
    for (const auto& [label, h] : hists) {
        SvgSeries s;
        s.label = label;
        const double bin_w = (h.hi - h.lo) / h.counts.size();
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            s.x.push_back(h.center(b));
            s.y.push_back(h.total > 0 ? h.counts[b] / (bin_w * h.total) : 0.0);
        }
        series.push_back(std::move(s));
    }
    write_svg_lines(path, series, "value", "density");
}

}  // namespace piddm
