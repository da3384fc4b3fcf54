#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "volpretext/errors.hpp"

namespace vpx::report {

namespace detail {

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return colors[i % 8];
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

} // namespace detail

// Minimal deterministic SVG line chart; one polyline per named series.
inline std::string svg_line_chart(const std::map<std::string, std::vector<double>>& series,
                                  const std::string& title, const std::string& x_label,
                                  const std::string& y_label) {
    const double width = 640, height = 400;
    const double ml = 60, mr = 20, mt = 40, mb = 50;
    double lo = 0.0, hi = 1.0;
    std::size_t max_len = 2;
    bool first = true;
    for (const auto& [name, vals] : series) {
        (void)name;
        for (double v : vals) {
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        max_len = std::max(max_len, vals.size());
    }
    if (hi == lo) hi = lo + 1.0;
    const double px = (width - ml - mr) / static_cast<double>(max_len - 1);
    const double py = (height - mt - mb) / (hi - lo);

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                      "viewBox=\"0 0 640 400\">\n";
    svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title +
           "</text>\n";
    svg += "<line x1=\"60\" y1=\"350\" x2=\"620\" y2=\"350\" stroke=\"black\"/>\n";
    svg += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"350\" stroke=\"black\"/>\n";
    svg += "<text x=\"340\" y=\"390\" text-anchor=\"middle\" font-size=\"12\">" + x_label +
           "</text>\n";
    svg += "<text x=\"16\" y=\"200\" font-size=\"12\" transform=\"rotate(-90 16 200)\" "
           "text-anchor=\"middle\">" +
           y_label + "</text>\n";
    svg += "<text x=\"52\" y=\"354\" text-anchor=\"end\" font-size=\"10\">" + detail::fmt(lo) +
           "</text>\n";
    svg += "<text x=\"52\" y=\"46\" text-anchor=\"end\" font-size=\"10\">" + detail::fmt(hi) +
           "</text>\n";
    std::size_t si = 0;
    for (const auto& [name, vals] : series) {
        std::string points;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double x = ml + px * static_cast<double>(i);
            const double y = height - mb - (vals[i] - lo) * py;
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", x, y);
            points += buf;
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(si)) +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        svg += "<text x=\"" + std::to_string(70 + 130 * si) + "\" y=\"36\" font-size=\"11\" fill=\"" +
               detail::palette(si) + "\">" + name + "</text>\n";
        ++si;
    }
    svg += "</svg>\n";
    return svg;
}

// Grouped bar chart: one group per metric, one bar per named model.
inline std::string svg_bar_chart(const std::vector<std::string>& groups,
                                 const std::map<std::string, std::vector<double>>& bars,
                                 const std::string& title) {
    const double width = 640, height = 400;
    const double ml = 60, mr = 20, mt = 40, mb = 60;
    double hi = 1.0;
    for (const auto& [name, vals] : bars) {
        (void)name;
        for (double v : vals) hi = std::max(hi, v);
    }
    const double plot_w = width - ml - mr;
    const double plot_h = height - mt - mb;
    const double group_w = plot_w / static_cast<double>(groups.size());
    const double bar_w = group_w / static_cast<double>(bars.size() + 1);

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                      "viewBox=\"0 0 640 400\">\n";
    svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title +
           "</text>\n";
    svg += "<line x1=\"60\" y1=\"340\" x2=\"620\" y2=\"340\" stroke=\"black\"/>\n";
    svg += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"340\" stroke=\"black\"/>\n";
    std::size_t bi = 0;
    for (const auto& [name, vals] : bars) {
        for (std::size_t g = 0; g < groups.size() && g < vals.size(); ++g) {
            const double x = ml + group_w * static_cast<double>(g) +
                             bar_w * (static_cast<double>(bi) + 0.5);
            const double h = std::max(0.0, vals[g] / hi * plot_h);
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                          "fill=\"%s\"/>\n",
                          x, height - mb - h, bar_w * 0.9, h, detail::palette(bi));
            svg += buf;
        }
        svg += "<text x=\"" + std::to_string(70 + 130 * bi) + "\" y=\"36\" font-size=\"11\" fill=\"" +
               detail::palette(bi) + "\">" + name + "</text>\n";
        ++bi;
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double x = ml + group_w * (static_cast<double>(g) + 0.5);
        char buf[120];
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"358\" text-anchor=\"middle\" font-size=\"11\">%s"
                      "</text>\n",
                      x, groups[g].c_str());
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw vpx::DataError("report: cannot open '" + path + "' for writing");
    f << content;
    if (!f) throw vpx::DataError("report: short write to '" + path + "'");
}

} // namespace vpx::report
