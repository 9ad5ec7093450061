/*
 * Copyright 2026 The avibench Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Minimal SVG line/scatter plot writer for ROC, calibration and timeline figures.

#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace avibench::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  bool line = true;  // polyline, otherwise markers only
  std::string color = "#1f77b4";
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  std::vector<Series> series;
  bool diagonal = false;  // dashed y = x reference
};

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string render(const Plot& p) {
  constexpr double kW = 480, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double xr = p.x_max > p.x_min ? p.x_max - p.x_min : 1;
  const double yr = p.y_max > p.y_min ? p.y_max - p.y_min : 1;
  auto sx = [&](double x) { return kLeft + (x - p.x_min) / xr * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - p.y_min) / yr * ph; };
  char buf[256];
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"400\" viewBox=\"0 0 480 400\">\n"
      "<rect width=\"480\" height=\"400\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n",
                kLeft, kTop, pw, ph);
  out += buf;
  for (int i = 0; i <= 5; ++i) {
    const double fx = p.x_min + xr * i / 5, fy = p.y_min + yr * i / 5;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%.2f</text>\n", sx(fx),
                  kTop + ph + 16, fx);
    out += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n",
                  kLeft - 6, sy(fy) + 4, fy);
    out += buf;
  }
  if (p.diagonal) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n",
                  sx(p.x_min), sy(p.y_min), sx(p.x_max), sy(p.y_max));
    out += buf;
  }
  for (std::size_t s = 0; s < p.series.size(); ++s) {
    const auto& ser = p.series[s];
    if (ser.line && ser.points.size() > 1) {
      out += "<polyline fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : ser.points) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", sx(x), sy(y));
        out += buf;
      }
      out += "\"/>\n";
    } else {
      for (const auto& [x, y] : ser.points) {
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", sx(x), sy(y),
                      ser.color.c_str());
        out += buf;
      }
    }
    if (!ser.label.empty()) {
      std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" fill=\"%s\">", kLeft + 8,
                    kTop + 14 + 14.0 * static_cast<double>(s), ser.color.c_str());
      out += buf;
      out += escape(ser.label) + "</text>\n";
    }
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">", kW / 2);
  out += buf + escape(p.title) + "</text>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">", kLeft + pw / 2,
                kH - 10);
  out += buf + escape(p.x_label) + "</text>\n";
  std::snprintf(buf, sizeof buf,
                "<text x=\"14\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 %.1f)\">",
                kTop + ph / 2, kTop + ph / 2);
  out += buf + escape(p.y_label) + "</text>\n</svg>\n";
  return out;
}

}  // namespace avibench::svg
