#pragma once

// Static SVG scalp topomaps: unit-disk head with nose, inverse-distance
// weighted background, red-positive/blue-negative electrodes, yellow rings on
// highlighted electrodes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "eegatt/data.hpp"

namespace eegatt {

struct TopomapSpec {
  ElectrodeLayout layout;
  std::vector<double> field;           // one value per electrode, layout index order
  std::vector<std::size_t> highlight;  // electrode indices
  std::string title;
  double limit = 0;  // colour scale spans [-limit, limit]; 0 means max |field|
  std::size_t grid = 48;
  std::size_t size_px = 400;
};

struct Rgb {
  int r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kNeutral{247, 247, 247};
inline constexpr Rgb kRed{178, 24, 43};
inline constexpr Rgb kBlue{33, 102, 172};

// v in [-1, 1]; 0 maps to the neutral colour.
inline Rgb diverging_color(double v) {
  v = std::clamp(v, -1.0, 1.0);
  const Rgb& end = v >= 0 ? kRed : kBlue;
  const double a = std::abs(v);
  auto mix = [a](int from, int to) { return static_cast<int>(std::lround(from + (to - from) * a)); };
  return {mix(kNeutral.r, end.r), mix(kNeutral.g, end.g), mix(kNeutral.b, end.b)};
}

inline std::string hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

// Inverse-distance weighting over the k nearest electrodes.
inline double idw(const ElectrodeLayout& layout, const std::vector<double>& field, double x, double y,
                  std::size_t k = 4, double power = 2) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(layout.size());
  for (std::size_t e = 0; e < layout.size(); ++e) {
    const double dx = x - layout[e].x, dy = y - layout[e].y;
    d.emplace_back(std::sqrt(dx * dx + dy * dy), e);
  }
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  if (d[0].first < 1e-12) return field[d[0].second];
  double num = 0, den = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = 1.0 / std::pow(d[i].first, power);
    num += w * field[d[i].second];
    den += w;
  }
  return num / den;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_topomap(const TopomapSpec& spec) {
  const auto& L = spec.layout;
  if (spec.field.size() != L.size()) {
    throw ShapeError("render_topomap: field has " + std::to_string(spec.field.size()) + " values for " +
                     std::to_string(L.size()) + " electrodes");
  }
  for (auto h : spec.highlight) {
    if (h >= L.size()) throw std::out_of_range("render_topomap: highlighted electrode out of range");
  }
  if (spec.grid < 2) throw std::invalid_argument("render_topomap: grid must be at least 2");
  double limit = spec.limit;
  if (limit <= 0) {
    for (double v : spec.field) limit = std::max(limit, std::abs(v));
  }
  auto color_of = [limit](double v) { return diverging_color(limit > 0 ? v / limit : 0.0); };

  // Head radius r centred at (c, c + top margin) in pixel space.
  const double s = static_cast<double>(spec.size_px);
  const double r = 0.38 * s, cx = 0.5 * s, cy = 0.55 * s;
  auto px = [&](double x) { return cx + r * x; };
  auto py = [&](double y) { return cy - r * y; };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + std::to_string(spec.size_px) +
         "\" height=\"" + std::to_string(spec.size_px) + "\" viewBox=\"0 0 " + std::to_string(spec.size_px) + " " +
         std::to_string(spec.size_px) + "\">\n";
  out += "<defs><clipPath id=\"head\"><circle cx=\"" + detail::fmt(cx) + "\" cy=\"" + detail::fmt(cy) + "\" r=\"" +
         detail::fmt(r) + "\"/></clipPath></defs>\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (!spec.title.empty()) {
    out += "<text x=\"" + detail::fmt(cx) + "\" y=\"" + detail::fmt(0.06 * s) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + detail::xml_escape(spec.title) +
           "</text>\n";
  }

  // Interpolated background.
  out += "<g clip-path=\"url(#head)\" shape-rendering=\"crispEdges\">\n";
  const double cell = 2.0 / static_cast<double>(spec.grid);
  for (std::size_t gy = 0; gy < spec.grid; ++gy) {
    for (std::size_t gx = 0; gx < spec.grid; ++gx) {
      const double x = -1.0 + (static_cast<double>(gx) + 0.5) * cell;
      const double y = 1.0 - (static_cast<double>(gy) + 0.5) * cell;
      if (x * x + y * y > (1 + cell) * (1 + cell)) continue;
      const double v = idw(L, spec.field, x, y);
      out += "<rect x=\"" + detail::fmt(px(x - cell / 2)) + "\" y=\"" + detail::fmt(py(y + cell / 2)) + "\" width=\"" +
             detail::fmt(r * cell) + "\" height=\"" + detail::fmt(r * cell) + "\" fill=\"" + hex(color_of(v)) +
             "\"/>\n";
    }
  }
  out += "</g>\n";

  // Head outline and nose.
  out += "<circle cx=\"" + detail::fmt(cx) + "\" cy=\"" + detail::fmt(cy) + "\" r=\"" + detail::fmt(r) +
         "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>\n";
  out += "<polyline points=\"" + detail::fmt(px(-0.1)) + "," + detail::fmt(py(0.995)) + " " + detail::fmt(px(0)) + "," +
         detail::fmt(py(1.12)) + " " + detail::fmt(px(0.1)) + "," + detail::fmt(py(0.995)) +
         "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>\n";

  // Electrodes.
  const std::set<std::size_t> hi(spec.highlight.begin(), spec.highlight.end());
  const double er = std::max(3.0, 0.022 * s);
  for (std::size_t e = 0; e < L.size(); ++e) {
    const auto& el = L[e];
    out += "<circle id=\"e" + std::to_string(el.index) + "\" cx=\"" + detail::fmt(px(el.x)) + "\" cy=\"" +
           detail::fmt(py(el.y)) + "\" r=\"" + detail::fmt(er) + "\" fill=\"" + hex(color_of(spec.field[e])) +
           "\" stroke=\"#333333\" stroke-width=\"1\"><title>" + detail::xml_escape(el.name) + "</title></circle>\n";
    if (hi.count(e)) {
      out += "<circle cx=\"" + detail::fmt(px(el.x)) + "\" cy=\"" + detail::fmt(py(el.y)) + "\" r=\"" +
             detail::fmt(er + 3) + "\" fill=\"none\" stroke=\"#ffd700\" stroke-width=\"3\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace eegatt
