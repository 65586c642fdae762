#pragma once

// Minimal SVG emission for decision-surface heatmaps. No dependencies; the
// output is a single <svg> element with one rect per grid cell plus optional
// class-coloured data points on top.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "mnp/tensor.hpp"

namespace mnp {

namespace detail {

// two-ended map: 0 -> blue, 0.5 -> white, 1 -> red
inline std::string heat_colour(double t) {
  t = std::clamp(t, 0.0, 1.0);
  int r, g, b;
  if (t < 0.5) {
    const double u = t * 2.0;
    r = static_cast<int>(59.0 + u * (255.0 - 59.0));
    g = static_cast<int>(76.0 + u * (255.0 - 76.0));
    b = static_cast<int>(192.0 + u * (255.0 - 192.0));
  } else {
    const double u = (t - 0.5) * 2.0;
    r = static_cast<int>(255.0 - u * (255.0 - 180.0));
    g = static_cast<int>(255.0 - u * (255.0 - 4.0));
    b = static_cast<int>(255.0 - u * (255.0 - 38.0));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

struct SvgPoint {
  double x = 0.0;
  double y = 0.0;
  std::size_t cls = 0;
};

// `values` is row-major over the mesh (y-outer, x-inner), one value per cell
// in [0, 1]; the image spans [x0, x1] x [y0, y1] with y up.
inline std::string render_heatmap_svg(std::size_t nx, std::size_t ny,
                                      double x0, double x1, double y0,
                                      double y1,
                                      const std::vector<double>& values,
                                      const std::vector<SvgPoint>& points = {},
                                      std::size_t width_px = 640) {
  if (values.size() != nx * ny)
    throw contract_error("render_heatmap_svg: values do not match the mesh");
  const double aspect = (y1 - y0) / (x1 - x0);
  const auto w = static_cast<double>(width_px);
  const double h = w * aspect;
  const double cw = w / static_cast<double>(nx);
  const double ch = h / static_cast<double>(ny);

  std::string out;
  out.reserve(values.size() * 64);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                "height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                w, h, w, h);
  out += buf;
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      // flip vertically: mesh row 0 is the lowest y, SVG row 0 the top
      const double px = static_cast<double>(ix) * cw;
      const double py = static_cast<double>(ny - 1 - iy) * ch;
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" "
                    "height=\"%.2f\" fill=\"%s\"/>\n",
                    px, py, cw + 0.5, ch + 0.5,
                    detail::heat_colour(values[iy * nx + ix]).c_str());
      out += buf;
    }
  static const char* kPointColours[] = {"#1b2a52", "#5c1010", "#1d4f1d",
                                        "#4d3800"};
  for (const SvgPoint& p : points) {
    const double px = (p.x - x0) / (x1 - x0) * w;
    const double py = h - (p.y - y0) / (y1 - y0) * h;
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\" "
                  "stroke=\"white\" stroke-width=\"0.6\"/>\n",
                  px, py, kPointColours[p.cls % 4]);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace mnp
