#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "cbc/harness.hpp"

namespace cbc::harness {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

// Tableau-10 subset; cycles for more series.
constexpr const char *kPalette[] = {"#4e79a7", "#e15759", "#59a14f", "#f28e2b",
                                    "#b07aa1", "#76b7b2", "#edc948", "#9c755f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&':
      out += "&amp;";
      break;
    case '<':
      out += "&lt;";
      break;
    case '>':
      out += "&gt;";
      break;
    case '"':
      out += "&quot;";
      break;
    default:
      out += c;
    }
  }
  return out;
}

// 1-2-5 tick step giving roughly `target` intervals.
double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      return m * mag;
    }
  }
  return 10.0 * mag;
}

} // namespace

std::string render_svg(const std::vector<SummaryRow> &rows, const std::string &title) {
  std::vector<std::string> series;
  double x_lo = std::numeric_limits<double>::infinity();
  double x_hi = -x_lo;
  double y_lo = x_lo;
  double y_hi = -x_lo;
  for (const auto &r : rows) {
    if (std::find(series.begin(), series.end(), r.algorithm) == series.end()) {
      series.push_back(r.algorithm);
    }
    if (r.n == 0 || !std::isfinite(r.mean)) {
      continue;
    }
    x_lo = std::min(x_lo, r.value);
    x_hi = std::max(x_hi, r.value);
    y_lo = std::min(y_lo, r.mean - r.standard_error);
    y_hi = std::max(y_hi, r.mean + r.standard_error);
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 0.0;
    x_hi = 1.0;
    y_lo = 0.0;
    y_hi = 1.0;
  }
  if (x_hi == x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  if (y_hi == y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return kTop + (y_hi - y) / (y_hi - y_lo) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    svg << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-size=\"14\">" << escape(title) << "</text>\n";
  }

  const double ystep = nice_step(y_hi - y_lo, 6);
  for (double y = std::ceil(y_lo / ystep) * ystep; y <= y_hi + 1e-12; y += ystep) {
    svg << "<line x1=\"" << num(kLeft) << "\" x2=\"" << num(kLeft + plot_w) << "\" y1=\""
        << num(py(y)) << "\" y2=\"" << num(py(y)) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(y) + 4)
        << "\" text-anchor=\"end\">" << label(std::abs(y) < 1e-12 ? 0.0 : y) << "</text>\n";
  }
  std::vector<double> xs;
  for (const auto &r : rows) {
    if (std::find(xs.begin(), xs.end(), r.value) == xs.end()) {
      xs.push_back(r.value);
    }
  }
  for (double x : xs) {
    svg << "<text x=\"" << num(px(x)) << "\" y=\"" << num(kTop + plot_h + 18)
        << "\" text-anchor=\"middle\">" << label(x) << "</text>\n";
  }
  svg << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(plot_w)
      << "\" height=\"" << num(plot_h) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  if (!rows.empty()) {
    svg << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 10)
        << "\" text-anchor=\"middle\">" << to_string(rows.front().variable) << "</text>\n";
  }
  svg << "<text transform=\"translate(16," << num(kTop + plot_h / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">performance</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char *color = kPalette[k % std::size(kPalette)];
    std::vector<const SummaryRow *> pts;
    for (const auto &r : rows) {
      if (r.algorithm == series[k] && r.n > 0 && std::isfinite(r.mean)) {
        pts.push_back(&r);
      }
    }
    std::sort(pts.begin(), pts.end(),
              [](const SummaryRow *a, const SummaryRow *b) { return a->value < b->value; });

    if (pts.size() >= 2) {
      svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (const auto *p : pts) {
        svg << num(px(p->value)) << ',' << num(py(p->mean + p->standard_error)) << ' ';
      }
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        svg << num(px((*it)->value)) << ',' << num(py((*it)->mean - (*it)->standard_error))
            << ' ';
      }
      svg << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto *p : pts) {
      svg << num(px(p->value)) << ',' << num(py(p->mean)) << ' ';
    }
    svg << "\"/>\n";
    for (const auto *p : pts) {
      svg << "<circle cx=\"" << num(px(p->value)) << "\" cy=\"" << num(py(p->mean))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << num(kLeft + plot_w + 14) << "\" x2=\"" << num(kLeft + plot_w + 34)
        << "\" y1=\"" << num(ly) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(kLeft + plot_w + 40) << "\" y=\"" << num(ly + 4) << "\">"
        << escape(series[k]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

} // namespace cbc::harness
