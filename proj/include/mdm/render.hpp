// Static SVG renders of constellations and BER curves. No interactivity; the
// CSV outputs stay the canonical artifacts.
#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "codebook.hpp"
#include "evaluation.hpp"

namespace mdm {

namespace detail {
inline const char* kPalette[8] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
}

// One panel per resource: superposed points in grey, per-user codeword points
// colored by user.
inline void write_constellation_svg(std::ostream& os, const std::vector<Codebook>& books,
                                    const SuperposedConstellation& sc) {
    const int K = sc.K;
    const double panel = 260.0, margin = 30.0;
    const double W = K * panel + 2 * margin, H = panel + 2 * margin + 20.0;
    double radius = 1e-9;
    for (const auto& p : sc.points)
        for (const auto& z : p) radius = std::max({radius, std::fabs(z.real()), std::fabs(z.imag())});
    radius *= 1.1;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    for (int k = 0; k < K; ++k) {
        const double x0 = margin + k * panel, y0 = margin;
        auto px = [&](double re) { return x0 + (re / radius + 1.0) * 0.5 * panel; };
        auto py = [&](double im) { return y0 + (1.0 - (im / radius + 1.0) * 0.5) * panel; };
        os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel << "\" height=\"" << panel
           << "\" fill=\"none\" stroke=\"#444\"/>\n";
        os << "<line x1=\"" << px(-radius) << "\" y1=\"" << py(0) << "\" x2=\"" << px(radius) << "\" y2=\"" << py(0)
           << "\" stroke=\"#ccc\"/>\n";
        os << "<line x1=\"" << px(0) << "\" y1=\"" << py(-radius) << "\" x2=\"" << px(0) << "\" y2=\"" << py(radius)
           << "\" stroke=\"#ccc\"/>\n";
        for (const auto& p : sc.points)
            os << "<circle cx=\"" << px(p[k].real()) << "\" cy=\"" << py(p[k].imag())
               << "\" r=\"1.2\" fill=\"#999\" fill-opacity=\"0.5\"/>\n";
        for (size_t j = 0; j < books.size(); ++j)
            for (const auto& w : books[j].words)
                os << "<circle cx=\"" << px(w[k].real()) << "\" cy=\"" << py(w[k].imag()) << "\" r=\"4\" fill=\""
                   << detail::kPalette[j % 8] << "\"/>\n";
        os << "<text x=\"" << x0 + panel / 2 << "\" y=\"" << y0 + panel + 16
           << "\" font-size=\"12\" text-anchor=\"middle\">resource " << k + 1 << "</text>\n";
    }
    os << "</svg>\n";
}

// Log-scale BER curves over Eb/N0, one polyline per named curve.
inline void write_ber_svg(std::ostream& os, const std::vector<std::pair<std::string, BerCurve>>& curves) {
    const double W = 640, H = 480, ml = 60, mr = 20, mt = 20, mb = 45;
    double xmin = 1e300, xmax = -1e300, bmin = 1.0;
    for (const auto& [name, c] : curves)
        for (const auto& p : c) {
            xmin = std::min(xmin, p.ebn0_db);
            xmax = std::max(xmax, p.ebn0_db);
            if (p.ber > 0) bmin = std::min(bmin, p.ber);
        }
    if (xmax <= xmin) xmax = xmin + 1;
    const double ymin_exp = std::floor(std::log10(std::max(bmin, 1e-8)));
    auto px = [&](double db) { return ml + (db - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double ber) {
        double e = std::log10(std::max(ber, std::pow(10.0, ymin_exp)));
        return mt + (0.0 - e) / (0.0 - ymin_exp) * (H - mt - mb);
    };
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    for (int e = 0; e >= static_cast<int>(ymin_exp); --e) {
        double y = py(std::pow(10.0, e));
        os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << W - mr << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4 << "\" font-size=\"11\" text-anchor=\"end\">1e" << e
           << "</text>\n";
    }
    for (double db = std::ceil(xmin); db <= xmax; db += 2.0) {
        os << "<line x1=\"" << px(db) << "\" y1=\"" << mt << "\" x2=\"" << px(db) << "\" y2=\"" << H - mb
           << "\" stroke=\"#eee\"/>\n";
        os << "<text x=\"" << px(db) << "\" y=\"" << H - mb + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
           << db << "</text>\n";
    }
    os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 8
       << "\" font-size=\"12\" text-anchor=\"middle\">Eb/N0 (dB)</text>\n";
    size_t ci = 0;
    for (const auto& [name, c] : curves) {
        os << "<polyline fill=\"none\" stroke=\"" << detail::kPalette[ci % 8] << "\" stroke-width=\"1.6\" points=\"";
        for (const auto& p : c)
            if (p.ber > 0) os << px(p.ebn0_db) << "," << py(p.ber) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * (ci + 1) << "\" font-size=\"12\" fill=\""
           << detail::kPalette[ci % 8] << "\" text-anchor=\"end\">" << name << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
}

}  // namespace mdm
