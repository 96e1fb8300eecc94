#include "vip/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vip/errors.hpp"

namespace vip {

namespace {

std::string fmt_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default:
            if (static_cast<unsigned char>(c) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                out += buf;
            } else {
                out += c;
            }
        }
    }
    return out;
}

// Linear-interpolation quantile on a sorted vector.
double quantile(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted[0];
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// Monotone 5-stop heat colormap (dark blue -> yellow), linear in value.
std::string colormap(double t) {
    static const int stops[5][3] = {
        {13, 8, 135}, {126, 3, 168}, {204, 71, 120}, {248, 149, 64}, {240, 249, 33}};
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * 4.0;
    const auto lo = static_cast<std::size_t>(std::min(3.0, std::floor(pos)));
    const double frac = pos - static_cast<double>(lo);
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                  static_cast<int>(std::lround(stops[lo][0] + frac * (stops[lo + 1][0] - stops[lo][0]))),
                  static_cast<int>(std::lround(stops[lo][1] + frac * (stops[lo + 1][1] - stops[lo][1]))),
                  static_cast<int>(std::lround(stops[lo][2] + frac * (stops[lo + 1][2] - stops[lo][2]))));
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << content;
    if (!f) throw IoError("write failed for " + path);
}

std::set<std::string> scalar_keys(const AnalysisReport& r) {
    std::set<std::string> keys;
    for (const auto& rec : r.records)
        for (const auto& [k, v] : rec.values) keys.insert(k);
    return keys;
}

std::set<std::string> series_keys(const AnalysisReport& r) {
    std::set<std::string> keys;
    for (const auto& rec : r.records)
        for (const auto& [k, v] : rec.series) keys.insert(k);
    return keys;
}

} // namespace

std::map<std::string, Aggregate> AnalysisReport::aggregates() const {
    std::map<std::string, Aggregate> out;
    for (const std::string& key : scalar_keys(*this)) {
        std::vector<double> vals;
        for (const auto& rec : records)
            if (auto it = rec.values.find(key); it != rec.values.end()) vals.push_back(it->second);
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        Aggregate a;
        a.count = vals.size();
        double sum = 0.0;
        for (double v : vals) sum += v;
        a.mean = sum / static_cast<double>(vals.size());
        a.median = quantile(vals, 0.5);
        a.q1 = quantile(vals, 0.25);
        a.q3 = quantile(vals, 0.75);
        out[key] = a;
    }
    return out;
}

std::string report_to_json(const AnalysisReport& report) {
    std::ostringstream os;
    os << "{\n";
    os << "  \"schema_version\": " << kReportSchemaVersion << ",\n";
    os << "  \"toolkit_version\": \"" << kToolkitVersion << "\",\n";
    os << "  \"config_hash\": \"" << json_escape(report.config_hash) << "\",\n";
    os << "  \"settings\": {";
    bool first = true;
    for (const auto& [k, v] : report.settings) {
        os << (first ? "" : ", ") << "\"" << json_escape(k) << "\": \"" << json_escape(v) << "\"";
        first = false;
    }
    os << "},\n";
    os << "  \"results\": {";
    first = true;
    for (const auto& [k, v] : report.results) {
        os << (first ? "" : ", ") << "\"" << json_escape(k) << "\": " << fmt_g9(v);
        first = false;
    }
    os << "},\n";
    os << "  \"records\": [";
    for (std::size_t i = 0; i < report.records.size(); ++i) {
        const auto& rec = report.records[i];
        os << (i ? ",\n    " : "\n    ");
        os << "{\"image_hash\": \"" << json_escape(rec.image_hash) << "\", \"values\": {";
        first = true;
        for (const auto& [k, v] : rec.values) {
            os << (first ? "" : ", ") << "\"" << json_escape(k) << "\": " << fmt_g9(v);
            first = false;
        }
        os << "}";
        if (!rec.series.empty()) {
            os << ", \"series\": {";
            first = true;
            for (const auto& [k, vs] : rec.series) {
                os << (first ? "" : ", ") << "\"" << json_escape(k) << "\": [";
                for (std::size_t j = 0; j < vs.size(); ++j) os << (j ? ", " : "") << fmt_g9(vs[j]);
                os << "]";
                first = false;
            }
            os << "}";
        }
        os << "}";
    }
    os << (report.records.empty() ? "],\n" : "\n  ],\n");
    os << "  \"aggregates\": {";
    const auto aggs = report.aggregates();
    first = true;
    for (const auto& [k, a] : aggs) {
        os << (first ? "\n    " : ",\n    ");
        os << "\"" << json_escape(k) << "\": {\"count\": " << a.count
           << ", \"mean\": " << fmt_g9(a.mean) << ", \"median\": " << fmt_g9(a.median)
           << ", \"q1\": " << fmt_g9(a.q1) << ", \"q3\": " << fmt_g9(a.q3) << "}";
        first = false;
    }
    os << (aggs.empty() ? "}\n" : "\n  }\n");
    os << "}\n";
    return os.str();
}

std::string report_to_csv(const AnalysisReport& report) {
    const auto skeys = scalar_keys(report);
    const auto qkeys = series_keys(report);
    std::map<std::string, std::size_t> series_len;
    for (const auto& rec : report.records)
        for (const auto& [k, v] : rec.series)
            series_len[k] = std::max(series_len[k], v.size());

    std::ostringstream os;
    os << "image_hash";
    for (const auto& k : skeys) os << "," << k;
    for (const auto& k : qkeys)
        for (std::size_t i = 0; i < series_len[k]; ++i) os << "," << k << "_" << i;
    os << "\n";
    for (const auto& rec : report.records) {
        os << rec.image_hash;
        for (const auto& k : skeys) {
            os << ",";
            if (auto it = rec.values.find(k); it != rec.values.end()) os << fmt_g9(it->second);
        }
        for (const auto& k : qkeys)
            for (std::size_t i = 0; i < series_len[k]; ++i) {
                os << ",";
                auto it = rec.series.find(k);
                if (it != rec.series.end() && i < it->second.size()) os << fmt_g9(it->second[i]);
            }
        os << "\n";
    }
    return os.str();
}

void emit_report(const AnalysisReport& report, ReportFormat format, const std::string& out_path) {
    write_file(out_path,
               format == ReportFormat::Json ? report_to_json(report) : report_to_csv(report));
}

std::string attention_map_to_svg(const Tensor& attention) {
    if (attention.rank() != 2)
        throw std::invalid_argument("render_attention_map: expects a 2-D grid");
    const std::size_t p1 = attention.extent(0), p2 = attention.extent(1);
    float lo = attention(0, 0), hi = attention(0, 0);
    for (std::size_t i = 0; i < attention.numel(); ++i) {
        const float v = attention(i);
        if (v < 0.0f)
            throw std::invalid_argument("render_attention_map: negative attention entry");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? static_cast<double>(hi) - lo : 1.0;

    constexpr int cell = 16;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << p2 * cell << "\" height=\""
       << p1 * cell << "\" viewBox=\"0 0 " << p2 * cell << " " << p1 * cell << "\">\n";
    for (std::size_t y = 0; y < p1; ++y)
        for (std::size_t x = 0; x < p2; ++x) {
            const double t = (attention(y, x) - lo) / span;
            os << "<rect x=\"" << x * cell << "\" y=\"" << y * cell << "\" width=\"" << cell
               << "\" height=\"" << cell << "\" fill=\"" << colormap(t) << "\"/>\n";
        }
    os << "</svg>\n";
    return os.str();
}

void render_attention_map(const Tensor& attention, const std::string& out_path) {
    write_file(out_path, attention_map_to_svg(attention));
}

} // namespace vip
