#pragma once

#include <map>
#include <string>
#include <vector>

#include "vip/tensor.hpp"
#include "vip/version.hpp"

namespace vip {

struct ImageRecord {
    std::string image_hash;
    std::map<std::string, double> values;               // scalar diagnostics
    std::map<std::string, std::vector<double>> series;  // per-layer curves etc.
};

struct Aggregate {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

// One analysis run: resolved settings plus per-image records. Aggregates
// are recomputed from the records at emission time.
struct AnalysisReport {
    std::string config_hash;
    std::map<std::string, std::string> settings; // resolved run configuration
    std::map<std::string, double> results;       // run-level scalar results
    std::vector<ImageRecord> records;

    // Per scalar key, over all records carrying it (linear-interpolation
    // quartiles).
    std::map<std::string, Aggregate> aggregates() const;
};

enum class ReportFormat { Json, Csv };

// Stable field order, floats at 9 significant digits, schema version
// embedded. Throws IoError on an unwritable path.
void emit_report(const AnalysisReport& report, ReportFormat format, const std::string& out_path);

std::string report_to_json(const AnalysisReport& report);
std::string report_to_csv(const AnalysisReport& report);

// p1 x p2 grid of SVG cells colored by a monotone colormap over
// [min, max] of the map. Deterministic: same tensor, byte-identical file.
// Throws std::invalid_argument unless the input is a nonnegative 2-D grid.
void render_attention_map(const Tensor& attention, const std::string& out_path);

std::string attention_map_to_svg(const Tensor& attention);

} // namespace vip
