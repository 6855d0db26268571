#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fcos/metrics.hpp"

namespace fcos {

/// Before/after accounting for one pruning run. Accuracies are fractions in [0, 1].
struct PruneReport {
    std::string method = "FCOS";
    std::string pruning_type = "Channel+Layer";
    std::string stage = "final";  // stage1, lacd or final
    ModelCost original;
    ModelCost pruned;
    double original_acc = 0;
    double pruned_acc = 0;
    std::map<double, double> per_snr;

    double delta_acc() const { return pruned_acc - original_acc; }
    std::int64_t delta_flops() const;
    std::int64_t delta_params() const;
    double flops_pr() const;
    double params_pr() const;
};

/// One parsed line of the report CSV.
struct ReportRow {
    std::string method;
    std::string pruning_type;
    double original_acc = 0;
    double acc = 0;
    double delta_acc = 0;
    std::int64_t delta_flops = 0;
    std::int64_t delta_params = 0;
    double flops_pr = 0;
    double params_pr = 0;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct CurvePoint {
    std::string phase;
    std::size_t epoch = 0;
    std::string split;
    double accuracy = 0;
};

inline const std::vector<std::string> kReportColumns = {"Method", "Pruning Type", "Original Acc", "Acc", "ΔAcc",
                                                        "ΔFLOPs", "ΔParams", "FLOPs PR", "Params PR"};

/// 1 - pruned/original; 0 when original is 0.
double pruning_rate(std::size_t original, std::size_t pruned);

/// Two decimals of the percentage with an escaped sign: 0.8839 -> "88.39\%".
std::string format_percent(double fraction);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

ReportRow to_row(const PruneReport& r);

void write_report_csv(std::span<const PruneReport> reports, const std::filesystem::path& path);
void write_report_markdown(std::span<const PruneReport> reports, const std::filesystem::path& path);
/// Writes report.csv, report.md and per_snr.csv into `dir`. Throws UsageError for no reports.
void emit_report(std::span<const PruneReport> reports, const std::filesystem::path& dir);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

void write_per_snr_csv(std::span<const PruneReport> reports, const std::filesystem::path& path);
/// Columns phase, epoch, split, accuracy.
void write_curve_csv(std::span<const CurvePoint> points, const std::filesystem::path& path);

}  // namespace fcos
