#include "fcos/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <spdlog/fmt/fmt.h>

#include "fcos/error.hpp"

namespace fcos {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

template <class T>
T parse_field(const std::string& s, const char* column) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(FormatErrorKind::Malformed, std::string("bad value in column ") + column + ": " + s);
    return v;
}

std::string pct_plain(double fraction) { return fmt::format("{:.2f}", fraction * 100.0); }

}  // namespace

std::int64_t PruneReport::delta_flops() const { return static_cast<std::int64_t>(pruned.flops) - static_cast<std::int64_t>(original.flops); }
std::int64_t PruneReport::delta_params() const { return static_cast<std::int64_t>(pruned.params) - static_cast<std::int64_t>(original.params); }
double PruneReport::flops_pr() const { return pruning_rate(original.flops, pruned.flops); }
double PruneReport::params_pr() const { return pruning_rate(original.params, pruned.params); }

double pruning_rate(std::size_t original, std::size_t pruned) {
    if (original == 0) return 0.0;
    return 1.0 - static_cast<double>(pruned) / static_cast<double>(original);
}

std::string format_percent(double fraction) { return pct_plain(fraction) + "\\%"; }

std::string format_number(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw UsageError("cannot format number");
    return std::string(buf, p);
}

ReportRow to_row(const PruneReport& r) {
    return {r.method, r.pruning_type, r.original_acc, r.pruned_acc, r.delta_acc(), r.delta_flops(), r.delta_params(), r.flops_pr(), r.params_pr()};
}

void write_report_csv(std::span<const PruneReport> reports, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (std::size_t i = 0; i < kReportColumns.size(); ++i) out << (i ? "," : "") << kReportColumns[i];
    out << '\n';
    for (const auto& rep : reports) {
        const auto r = to_row(rep);
        out << csv_field(r.method) << ',' << csv_field(r.pruning_type) << ',' << format_number(r.original_acc) << ','
            << format_number(r.acc) << ',' << format_number(r.delta_acc) << ',' << r.delta_flops << ',' << r.delta_params << ','
            << format_number(r.flops_pr) << ',' << format_number(r.params_pr) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void write_report_markdown(std::span<const PruneReport> reports, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "| Method | Pruning Type | Original Acc(%) | Acc(%) | ΔAcc(%) | ΔFLOPs | ΔParams | FLOPs PR | Params PR |\n";
    out << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : reports) {
        out << "| " << r.method << " | " << r.pruning_type << " | " << pct_plain(r.original_acc) << " | " << pct_plain(r.pruned_acc) << " | "
            << (r.delta_acc() >= 0 ? "+" : "") << pct_plain(r.delta_acc()) << " | " << r.delta_flops() << " | " << r.delta_params() << " | "
            << format_percent(r.flops_pr()) << " | " << format_percent(r.params_pr()) << " |\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void write_per_snr_csv(std::span<const PruneReport> reports, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "method,stage,snr_db,accuracy\n";
    for (const auto& r : reports)
        for (const auto& [snr, acc] : r.per_snr) out << csv_field(r.method) << ',' << r.stage << ',' << format_number(snr) << ',' << format_number(acc) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void emit_report(std::span<const PruneReport> reports, const std::filesystem::path& dir) {
    if (reports.empty()) throw UsageError("emit_report needs at least one report");
    write_report_csv(reports, dir / "report.csv");
    write_report_markdown(reports, dir / "report.md");
    write_per_snr_csv(reports, dir / "per_snr.csv");
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv(line) != kReportColumns) throw FormatError(FormatErrorKind::Malformed, "report header mismatch in " + path.string());
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != kReportColumns.size()) throw FormatError(FormatErrorKind::Malformed, "report row has " + std::to_string(f.size()) + " fields");
        rows.push_back({f[0], f[1], parse_field<double>(f[2], "Original Acc"), parse_field<double>(f[3], "Acc"),
                        parse_field<double>(f[4], "ΔAcc"), parse_field<std::int64_t>(f[5], "ΔFLOPs"),
                        parse_field<std::int64_t>(f[6], "ΔParams"), parse_field<double>(f[7], "FLOPs PR"),
                        parse_field<double>(f[8], "Params PR")});
    }
    return rows;
}

void write_curve_csv(std::span<const CurvePoint> points, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "phase,epoch,split,accuracy\n";
    for (const auto& p : points) out << p.phase << ',' << p.epoch << ',' << p.split << ',' << format_number(p.accuracy) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace fcos
