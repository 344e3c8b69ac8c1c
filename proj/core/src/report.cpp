#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "slod/errors.hpp"
#include "slod/experiments.hpp"

namespace slod {

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> json_opt(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

using CellKey = std::tuple<std::string, std::string, std::string, std::string, double, double, double, std::size_t>;

CellKey cell_of(const MetricsRow& r) {
  return {r.experiment, r.study, r.id_dataset, r.ood_dataset, r.alpha, r.lambda, r.temperature, r.epoch_budget};
}

nlohmann::json row_json(const MetricsRow& r) {
  return nlohmann::json{{"experiment", r.experiment},
                        {"study", r.study},
                        {"checkpoint_hash", r.checkpoint_hash},
                        {"id_dataset", r.id_dataset},
                        {"ood_dataset", r.ood_dataset},
                        {"alpha", r.alpha},
                        {"lambda", r.lambda},
                        {"temperature", r.temperature},
                        {"seed", r.seed},
                        {"epoch_budget", r.epoch_budget},
                        {"accuracy", opt_json(r.accuracy)},
                        {"ece", opt_json(r.ece)},
                        {"auroc", opt_json(r.auroc)}};
}

MetricsRow row_from_json(const nlohmann::json& j) {
  MetricsRow r;
  j.at("experiment").get_to(r.experiment);
  j.at("study").get_to(r.study);
  j.at("checkpoint_hash").get_to(r.checkpoint_hash);
  j.at("id_dataset").get_to(r.id_dataset);
  j.at("ood_dataset").get_to(r.ood_dataset);
  j.at("alpha").get_to(r.alpha);
  j.at("lambda").get_to(r.lambda);
  j.at("temperature").get_to(r.temperature);
  j.at("seed").get_to(r.seed);
  j.at("epoch_budget").get_to(r.epoch_budget);
  r.accuracy = json_opt(j.at("accuracy"));
  r.ece = json_opt(j.at("ece"));
  r.auroc = json_opt(j.at("auroc"));
  return r;
}

}  // namespace

nlohmann::json aggregate(const ReportTable& table) {
  struct Cell {
    std::vector<double> accuracy, ece, auroc;
    std::vector<std::uint64_t> seeds;
  };
  std::map<CellKey, Cell> cells;
  for (const auto& r : table.rows) {
    Cell& c = cells[cell_of(r)];
    c.seeds.push_back(r.seed);
    if (r.accuracy) c.accuracy.push_back(*r.accuracy);
    if (r.ece) c.ece.push_back(*r.ece);
    if (r.auroc) c.auroc.push_back(*r.auroc);
  }
  nlohmann::json out = nlohmann::json::array();
  for (auto& [key, c] : cells) {
    std::sort(c.seeds.begin(), c.seeds.end());
    const auto& [experiment, study, id_ds, ood_ds, alpha, lambda, temperature, epochs] = key;
    nlohmann::json cell{{"experiment", experiment},     {"study", study},   {"id_dataset", id_ds},
                        {"ood_dataset", ood_ds},        {"alpha", alpha},   {"lambda", lambda},
                        {"temperature", temperature},   {"epoch_budget", epochs},
                        {"seeds", c.seeds}};
    cell["median_accuracy"] = c.accuracy.empty() ? nlohmann::json(nullptr) : nlohmann::json(median(c.accuracy));
    cell["median_ece"] = c.ece.empty() ? nlohmann::json(nullptr) : nlohmann::json(median(c.ece));
    cell["median_auroc"] = c.auroc.empty() ? nlohmann::json(nullptr) : nlohmann::json(median(c.auroc));
    out.push_back(std::move(cell));
  }
  return out;
}

std::string render_csv(const ReportTable& table) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : table.rows) {
    out << r.experiment << ',' << r.study << ',' << r.checkpoint_hash << ',' << r.id_dataset << ',' << r.ood_dataset
        << ',' << num(r.alpha) << ',' << num(r.lambda) << ',' << num(r.temperature) << ',' << r.seed << ','
        << r.epoch_budget << ',' << opt_num(r.accuracy) << ',' << opt_num(r.ece) << ',' << opt_num(r.auroc) << '\n';
  }
  return out.str();
}

nlohmann::json render_json(const ReportTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) rows.push_back(row_json(r));
  nlohmann::json paired = nlohmann::json::array();
  for (const auto& p : table.paired) {
    paired.push_back({{"teacher", p.teacher},
                      {"student", p.student},
                      {"ood_dataset", p.ood_dataset},
                      {"alpha", p.alpha},
                      {"seed", p.seed},
                      {"teacher_auroc", p.teacher_auroc},
                      {"student_auroc", p.student_auroc},
                      {"difference", p.difference}});
  }
  return nlohmann::json{{"schema_version", 1},
                        {"study", table.study},
                        {"rows", rows},
                        {"aggregates",
                         {{"cells", aggregate(table)},
                          {"paired_differences", paired},
                          {"diagnostics", table.diagnostics}}}};
}

ReportTable parse_report_json(const nlohmann::json& doc) {
  try {
    if (doc.at("schema_version").get<int>() != 1) throw FormatError("report: unsupported schema_version");
    ReportTable table;
    table.study = doc.value("study", "");
    for (const auto& r : doc.at("rows")) table.rows.push_back(row_from_json(r));
    const auto& agg = doc.at("aggregates");
    if (agg.contains("paired_differences")) {
      for (const auto& p : agg.at("paired_differences")) {
        table.paired.push_back(PairedDifference{p.at("teacher"), p.at("student"), p.at("ood_dataset"), p.at("alpha"),
                                                p.at("seed"), p.at("teacher_auroc"), p.at("student_auroc"),
                                                p.at("difference")});
      }
    }
    if (agg.contains("diagnostics")) table.diagnostics = agg.at("diagnostics");
    return table;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

ReportTable read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  try {
    return parse_report_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void emit_report(const ReportTable& table, ReportFormat format, const std::filesystem::path& path) {
  if (table.rows.empty()) throw UsageError("emit_report: empty table");
  const std::string text = format == ReportFormat::Csv ? render_csv(table) : render_json(table).dump(2) + "\n";
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::filesystem::path write_reports(const ReportTable& table, const std::filesystem::path& out_dir,
                                    const std::vector<std::string>& formats) {
  const auto dir = out_dir / "reports";
  for (const auto& f : formats) {
    if (f == "csv") {
      emit_report(table, ReportFormat::Csv, dir / "report.csv");
    } else if (f == "json") {
      emit_report(table, ReportFormat::Json, dir / "report.json");
    } else {
      throw UsageError("unknown report format '" + f + "' (expected csv or json)");
    }
  }
  return dir;
}

}  // namespace slod
