#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ion/csv.hpp"
#include "ion/experiment/runner.hpp"
#include "ion/nn/unet.hpp"

namespace ion::experiment {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Rows of a CSV whose fields never need quoting (all files written by this module).
std::vector<std::vector<std::string>> parse_simple_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    rows.push_back(std::move(f));
  }
  return rows;
}

std::string rep_file(std::size_t r, const char* kind) {
  return "rep" + std::to_string(r) + "." + kind + ".csv";
}

std::string fmt_fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::optional<double> Matrix::median(const std::string& domain, const std::string& technique) const {
  auto it = cells.find({domain, technique});
  return it == cells.end() ? std::nullopt : it->second.median;
}

std::vector<std::size_t> Matrix::row_max(const std::string& domain) const {
  std::optional<double> best;
  for (const auto& t : techniques)
    if (auto v = median(domain, t); v && (!best || *v > *best)) best = v;
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < techniques.size(); ++i)
    if (auto v = median(domain, techniques[i]); v && best && *v == *best) cols.push_back(i);
  return cols;
}

std::string Matrix::csv() const {
  std::vector<std::string> header{"domain"};
  header.insert(header.end(), techniques.begin(), techniques.end());
  header.push_back("best");
  std::string out = csv_row(header);
  for (const auto& d : domains) {
    std::vector<std::string> row{d};
    for (const auto& t : techniques) {
      const auto v = median(d, t);
      row.push_back(v ? fmt_num(*v) : "");
    }
    std::string best;
    for (std::size_t c : row_max(d)) best += (best.empty() ? "" : ";") + techniques[c];
    row.push_back(best);
    out += csv_row(row);
  }
  return out;
}

std::string Matrix::markdown(const std::string& metric_name) const {
  std::string out = "Median " + metric_name + " per domain and technique; bold marks the row maximum.\n\n";
  out += "| domain |";
  for (const auto& t : techniques) out += " " + t + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < techniques.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& d : domains) {
    const auto best = row_max(d);
    out += "| " + d + " |";
    for (std::size_t i = 0; i < techniques.size(); ++i) {
      const auto v = median(d, techniques[i]);
      std::string cell = v ? fmt_fixed(*v, 3) : "n/a";
      if (std::find(best.begin(), best.end(), i) != best.end()) cell = "**" + cell + "**";
      out += " " + cell + " |";
    }
    out += "\n";
  }
  return out;
}

Matrix collect_matrix(const fs::path& run_dir, const ExperimentConfig& cfg,
                      std::vector<std::string>* missing) {
  Matrix mx;
  for (const auto& d : cfg.domains) mx.domains.push_back(d.name);
  mx.techniques = cfg.techniques;
  for (const auto& t : cfg.techniques)
    for (const auto& d : cfg.domains) {
      MatrixCell cell;
      for (std::size_t r = 0; r < cfg.replicates; ++r) {
        const fs::path p = cell_dir(run_dir, t, d.name) / rep_file(r, "metrics");
        if (!fs::exists(p)) {
          if (missing) missing->push_back(t + "/" + d.name + "/rep" + std::to_string(r));
          continue;
        }
        const auto rows = parse_simple_csv(read_text(p));
        if (rows.size() != 2 || rows[0].size() < 7 || rows[0][6] != "metric")
          throw std::runtime_error("malformed cell file " + p.string());
        cell.values.push_back(std::stod(rows[1][6]));
      }
      if (!cell.values.empty()) cell.median = median(cell.values);
      mx.cells.emplace(std::pair{d.name, t}, std::move(cell));
    }
  return mx;
}

std::vector<ParamRow> param_table(std::size_t base_channels, const std::vector<std::size_t>& ns) {
  std::vector<ParamRow> rows;
  for (std::size_t n : ns) {
    nn::UNetConfig c;
    c.n_blocks = n;
    c.base_channels = base_channels;
    rows.push_back({n, base_channels, nn::param_count(*nn::build_ion<float>(c, 1)), std::nullopt});
  }
  for (std::size_t i = 0; i + 1 < rows.size(); ++i)
    rows[i].ratio_to_next =
        static_cast<double>(rows[i].params) / static_cast<double>(rows[i + 1].params);
  return rows;
}

std::vector<TechniqueFit> improvement_points(const fs::path& run_dir, const ExperimentConfig& cfg) {
  if (cfg.task != train::Task::kSegmentation) return {};
  // Median per-image IoU over the replicates that finished.
  auto per_image = [&](const std::string& t, const std::string& d) {
    std::vector<std::vector<double>> by_image;
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      const fs::path p = cell_dir(run_dir, t, d) / rep_file(r, "per_image");
      if (!fs::exists(p)) continue;
      const auto rows = parse_simple_csv(read_text(p));
      if (by_image.empty()) by_image.resize(rows.size() - 1);
      if (rows.size() - 1 != by_image.size())
        throw std::runtime_error("per-image files disagree on image count: " + p.string());
      for (std::size_t i = 1; i < rows.size(); ++i) by_image[i - 1].push_back(std::stod(rows[i][1]));
    }
    std::vector<double> out;
    for (auto& v : by_image) out.push_back(median(v));
    return out;
  };

  std::vector<TechniqueFit> fits;
  for (const auto& t : cfg.techniques) {
    if (t == "baseline") continue;
    TechniqueFit tf;
    tf.technique = t;
    for (std::size_t k = 1; k < cfg.domains.size(); ++k) {
      const auto& d = cfg.domains[k].name;
      const auto base = per_image("baseline", d);
      const auto tech = per_image(t, d);
      if (base.empty() || tech.size() != base.size()) continue;
      for (std::size_t i = 0; i < base.size(); ++i)
        tf.points.push_back({d + "/" + std::to_string(i), base[i], tech[i] - base[i]});
    }
    if (!tf.points.empty()) {
      try {
        tf.fit = metrics::improvement_analysis(tf.points);
      } catch (const std::invalid_argument&) {
        tf.fit.reset();
      }
    }
    fits.push_back(std::move(tf));
  }
  return fits;
}

std::string improvement_csv(const std::vector<TechniqueFit>& fits) {
  std::string out = csv_row({"image_id", "baseline_iou", "delta", "technique"});
  for (const auto& f : fits)
    for (const auto& p : f.points)
      out += csv_row({p.image_id, fmt_num(p.baseline_iou), fmt_num(p.delta), f.technique});
  return out;
}

Report cmd_report(const fs::path& run_dir) {
  const ExperimentConfig cfg = load_config((run_dir / "config.json").string());
  Report rep;
  rep.matrix = collect_matrix(run_dir, cfg, &rep.missing);
  rep.fits = improvement_points(run_dir, cfg);
  rep.params_full = param_table(64, {7, 5, 3});
  rep.params_desk = param_table(cfg.ion.base_channels, {4, 3, 2});

  const bool seg = cfg.task == train::Task::kSegmentation;
  std::string md = "# Comparison report\n\n";
  md += "Task: " + train::task_name(cfg.task) + ", dataset " + cfg.dataset.generator + ", " +
        std::to_string(cfg.replicates) + " replicates, global seed " + std::to_string(cfg.seed) +
        ".\n\n";
  md += rep.matrix.markdown(seg ? "mean class IoU" : "accuracy") + "\n";

  std::string fit_csv = csv_row({"technique", "n", "slope", "intercept", "fraction_improved"});
  if (seg) {
    md += "## Per-image improvement over the baseline\n\n";
    md += "Least-squares fit of delta IoU against baseline IoU, pooled over the degraded domains.\n\n";
    md += "| technique | points | slope | intercept | fraction improved |\n|---|---|---|---|---|\n";
    for (const auto& f : rep.fits) {
      if (!f.fit) {
        md += "| " + f.technique + " | " + std::to_string(f.points.size()) + " | n/a | n/a | n/a |\n";
        continue;
      }
      md += "| " + f.technique + " | " + std::to_string(f.fit->n) + " | " +
            fmt_fixed(f.fit->slope, 4) + " | " + fmt_fixed(f.fit->intercept, 4) + " | " +
            fmt_fixed(f.fit->fraction_improved, 3) + " |\n";
      fit_csv += csv_row({f.technique, std::to_string(f.fit->n), fmt_num(f.fit->slope),
                          fmt_num(f.fit->intercept), fmt_num(f.fit->fraction_improved)});
    }
    md += "\n";
  }

  std::string params_csv = csv_row({"n_blocks", "base_channels", "params", "ratio_to_next"});
  md += "## ION parameter counts\n\n| N | C1 | parameters | ratio to next smaller N |\n|---|---|---|---|\n";
  for (const auto* table : {&rep.params_full, &rep.params_desk})
    for (const auto& p : *table) {
      md += "| " + std::to_string(p.n_blocks) + " | " + std::to_string(p.base_channels) + " | " +
            std::to_string(p.params) + " | " + (p.ratio_to_next ? fmt_fixed(*p.ratio_to_next, 2) : "") +
            " |\n";
      params_csv += csv_row({std::to_string(p.n_blocks), std::to_string(p.base_channels),
                             std::to_string(p.params),
                             p.ratio_to_next ? fmt_num(*p.ratio_to_next) : ""});
    }
  md += "\n";

  if (!rep.missing.empty()) {
    md += "## Missing runs\n\n";
    for (const auto& m : rep.missing) md += "- " + m + "\n";
    md += "\n";
  }
  rep.markdown = md;

  write_text(run_dir / "report.md", md);
  write_text(run_dir / "matrix.csv", rep.matrix.csv());
  write_text(run_dir / "params.csv", params_csv);
  if (seg) {
    write_text(run_dir / "improvement.csv", improvement_csv(rep.fits));
    write_text(run_dir / "improvement_fit.csv", fit_csv);
  }
  return rep;
}

}  // namespace ion::experiment
