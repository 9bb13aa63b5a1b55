#include "multimatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

double PseudoLabelTally::mask_rate() const noexcept {
  return decisions ? static_cast<double>(masked) / static_cast<double>(decisions) : 0.0;
}

double PseudoLabelTally::impurity() const noexcept {
  return included() ? static_cast<double>(impure) / static_cast<double>(included()) : 0.0;
}

PseudoLabelTally accumulate(std::span<const PlwmDecision> decisions,
                            std::span<const std::size_t> true_labels) {
  require(decisions.size() == true_labels.size(), "one true label per decision");
  PseudoLabelTally t;
  t.decisions = decisions.size();
  for (std::size_t k = 0; k < decisions.size(); ++k) {
    const auto& d = decisions[k];
    if (d.weight == 0.0) {
      ++t.masked;
      continue;
    }
    if (d.pseudo_label != true_labels[k]) ++t.impure;
  }
  return t;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share ranks i+1..j+1.
    const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

RankTable friedman_ranks(const ErrorTable& errors) {
  if (errors.empty()) fail(ErrorKind::MissingCell, "empty error table");
  RankTable t;
  std::set<std::string> setups;
  for (const auto& [alg, row] : errors) {
    t.algorithms.push_back(alg);
    for (const auto& [setup, _] : row) setups.insert(setup);
  }
  t.setups.assign(setups.begin(), setups.end());
  for (const auto& alg : t.algorithms)
    for (const auto& s : t.setups)
      if (!errors.at(alg).contains(s))
        fail(ErrorKind::MissingCell, "no error for algorithm '" + alg + "' on setup '" + s + "'");

  const std::size_t n = t.algorithms.size();
  const std::size_t m = t.setups.size();
  t.ranks.assign(n, std::vector<double>(m, 0.0));
  t.friedman.assign(n, 0.0);
  t.mean_error.assign(n, 0.0);
  for (std::size_t s = 0; s < m; ++s) {
    std::vector<double> column(n);
    for (std::size_t a = 0; a < n; ++a) column[a] = errors.at(t.algorithms[a]).at(t.setups[s]);
    const auto r = average_ranks(column);
    for (std::size_t a = 0; a < n; ++a) {
      t.ranks[a][s] = r[a];
      t.friedman[a] += r[a] / static_cast<double>(m);
      t.mean_error[a] += column[a] / static_cast<double>(m);
    }
  }
  t.final_rank.assign(n, 1);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (t.friedman[b] < t.friedman[a]) ++t.final_rank[a];
  return t;
}

ErrorTable mean_errors(std::span<const ResultRow> rows) {
  std::map<std::string, std::map<std::string, std::vector<double>>> acc;
  for (const auto& r : rows) acc[r.algorithm][r.setup].push_back(r.final_test_error);
  ErrorTable out;
  for (auto& [alg, row] : acc)
    for (auto& [setup, values] : row) {
      // Sorted summation: the same multiset of errors always gives the same mean.
      std::sort(values.begin(), values.end());
      double sum = 0.0;
      for (double v : values) sum += v;
      out[alg][setup] = sum / static_cast<double>(values.size());
    }
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::string xml_escape(const std::string& s) {
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

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "setup" : out;
}

}  // namespace

void write_per_epoch_csv(std::span<const RunRecord> runs, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "run_id,seed,algorithm,setup,epoch,loss_sup,loss_unsup,mask_rate,impurity,val_error,"
         "test_error\n";
  for (const auto& run : runs)
    for (const auto& e : run.epochs)
      out << run.run_id << ',' << run.seed << ',' << run.algorithm << ',' << run.setup << ','
          << e.epoch << ',' << textio::format_double(e.loss_sup) << ','
          << textio::format_double(e.loss_unsup) << ',' << textio::format_double(e.mask_rate())
          << ',' << textio::format_double(e.impurity()) << ','
          << textio::format_double(e.val_error) << ',' << textio::format_double(e.test_error)
          << '\n';
  finish(out, path);
}

void write_results_csv(std::span<const ResultRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "algorithm,setup,seed,final_test_error\n";
  for (const auto& r : rows)
    out << r.algorithm << ',' << r.setup << ',' << r.seed << ','
        << textio::format_double(r.final_test_error) << '\n';
  finish(out, path);
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || textio::trim(line) != "algorithm,setup,seed,final_test_error")
    fail(ErrorKind::Io, path.string() + ": not a results file");
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (textio::trim(line).empty()) continue;
    const auto cells = textio::split(textio::trim(line), ',');
    if (cells.size() != 4)
      fail(ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": expected 4 cells");
    ResultRow r;
    r.algorithm = std::string(cells[0]);
    r.setup = std::string(cells[1]);
    try {
      r.seed = textio::parse_size(cells[2]);
      r.final_test_error = textio::parse_double(cells[3]);
    } catch (const Error& e) {
      fail(ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_ranks_csv(const RankTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "algorithm,friedman_rank,mean_error,final_rank\n";
  std::vector<std::size_t> order(table.algorithms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return table.friedman[a] < table.friedman[b];
  });
  for (std::size_t a : order)
    out << table.algorithms[a] << ',' << textio::format_double(table.friedman[a]) << ','
        << textio::format_double(table.mean_error[a]) << ',' << table.final_rank[a] << '\n';
  finish(out, path);
}

std::string render_line_chart(const std::string& title, const std::string& y_label,
                              std::span<const Series> series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const double width = 720, height = 420;
  const double left = 60, right = 190, top = 40, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  std::size_t max_len = 1;
  double y_max = 0.0;
  for (const auto& s : series) {
    max_len = std::max(max_len, s.values.size());
    for (double v : s.values)
      if (std::isfinite(v)) y_max = std::max(y_max, v);
  }
  y_max = y_max <= 0.0 ? 1.0 : std::min(1.0, std::ceil(y_max * 10.0) / 10.0);
  if (y_max <= 0.0) y_max = 1.0;
  const double x_span = static_cast<double>(std::max<std::size_t>(1, max_len - 1));
  auto px = [&](std::size_t i) { return left + plot_w * static_cast<double>(i) / x_span; };
  auto py = [&](double v) { return top + plot_h * (1.0 - std::clamp(v / y_max, 0.0, 1.0)); };
  auto fmt = [](double v) { return textio::format_fixed(v, 2); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">"
      << xml_escape(title) << "</text>\n";
  // Axes and grid.
  svg << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = y_max * k / 5.0;
    svg << "<line x1=\"" << left << "\" y1=\"" << fmt(py(v)) << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << fmt(py(v)) << "\"/>\n";
  }
  svg << "</g>\n";
  svg << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = y_max * k / 5.0;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << fmt(py(v) + 4)
        << "\" text-anchor=\"end\">" << textio::format_fixed(v, 2) << "</text>\n";
  }
  const std::size_t x_ticks = std::min<std::size_t>(max_len, 10);
  for (std::size_t k = 0; k < x_ticks; ++k) {
    const std::size_t i = x_ticks == 1 ? 0 : k * (max_len - 1) / (x_ticks - 1);
    svg << "<text x=\"" << fmt(px(i)) << "\" y=\"" << top + plot_h + 16
        << "\" text-anchor=\"middle\">" << i + 1 << "</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\">epoch</text>\n"
      << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + plot_h / 2 << ")\">" << xml_escape(y_label) << "</text>\n"
      << "</g>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    const auto& s = series[k];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i)
      svg << (i ? " " : "") << fmt(px(i)) << ',' << fmt(py(s.values[i]));
    svg << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(k);
    svg << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly - 4 << "\" x2=\""
        << left + plot_w + 32 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << left + plot_w + 38 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.name)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

RankTable emit_reports(std::span<const RunRecord> runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) fail(ErrorKind::InvalidInput, "no runs to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  write_per_epoch_csv(runs, out_dir / "per_epoch.csv");
  std::vector<ResultRow> rows;
  for (const auto& r : runs)
    if (!r.failed) rows.push_back({r.algorithm, r.setup, r.seed, r.final_test_error});
  write_results_csv(rows, out_dir / "results.csv");

  RankTable table;
  if (!rows.empty()) {
    table = friedman_ranks(mean_errors(rows));
  }
  write_ranks_csv(table, out_dir / "ranks.csv");

  // Seed-averaged curves per (setup, algorithm).
  std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>> curves;
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> counts;
  for (const auto& r : runs) {
    if (r.failed) continue;
    auto& c = curves[r.setup][r.algorithm];
    auto& n = counts[r.setup][r.algorithm];
    if (c.size() < r.epochs.size()) {
      c.resize(r.epochs.size());
      n.resize(r.epochs.size());
    }
    for (std::size_t e = 0; e < r.epochs.size(); ++e) {
      c[e].first += r.epochs[e].mask_rate();
      c[e].second += r.epochs[e].impurity();
      ++n[e];
    }
  }
  for (const auto& [setup, by_alg] : curves) {
    std::vector<Series> mask, impurity;
    for (const auto& [alg, points] : by_alg) {
      Series m{alg, {}}, i{alg, {}};
      const auto& n = counts[setup][alg];
      for (std::size_t e = 0; e < points.size(); ++e) {
        m.values.push_back(points[e].first / static_cast<double>(n[e]));
        i.values.push_back(points[e].second / static_cast<double>(n[e]));
      }
      mask.push_back(std::move(m));
      impurity.push_back(std::move(i));
    }
    const auto base = file_safe(setup);
    for (auto [name, data, label] :
         {std::tuple{"mask_rate", &mask, "mask rate"}, std::tuple{"impurity", &impurity, "impurity"}}) {
      const auto path = out_dir / (std::string(name) + "_" + base + ".svg");
      auto out = open_out(path);
      out << render_line_chart(std::string(label) + " (" + setup + ")", label, *data);
      finish(out, path);
    }
  }
  return table;
}

}  // namespace multimatch
