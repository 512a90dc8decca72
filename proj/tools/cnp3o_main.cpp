#include <CLI11.hpp>
#include <json.hpp>

#include "cnp3o/checkpoint.hpp"
#include "cnp3o/config.hpp"
#include "cnp3o/envs.hpp"
#include "cnp3o/gradcheck.hpp"
#include "cnp3o/trainer.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cnp3o;

namespace {

constexpr const char* kVersion = "constrained-primitive-policy 1.0.0";

/// CNP3O_LOG=quiet|info|debug (default info) controls stderr progress.
int verbosity() {
  const char* v = std::getenv("CNP3O_LOG");
  if (v == nullptr) return 1;
  const std::string s(v);
  if (s == "quiet") return 0;
  if (s == "debug") return 2;
  return 1;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
}

// ---------------------------------------------------------------- train

int cmd_train(const std::string& config_path, bool seed_set,
              std::uint64_t seed, bool out_set, const std::string& out_dir) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_set) cfg.trainer.seed = seed;
  if (out_set) cfg.out_dir = out_dir;

  const int log = verbosity();
  const auto env = make_env(cfg);
  Trainer trainer(*env, cfg.head, cfg.prior_mode(), cfg.trainer);

  fs::create_directories(cfg.out_dir);
  const nlohmann::json resolved = resolved_config_json(cfg);
  write_text_file(fs::path(cfg.out_dir) / "config.json", resolved.dump(2) + "\n");
  write_text_file(fs::path(cfg.out_dir) / "version.txt",
                  std::string(kVersion) + "\n");

  std::ofstream csv(fs::path(cfg.out_dir) / "learning_curve.csv");
  if (!csv)
    throw std::runtime_error("cannot write learning_curve.csv under " +
                             cfg.out_dir);
  CsvLogger logger(csv, trainer.constraint_defs());

  for (int epoch = 0; epoch < cfg.trainer.n_epochs; ++epoch) {
    const auto records = trainer.collect_epoch(epoch);
    const EpochStats stats = trainer.fit_epoch(epoch, records);
    logger.write_row(stats);
    const bool last = epoch + 1 == cfg.trainer.n_epochs;
    if (log >= 2 || (log >= 1 && (epoch % 10 == 0 || last)))
      std::cerr << "epoch " << epoch + 1 << "/" << cfg.trainer.n_epochs
                << "  J=" << stats.mean_j << "  success=" << stats.success_rate
                << "  viol_max="
                << (stats.mean_violations.size() > 0
                        ? stats.mean_violations.maxCoeff()
                        : 0.0)
                << "\n";
    if (cfg.trainer.checkpoint_every > 0 &&
        (epoch + 1) % cfg.trainer.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_epoch" << std::setw(4) << std::setfill('0')
           << epoch + 1 << ".json";
      save_checkpoint((fs::path(cfg.out_dir) / name.str()).string(), trainer,
                      resolved, epoch);
    }
  }
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint_final.json").string(),
                  trainer, resolved, cfg.trainer.n_epochs - 1);

  if (log >= 1) {
    const EvalMetrics m = trainer.evaluate();
    std::cout << "final evaluation (" << m.episodes.size() << " episodes)\n"
              << "  success rate  " << m.success_rate << "\n"
              << "  mean return   " << m.mean_return << "\n";
  }
  return 0;
}

// ----------------------------------------------------------------- eval

int cmd_eval(const std::string& ckpt_path, int episodes) {
  const CheckpointInfo info = read_checkpoint_info(ckpt_path);
  const auto env = make_env(info.config);
  Trainer trainer(*env, info.config.head, info.config.prior_mode(),
                  info.config.trainer);
  load_checkpoint_params(ckpt_path, trainer);

  const EvalMetrics m = trainer.evaluate(episodes);
  const auto& defs = trainer.constraint_defs();

  fs::path dir = fs::path(ckpt_path).parent_path();
  if (dir.empty()) dir = ".";
  {
    std::ofstream os(dir / "eval_metrics.csv");
    if (!os) throw std::runtime_error("cannot write eval_metrics.csv");
    os << std::setprecision(12);
    os << "episode,success,discounted_return,aux_metric,event";
    for (const auto& d : defs) os << ",viol_" << d.name;
    os << "\n";
    for (std::size_t k = 0; k < m.episodes.size(); ++k) {
      const auto& ep = m.episodes[k];
      os << k << "," << (ep.success ? 1 : 0) << "," << ep.discounted_return
         << "," << ep.aux_metric << "," << ep.event;
      for (Eigen::Index i = 0; i < ep.violations.size(); ++i)
        os << "," << ep.violations[i];
      os << "\n";
    }
  }
  {
    std::ofstream os(dir / "eval_trajectories.jsonl");
    if (!os) throw std::runtime_error("cannot write eval_trajectories.jsonl");
    for (const auto& ep : m.episodes) write_trajectory_jsonl(os, ep.traj);
  }

  const bool hit = info.config.env == "planar_hit";
  const char* aux_label = hit ? "puck speed" : "final distance";
  std::cout << std::setprecision(10);
  std::cout << "checkpoint      " << ckpt_path << "\n"
            << "epoch           " << info.epoch << "\n"
            << "env steps       " << info.env_steps << "\n"
            << "episodes        " << m.episodes.size() << "\n"
            << "success rate    " << m.success_rate << "\n"
            << "mean return     " << m.mean_return << "\n"
            << aux_label << " max / mean / median  " << m.aux_max << " / "
            << m.aux_mean << " / " << m.aux_median << "\n"
            << "constraint violations, mean over episodes (budget)\n";
  for (std::size_t i = 0; i < defs.size(); ++i)
    std::cout << "  " << std::left << std::setw(18) << defs[i].name
              << std::right << m.mean_violations[static_cast<Eigen::Index>(i)]
              << "  (" << defs[i].budget << ")\n";
  return 0;
}

// ------------------------------------------------------------ gradcheck

int cmd_gradcheck(const std::string& config_path, const std::string& inject) {
  const RunConfig cfg = config_path.empty()
                            ? parse_run_config(nlohmann::json::object())
                            : load_run_config(config_path);
  const GradCheckReport report = run_gradient_checks(cfg, inject);
  for (const auto& s : report.stages) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << s.max_rel_error;
    std::cout << std::left << std::setw(30) << s.name << " max rel err "
              << err.str() << (s.passed ? "  ok" : "  FAIL") << "\n";
  }
  if (!report.all_passed()) {
    std::cerr << "gradient check failed at stage " << report.first_failure()
              << "\n";
    return 1;
  }
  return 0;
}

// ----------------------------------------------------------------- plot

struct CurveTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name, const std::string& path) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw std::runtime_error("plot: " + path + ":1: missing column '" + name +
                             "'");
  }
};

CurveTable read_curve_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("plot: cannot read " + path);
  CurveTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (table.columns.empty()) {
      table.columns = fields;
      continue;
    }
    if (fields.size() != table.columns.size())
      throw std::runtime_error(
          "plot: " + path + ":" + std::to_string(line_no) + ": expected " +
          std::to_string(table.columns.size()) + " fields, got " +
          std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      std::size_t used = 0;
      double value = 0.0;
      bool ok = true;
      try {
        value = std::stod(fields[i], &used);
      } catch (...) {
        ok = false;
      }
      if (!ok || used != fields[i].size())
        throw std::runtime_error("plot: " + path + ":" +
                                 std::to_string(line_no) + ": field '" +
                                 table.columns[i] + "' is not numeric: '" +
                                 fields[i] + "'");
      row.push_back(value);
    }
    table.rows.push_back(std::move(row));
  }
  if (table.columns.empty())
    throw std::runtime_error("plot: " + path +
                             ":1: empty file, expected a CSV header");
  return table;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                         "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
                         "#bcbd22", "#17becf"};

struct Axis {
  double lo = 0.0, hi = 1.0;  // data range
  double p0 = 0.0, p1 = 1.0;  // pixel range

  double operator()(double v) const {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return p0 + t * (p1 - p0);
  }
};

std::string format_num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

std::string svg_curves(const CurveTable& table, const std::string& path) {
  const int width = 960, height = 660;
  const int ci_steps = table.column("env_steps", path);
  const int ci_j = table.column("mean_J", path);
  std::vector<int> viol_cols;
  for (std::size_t i = 0; i < table.columns.size(); ++i)
    if (table.columns[i].rfind("viol_", 0) == 0)
      viol_cols.push_back(static_cast<int>(i));

  Axis sx{0.0, 1.0, 80.0, 930.0};
  Axis jy{0.0, 1.0, 290.0, 50.0};
  Axis vy{-9.0, 0.0, 610.0, 370.0};  // log10 scale
  if (!table.rows.empty()) {
    double smin = table.rows.front()[ci_steps], smax = smin;
    double jmin = table.rows.front()[ci_j], jmax = jmin;
    double vmax = -9.0;
    for (const auto& row : table.rows) {
      smin = std::min(smin, row[ci_steps]);
      smax = std::max(smax, row[ci_steps]);
      jmin = std::min(jmin, row[ci_j]);
      jmax = std::max(jmax, row[ci_j]);
      for (int c : viol_cols)
        vmax = std::max(vmax, std::log10(std::max(row[c], 1e-9)));
    }
    const double jpad = std::max(1e-6, 0.05 * (jmax - jmin));
    sx.lo = smin;
    sx.hi = smax > smin ? smax : smin + 1.0;
    jy.lo = jmin - jpad;
    jy.hi = jmax + jpad;
    vy.hi = std::ceil(vmax + 0.2);
  }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<rect x=\"80\" y=\"50\" width=\"850\" height=\"240\" fill=\"none\" "
         "stroke=\"black\"/>\n";
  svg << "<rect x=\"80\" y=\"370\" width=\"850\" height=\"240\" fill=\"none\" "
         "stroke=\"black\"/>\n";
  svg << "<text x=\"80\" y=\"38\" font-size=\"15\">discounted return vs "
         "environment steps</text>\n";
  svg << "<text x=\"80\" y=\"358\" font-size=\"15\">mean constraint "
         "violations vs environment steps (log10)</text>\n";
  svg << "<text x=\"76\" y=\"295\" font-size=\"11\" text-anchor=\"end\">"
      << format_num(jy.lo) << "</text>\n";
  svg << "<text x=\"76\" y=\"58\" font-size=\"11\" text-anchor=\"end\">"
      << format_num(jy.hi) << "</text>\n";
  svg << "<text x=\"76\" y=\"612\" font-size=\"11\" text-anchor=\"end\">1e"
      << format_num(vy.lo) << "</text>\n";
  svg << "<text x=\"76\" y=\"378\" font-size=\"11\" text-anchor=\"end\">1e"
      << format_num(vy.hi) << "</text>\n";
  svg << "<text x=\"80\" y=\"630\" font-size=\"11\">" << format_num(sx.lo)
      << "</text>\n";
  svg << "<text x=\"930\" y=\"630\" font-size=\"11\" text-anchor=\"end\">"
      << format_num(sx.hi) << "</text>\n";

  const auto polyline = [&](const std::string& cls, int col, const Axis& ay,
                            bool log_scale, const char* color) {
    if (table.rows.empty()) return;
    svg << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const double raw = table.rows[r][col];
      const double v = log_scale ? std::log10(std::max(raw, 1e-9)) : raw;
      svg << (r ? " " : "") << format_num(sx(table.rows[r][ci_steps])) << ","
          << format_num(ay(v));
    }
    svg << "\"/>\n";
  };

  polyline("curve-mean_J", ci_j, jy, false, kPalette[0]);
  for (std::size_t k = 0; k < viol_cols.size(); ++k) {
    const char* color = kPalette[(k + 1) % 10];
    polyline("curve-" + table.columns[viol_cols[k]], viol_cols[k], vy, true,
             color);
    svg << "<text x=\"" << 90 + 160 * (k % 5) << "\" y=\""
        << 648 + 14 * (k / 5) << "\" font-size=\"11\" fill=\"" << color
        << "\">" << table.columns[viol_cols[k]] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<Eigen::MatrixXd> read_traj_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("plot: cannot read " + path);
  std::vector<Eigen::MatrixXd> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "plot: " + path + ":" + std::to_string(line_no);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": invalid JSON record");
    }
    for (const char* key : {"times", "q"})
      if (!doc.contains(key) || !doc[key].is_array())
        throw std::runtime_error(where + ": missing array '" +
                                 std::string(key) + "'");
    const std::size_t rows = doc["q"].size();
    if (rows != doc["times"].size())
      throw std::runtime_error(where + ": 'q' has " + std::to_string(rows) +
                               " rows but 'times' has " +
                               std::to_string(doc["times"].size()));
    Eigen::MatrixXd q(rows, 3);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& row = doc["q"][r];
      if (!row.is_array() || row.size() < 3)
        throw std::runtime_error(where + ": 'q' row " + std::to_string(r) +
                                 " needs 3 joint values");
      for (int j = 0; j < 3; ++j) q(static_cast<Eigen::Index>(r), j) = row[j];
    }
    out.push_back(std::move(q));
  }
  return out;
}

/// Top-down end-effector traces over the default table geometry.
std::string svg_traj(const std::vector<Eigen::MatrixXd>& records) {
  const HitWorldParams table;
  const PlanarArm arm;
  const double scale = 380.0;
  const double wx0 = -0.15, wx1 = table.table_length + 0.15;
  const double wy1 = table.table_halfwidth + 0.15;
  const int width = static_cast<int>((wx1 - wx0) * scale);
  const int height = static_cast<int>(2.0 * wy1 * scale);
  const auto px = [&](double x) { return (x - wx0) * scale; };
  const auto py = [&](double y) { return (wy1 - y) * scale; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<rect id=\"table\" x=\"" << format_num(px(0.0)) << "\" y=\""
      << format_num(py(table.table_halfwidth)) << "\" width=\""
      << format_num(table.table_length * scale) << "\" height=\""
      << format_num(2.0 * table.table_halfwidth * scale)
      << "\" fill=\"#f4f8ff\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << format_num(px(table.own_band_x)) << "\" y1=\""
      << format_num(py(table.table_halfwidth)) << "\" x2=\""
      << format_num(px(table.own_band_x)) << "\" y2=\""
      << format_num(py(-table.table_halfwidth))
      << "\" stroke=\"#888\" stroke-dasharray=\"6 4\"/>\n";
  svg << "<line x1=\"" << format_num(px(table.table_length)) << "\" y1=\""
      << format_num(py(table.goal_halfwidth)) << "\" x2=\""
      << format_num(px(table.table_length)) << "\" y2=\""
      << format_num(py(-table.goal_halfwidth))
      << "\" stroke=\"#2ca02c\" stroke-width=\"6\"/>\n";

  for (std::size_t k = 0; k < records.size(); ++k) {
    const Eigen::MatrixXd& q = records[k];
    if (q.rows() == 0) continue;
    const char* color = kPalette[k % 10];
    svg << "<polyline class=\"trace\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      const FkResult fk = forward_kinematics(arm, q.row(r).transpose());
      svg << (r ? " " : "") << format_num(px(fk.ee.x())) << ","
          << format_num(py(fk.ee.y()));
    }
    svg << "\"/>\n";
    const FkResult start = forward_kinematics(arm, q.row(0).transpose());
    svg << "<circle cx=\"" << format_num(px(start.ee.x())) << "\" cy=\""
        << format_num(py(start.ee.y())) << "\" r=\"4\" fill=\"" << color
        << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

int cmd_plot(const std::string& in_path, const std::string& out_path,
             const std::string& kind) {
  std::string svg;
  if (kind == "curves")
    svg = svg_curves(read_curve_csv(in_path), in_path);
  else
    svg = svg_traj(read_traj_jsonl(in_path));
  write_text_file(out_path, svg);
  if (verbosity() >= 2)
    std::cerr << "wrote " << out_path << " (" << svg.size() << " bytes)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained motion-primitive policy: train, evaluate, check "
               "gradients, plot"};
  app.require_subcommand(1);

  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Run the training loop");
  train->add_option("--config", train_config, "Run configuration (JSON)")
      ->required();
  auto* seed_opt =
      train->add_option("--seed", train_seed, "Override the config seed");
  auto* out_opt =
      train->add_option("--out", train_out, "Override the output directory");

  std::string eval_ckpt;
  int eval_episodes = 25;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--episodes", eval_episodes, "Evaluation episodes")
      ->check(CLI::PositiveNumber);

  std::string gc_config, gc_inject;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--config", gc_config,
                        "Run configuration (JSON); defaults when omitted");
  gradcheck->add_option("--inject-fault", gc_inject, "")->group("");

  std::string plot_in, plot_out, plot_kind = "curves";
  auto* plot = app.add_subcommand("plot", "Render a learning-curve CSV or a "
                                          "trajectory JSONL to SVG");
  plot->add_option("--in", plot_in, "Input file")->required();
  plot->add_option("--out", plot_out, "Output SVG path")->required();
  plot->add_option("--kind", plot_kind, "curves|traj")
      ->check(CLI::IsMember({"curves", "traj"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return cmd_train(train_config, seed_opt->count() > 0, train_seed,
                       out_opt->count() > 0, train_out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_episodes);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_config, gc_inject);
    if (plot->parsed()) return cmd_plot(plot_in, plot_out, plot_kind);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
