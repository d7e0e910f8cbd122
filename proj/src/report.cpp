#include "cotprobe/report.hpp"

#include "cotprobe/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace cotprobe {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 170, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double x, int prec = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += c;
    } else if (c == '>') {
      out += "ge";
    } else if (c == '<') {
      out += "le";
    } else if (c != '=') {
      out += '_';
    }
  }
  return out;
}

struct Series {
  std::string name;
  std::vector<std::optional<double>> values;  // aligned with the t axis
};

class SvgChart {
 public:
  SvgChart(std::string title, std::string y_label, std::vector<int> ts, double y_max)
      : title_(std::move(title)), y_label_(std::move(y_label)), ts_(std::move(ts)), y_max_(y_max) {}

  double x(std::size_t i) const {
    const double span = kWidth - kLeft - kRight;
    return ts_.size() <= 1 ? kLeft + span / 2 : kLeft + span * double(i) / double(ts_.size() - 1);
  }
  double y(double v) const { return kTop + (kHeight - kTop - kBottom) * (1.0 - v / y_max_); }

  std::string frame() const {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title_)
      << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = y_max_ * k / 4.0;
      s << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
        << "\" stroke=\"#ddd\"/>\n";
      s << "<text x=\"" << kLeft - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">"
        << fmt(v, y_max_ >= 10 ? 0 : 2) << "</text>\n";
    }
    for (std::size_t i = 0; i < ts_.size(); ++i) {
      s << "<text x=\"" << x(i) << "\" y=\"" << kHeight - kBottom + 18 << "\" text-anchor=\"middle\">" << ts_[i]
        << "</text>\n";
    }
    s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 10
      << "\" text-anchor=\"middle\">prefix length t (reasoning tokens)</text>\n";
    s << "<text transform=\"translate(16," << (kTop + kHeight - kBottom) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label_) << "</text>\n";
    s << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft << "\" y1=\"" << kTop << "\" y2=\"" << kHeight - kBottom
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << kHeight - kBottom << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    return s.str();
  }

  std::string lines(const std::vector<Series>& series) const {
    std::ostringstream s;
    s << frame();
    for (std::size_t k = 0; k < series.size(); ++k) {
      const char* color = kPalette[k % std::size(kPalette)];
      std::string path;
      for (std::size_t i = 0; i < ts_.size(); ++i) {
        const auto& v = series[k].values[i];
        if (!v) continue;  // gaps for skipped or undefined rows
        path += (path.empty() ? "M" : " L") + fmt(x(i), 1) + ',' + fmt(y(*v), 1);
        s << "<circle cx=\"" << fmt(x(i), 1) << "\" cy=\"" << fmt(y(*v), 1) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
      }
      if (!path.empty()) s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      legend(s, k, series[k].name, color);
    }
    s << "</svg>\n";
    return s.str();
  }

  std::string bars(const std::vector<double>& counts) const {
    std::ostringstream s;
    s << frame();
    const double slot = ts_.size() > 1 ? (x(1) - x(0)) : (kWidth - kLeft - kRight) / 2;
    const double w = std::min(40.0, slot * 0.6);
    for (std::size_t i = 0; i < ts_.size(); ++i) {
      s << "<rect x=\"" << fmt(x(i) - w / 2, 1) << "\" y=\"" << fmt(y(counts[i]), 1) << "\" width=\"" << fmt(w, 1)
        << "\" height=\"" << fmt(y(0) - y(counts[i]), 1) << "\" fill=\"" << kPalette[0] << "\"/>\n";
      s << "<text x=\"" << fmt(x(i), 1) << "\" y=\"" << fmt(y(counts[i]) - 4, 1) << "\" text-anchor=\"middle\">"
        << counts[i] << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
  }

 private:
  void legend(std::ostringstream& s, std::size_t k, const std::string& name, const char* color) const {
    const double lx = kWidth - kRight + 12, ly = kTop + 10 + 18 * double(k);
    s << "<line x1=\"" << lx << "\" x2=\"" << lx + 18 << "\" y1=\"" << ly << "\" y2=\"" << ly << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << lx + 24 << "\" y=\"" << ly + 4 << "\">" << escape(name) << "</text>\n";
  }

  std::string title_, y_label_;
  std::vector<int> ts_;
  double y_max_;
};

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

}  // namespace

std::string summary_table(const SweepResult& sweep) {
  std::ostringstream s;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-24s %-15s %7s %7s %7s %9s %9s %8s\n", "t", "cohort", "feature_set",
                "n_surv", "n_train", "n_test", "prior", "accuracy", "roc_auc");
  s << line;
  for (const auto& r : sweep.rows) {
    const std::string auc = r.ok() && r.report->roc_auc ? fmt(*r.report->roc_auc) : "-";
    std::snprintf(line, sizeof line, "%-6d %-24s %-15s %7zu %7zu %7zu %9s %9s %8s", r.t, r.cohort.label().c_str(),
                  std::string(to_string(r.feature_set)).c_str(), r.n_survivors, r.n_train, r.n_test,
                  r.ok() ? fmt(r.train_prior).c_str() : "-", r.ok() ? fmt(r.report->accuracy).c_str() : "-",
                  auc.c_str());
    s << line;
    if (!r.ok()) s << "  (" << r.skip_reason << ")";
    s << '\n';
  }
  s << "\nlambda=" << sweep.config.lambda << " k_max=" << sweep.config.k_max
    << " train_fraction=" << sweep.config.split.train_fraction << " seed=" << sweep.config.split.seed
    << " pca_fit=" << to_string(sweep.config.pca_fit) << '\n';
  return s.str();
}

std::vector<std::filesystem::path> render_report(const SweepResult& sweep, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  std::set<int> t_set;
  std::vector<std::string> cohorts, features;
  for (const auto& r : sweep.rows) {
    t_set.insert(r.t);
    const auto c = r.cohort.label();
    const std::string f(to_string(r.feature_set));
    if (std::find(cohorts.begin(), cohorts.end(), c) == cohorts.end()) cohorts.push_back(c);
    if (std::find(features.begin(), features.end(), f) == features.end()) features.push_back(f);
  }
  const std::vector<int> ts(t_set.begin(), t_set.end());
  auto t_pos = [&](int t) { return std::size_t(std::find(ts.begin(), ts.end(), t) - ts.begin()); };

  std::vector<std::filesystem::path> written;
  for (const auto& cohort : cohorts) {
    std::vector<Series> auc, acc;
    for (const auto& f : features) {
      auc.push_back({f, std::vector<std::optional<double>>(ts.size())});
      acc.push_back({f, std::vector<std::optional<double>>(ts.size())});
    }
    std::vector<double> survivors(ts.size(), 0.0);
    for (const auto& r : sweep.rows) {
      if (r.cohort.label() != cohort) continue;
      const auto fi = std::size_t(std::find(features.begin(), features.end(), std::string(to_string(r.feature_set))) -
                                  features.begin());
      const auto ti = t_pos(r.t);
      survivors[ti] = double(r.n_survivors);
      if (r.ok()) {
        auc[fi].values[ti] = r.report->roc_auc;
        acc[fi].values[ti] = r.report->accuracy;
      }
    }
    const std::string s = slug(cohort);
    const auto auc_path = out_dir / ("auc_" + s + ".svg");
    write_file(auc_path, SvgChart("ROC-AUC vs prefix length (" + cohort + ")", "held-out ROC-AUC", ts, 1.0).lines(auc));
    written.push_back(auc_path);
    const auto acc_path = out_dir / ("accuracy_" + s + ".svg");
    write_file(acc_path, SvgChart("Accuracy vs prefix length (" + cohort + ")", "held-out accuracy", ts, 1.0).lines(acc));
    written.push_back(acc_path);
    const double top = std::max(1.0, *std::max_element(survivors.begin(), survivors.end()) * 1.1);
    const auto surv_path = out_dir / ("survival_" + s + ".svg");
    write_file(surv_path, SvgChart("Surviving examples per prefix (" + cohort + ")", "examples", ts, top).bars(survivors));
    written.push_back(surv_path);
  }
  const auto summary = out_dir / "summary.txt";
  write_file(summary, summary_table(sweep));
  written.push_back(summary);
  return written;
}

}  // namespace cotprobe
