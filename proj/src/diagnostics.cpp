#include "adwm/diagnostics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "adwm/cacw.hpp"
#include "adwm/linalg.hpp"
#include "adwm/runtime.hpp"

namespace adwm {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string num(double v) { return fmt("%.10g", v); }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

Eigen::VectorXd scree_curve(const Eigen::MatrixXd& covariance) {
  if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
    throw DimensionError("scree_curve expects a non-empty square matrix");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("scree_curve: eigensolver failed");
  // Ascending from the solver; PSD rounding noise below zero is clipped.
  Eigen::VectorXd values = solver.eigenvalues().reverse().cwiseMax(0.0);
  const double total = values.sum();
  if (!(total > 0.0)) throw DegenerateSampleError("scree_curve: covariance has zero trace");
  return values / total;
}

Eigen::VectorXd average_scree(const std::vector<Eigen::VectorXd>& curves) {
  if (curves.empty()) throw DimensionError("average_scree: no curves");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(curves.front().size());
  for (const Eigen::VectorXd& c : curves) {
    if (c.size() != acc.size()) throw DimensionError("average_scree: curves differ in length");
    acc += c;
  }
  return acc / static_cast<double>(curves.size());
}

double spectrum_entropy(const Eigen::VectorXd& scree) {
  if (scree.size() == 0) throw DimensionError("spectrum_entropy: empty spectrum");
  if ((scree.array() < 0.0).any() || std::abs(scree.sum() - 1.0) > 1e-9) {
    throw NumericError("spectrum_entropy expects nonnegative entries summing to 1");
  }
  double h = 0.0;
  for (double p : scree) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Eigen::MatrixXd feature_covariance(const Tensor& feature) {
  if (feature.rank() != 3) throw DimensionError("feature_covariance expects [C,H,W], got " + to_string(feature.shape()));
  const Index c = feature.dim(0), hw = feature.dim(1) * feature.dim(2);
  Eigen::Map<const Eigen::MatrixXd> samples(feature.data().data(), hw, c);  // column per channel
  return linalg::covariance(samples);
}

std::vector<WeightTraceRow> trace_weights(const PansharpenModel& model, const std::vector<SamplePair>& probes,
                                          Index epoch) {
  if (probes.empty()) throw DimensionError("trace_weights: no probe samples");
  std::vector<SequentialSegment::Trace> traces(probes.size());
  parallel_for(probes.size(), [&](std::size_t i) {
    NoGradGuard guard;
    model.forward(probes[i].pan, probes[i].lrms, &traces[i]);
  });
  std::vector<WeightTraceRow> rows;
  const double inv = 1.0 / static_cast<double>(probes.size());
  const auto& first = traces.front().adwm;
  for (std::size_t layer = 0; layer < first.alphas.size(); ++layer) {
    Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(first.alphas[layer].numel());
    for (const auto& t : traces) mean += t.adwm.alphas[layer].data() * inv;
    for (Index k = 0; k < mean.size(); ++k) {
      rows.push_back({epoch, "alpha", static_cast<Index>(layer), k, mean(k)});
    }
  }
  if (first.layer_weights.node()) {
    Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(first.layer_weights.numel());
    for (const auto& t : traces) mean += t.adwm.layer_weights.data() * inv;
    for (Index n = 0; n < mean.size(); ++n) rows.push_back({epoch, "beta", n, 0, mean(n)});
  }
  return rows;
}

void write_weight_trace(const std::filesystem::path& path, const std::vector<WeightTraceRow>& rows) {
  std::ofstream out = open_out(path);
  out << "epoch,kind,layer,index,weight\n";
  for (const WeightTraceRow& r : rows) {
    out << r.epoch << ',' << r.kind << ',' << r.layer << ',' << r.index << ',' << num(r.weight) << '\n';
  }
}

std::vector<AlphaSpread> alpha_spread(const std::vector<WeightTraceRow>& rows) {
  std::map<std::pair<Index, Index>, AlphaSpread> spread;
  for (const WeightTraceRow& r : rows) {
    if (r.kind != "alpha") continue;
    auto [it, fresh] = spread.try_emplace({r.epoch, r.layer}, AlphaSpread{r.epoch, r.layer, r.weight, r.weight});
    if (!fresh) {
      it->second.min = std::min(it->second.min, r.weight);
      it->second.max = std::max(it->second.max, r.weight);
    }
  }
  std::vector<AlphaSpread> out;
  for (const auto& [key, s] : spread) out.push_back(s);
  return out;
}

FlopConfig flop_config(const ModelConfig& model, Index height, Index width) {
  return {height, width, model.bands, model.channels, model.blocks, model.ifw_d_fraction, model.cfw_d_fraction};
}

FlopCount count_flops(const FlopConfig& cfg) {
  auto u = [](Index v) { return static_cast<std::uint64_t>(v); };
  const std::uint64_t hw = u(cfg.height) * u(cfg.width), c = u(cfg.channels), n = u(cfg.layers), b = u(cfg.bands);
  const std::uint64_t d_ifw = u(hidden_width(cfg.ifw_d_fraction, cfg.channels));
  const std::uint64_t d_cfw = u(hidden_width(cfg.cfw_d_fraction, cfg.layers));
  FlopCount f;
  f.ifw_covariance = n * hw * c * c;
  f.ifw_correlation = n * 2 * c * c;
  f.ifw_mlp = n * c * (d_ifw * c + d_ifw);
  f.ifw_gate = n * hw * c;
  f.cfw_covariance = c * n * n;
  f.cfw_correlation = 2 * n * n;
  f.cfw_mlp = n * (d_cfw * n + d_cfw);
  f.cfw_combine = n * hw * c;
  f.backbone = 9 * hw * ((b + 1) * c + 2 * n * c * c + c * b);
  return f;
}

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  constexpr double width = 640, height = 400, left = 70, right = 20, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw DimensionError("series '" + s.name + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  if (x0 == x1) x0 -= 0.5, x1 += 0.5;
  if (y0 == y1) y0 -= 0.5, y1 += 0.5;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n"
      << "<g stroke=\"#000000\" stroke-width=\"1\">\n"
      << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n"
      << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  constexpr int ticks = 5;
  for (int t = 0; t <= ticks; ++t) {
    const double xv = x0 + (x1 - x0) * t / ticks, yv = y0 + (y1 - y0) * t / ticks;
    svg << "<line x1=\"" << fmt("%.2f", px(xv)) << "\" y1=\"" << top + ph << "\" x2=\"" << fmt("%.2f", px(xv))
        << "\" y2=\"" << top + ph + 5 << "\" stroke=\"#000000\"/>\n"
        << "<text x=\"" << fmt("%.2f", px(xv)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << fmt("%.4g", xv) << "</text>\n"
        << "<line x1=\"" << left - 5 << "\" y1=\"" << fmt("%.2f", py(yv)) << "\" x2=\"" << left << "\" y2=\""
        << fmt("%.2f", py(yv)) << "\" stroke=\"#000000\"/>\n"
        << "<text x=\"" << left - 8 << "\" y=\"" << fmt("%.2f", py(yv) + 4) << "\" text-anchor=\"end\">"
        << fmt("%.4g", yv) << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
      << xml_escape(x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n</g>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      svg << (first ? "" : " ") << fmt("%.2f", px(s.x[i])) << ',' << fmt("%.2f", py(s.y[i]));
      first = false;
    }
    svg << "\"/>\n"
        << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 14 + 14 * static_cast<double>(k)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">"
        << xml_escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string svg_heatmap(const Eigen::MatrixXd& values, const std::string& title) {
  const Index rows = values.rows(), cols = values.cols();
  const double cell = rows == 0 || cols == 0 ? 10.0 : std::max(4.0, 320.0 / static_cast<double>(std::max(rows, cols)));
  const double left = 20, top = 40, bar = 16;
  const double width = left + cell * static_cast<double>(cols) + 100, height = top + cell * static_cast<double>(rows) + 30;
  double lo = 0.0, hi = 0.0;
  if (values.size() > 0) lo = values.minCoeff(), hi = values.maxCoeff();
  // Light (#f7fbff) at the minimum to dark (#08306b) at the maximum.
  auto color = [&](double v) {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    const int r = static_cast<int>(std::lround(247 + (8 - 247) * t));
    const int g = static_cast<int>(std::lround(251 + (48 - 251) * t));
    const int b = static_cast<int>(std::lround(255 + (107 - 255) * t));
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt("%.2f", width) << "\" height=\""
      << fmt("%.2f", height) << "\" viewBox=\"0 0 " << fmt("%.2f", width) << ' ' << fmt("%.2f", height) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
      << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n";
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      svg << "<rect x=\"" << fmt("%.2f", left + cell * static_cast<double>(j)) << "\" y=\""
          << fmt("%.2f", top + cell * static_cast<double>(i)) << "\" width=\"" << fmt("%.2f", cell) << "\" height=\""
          << fmt("%.2f", cell) << "\" fill=\"" << color(values(i, j)) << "\"/>\n";
    }
  }
  const double bx = left + cell * static_cast<double>(cols) + 20;
  svg << "<rect x=\"" << fmt("%.2f", bx) << "\" y=\"" << top << "\" width=\"" << bar << "\" height=\"" << bar
      << "\" fill=\"" << color(hi) << "\"/>\n"
      << "<text x=\"" << fmt("%.2f", bx + bar + 4) << "\" y=\"" << top + 12
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt("%.4g", hi) << "</text>\n"
      << "<rect x=\"" << fmt("%.2f", bx) << "\" y=\"" << top + bar + 4 << "\" width=\"" << bar << "\" height=\"" << bar
      << "\" fill=\"" << color(lo) << "\" stroke=\"#999999\"/>\n"
      << "<text x=\"" << fmt("%.2f", bx + bar + 4) << "\" y=\"" << top + bar + 16
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt("%.4g", lo) << "</text>\n"
      << "</svg>\n";
  return svg.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

DiagnoseSummary diagnose(const PansharpenModel& model, const std::vector<SamplePair>& samples,
                         const std::filesystem::path& out_dir) {
  if (samples.empty()) throw DimensionError("diagnose: no samples");
  std::filesystem::create_directories(out_dir);
  std::vector<std::vector<Eigen::MatrixXd>> per_sample(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    NoGradGuard guard;
    SequentialSegment::Trace trace;
    model.forward(samples[i].pan, samples[i].lrms, &trace);
    for (const Tensor& f : trace.features) per_sample[i].push_back(feature_covariance(f));
  });
  const std::size_t layers = per_sample.front().size();
  std::vector<Eigen::MatrixXd> cov(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    cov[l] = Eigen::MatrixXd::Zero(per_sample.front()[l].rows(), per_sample.front()[l].cols());
    for (const auto& s : per_sample) cov[l] += s[l];
    cov[l] /= static_cast<double>(samples.size());
  }

  DiagnoseSummary summary;
  summary.layers = static_cast<Index>(layers);
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    summary.files.push_back(out_dir / name);
  };

  std::vector<Eigen::VectorXd> screes;
  std::vector<Series> scree_series;
  std::ostringstream cov_csv;
  cov_csv << "layer,row,col,covariance\n";
  for (std::size_t l = 0; l < layers; ++l) {
    emit("covariance_layer" + std::to_string(l + 1) + ".svg",
         svg_heatmap(cov[l], "Channel covariance, layer " + std::to_string(l + 1)));
    for (Index i = 0; i < cov[l].rows(); ++i)
      for (Index j = 0; j < cov[l].cols(); ++j) cov_csv << l + 1 << ',' << i << ',' << j << ',' << num(cov[l](i, j)) << '\n';
    screes.push_back(scree_curve(cov[l]));
  }
  emit("covariance.csv", cov_csv.str());

  const Eigen::VectorXd mean_scree = average_scree(screes);
  std::ostringstream scree_csv, entropy_csv;
  scree_csv << "layer";
  for (Index k = 0; k < mean_scree.size(); ++k) scree_csv << ",lambda" << k + 1;
  scree_csv << '\n';
  entropy_csv << "layer,entropy,max_entropy\n";
  auto scree_row = [&](const std::string& label, const Eigen::VectorXd& s) {
    scree_csv << label;
    for (double v : s) scree_csv << ',' << num(v);
    scree_csv << '\n';
    entropy_csv << label << ',' << num(spectrum_entropy(s)) << ',' << num(std::log(static_cast<double>(s.size())))
                << '\n';
    Series series{label == "mean" ? "mean" : "layer " + label, {}, {}};
    for (Index k = 0; k < s.size(); ++k) {
      series.x.push_back(static_cast<double>(k + 1));
      series.y.push_back(s(k));
    }
    scree_series.push_back(std::move(series));
  };
  for (std::size_t l = 0; l < layers; ++l) scree_row(std::to_string(l + 1), screes[l]);
  scree_row("mean", mean_scree);
  emit("scree.csv", scree_csv.str());
  emit("entropy.csv", entropy_csv.str());
  emit("scree.svg", svg_line_plot(scree_series, "Eigen-spectrum scree", "component", "normalized eigenvalue"));

  const auto rows = trace_weights(model, samples, 0);
  write_weight_trace(out_dir / "weight_trace.csv", rows);
  summary.files.push_back(out_dir / "weight_trace.csv");
  std::ostringstream spread_csv;
  spread_csv << "layer,alpha_min,alpha_max,alpha_spread\n";
  for (const AlphaSpread& s : alpha_spread(rows)) {
    spread_csv << s.layer + 1 << ',' << num(s.min) << ',' << num(s.max) << ',' << num(s.max - s.min) << '\n';
  }
  emit("alpha_spread.csv", spread_csv.str());
  return summary;
}

}  // namespace adwm
