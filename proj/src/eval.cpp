#include "udaforge/eval.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "binio.hpp"
#include "json_util.hpp"
#include "udaforge/confmask.hpp"
#include "udaforge/nets.hpp"

namespace udaforge {

ConfusionMatrix::ConfusionMatrix(int c) : num_classes(c) {
  check(c >= 2, "config", "confusion matrix needs at least 2 classes");
  counts.assign(static_cast<std::size_t>(c) * c, 0);
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

void confusion_accumulate(const LabelGrid& pred, const LabelGrid& gt, ConfusionMatrix& cm) {
  check(pred.h == gt.h && pred.w == gt.w, "shape",
        "prediction and ground truth grids have different sizes");
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    const int g = gt.v[i];
    if (g == kVoidLabel) continue;
    const int p = pred.v[i];
    check(g < cm.num_classes, "data",
          "ground-truth label " + std::to_string(g) + " outside the " +
              std::to_string(cm.num_classes) + "-class range");
    check(p < cm.num_classes, "data",
          "predicted label " + std::to_string(p) + " outside the " +
              std::to_string(cm.num_classes) + "-class range");
    ++cm.at(g, p);
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  MiouResult r;
  r.per_class.resize(cm.num_classes);
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < cm.num_classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::int64_t denom = row + col - cm.at(c, c);
    if (denom == 0) continue;
    const double iou = static_cast<double>(cm.at(c, c)) / static_cast<double>(denom);
    r.per_class[c] = iou;
    sum += iou;
    ++defined;
  }
  r.mean = defined > 0 ? sum / defined : 0.0;
  return r;
}

Metrics evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_dir) {
  GeneratorParams G = generator_from_checkpoint(checkpoint_path);
  std::vector<Sample> ds = load_dataset(dataset_dir, false);
  check(!ds.empty(), "data", "dataset " + dataset_dir + " is empty");
  const int C = G.num_classes;
  check(ds[0].num_classes == C, "shape",
        "checkpoint has " + std::to_string(C) + " classes, dataset has " +
            std::to_string(ds[0].num_classes));
  ConfusionMatrix cm(C);
  for (const Sample& s : ds) {
    const int h = s.image.dim(1), w = s.image.dim(2);
    std::vector<double> img(s.image.values().begin(), s.image.values().end());
    Graph g(false);
    Tensor probs =
        generator_forward(g, G, Tensor::from_values({1, 3, h, w}, std::move(img)));
    Tensor flat = Tensor::from_values({C, h, w},
                                      {probs.values().begin(), probs.values().end()});
    confusion_accumulate(pseudo_labels(flat), s.labels, cm);
  }
  MiouResult r = miou(cm);
  Metrics m;
  m.checkpoint = checkpoint_path;
  m.dataset = dataset_dir;
  m.per_class = std::move(r.per_class);
  m.miou = r.mean;
  m.pixels_evaluated = cm.total();
  return m;
}

namespace {

using nlohmann::json;

json metrics_to_json(const Metrics& m) {
  json per = json::array();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    json row;
    row["class"] = c;
    if (m.per_class[c])
      row["iou"] = *m.per_class[c];
    else
      row["iou"] = nullptr;
    per.push_back(row);
  }
  return json{{"checkpoint", m.checkpoint},
              {"dataset", m.dataset},
              {"per_class", per},
              {"miou", m.miou},
              {"pixels_evaluated", m.pixels_evaluated}};
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Series {
  const char* name;
  const char* color;
  std::vector<double> y;
};

// Fixed-size line plot; coordinates rounded to 0.01 so regeneration is
// byte-stable.
std::string render_svg(const std::string& title, const std::vector<Series>& series,
                       std::size_t steps, double y_max_floor) {
  const double W = 800, H = 400, ml = 60, mr = 150, mt = 40, mb = 40;
  const double pw = W - ml - mr, ph = H - mt - mb;
  double y_max = y_max_floor;
  for (const auto& s : series)
    for (double v : s.y) y_max = std::max(y_max, v);
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 400\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"400\" fill=\"#ffffff\"/>\n";
  out += "<text x=\"60\" y=\"24\" font-size=\"16\">" + title + "</text>\n";
  out += "<line x1=\"" + fmt2(ml) + "\" y1=\"" + fmt2(mt) + "\" x2=\"" + fmt2(ml) + "\" y2=\"" +
         fmt2(mt + ph) + "\" stroke=\"#444444\"/>\n";
  out += "<line x1=\"" + fmt2(ml) + "\" y1=\"" + fmt2(mt + ph) + "\" x2=\"" + fmt2(ml + pw) +
         "\" y2=\"" + fmt2(mt + ph) + "\" stroke=\"#444444\"/>\n";
  out += "<text x=\"" + fmt2(ml - 52) + "\" y=\"" + fmt2(mt + 10) + "\">" + fmt2(y_max) +
         "</text>\n";
  out += "<text x=\"" + fmt2(ml - 52) + "\" y=\"" + fmt2(mt + ph) + "\">0.00</text>\n";
  out += "<text x=\"" + fmt2(ml + pw - 30) + "\" y=\"" + fmt2(mt + ph + 28) + "\">" +
         std::to_string(steps == 0 ? 0 : steps - 1) + "</text>\n";
  out += "<text x=\"" + fmt2(ml) + "\" y=\"" + fmt2(mt + ph + 28) + "\">step</text>\n";
  int legend_row = 0;
  for (const auto& s : series) {
    if (!s.y.empty()) {
      std::string pts;
      for (std::size_t i = 0; i < s.y.size(); ++i) {
        const double x = s.y.size() == 1 ? ml + pw / 2
                                         : ml + pw * static_cast<double>(i) /
                                                    static_cast<double>(s.y.size() - 1);
        const double yv = std::max(0.0, s.y[i]);
        const double y = mt + ph * (1.0 - yv / y_max);
        if (!pts.empty()) pts += " ";
        pts += fmt2(x) + "," + fmt2(y);
      }
      out += "<polyline fill=\"none\" stroke=\"" + std::string(s.color) +
             "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    }
    const double ly = mt + 14 + 18 * legend_row++;
    out += "<line x1=\"" + fmt2(ml + pw + 10) + "\" y1=\"" + fmt2(ly - 4) + "\" x2=\"" +
           fmt2(ml + pw + 34) + "\" y2=\"" + fmt2(ly - 4) + "\" stroke=\"" +
           std::string(s.color) + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt2(ml + pw + 40) + "\" y=\"" + fmt2(ly) + "\">" +
           std::string(s.name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace

void write_metrics_json(const Metrics& m, const std::string& path) {
  binio::spew(path, metrics_to_json(m).dump(2) + "\n", "metrics");
}

std::string per_class_csv(const Metrics& m) {
  std::string csv = "class,iou\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    csv += std::to_string(c) + ",";
    if (m.per_class[c]) csv += fmt_g(*m.per_class[c]);
    csv += "\n";
  }
  return csv;
}

Metrics read_metrics_json(const std::string& path) {
  const std::string ctx_s = "metrics " + path;
  const char* ctx = ctx_s.c_str();
  json j = jsonu::parse(binio::slurp(path, "metrics"), ctx);
  jsonu::check_keys(j, ctx, {"checkpoint", "dataset", "per_class", "miou", "pixels_evaluated"});
  Metrics m;
  m.checkpoint = jsonu::get_str(j, ctx, "checkpoint", "");
  m.dataset = jsonu::get_str(j, ctx, "dataset", "");
  m.miou = jsonu::get_num(j, ctx, "miou", 0.0);
  m.pixels_evaluated = jsonu::get_int(j, ctx, "pixels_evaluated", 0);
  check(j.contains("per_class") && j["per_class"].is_array(), "format",
        ctx_s + ": per_class must be an array");
  for (const auto& row : j["per_class"]) {
    check(row.is_object() && row.contains("iou"), "format",
          ctx_s + ": per_class rows need an iou field");
    if (row["iou"].is_null())
      m.per_class.emplace_back(std::nullopt);
    else
      m.per_class.emplace_back(row["iou"].get<double>());
  }
  return m;
}

TrainLog read_train_log_jsonl(const std::string& path) {
  const std::string text = binio::slurp(path, "train log");
  TrainLog log;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::string ctx_s = "train log " + path + " line " + std::to_string(line_no);
    const char* ctx = ctx_s.c_str();
    json j = jsonu::parse(line, ctx);
    TrainStepRecord r;
    r.step = jsonu::get_int(j, ctx, "step", 0);
    r.lr = jsonu::get_num(j, ctx, "lr", 0.0);
    r.l_g1 = jsonu::get_num(j, ctx, "l_g1", 0.0);
    r.l_g2_s = jsonu::get_num(j, ctx, "l_g2_s", 0.0);
    r.l_g2_t = jsonu::get_num(j, ctx, "l_g2_t", 0.0);
    r.l_g3 = jsonu::get_num(j, ctx, "l_g3", 0.0);
    r.l_d = jsonu::get_num(j, ctx, "l_d", 0.0);
    r.mask_fraction = jsonu::get_num(j, ctx, "mask_fraction", 0.0);
    r.ms = jsonu::get_num(j, ctx, "ms", 0.0);
    log.steps.push_back(r);
  }
  return log;
}

void emit_report(const TrainLog& log, const Metrics& metrics, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto base = std::filesystem::path(out_dir);
  write_metrics_json(metrics, (base / "metrics.json").string());

  binio::spew((base / "per_class.csv").string(), per_class_csv(metrics), "per-class csv");

  std::vector<Series> losses = {{"l_g1", "#1f77b4", {}},   {"l_g2_s", "#ff7f0e", {}},
                                {"l_g2_t", "#2ca02c", {}}, {"l_g3", "#d62728", {}},
                                {"l_d", "#9467bd", {}}};
  Series mf{"mask_fraction", "#1f77b4", {}};
  for (const auto& r : log.steps) {
    losses[0].y.push_back(r.l_g1);
    losses[1].y.push_back(r.l_g2_s);
    losses[2].y.push_back(r.l_g2_t);
    losses[3].y.push_back(r.l_g3);
    losses[4].y.push_back(r.l_d);
    mf.y.push_back(r.mask_fraction);
  }
  binio::spew((base / "loss_curves.svg").string(),
              render_svg("training losses", losses, log.steps.size(), 1e-12), "loss plot");
  binio::spew((base / "mask_fraction.svg").string(),
              render_svg("grown mask fraction", {mf}, log.steps.size(), 1.0), "mask plot");
}

}  // namespace udaforge
