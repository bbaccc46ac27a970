#include "mito/eval.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mito {

MatchResult match_detections(const std::vector<Detection>& detections,
                             const std::vector<Annotation>& mitoses, double radius) {
  struct Cand {
    double dist;
    std::size_t det;
    std::size_t ann;
  };
  std::vector<Cand> cands;
  for (std::size_t d = 0; d < detections.size(); ++d)
    for (std::size_t a = 0; a < mitoses.size(); ++a) {
      const double dist = std::hypot(detections[d].x - mitoses[a].x,
                                     detections[d].y - mitoses[a].y);
      if (dist <= radius) cands.push_back({dist, d, a});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.det != b.det) return a.det < b.det;
    return a.ann < b.ann;
  });

  MatchResult res;
  std::vector<bool> det_used(detections.size(), false), ann_used(mitoses.size(), false);
  for (const auto& c : cands) {
    if (det_used[c.det] || ann_used[c.ann]) continue;
    det_used[c.det] = true;
    ann_used[c.ann] = true;
    res.pairs.push_back({c.det, c.ann, c.dist});
  }
  res.tp = static_cast<long>(res.pairs.size());
  res.fp = static_cast<long>(detections.size()) - res.tp;
  res.fn = static_cast<long>(mitoses.size()) - res.tp;
  return res;
}

Prf1 prf1(long tp, long fp, long fn) {
  Prf1 m;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

std::vector<DomainRow> per_domain_report(const std::vector<GroupedMatch>& per_image) {
  std::map<std::string, DomainRow> groups;
  DomainRow overall;
  overall.group = "overall";
  for (const auto& gm : per_image) {
    DomainRow& row = groups[gm.tumor_type];
    row.group = gm.tumor_type.empty() ? "(unknown)" : gm.tumor_type;
    row.tp += gm.result.tp;
    row.fp += gm.result.fp;
    row.fn += gm.result.fn;
    ++row.n_images;
    overall.tp += gm.result.tp;
    overall.fp += gm.result.fp;
    overall.fn += gm.result.fn;
    ++overall.n_images;
  }
  std::vector<DomainRow> rows;
  for (auto& [_, row] : groups) {
    row.metrics = prf1(row.tp, row.fp, row.fn);
    rows.push_back(row);
  }
  overall.metrics = prf1(overall.tp, overall.fp, overall.fn);
  rows.push_back(overall);
  return rows;
}

std::string format_report_table(const std::vector<DomainRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %8s %8s %8s %10s %10s %10s %8s\n", "group", "tp", "fp",
                "fn", "precision", "recall", "f1", "images");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-16s %8ld %8ld %8ld %10.4f %10.4f %10.4f %8d\n",
                  r.group.c_str(), r.tp, r.fp, r.fn, r.metrics.precision, r.metrics.recall,
                  r.metrics.f1, r.n_images);
    out << line;
  }
  return out.str();
}

void write_detections(const std::string& image_id, const std::vector<Detection>& detections,
                      const std::string& path) {
  nlohmann::json j;
  j["image_id"] = image_id;
  j["detections"] = nlohmann::json::array();
  for (const auto& d : detections)
    j["detections"].push_back({{"x", d.x}, {"y", d.y}, {"score", d.score}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write detections file: " + path);
  out << j.dump(2) << "\n";
}

std::pair<std::string, std::vector<Detection>> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read detections file: " + path);
  nlohmann::json j;
  in >> j;
  std::vector<Detection> dets;
  for (const auto& jd : j.at("detections")) {
    Detection d;
    d.x = jd.at("x").get<double>();
    d.y = jd.at("y").get<double>();
    d.score = jd.at("score").get<double>();
    dets.push_back(d);
  }
  return {j.at("image_id").get<std::string>(), dets};
}

void render_overlay(const Image& image, const std::vector<Detection>& detections,
                    const std::vector<Annotation>& annotations, const std::vector<Cam>& cams,
                    double cam_blend, const std::string& out_path) {
  cv::Mat canvas(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    const std::uint8_t* src = image.px(0, y);
    auto* dst = canvas.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x)
      dst[x] = cv::Vec3b(src[3 * x + 2], src[3 * x + 1], src[3 * x]);  // RGB -> BGR
  }

  if (cam_blend > 0.0) {
    for (const Cam& cam : cams) {
      for (int i = 0; i < cam.h; ++i)
        for (int j = 0; j < cam.w; ++j) {
          const double v = cam.at(i, j);
          if (v <= 0.0) continue;
          const int x0 = cam.window.x + j * cam.window.size / cam.w;
          const int y0 = cam.window.y + i * cam.window.size / cam.h;
          const int x1 = cam.window.x + (j + 1) * cam.window.size / cam.w;
          const int y1 = cam.window.y + (i + 1) * cam.window.size / cam.h;
          for (int y = std::max(0, y0); y < std::min(image.height, y1); ++y) {
            auto* row = canvas.ptr<cv::Vec3b>(y);
            for (int x = std::max(0, x0); x < std::min(image.width, x1); ++x) {
              const double w = cam_blend * v;
              row[x][2] = static_cast<std::uint8_t>(
                  std::min(255.0, row[x][2] * (1.0 - w) + 255.0 * w));
            }
          }
        }
    }
  }

  for (const auto& a : annotations) {
    if (a.category != AnnotationCategory::mitosis) continue;
    cv::drawMarker(canvas, cv::Point(a.x, a.y), cv::Scalar(0, 255, 0), cv::MARKER_CROSS, 24, 2);
  }
  for (const auto& d : detections) {
    cv::circle(canvas, cv::Point(static_cast<int>(std::lround(d.x)),
                                 static_cast<int>(std::lround(d.y))),
               14, cv::Scalar(0, 0, 255), 2);
  }

  Image out(canvas.cols, canvas.rows);
  for (int y = 0; y < canvas.rows; ++y) {
    const auto* src = canvas.ptr<cv::Vec3b>(y);
    std::uint8_t* dst = out.px(0, y);
    for (int x = 0; x < canvas.cols; ++x) {
      dst[3 * x] = src[x][2];
      dst[3 * x + 1] = src[x][1];
      dst[3 * x + 2] = src[x][0];
    }
  }
  write_image(out, out_path);
}

}  // namespace mito
