#pragma once

#include <string>
#include <vector>

#include "mito/cam.hpp"
#include "mito/dataset.hpp"

namespace mito {

struct MatchedPair {
  std::size_t detection_index = 0;
  std::size_t annotation_index = 0;
  double distance = 0.0;
};

struct MatchResult {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  std::vector<MatchedPair> pairs;
};

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Greedy one-to-one matching by ascending distance within the radius.
MatchResult match_detections(const std::vector<Detection>& detections,
                             const std::vector<Annotation>& mitoses, double radius);

Prf1 prf1(long tp, long fp, long fn);

struct DomainRow {
  std::string group;
  long tp = 0, fp = 0, fn = 0;
  Prf1 metrics;
  int n_images = 0;
};

struct GroupedMatch {
  std::string tumor_type;
  MatchResult result;
};

// Micro-averaged per-group rows plus an "overall" row pooling everything.
std::vector<DomainRow> per_domain_report(const std::vector<GroupedMatch>& per_image);

std::string format_report_table(const std::vector<DomainRow>& rows);

// Detections file: {"image_id":str,"detections":[{"x","y","score"}]}.
void write_detections(const std::string& image_id, const std::vector<Detection>& detections,
                      const std::string& path);
std::pair<std::string, std::vector<Detection>> read_detections(const std::string& path);

// Draws detections (circles), ground truth (crosses) and optional CAM heat
// blending; visualization only.
void render_overlay(const Image& image, const std::vector<Detection>& detections,
                    const std::vector<Annotation>& annotations, const std::vector<Cam>& cams,
                    double cam_blend, const std::string& out_path);

}  // namespace mito
