#include "evlign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "evlign/error.hpp"

namespace evlign {

namespace {

double distance(const Point2& a, const Point2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

void check_nmes(std::span<const double> nmes, double threshold, const char* what) {
  if (nmes.empty()) throw MetricError(std::string(what) + ": empty NME list");
  if (!(threshold > 0.0)) throw MetricError(std::string(what) + ": threshold must be positive");
  for (double v : nmes) {
    if (!std::isfinite(v) || v < 0.0) throw MetricError(std::string(what) + ": NME values must be finite and >= 0");
  }
}

}  // namespace

LandmarkSet LandmarkSet::from_points(std::vector<Point2> points) {
  LandmarkSet s;
  if (points.size() == 5) {
    s.scheme = LandmarkScheme::five_point;
  } else if (points.size() == 98) {
    s.scheme = LandmarkScheme::wflw98;
  } else {
    throw ValidationError("landmark count " + std::to_string(points.size()) + " is neither 5 nor 98");
  }
  s.points = std::move(points);
  s.validate();
  return s;
}

void LandmarkSet::validate() const {
  const std::size_t want = scheme == LandmarkScheme::five_point ? 5 : 98;
  if (points.size() != want) {
    throw ValidationError("scheme expects " + std::to_string(want) + " points, got " + std::to_string(points.size()));
  }
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw ValidationError("non-finite landmark coordinate");
  }
}

double normalization_distance(const LandmarkSet& gt, Normalization norm) {
  gt.validate();
  double d = 0.0;
  if (norm == Normalization::inter_pupil) {
    if (gt.scheme != LandmarkScheme::five_point) throw MetricError("inter_pupil needs the five-point scheme");
    d = distance(gt.points[kLeftEye], gt.points[kRightEye]);
  } else {
    if (gt.scheme != LandmarkScheme::wflw98) throw MetricError("inter_ocular needs the 98-point scheme");
    d = distance(gt.points[kWflwLeftOuterEye], gt.points[kWflwRightOuterEye]);
  }
  if (!(d > 0.0)) throw MetricError("degenerate normalisation distance");
  return d;
}

double nme(const LandmarkSet& pred, const LandmarkSet& gt, Normalization norm) {
  pred.validate();
  if (pred.scheme != gt.scheme) throw MetricError("prediction and ground truth use different schemes");
  const double d = normalization_distance(gt, norm);
  double total = 0.0;
  for (std::size_t k = 0; k < gt.points.size(); ++k) total += distance(pred.points[k], gt.points[k]);
  return 100.0 * total / (static_cast<double>(gt.points.size()) * d);
}

double failure_rate(std::span<const double> nmes, double threshold) {
  check_nmes(nmes, threshold, "failure_rate");
  const auto fails = std::count_if(nmes.begin(), nmes.end(), [&](double v) { return v > threshold; });
  return 100.0 * static_cast<double>(fails) / static_cast<double>(nmes.size());
}

double auc(std::span<const double> nmes, double threshold) {
  check_nmes(nmes, threshold, "auc");
  // Image i contributes 1 to CED(e) for every e in [nme_i, threshold].
  double area = 0.0;
  for (double v : nmes) area += std::max(0.0, threshold - v);
  return area / (static_cast<double>(nmes.size()) * threshold);
}

std::vector<std::array<double, 2>> ced_curve(std::span<const double> nmes, double threshold, std::size_t samples) {
  check_nmes(nmes, threshold, "ced_curve");
  if (samples == 0) throw MetricError("ced_curve: samples must be positive");
  std::vector<double> sorted(nmes.begin(), nmes.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::array<double, 2>> out;
  for (std::size_t i = 0; i <= samples; ++i) {
    const double e = threshold * static_cast<double>(i) / static_cast<double>(samples);
    const auto le = std::upper_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
    out.push_back({e, static_cast<double>(le) / static_cast<double>(sorted.size())});
  }
  return out;
}

std::vector<LandmarkRecord> parse_landmarks(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("landmark file: ") + e.what());
  }
  if (j.is_object()) j = nlohmann::json::array({j});
  if (!j.is_array()) throw ParseError("landmark file must hold an array of records");
  std::vector<LandmarkRecord> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& r = j[i];
    try {
      LandmarkRecord rec;
      rec.image_id = r.at("image_id").get<std::string>();
      std::vector<Point2> pts;
      for (const auto& p : r.at("points")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      rec.landmarks = LandmarkSet::from_points(std::move(pts));
      if (r.contains("bbox") && !r["bbox"].is_null()) rec.bbox = r["bbox"].get<std::array<double, 4>>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("landmark record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LandmarkRecord> read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_landmarks(ss.str());
}

std::string landmarks_to_json(std::span<const LandmarkRecord> records) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json o;
    o["image_id"] = r.image_id;
    o["points"] = r.landmarks.points;
    if (r.bbox) o["bbox"] = *r.bbox;
    j.push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

std::vector<double> MetricReport::fractions() const {
  std::vector<double> out;
  out.reserve(per_image.size());
  for (const auto& m : per_image) out.push_back(m.nme_percent / 100.0);
  return out;
}

MetricReport evaluate(std::span<const LandmarkRecord> pred, std::span<const LandmarkRecord> gt, Normalization norm,
                      double threshold) {
  std::map<std::string, const LandmarkRecord*> by_id;
  for (const auto& p : pred) {
    if (!by_id.emplace(p.image_id, &p).second) throw MetricError("duplicate prediction id '" + p.image_id + "'");
  }
  std::vector<std::string> missing_pred;
  std::map<std::string, bool> seen;
  for (const auto& g : gt) {
    if (!by_id.count(g.image_id)) missing_pred.push_back(g.image_id);
    seen[g.image_id] = true;
  }
  std::vector<std::string> missing_gt;
  for (const auto& p : pred) {
    if (!seen.count(p.image_id)) missing_gt.push_back(p.image_id);
  }
  if (!missing_pred.empty() || !missing_gt.empty()) {
    std::string msg = "image ids do not align;";
    if (!missing_pred.empty()) {
      msg += " missing predictions:";
      for (const auto& id : missing_pred) msg += " " + id;
      msg += ";";
    }
    if (!missing_gt.empty()) {
      msg += " missing ground truth:";
      for (const auto& id : missing_gt) msg += " " + id;
    }
    throw MetricError(msg);
  }
  if (gt.empty()) throw MetricError("no images to evaluate");

  MetricReport r;
  r.threshold = threshold;
  r.norm = norm;
  double sum = 0.0;
  for (const auto& g : gt) {
    const double v = nme(by_id.at(g.image_id)->landmarks, g.landmarks, norm);
    r.per_image.push_back({g.image_id, v});
    sum += v;
  }
  r.nme_percent = sum / static_cast<double>(gt.size());
  const auto fr = r.fractions();
  r.fr10_percent = failure_rate(fr, threshold);
  r.auc10 = auc(fr, threshold);
  return r;
}

MetricReport evaluate(const std::filesystem::path& pred_file, const std::filesystem::path& gt_file,
                      Normalization norm, double threshold) {
  const auto pred = read_landmarks(pred_file);
  const auto gt = read_landmarks(gt_file);
  return evaluate(pred, gt, norm, threshold);
}

std::string report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["normalization"] = to_string(r.norm);
  j["threshold"] = r.threshold;
  j["nme_percent"] = r.nme_percent;
  j["fr10_percent"] = r.fr10_percent;
  j["auc10"] = r.auc10;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& m : r.per_image) j["images"].push_back({{"image_id", m.image_id}, {"nme_percent", m.nme_percent}});
  return j.dump(2) + "\n";
}

std::string ced_to_csv(std::span<const std::array<double, 2>> curve) {
  std::string out = "nme,fraction\n";
  char buf[64];
  for (const auto& [e, f] : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", e, f);
    out += buf;
  }
  return out;
}

std::string to_string(Normalization n) { return n == Normalization::inter_ocular ? "inter_ocular" : "inter_pupil"; }

Normalization normalization_from_string(const std::string& s) {
  if (s == "inter_ocular") return Normalization::inter_ocular;
  if (s == "inter_pupil") return Normalization::inter_pupil;
  throw ParameterError("unknown normalization '" + s + "' (inter_ocular | inter_pupil)");
}

}  // namespace evlign
