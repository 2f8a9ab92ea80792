#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace evlign {

enum class LandmarkScheme { five_point, wflw98 };

/// Five-point order: nose, left mouth corner, right mouth corner, left eye, right eye.
inline constexpr std::size_t kLeftEye = 3;
inline constexpr std::size_t kRightEye = 4;
/// Outer eye corners in the 98-point WFLW layout.
inline constexpr std::size_t kWflwLeftOuterEye = 60;
inline constexpr std::size_t kWflwRightOuterEye = 72;

inline constexpr double kDefaultThreshold = 0.1;

using Point2 = std::array<double, 2>;

struct LandmarkSet {
  std::vector<Point2> points;
  LandmarkScheme scheme = LandmarkScheme::five_point;

  /// Infers the scheme from the point count (5 or 98); ValidationError otherwise.
  static LandmarkSet from_points(std::vector<Point2> points);
  void validate() const;
};

enum class Normalization { inter_ocular, inter_pupil };

/// Inter-pupil: points 3-4 of the five-point scheme. Inter-ocular: points
/// 60-72 of the 98-point scheme. MetricError on a scheme mismatch or a zero distance.
double normalization_distance(const LandmarkSet& gt, Normalization norm);

/// 100 * mean_k |pred_k - gt_k| / d_norm, with d_norm taken from gt.
double nme(const LandmarkSet& pred, const LandmarkSet& gt, Normalization norm);

/// Percentage of per-image NME fractions strictly above the threshold.
double failure_rate(std::span<const double> nmes, double threshold = kDefaultThreshold);

/// Area under the cumulative error distribution on [0, threshold], divided
/// by the threshold. Exact integral of the step function.
double auc(std::span<const double> nmes, double threshold = kDefaultThreshold);

/// Fraction of images with NME <= e at `samples + 1` evenly spaced e in [0, threshold].
std::vector<std::array<double, 2>> ced_curve(std::span<const double> nmes, double threshold = kDefaultThreshold,
                                             std::size_t samples = 100);

struct LandmarkRecord {
  std::string image_id;
  LandmarkSet landmarks;
  std::optional<std::array<double, 4>> bbox;
};

/// A JSON array of {"image_id", "points": [[x, y], ...], "bbox"?} objects.
std::vector<LandmarkRecord> parse_landmarks(const std::string& json_text);
std::vector<LandmarkRecord> read_landmarks(const std::filesystem::path& path);
std::string landmarks_to_json(std::span<const LandmarkRecord> records);

struct ImageMetric {
  std::string image_id;
  double nme_percent = 0.0;
};

struct MetricReport {
  std::vector<ImageMetric> per_image;
  double nme_percent = 0.0;   ///< mean over images
  double fr10_percent = 0.0;
  double auc10 = 0.0;
  double threshold = kDefaultThreshold;
  Normalization norm = Normalization::inter_pupil;

  /// Per-image NMEs as fractions, in report order.
  std::vector<double> fractions() const;
};

/// Pairs predictions with ground truth by image id (report follows gt order).
/// MetricError listing ids present on one side only.
MetricReport evaluate(std::span<const LandmarkRecord> pred, std::span<const LandmarkRecord> gt,
                      Normalization norm, double threshold = kDefaultThreshold);
MetricReport evaluate(const std::filesystem::path& pred_file, const std::filesystem::path& gt_file,
                      Normalization norm, double threshold = kDefaultThreshold);

std::string report_to_json(const MetricReport& r);
std::string ced_to_csv(std::span<const std::array<double, 2>> curve);

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

}  // namespace evlign
