#include "eval/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>

#include "common/error.hpp"

namespace ds {

void GaussianStats::validate() const {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw ShapeError("gaussian stats: covariance size");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw ValidationError("covariance not symmetric");
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) {
    throw ShapeError("frechet distance: dims " + std::to_string(a.mean.size()) + " and " +
                     std::to_string(b.mean.size()) + " differ");
  }
  a.validate();
  b.validate();
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd m = ra * b.cov * ra;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

Eigen::VectorXd default_features(const Image& image) {
  if (image.empty()) throw ValidationError("feature extractor: empty image");
  constexpr std::size_t kRows = 2, kCols = 4, kBins = 4;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kDefaultFeatureDim);
  std::array<double, kRows * kCols> counts{};
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::size_t cell = (y * kRows / image.height) * kCols + x * kCols / image.width;
      const std::uint8_t* p = image.pixel(x, y);
      counts[cell] += 1;
      for (std::size_t c = 0; c < 3; ++c) {
        f[static_cast<Eigen::Index>(cell * 3 + c)] += p[c] / 255.0;
        f[static_cast<Eigen::Index>(kRows * kCols * 3 + c * kBins + p[c] * kBins / 256)] += 1.0;
      }
    }
  }
  for (std::size_t cell = 0; cell < counts.size(); ++cell) {
    for (std::size_t c = 0; c < 3; ++c) f[static_cast<Eigen::Index>(cell * 3 + c)] /= counts[cell];
  }
  f.tail(3 * kBins) /= static_cast<double>(image.width * image.height);
  return f;
}

GaussianStats feature_stats(const std::vector<Image>& frames, const FeatureExtractor& extractor) {
  if (frames.empty()) throw ValidationError("feature stats: no frames");
  Eigen::MatrixXd x;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Eigen::VectorXd f = extractor(frames[i]);
    if (i == 0) x.resize(static_cast<Eigen::Index>(frames.size()), f.size());
    if (f.size() != x.cols()) throw ShapeError("feature extractor returned inconsistent sizes");
    x.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  if (x.rows() < x.cols() + 1) {
    throw ValidationError("feature stats: " + std::to_string(x.rows()) + " frames for " + std::to_string(x.cols()) +
                          " feature dims, need at least dims + 1");
  }
  GaussianStats s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

int classify_pixel(const std::uint8_t* rgb, double tolerance) {
  int best = kUnmatchedLabel;
  double best_d = 1e300;
  for (int label : palette_labels()) {
    const Rgb c = label_color(label);
    double d2 = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double diff = (static_cast<double>(rgb[k]) - static_cast<double>(c[k])) / 255.0;
      d2 += diff * diff;
    }
    if (d2 < best_d) {
      best_d = d2;
      best = label;
    }
  }
  return std::sqrt(best_d) / std::sqrt(3.0) <= tolerance ? best : kUnmatchedLabel;
}

namespace {

bool is_vehicle_label(int label) {
  return label >= kRoadClassCount && is_vehicle_class(label - kRoadClassCount);
}
bool is_road_label(int label) { return label >= 0 && label < kRoadClassCount; }

}  // namespace

void accumulate_iou(const std::vector<int>& predicted, const std::vector<std::int8_t>& truth, IouReport& report) {
  if (predicted.size() != truth.size()) throw ShapeError("iou: label maps differ in size");
  std::map<int, ClassIou> acc;
  for (const auto& c : report.per_class) acc[c.label] = c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p == t) {
      acc[t].label = t;
      acc[t].intersection += 1;
      acc[t].union_count += 1;
    } else {
      acc[t].label = t;
      acc[t].union_count += 1;
      if (p != kUnmatchedLabel) {
        acc[p].label = p;
        acc[p].union_count += 1;
      }
    }
    const bool pv = is_vehicle_label(p), tv = is_vehicle_label(t);
    report.vehicle.intersection += pv && tv;
    report.vehicle.union_count += pv || tv;
    const bool pr = is_road_label(p), tr = is_road_label(t);
    report.road.intersection += pr && tr && p == t;
    report.road.union_count += pr || tr;
  }
  report.per_class.clear();
  for (const auto& [label, c] : acc) report.per_class.push_back(c);
  report.frames_evaluated += 1;
}

IouReport controllability_iou(const std::array<std::vector<Image>, kViewCount>& generated, const SceneTimeline& scene,
                              bool include_first_frame) {
  IouReport report;
  report.vehicle.label = -1;
  report.road.label = -2;
  for (const auto& tick : scene.ticks) {
    std::size_t frame = scene.frame_count();
    for (std::size_t f = 0; f < scene.frame_count(); ++f) {
      if (std::abs(scene.frame_timestamps[f] - tick.t) <= kTimestampTolerance) frame = f;
    }
    if (frame == scene.frame_count()) throw AlignmentError("tick at t=" + std::to_string(tick.t) + " has no frame");
    if (frame == 0 && !include_first_frame) continue;
    for (ViewId v : kAllViews) {
      const auto& frames = generated[view_index(v)];
      if (frame >= frames.size()) {
        throw ValidationError("generated video for " + std::string(view_name(v)) + " has " +
                              std::to_string(frames.size()) + " frames, tick needs frame " + std::to_string(frame));
      }
      const Image& img = frames[frame];
      const auto truth = render_view(scene.camera(v), tick.boxes, tick.map);
      if (img.width != truth.image.width || img.height != truth.image.height) {
        throw ShapeError("generated frame size differs from the scene camera");
      }
      std::vector<int> pred(truth.labels.size());
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = classify_pixel(&img.rgb[i * 3]);
      accumulate_iou(pred, truth.labels, report);
    }
  }
  return report;
}

double temporal_consistency(const std::vector<Image>& frames) {
  if (frames.size() < 2) throw ValidationError("temporal consistency needs at least 2 frames");
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].rgb.size() != frames[i - 1].rgb.size()) throw ShapeError("frames differ in size");
    for (std::size_t k = 0; k < frames[i].rgb.size(); ++k) {
      total += std::abs(static_cast<double>(frames[i].rgb[k]) - static_cast<double>(frames[i - 1].rgb[k]));
    }
    count += frames[i].rgb.size();
  }
  return total / (255.0 * static_cast<double>(count));
}

}  // namespace ds
