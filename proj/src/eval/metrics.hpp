#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <vector>

#include "scene/render.hpp"
#include "scene/types.hpp"

namespace ds {

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  void validate() const;
};

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), 64-bit, eigenvalues clamped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

using FeatureExtractor = std::function<Eigen::VectorXd(const Image&)>;

// 2x4 average-pooled RGB (24 values) followed by a 4-bin histogram per channel (12 values),
// all scaled to [0, 1].
Eigen::VectorXd default_features(const Image& image);
inline constexpr std::size_t kDefaultFeatureDim = 36;

// Sample mean and unbiased covariance. Needs at least dim + 1 frames.
GaussianStats feature_stats(const std::vector<Image>& frames, const FeatureExtractor& extractor = default_features);

inline constexpr double kPaletteTolerance = 0.15;  // normalized RGB distance
inline constexpr int kUnmatchedLabel = -100;

// Nearest palette label, or kUnmatchedLabel when ||rgb - palette|| / sqrt(3) > tolerance (RGB in [0,1]).
int classify_pixel(const std::uint8_t* rgb, double tolerance = kPaletteTolerance);

struct ClassIou {
  int label = 0;
  std::size_t intersection = 0;
  std::size_t union_count = 0;
  double iou() const { return union_count ? static_cast<double>(intersection) / static_cast<double>(union_count) : 0.0; }
};

struct IouReport {
  std::vector<ClassIou> per_class;  // labels present in ground truth or prediction
  ClassIou vehicle;                 // union of object classes car..construction_vehicle
  ClassIou road;                    // union of road classes
  std::size_t frames_evaluated = 0;
};

// IoU between a predicted label map and ground truth; pixel counts accumulate into `report`.
void accumulate_iou(const std::vector<int>& predicted, const std::vector<std::int8_t>& truth, IouReport& report);

// generated[view][frame] against the renderer's label maps at annotation ticks. Frame 0 is
// the given first frame and is skipped unless include_first_frame is set.
IouReport controllability_iou(const std::array<std::vector<Image>, kViewCount>& generated, const SceneTimeline& scene,
                              bool include_first_frame = false);

// Mean absolute difference of consecutive frames, normalized to [0, 1].
double temporal_consistency(const std::vector<Image>& frames);

}  // namespace ds
