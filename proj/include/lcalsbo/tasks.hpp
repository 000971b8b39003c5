#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcalsbo/autodiff.hpp"
#include "lcalsbo/rng.hpp"
#include "lcalsbo/tensor.hpp"

namespace lcalsbo::tasks {

struct Dataset {
  Tensor inputs;            // one instance per row, values in [0, 1]
  std::vector<int> labels;  // empty when unlabeled
  std::string name;
  std::optional<int> excluded;

  std::size_t size() const { return inputs.rows(); }
  std::size_t dim() const { return inputs.cols(); }
};

/// Deterministic black box with outputs in [0, 1].
struct BlackBoxTask {
  std::function<double(std::span<const double>)> evaluate;
  std::string description;
  std::string target;

  double operator()(std::span<const double> x) const { return evaluate(x); }
};

struct ClassifierConfig {
  std::vector<std::size_t> hidden{32};
  int epochs = 60;
  int batch_size = 64;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

/// Frozen binary MLP; probability of the target class.
struct OracleClassifier {
  ad::ParameterSet params;
  std::size_t layers = 0;

  double probability(std::span<const double> x) const;
};

OracleClassifier fit_classifier(const Dataset& data, int target_class, const ClassifierConfig& config);
/// Fraction of rows where (p >= 0.5) matches (label == target).
double accuracy(const OracleClassifier& clf, const Dataset& data, int target_class);
BlackBoxTask as_black_box(OracleClassifier clf, int target_class);
/// Trains on every row of `data` (all classes) and wraps the result.
BlackBoxTask train_oracle_classifier(const Dataset& data, int target_class,
                                     const ClassifierConfig& config);

enum class Layout { Ring, Line };

std::string to_string(Layout layout);
Layout layout_from_string(const std::string& s);

/// Blobs on a side × side image. Prototype i is a Gaussian bump centred either
/// on a ring around the image centre at angle 2πi/k, or evenly along the
/// middle row; `spread` is the ring radius or the half-length of the row.
/// Instances jitter the centre and add clipped pixel noise.
struct ClusterTaskSpec {
  std::size_t side = 8;
  int clusters = 5;
  int excluded = 0;
  int per_cluster = 200;
  Layout layout = Layout::Ring;
  double spread = 2.5;
  double blob_width = 1.0;
  double position_jitter = 0.35;
  double pixel_noise = 0.05;
  ClassifierConfig classifier;
};

struct ClusterTask {
  Dataset train;      // excluded cluster removed
  Dataset full;       // every cluster, used for the oracle
  Dataset held_out;   // fresh draws of every cluster
  Tensor prototypes;  // one row per cluster
  BlackBoxTask black_box;
  double held_out_accuracy = 0.0;
};

ClusterTask make_excluded_cluster_task(const ClusterTaskSpec& spec, Rng& rng);

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// IDX image file (magic 0x00000803) plus label file (0x00000801); bytes
/// scaled to [0, 1]. Rows labelled `exclude` are dropped.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<int> exclude = std::nullopt);
/// Writes round(255·v) bytes; rows·cols must equal the dataset dimension.
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data, std::size_t rows, std::size_t cols);

/// Distinct instances (componentwise within `tolerance` of a representative)
/// divided by the total count.
double diversity(const std::vector<std::vector<double>>& instances, double tolerance);

}  // namespace lcalsbo::tasks
