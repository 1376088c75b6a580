#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "factrfm/symlinalg.hpp"

namespace factrfm {

/// Task-specific provenance carried alongside every generated dataset and
/// written as a JSON sidecar when the dataset is saved.
struct TaskMeta {
  std::string task;
  std::uint64_t seed = 0;
  std::string label_encoding;     // "zero-one" | "pm-one" | "one-hot" | "real"
  std::vector<int> support;       // sparse parity coordinates
  int modulus = 0;                // modular addition
  double mixture_weight = 0.0;    // separation mixture p
  double signal_scale = 0.0;      // separation tau
  Matrix teacher;                 // deep-linear ground truth (empty otherwise)
};

struct Dataset {
  Matrix X;        // n x d
  Matrix Y;        // n x c
  Vector weights;  // empty => uniform 1/n
  TaskMeta meta;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index input_dim() const { return X.cols(); }
  Eigen::Index output_dim() const { return Y.cols(); }
  void validate() const;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Mixture hyperparameters for the planted two-index task: inputs are
/// Unif[{0,1,2}^4] with probability p and the atom (1,1,0,0) otherwise,
/// labels y = tau * x1 x2 + x3 x4.
struct SeparationConfig {
  double mixture_weight = 1e-5;   // p
  double signal_scale = 0.02;     // tau
  double weight_decay = 1e-5;     // lambda, carried for the training stage

  void validate() const;
};

/// Label of a sparse parity sample: 1 iff the product over the support
/// coordinates is positive (0/1 encoding), or the sign itself (+-1 encoding).
double parity_label(const Vector& x, const std::vector<int>& support,
                    bool labels01);

TrainTest gen_sparse_parity(int n, int d, int k, std::uint64_t seed,
                            bool labels01 = true, int test_n = 1000);

TrainTest gen_modular_addition(int modulus, double train_fraction,
                               std::uint64_t seed);

/// Weighted population dataset: 81 lattice points at weight p/81 each plus
/// the atom (1,1,0,0) at weight 1-p. Weights sum to 1 exactly.
Dataset gen_separation(const SeparationConfig& config);

Dataset gen_deep_linear(int n, int d, int c, std::uint64_t seed);

/// Classification data from a fixed random two-layer ReLU teacher:
/// x ~ N(0, I_d), label = one-hot argmax of the teacher output. Stands in
/// for image data when none is on disk.
TrainTest gen_teacher_classification(int n, int d, int c, int teacher_hidden,
                                     std::uint64_t seed, int test_n = 0);

enum class Normalization { None, ZScore };

/// Numeric CSV with a header row. The label column is selected by name;
/// labels over a small integer alphabet are one-hot encoded, anything else
/// is treated as real regression targets.
Dataset load_csv_tabular(const std::string& path, const std::string& label_column,
                         Normalization normalization);

/// IDX image/label container (big-endian, magic 0x803 / 0x801). Pixels are
/// scaled to [0,1] and flattened; labels are one-hot.
Dataset load_idx_images(const std::string& images_path,
                        const std::string& labels_path, int limit);

std::string task_meta_to_json(const TaskMeta& meta);

/// Writes <name>_X.csv, <name>_Y.csv and the <name>.meta.json sidecar.
void save_dataset(const Dataset& data, const std::string& dir,
                  const std::string& name);

}  // namespace factrfm
