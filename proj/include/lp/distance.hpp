#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lp/corpus.hpp"
#include "lp/model.hpp"

namespace lp {

// Arc-length similarity in [0, 1]: 0 parallel, 1/2 orthogonal, 1 antiparallel.
// The dot product and norms are accumulated in double and the cosine is
// clamped to [-1, 1] before acos. Zero-norm inputs are a domain error rather
// than a silent zero.
double angular_distance(std::span<const float> u, std::span<const float> v);
double angular_distance(std::span<const double> u, std::span<const double> v);

struct DistanceMatrix {
  int num_layers = 0;
  int n_max = 0;
  // values[n-1][l] = mean distance between stream l and stream l+n,
  // l in [0, num_layers - n]. stderr_mean matches shape; counts per cell.
  std::vector<std::vector<double>> values;
  std::vector<std::vector<double>> stderr_mean;
  std::vector<std::vector<std::int64_t>> counts;
  std::string model_fingerprint;
  std::string corpus_fingerprint;
  std::int64_t samples_used = 0;
  std::int64_t samples_skipped = 0;

  int row_width(int n) const { return num_layers - n + 1; }
  std::string fingerprint() const;
};

struct ProfileOptions {
  int n_max = 0;               // required, in [1, L-1]
  bool all_positions = false;  // off: final-token only (the default convention)
};

struct SampleSet {
  std::vector<std::vector<std::int32_t>> sequences;
  std::vector<std::int64_t> ids;  // reduction happens in ascending id order
};

// Mean angular distance per (block size, start layer) over the samples.
// Sequences shorter than 2 tokens are skipped and counted; per-sample work
// is parallel, the reduction is ordered by sample id in double precision.
DistanceMatrix profile_samples(const Model& model, const SampleSet& samples,
                               const ProfileOptions& opt);
DistanceMatrix profile(const Model& model, const CorpusStream& corpus,
                       std::int64_t sample_count, const ProfileOptions& opt);

// argmin over start layers for block size n; ties break to the smallest l.
int optimal_block(const DistanceMatrix& matrix, int n);

struct HeatmapGrid {
  int num_layers = 0;
  int n_max = 0;
  std::vector<std::vector<double>> rows;  // per-row affine map onto [0, 1]
};

// Shifts and rescales each row to span [0, 1]; constant rows map to zero.
HeatmapGrid normalize_rows(const DistanceMatrix& matrix);

std::string distance_csv(const DistanceMatrix& matrix);
std::string distance_stderr_csv(const DistanceMatrix& matrix);
void write_distance_csv(const std::string& path, const DistanceMatrix& matrix);
DistanceMatrix read_distance_csv(const std::string& path);

}  // namespace lp
