#include "lp/distance.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lp/checkpoint.hpp"

namespace lp {

namespace {

template <class S>
double angular_distance_impl(std::span<const S> u, std::span<const S> v) {
  if (u.size() != v.size()) throw InputError("angular_distance: dimension mismatch");
  if (u.empty()) throw InputError("angular_distance: empty vectors");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = static_cast<double>(u[i]);
    const double b = static_cast<double>(v[i]);
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0)
    throw DomainError("angular_distance: zero-norm input");
  double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c) / M_PI;
}

std::vector<int> row_offsets(int num_layers, int n_max) {
  std::vector<int> off(n_max + 1, 0);
  int acc = 0;
  for (int n = 1; n <= n_max; ++n) {
    off[n - 1] = acc;
    acc += num_layers - n + 1;
  }
  off[n_max] = acc;
  return off;
}

}  // namespace

double angular_distance(std::span<const float> u, std::span<const float> v) {
  return angular_distance_impl(u, v);
}

double angular_distance(std::span<const double> u, std::span<const double> v) {
  return angular_distance_impl(u, v);
}

std::string DistanceMatrix::fingerprint() const {
  std::uint64_t h = fnv1a64(model_fingerprint.data(), model_fingerprint.size());
  h = fnv1a64(corpus_fingerprint.data(), corpus_fingerprint.size(), h);
  const std::int64_t meta[4] = {num_layers, n_max, samples_used, samples_skipped};
  h = fnv1a64(meta, sizeof(meta), h);
  for (const auto& row : values) h = fnv1a64(row.data(), row.size() * sizeof(double), h);
  return to_hex(h);
}

DistanceMatrix profile_samples(const Model& model, const SampleSet& samples,
                               const ProfileOptions& opt) {
  const int L = model.num_layers();
  if (opt.n_max < 1 || opt.n_max >= L)
    throw InputError("profile: n_max must satisfy 1 <= n_max < num_layers");
  if (samples.sequences.empty()) throw InputError("profile: no samples");
  if (samples.ids.size() != samples.sequences.size())
    throw InputError("profile: ids/sequences size mismatch");

  const auto offsets = row_offsets(L, opt.n_max);
  const int cells = offsets[opt.n_max];
  const std::int64_t count = static_cast<std::int64_t>(samples.sequences.size());

  // Per-sample distances computed in parallel, then reduced in id order.
  std::vector<std::vector<double>> per_sample(count);
  std::vector<char> skipped(count, 0);
  parallel_for(count, [&](std::int64_t i) {
    const auto& seq = samples.sequences[i];
    if (seq.size() < 2) {
      skipped[i] = 1;
      return;
    }
    std::vector<double> vals(cells, 0.0);
    if (opt.all_positions) {
      ForwardCacheT<float> cache;
      RunOptionsT<float> ro;
      ro.cache = &cache;
      (void)model.run(std::span<const std::int32_t>(seq), ro);
      const int T = static_cast<int>(seq.size());
      auto stream_row = [&](int l, int t) {
        const MatF& x = l == L ? cache.x_final : cache.blocks[l].x_in;
        return std::span<const float>(x.data() + static_cast<std::size_t>(t) * x.cols(),
                                      static_cast<std::size_t>(x.cols()));
      };
      for (int n = 1; n <= opt.n_max; ++n)
        for (int l = 0; l + n <= L; ++l) {
          double acc = 0.0;
          for (int t = 0; t < T; ++t)
            acc += angular_distance(stream_row(l, t), stream_row(l + n, t));
          vals[offsets[n - 1] + l] = acc / T;
        }
    } else {
      const auto result = model.forward(std::span<const std::int32_t>(seq), true);
      const auto& stream = result.trace->stream;
      for (int n = 1; n <= opt.n_max; ++n)
        for (int l = 0; l + n <= L; ++l) {
          const VecF& a = stream[l];
          const VecF& b = stream[l + n];
          vals[offsets[n - 1] + l] =
              angular_distance(std::span<const float>(a.data(), a.size()),
                               std::span<const float>(b.data(), b.size()));
        }
    }
    per_sample[i] = std::move(vals);
  });

  std::vector<std::int64_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (samples.ids[a] != samples.ids[b]) return samples.ids[a] < samples.ids[b];
    return a < b;
  });

  std::vector<double> sum(cells, 0.0), sumsq(cells, 0.0);
  std::int64_t used = 0, skip_count = 0;
  for (std::int64_t oi : order) {
    if (skipped[oi]) {
      ++skip_count;
      continue;
    }
    ++used;
    const auto& vals = per_sample[oi];
    for (int c = 0; c < cells; ++c) {
      sum[c] += vals[c];
      sumsq[c] += vals[c] * vals[c];
    }
  }
  if (used == 0) throw InputError("profile: all samples skipped (shorter than 2 tokens)");

  DistanceMatrix m;
  m.num_layers = L;
  m.n_max = opt.n_max;
  m.samples_used = used;
  m.samples_skipped = skip_count;
  for (int n = 1; n <= opt.n_max; ++n) {
    const int width = L - n + 1;
    std::vector<double> row(width), se(width);
    std::vector<std::int64_t> cnt(width, used);
    for (int l = 0; l < width; ++l) {
      const double mean = sum[offsets[n - 1] + l] / used;
      row[l] = mean;
      if (used > 1) {
        const double var =
            std::max(0.0, sumsq[offsets[n - 1] + l] / used - mean * mean);
        se[l] = std::sqrt(var / used);
      } else {
        se[l] = 0.0;
      }
    }
    m.values.push_back(std::move(row));
    m.stderr_mean.push_back(std::move(se));
    m.counts.push_back(std::move(cnt));
  }
  return m;
}

DistanceMatrix profile(const Model& model, const CorpusStream& corpus,
                       std::int64_t sample_count, const ProfileOptions& opt) {
  if (sample_count < 1) throw InputError("profile: sample_count must be >= 1");
  SampleSet set;
  const std::int64_t n = std::min<std::int64_t>(sample_count, corpus.size());
  for (std::int64_t i = 0; i < n; ++i) {
    set.sequences.push_back(corpus.sequence(i));
    set.ids.push_back(corpus.sequence_id(i));
  }
  DistanceMatrix m = profile_samples(model, set, opt);
  m.corpus_fingerprint = corpus.fingerprint();
  m.model_fingerprint = model_fingerprint(model);
  return m;
}

int optimal_block(const DistanceMatrix& matrix, int n) {
  if (n < 1 || n > matrix.n_max)
    throw InputError("optimal_block: block size " + std::to_string(n) +
                     " outside profiled range [1, " + std::to_string(matrix.n_max) + "]");
  const auto& row = matrix.values[n - 1];
  int best = 0;
  for (int l = 1; l < static_cast<int>(row.size()); ++l)
    if (row[l] < row[best]) best = l;
  return best;
}

HeatmapGrid normalize_rows(const DistanceMatrix& matrix) {
  if (matrix.values.empty()) throw InputError("normalize_rows: empty matrix");
  HeatmapGrid g;
  g.num_layers = matrix.num_layers;
  g.n_max = matrix.n_max;
  for (const auto& row : matrix.values) {
    double lo = row[0], hi = row[0];
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    std::vector<double> out(row.size(), 0.0);
    if (hi > lo)
      for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - lo) / (hi - lo);
    g.rows.push_back(std::move(out));
  }
  return g;
}

std::string distance_csv(const DistanceMatrix& matrix) {
  std::ostringstream out;
  out << "# schema: distance-matrix v1\n";
  out << "# model: " << matrix.model_fingerprint << "\n";
  out << "# corpus: " << matrix.corpus_fingerprint << "\n";
  out << "# num_layers: " << matrix.num_layers << "\n";
  out << "# n_max: " << matrix.n_max << "\n";
  out << "# samples: " << matrix.samples_used << "\n";
  out << "# skipped: " << matrix.samples_skipped << "\n";
  out << "# fingerprint: " << matrix.fingerprint() << "\n";
  out << "n,l_star,d_min";
  for (int l = 0; l < matrix.num_layers; ++l) out << ",l" << l;
  out << "\n";
  for (int n = 1; n <= matrix.n_max; ++n) {
    const auto& row = matrix.values[n - 1];
    const int ls = optimal_block(matrix, n);
    out << n << "," << ls << "," << format_double_exact(row[ls]);
    for (int l = 0; l < matrix.num_layers; ++l) {
      out << ",";
      if (l < static_cast<int>(row.size())) out << format_double_exact(row[l]);
    }
    out << "\n";
  }
  return out.str();
}

std::string distance_stderr_csv(const DistanceMatrix& matrix) {
  std::ostringstream out;
  out << "# schema: distance-stderr v1\n";
  out << "# matrix: " << matrix.fingerprint() << "\n";
  out << "n";
  for (int l = 0; l < matrix.num_layers; ++l) out << ",l" << l;
  out << "\n";
  for (int n = 1; n <= matrix.n_max; ++n) {
    const auto& row = matrix.stderr_mean[n - 1];
    out << n;
    for (int l = 0; l < matrix.num_layers; ++l) {
      out << ",";
      if (l < static_cast<int>(row.size())) out << format_double_exact(row[l]);
    }
    out << "\n";
  }
  return out.str();
}

void write_distance_csv(const std::string& path, const DistanceMatrix& matrix) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::string text = distance_csv(matrix);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

DistanceMatrix read_distance_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  DistanceMatrix m;
  std::string recorded_fingerprint;
  std::string line;
  bool saw_header_row = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      std::string value;
      ls >> value;
      if (key == "schema:") {
        std::string v2;
        ls >> v2;
        if (value != "distance-matrix" || v2 != "v1")
          throw VersionError(path + ": unsupported distance CSV schema");
      } else if (key == "model:") {
        m.model_fingerprint = value;
      } else if (key == "corpus:") {
        m.corpus_fingerprint = value;
      } else if (key == "num_layers:") {
        m.num_layers = std::stoi(value);
      } else if (key == "n_max:") {
        m.n_max = std::stoi(value);
      } else if (key == "samples:") {
        m.samples_used = std::stoll(value);
      } else if (key == "skipped:") {
        m.samples_skipped = std::stoll(value);
      } else if (key == "fingerprint:") {
        recorded_fingerprint = value;
      }
      continue;
    }
    if (!saw_header_row) {
      saw_header_row = true;  // column header
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {  // keep trailing empty cells
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (fields.size() < 3) throw FormatError(path + ": short row");
    const int n = std::stoi(fields[0]);
    if (n != static_cast<int>(m.values.size()) + 1)
      throw FormatError(path + ": rows out of order");
    const int width = m.num_layers - n + 1;
    if (static_cast<int>(fields.size()) != 3 + m.num_layers)
      throw FormatError(path + ": wrong column count");
    std::vector<double> row(width);
    for (int l = 0; l < width; ++l) {
      if (fields[3 + l].empty()) throw FormatError(path + ": missing cell");
      row[l] = std::stod(fields[3 + l]);
    }
    for (int l = width; l < m.num_layers; ++l)
      if (!fields[3 + l].empty()) throw FormatError(path + ": value in invalid cell");
    m.values.push_back(std::move(row));
    m.stderr_mean.push_back(std::vector<double>(width, 0.0));
    m.counts.push_back(std::vector<std::int64_t>(width, m.samples_used));
  }
  if (m.num_layers <= 0 || m.n_max <= 0 ||
      static_cast<int>(m.values.size()) != m.n_max)
    throw FormatError(path + ": incomplete distance matrix");
  if (!recorded_fingerprint.empty() && recorded_fingerprint != m.fingerprint())
    throw ChecksumError(path + ": distance matrix fingerprint mismatch");
  return m;
}

}  // namespace lp
