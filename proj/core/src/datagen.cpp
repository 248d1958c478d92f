#include "cissl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cissl/csv.hpp"
#include "cissl/errors.hpp"
#include "cissl/log.hpp"
#include "cissl/ops.hpp"

namespace cissl {

namespace {

// Streams derived from the spec seed; fixed so exports replay across builds.
enum Stream : std::uint64_t { kLabeled = 1, kUnlabeled = 2, kTest = 3, kBalanced = 4 };

void draw_split(const Tensor2D& centers, const std::vector<std::size_t>& counts, double sigma,
                Rng rng, Tensor2D& x, std::vector<int>& y) {
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  const std::size_t d = centers.cols();
  x = Tensor2D(n, d);
  y.assign(n, 0);
  std::size_t row = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const auto c = centers.row(k);
    for (std::size_t i = 0; i < counts[k]; ++i, ++row) {
      auto r = x.row(row);
      for (std::size_t j = 0; j < d; ++j) r[j] = c[j] + sigma * rng.normal();
      y[row] = static_cast<int>(k);
    }
  }
}

std::vector<std::size_t> histogram(const std::vector<int>& labels, std::size_t k) {
  std::vector<std::size_t> h(k, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw std::runtime_error("label out of range");
    ++h[static_cast<std::size_t>(l)];
  }
  return h;
}

void write_split(const std::filesystem::path& path, const Tensor2D& x, const std::vector<int>& y) {
  csv::Table t;
  t.header = {"index", "label"};
  for (std::size_t j = 0; j < x.cols(); ++j) t.header.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i), std::to_string(y[i])};
    for (double v : x.row(i)) row.push_back(csv::format_double(v));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

void read_split(const std::filesystem::path& path, std::size_t d, Tensor2D& x, std::vector<int>& y) {
  const auto t = csv::read(path);
  if (t.header.size() != d + 2) {
    throw std::runtime_error("'" + path.string() + "': expected " + std::to_string(d + 2) + " columns");
  }
  x = Tensor2D(t.rows.size(), d);
  y.assign(t.rows.size(), 0);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    y[i] = static_cast<int>(csv::parse_int(t.rows[i][1]));
    for (std::size_t j = 0; j < d; ++j) x(i, j) = csv::parse_double(t.rows[i][j + 2]);
  }
}

}  // namespace

std::vector<std::size_t> longtail_counts(std::size_t n1, double gamma, std::size_t num_classes) {
  if (num_classes < 2) throw ConfigError("longtail_counts: need at least 2 classes");
  if (!(gamma >= 1.0)) throw ConfigError("longtail_counts: gamma must be >= 1");
  if (static_cast<double>(n1) < gamma) {
    throw ConfigError("longtail_counts: N1 = " + std::to_string(n1) + " < gamma = " +
                      std::to_string(gamma) + " leaves the tail class empty");
  }
  std::vector<std::size_t> counts(num_classes);
  const double denom = static_cast<double>(num_classes - 1);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double exact = static_cast<double>(n1) * std::pow(gamma, -static_cast<double>(k) / denom);
    counts[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact + 0.5)));
  }
  return counts;
}

void LongTailSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (n1_labeled == 0) throw ConfigError("n1_labeled must be positive");
  if (n1_unlabeled == 0) throw ConfigError("n1_unlabeled must be positive");
  if (!(gamma_labeled >= 1.0)) throw ConfigError("gamma_labeled must be >= 1");
  if (!(gamma_unlabeled >= 1.0)) throw ConfigError("gamma_unlabeled must be >= 1");
  if (static_cast<double>(n1_labeled) < gamma_labeled) {
    throw ConfigError("n1_labeled must be >= gamma_labeled");
  }
  if (static_cast<double>(n1_unlabeled) < gamma_unlabeled) {
    throw ConfigError("n1_unlabeled must be >= gamma_unlabeled");
  }
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (!(class_sep > 0.0) || !std::isfinite(class_sep)) throw ConfigError("class_sep must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be non-negative");
  }
  if (test_per_class == 0) throw ConfigError("test_per_class must be positive");
}

LongTailDataset::LongTailDataset(LongTailSpec spec, Tensor2D class_centers,
                                 Tensor2D labeled_features, std::vector<int> labeled_labels,
                                 Tensor2D unlabeled_features,
                                 std::vector<int> hidden_unlabeled_labels, Tensor2D test_features,
                                 std::vector<int> test_labels)
    : spec_(std::move(spec)),
      centers_(std::move(class_centers)),
      labeled_x_(std::move(labeled_features)),
      labeled_y_(std::move(labeled_labels)),
      unlabeled_x_(std::move(unlabeled_features)),
      unlabeled_y_(std::move(hidden_unlabeled_labels)),
      test_x_(std::move(test_features)),
      test_y_(std::move(test_labels)) {
  if (labeled_x_.rows() != labeled_y_.size() || unlabeled_x_.rows() != unlabeled_y_.size() ||
      test_x_.rows() != test_y_.size()) {
    throw std::invalid_argument("LongTailDataset: feature and label counts differ");
  }
  counts_labeled_ = histogram(labeled_y_, spec_.num_classes);
  counts_unlabeled_ = histogram(unlabeled_y_, spec_.num_classes);
}

Tensor2D simplex_centers(std::size_t num_classes, std::size_t input_dim, double class_sep) {
  const std::size_t k = num_classes;
  Tensor2D centers(k, input_dim);
  if (input_dim + 1 < k) {
    log_warning("input_dim " + std::to_string(input_dim) + " < K-1 = " + std::to_string(k - 1) +
                "; class centers fall back to random unit directions");
    Rng rng(0xC3A5C85C97CB3127ULL ^ (static_cast<std::uint64_t>(k) << 32) ^ input_dim);
    for (std::size_t c = 0; c < k; ++c) {
      auto r = centers.row(c);
      double n = 0.0;
      while (n == 0.0) {
        for (auto& v : r) v = rng.normal();
        n = normalize_in_place(r);
      }
      for (auto& v : r) v *= class_sep;
    }
    return centers;
  }

  // Vertices e_c - 1/K in R^K, scaled to unit norm.
  const double kd = static_cast<double>(k);
  const double scale = 1.0 / std::sqrt((kd - 1.0) / kd);
  Tensor2D verts(k, k);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < k; ++j) verts(c, j) = ((c == j ? 1.0 : 0.0) - 1.0 / kd) * scale;
  }
  // Orthonormal basis of the (K-1)-dimensional span via Gram-Schmidt.
  std::vector<std::vector<double>> basis;
  for (std::size_t c = 0; c + 1 < k; ++c) {
    std::vector<double> b(verts.row(c).begin(), verts.row(c).end());
    for (const auto& q : basis) {
      const double p = dot(b, q);
      for (std::size_t j = 0; j < k; ++j) b[j] -= p * q[j];
    }
    normalize_in_place(b);
    basis.push_back(std::move(b));
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < basis.size(); ++j) {
      centers(c, j) = class_sep * dot(verts.row(c), basis[j]);
    }
  }
  return centers;
}

LongTailDataset make_dataset_with_counts(const LongTailSpec& spec,
                                         const std::vector<std::size_t>& counts_labeled,
                                         const std::vector<std::size_t>& counts_unlabeled) {
  spec.validate();
  if (counts_labeled.size() != spec.num_classes || counts_unlabeled.size() != spec.num_classes) {
    throw ConfigError("per-class count vectors must have num_classes entries");
  }
  const Tensor2D centers = simplex_centers(spec.num_classes, spec.input_dim, spec.class_sep);
  const Rng base(spec.seed);
  Tensor2D lx, ux, tx;
  std::vector<int> ly, uy, ty;
  draw_split(centers, counts_labeled, spec.noise_sigma, base.split(kLabeled), lx, ly);
  draw_split(centers, counts_unlabeled, spec.noise_sigma, base.split(kUnlabeled), ux, uy);
  draw_split(centers, std::vector<std::size_t>(spec.num_classes, spec.test_per_class),
             spec.noise_sigma, base.split(kTest), tx, ty);
  return LongTailDataset(spec, centers, std::move(lx), std::move(ly), std::move(ux), std::move(uy),
                         std::move(tx), std::move(ty));
}

LongTailDataset make_dataset(const LongTailSpec& spec) {
  spec.validate();
  const auto cl = longtail_counts(spec.n1_labeled, spec.gamma_labeled, spec.num_classes);
  auto cu = longtail_counts(spec.n1_unlabeled, spec.gamma_unlabeled, spec.num_classes);
  if (spec.invert_unlabeled) std::reverse(cu.begin(), cu.end());
  return make_dataset_with_counts(spec, cl, cu);
}

LongTailDataset make_balanced_counterpart(const LongTailSpec& spec) {
  spec.validate();
  const std::size_t k = spec.num_classes;
  auto balanced = [k](std::size_t total) {
    std::vector<std::size_t> c(k, total / k);
    for (std::size_t i = 0; i < total % k; ++i) ++c[i];
    return c;
  };
  const auto cl = longtail_counts(spec.n1_labeled, spec.gamma_labeled, k);
  const auto cu = longtail_counts(spec.n1_unlabeled, spec.gamma_unlabeled, k);
  LongTailSpec bal = spec;
  bal.seed = Rng(spec.seed).split(kBalanced).next_u64();
  return make_dataset_with_counts(bal, balanced(std::accumulate(cl.begin(), cl.end(), std::size_t{0})),
                                  balanced(std::accumulate(cu.begin(), cu.end(), std::size_t{0})));
}

std::vector<double> augment(std::span<const double> x, AugmentMode mode, double noise_sigma,
                            const AugmentConfig& cfg, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  if (mode == AugmentMode::weak) {
    const double sigma = cfg.weak_sigma_scale * noise_sigma;
    for (auto& v : out) v += sigma * rng.normal();
  } else {
    const double sigma = cfg.strong_sigma_scale * noise_sigma;
    for (auto& v : out) {
      v += sigma * rng.normal();
      if (rng.bernoulli(cfg.mask_prob)) v = 0.0;
    }
  }
  return out;
}

Tensor2D augment_rows(const Tensor2D& x, AugmentMode mode, double noise_sigma,
                      const AugmentConfig& cfg, Rng& rng) {
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto a = augment(x.row(i), mode, noise_sigma, cfg, rng);
    std::copy(a.begin(), a.end(), out.row(i).begin());
  }
  return out;
}

BatchIndices sample_batch(const LongTailDataset& ds, std::size_t batch_labeled,
                          std::size_t uratio, Rng& rng) {
  if (ds.num_labeled() == 0 || ds.num_unlabeled() == 0) {
    throw std::invalid_argument("sample_batch: empty split");
  }
  BatchIndices b;
  const std::size_t bu = batch_labeled * uratio;
  b.labeled.reserve(batch_labeled);
  b.unlabeled.reserve(bu);
  for (std::size_t i = 0; i < batch_labeled; ++i) b.labeled.push_back(rng.below(ds.num_labeled()));
  for (std::size_t i = 0; i < bu; ++i) b.unlabeled.push_back(rng.below(ds.num_unlabeled()));
  b.labeled_keys = b.labeled;
  b.unlabeled_keys.reserve(bu);
  for (std::size_t j : b.unlabeled) b.unlabeled_keys.push_back(ds.num_labeled() + j);
  return b;
}

void export_dataset(const LongTailDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_split(dir / "labeled.csv", ds.labeled_features(), ds.labeled_labels());
  write_split(dir / "unlabeled.csv", ds.unlabeled_features(), ds.diagnostic_unlabeled_labels());
  write_split(dir / "test.csv", ds.test_features(), ds.test_labels());

  const auto& s = ds.spec();
  nlohmann::ordered_json meta;
  meta["num_classes"] = s.num_classes;
  meta["n1_labeled"] = s.n1_labeled;
  meta["n1_unlabeled"] = s.n1_unlabeled;
  meta["gamma_labeled"] = s.gamma_labeled;
  meta["gamma_unlabeled"] = s.gamma_unlabeled;
  meta["invert_unlabeled"] = s.invert_unlabeled;
  meta["input_dim"] = s.input_dim;
  meta["class_sep"] = s.class_sep;
  meta["noise_sigma"] = s.noise_sigma;
  meta["test_per_class"] = s.test_per_class;
  meta["seed"] = s.seed;
  meta["counts_labeled"] = ds.counts_labeled();
  meta["counts_unlabeled"] = ds.counts_unlabeled();
  std::vector<std::vector<double>> centers;
  for (std::size_t k = 0; k < ds.class_centers().rows(); ++k) {
    const auto r = ds.class_centers().row(k);
    centers.emplace_back(r.begin(), r.end());
  }
  meta["class_centers"] = centers;
  std::ofstream os(dir / "meta.json");
  if (!os) throw std::runtime_error("cannot write '" + (dir / "meta.json").string() + "'");
  os << meta.dump(2) << '\n';
}

LongTailDataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw std::runtime_error("cannot open '" + (dir / "meta.json").string() + "'");
  const auto meta = nlohmann::json::parse(is);
  LongTailSpec s;
  s.num_classes = meta.at("num_classes").get<std::size_t>();
  s.n1_labeled = meta.at("n1_labeled").get<std::size_t>();
  s.n1_unlabeled = meta.at("n1_unlabeled").get<std::size_t>();
  s.gamma_labeled = meta.at("gamma_labeled").get<double>();
  s.gamma_unlabeled = meta.at("gamma_unlabeled").get<double>();
  s.invert_unlabeled = meta.at("invert_unlabeled").get<bool>();
  s.input_dim = meta.at("input_dim").get<std::size_t>();
  s.class_sep = meta.at("class_sep").get<double>();
  s.noise_sigma = meta.at("noise_sigma").get<double>();
  s.test_per_class = meta.at("test_per_class").get<std::size_t>();
  s.seed = meta.at("seed").get<std::uint64_t>();

  const auto rows = meta.at("class_centers").get<std::vector<std::vector<double>>>();
  Tensor2D centers(s.num_classes, s.input_dim);
  if (rows.size() != s.num_classes) throw std::runtime_error("meta.json: class_centers row count");
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != s.input_dim) throw std::runtime_error("meta.json: class_centers width");
    std::copy(rows[k].begin(), rows[k].end(), centers.row(k).begin());
  }

  Tensor2D lx, ux, tx;
  std::vector<int> ly, uy, ty;
  read_split(dir / "labeled.csv", s.input_dim, lx, ly);
  read_split(dir / "unlabeled.csv", s.input_dim, ux, uy);
  read_split(dir / "test.csv", s.input_dim, tx, ty);
  return LongTailDataset(s, std::move(centers), std::move(lx), std::move(ly), std::move(ux),
                         std::move(uy), std::move(tx), std::move(ty));
}

}  // namespace cissl
