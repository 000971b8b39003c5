#include "lcalsbo/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace lcalsbo::tasks {

namespace {

constexpr const char* kClassifier = "clf";

Tensor label_column(const Dataset& data, int target_class) {
  Tensor y(data.size(), 1);
  for (std::size_t i = 0; i < data.size(); ++i) y(i, 0) = data.labels[i] == target_class ? 1.0 : 0.0;
  return y;
}

}  // namespace

double OracleClassifier::probability(std::span<const double> x) const {
  const Tensor logit = ad::mlp_forward(params, kClassifier, layers, Tensor::row(x));
  return kernels::sigmoid(logit.item());
}

OracleClassifier fit_classifier(const Dataset& data, int target_class, const ClassifierConfig& config) {
  if (data.labels.size() != data.size()) throw std::invalid_argument("classifier needs labeled data");
  const Tensor y_all = label_column(data, target_class);
  const double positives = std::accumulate(y_all.values().begin(), y_all.values().end(), 0.0);
  if (positives == 0.0 || positives == static_cast<double>(data.size())) {
    throw std::invalid_argument("classifier needs both target and non-target rows");
  }

  OracleClassifier clf;
  std::vector<std::size_t> widths{data.dim()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  clf.layers = widths.size() - 1;
  Rng init_rng = make_rng(config.seed, "oracle/init");
  ad::init_mlp(clf.params, kClassifier, widths, init_rng);

  Rng shuffle_rng = make_rng(config.seed, "oracle/shuffle");
  ad::AdamState adam;
  adam.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      ad::Graph g;
      const auto x = g.constant(kernels::select_rows(data.inputs, idx));
      const auto y = g.constant(kernels::select_rows(y_all, idx));
      const auto logits = ad::mlp(g, clf.params, kClassifier, clf.layers, x);
      // binary cross-entropy on logits: softplus(l) − y·l
      const auto loss = g.mean(g.sub(g.softplus(logits), g.mul(y, logits)));
      try {
        const auto grads = g.backward(loss);
        ad::adam_step(clf.params, grads.parameters(), adam);
      } catch (const NonFiniteError& e) {
        throw std::runtime_error("oracle classifier training diverged at epoch " +
                                 std::to_string(epoch) + ": " + e.what());
      }
    }
  }
  return clf;
}

double accuracy(const OracleClassifier& clf, const Dataset& data, int target_class) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool predicted = clf.probability(data.inputs.row_span(i)) >= 0.5;
    correct += predicted == (data.labels[i] == target_class) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

BlackBoxTask as_black_box(OracleClassifier clf, int target_class) {
  const std::size_t dim = clf.params.at(std::string(kClassifier) + ".w0").rows();
  BlackBoxTask task;
  task.description = "MLP oracle, probability of class " + std::to_string(target_class);
  task.target = "class " + std::to_string(target_class);
  task.evaluate = [clf = std::move(clf), dim](std::span<const double> x) {
    if (x.size() != dim) throw ShapeError("black box expects dimension " + std::to_string(dim));
    return clf.probability(x);
  };
  return task;
}

BlackBoxTask train_oracle_classifier(const Dataset& data, int target_class,
                                     const ClassifierConfig& config) {
  return as_black_box(fit_classifier(data, target_class, config), target_class);
}

std::string to_string(Layout layout) { return layout == Layout::Ring ? "ring" : "line"; }

Layout layout_from_string(const std::string& s) {
  if (s == "ring") return Layout::Ring;
  if (s == "line") return Layout::Line;
  throw std::invalid_argument("unknown cluster layout: " + s);
}

namespace {

std::pair<double, double> blob_centre(const ClusterTaskSpec& spec, int i) {
  const double c = 0.5 * static_cast<double>(spec.side - 1);
  if (spec.layout == Layout::Line) {
    const double t = spec.clusters == 1 ? 0.0 : 2.0 * i / (spec.clusters - 1) - 1.0;
    return {c + spec.spread * t, c};
  }
  const double angle = 2.0 * std::numbers::pi * i / spec.clusters;
  return {c + spec.spread * std::cos(angle), c + spec.spread * std::sin(angle)};
}

Tensor blob_prototypes(const ClusterTaskSpec& spec) {
  const std::size_t d = spec.side * spec.side;
  Tensor protos(spec.clusters, d);
  for (int i = 0; i < spec.clusters; ++i) {
    const auto [cx, cy] = blob_centre(spec, i);
    for (std::size_t r = 0; r < spec.side; ++r) {
      for (std::size_t k = 0; k < spec.side; ++k) {
        const double dx = static_cast<double>(k) - cx, dy = static_cast<double>(r) - cy;
        protos(i, r * spec.side + k) =
            std::exp(-0.5 * (dx * dx + dy * dy) / (spec.blob_width * spec.blob_width));
      }
    }
  }
  return protos;
}

Dataset sample_clusters(const ClusterTaskSpec& spec, int per_cluster, Rng& rng, const std::string& name) {
  const std::size_t d = spec.side * spec.side;
  Dataset out;
  out.name = name;
  out.inputs = Tensor(static_cast<std::size_t>(spec.clusters * per_cluster), d);
  out.labels.reserve(out.inputs.rows());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t row = 0;
  for (int i = 0; i < spec.clusters; ++i) {
    const auto [px, py] = blob_centre(spec, i);
    for (int n = 0; n < per_cluster; ++n, ++row) {
      const double cx = px + spec.position_jitter * normal(rng);
      const double cy = py + spec.position_jitter * normal(rng);
      for (std::size_t r = 0; r < spec.side; ++r) {
        for (std::size_t k = 0; k < spec.side; ++k) {
          const double dx = static_cast<double>(k) - cx, dy = static_cast<double>(r) - cy;
          const double v = std::exp(-0.5 * (dx * dx + dy * dy) / (spec.blob_width * spec.blob_width)) +
                           spec.pixel_noise * normal(rng);
          out.inputs(row, r * spec.side + k) = std::clamp(v, 0.0, 1.0);
        }
      }
      out.labels.push_back(i);
    }
  }
  return out;
}

Dataset without_class(const Dataset& data, int excluded) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] != excluded) keep.push_back(i);
  }
  Dataset out;
  out.name = data.name;
  out.excluded = excluded;
  out.inputs = kernels::select_rows(data.inputs, keep);
  for (std::size_t i : keep) out.labels.push_back(data.labels[i]);
  return out;
}

}  // namespace

ClusterTask make_excluded_cluster_task(const ClusterTaskSpec& spec, Rng& rng) {
  if (spec.clusters < 2) throw std::invalid_argument("cluster task needs at least two clusters");
  if (spec.excluded < 0 || spec.excluded >= spec.clusters) {
    throw std::invalid_argument("excluded cluster index out of range");
  }
  if (spec.side < 2 || spec.per_cluster < 1) throw std::invalid_argument("degenerate cluster task spec");

  ClusterTask task;
  task.prototypes = blob_prototypes(spec);
  task.full = sample_clusters(spec, spec.per_cluster, rng, "clusters");
  task.held_out = sample_clusters(spec, std::max(1, spec.per_cluster / 4), rng, "clusters-held-out");
  task.train = without_class(task.full, spec.excluded);

  ClassifierConfig cc = spec.classifier;
  cc.seed = rng();
  const OracleClassifier clf = fit_classifier(task.full, spec.excluded, cc);
  task.held_out_accuracy = accuracy(clf, task.held_out, spec.excluded);
  task.black_box = as_black_box(clf, spec.excluded);
  return task;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IdxError(path + ": truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<unsigned char> bytes(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n))) {
    throw IdxError(path + ": truncated IDX payload (expected " + std::to_string(n) + " bytes)");
  }
  return bytes;
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<int> exclude) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError("cannot open " + labels_path);

  if (const auto m = read_be32(img, images_path); m != kImageMagic) {
    throw IdxError(images_path + ": bad IDX image magic " + std::to_string(m));
  }
  const std::size_t count = read_be32(img, images_path);
  const std::size_t rows = read_be32(img, images_path);
  const std::size_t cols = read_be32(img, images_path);
  if (const auto m = read_be32(lab, labels_path); m != kLabelMagic) {
    throw IdxError(labels_path + ": bad IDX label magic " + std::to_string(m));
  }
  const std::size_t label_count = read_be32(lab, labels_path);
  if (label_count != count) {
    throw IdxError("image/label count mismatch: " + std::to_string(count) + " vs " +
                   std::to_string(label_count));
  }
  const auto pixels = read_payload(img, count * rows * cols, images_path);
  const auto labels = read_payload(lab, count, labels_path);

  Dataset out;
  out.name = images_path;
  out.excluded = exclude;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < count; ++i) kept += exclude && labels[i] == *exclude ? 0 : 1;
  const std::size_t d = rows * cols;
  out.inputs = Tensor(kept, d);
  std::size_t r = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (exclude && labels[i] == *exclude) continue;
    for (std::size_t j = 0; j < d; ++j) out.inputs(r, j) = pixels[i * d + j] / 255.0;
    out.labels.push_back(labels[i]);
    ++r;
  }
  return out;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const Dataset& data,
               std::size_t rows, std::size_t cols) {
  if (rows * cols != data.dim()) throw ShapeError("write_idx: rows*cols does not match the dimension");
  if (data.labels.size() != data.size()) throw std::invalid_argument("write_idx needs labels");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IdxError("cannot write IDX files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  for (double v : data.inputs.values()) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
}

double diversity(const std::vector<std::vector<double>>& instances, double tolerance) {
  if (instances.empty()) throw std::invalid_argument("diversity of an empty set");
  std::vector<const std::vector<double>*> reps;
  for (const auto& x : instances) {
    const bool seen = std::any_of(reps.begin(), reps.end(), [&](const std::vector<double>* r) {
      if (r->size() != x.size()) return false;
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (std::abs((*r)[j] - x[j]) > tolerance) return false;
      }
      return true;
    });
    if (!seen) reps.push_back(&x);
  }
  return static_cast<double>(reps.size()) / static_cast<double>(instances.size());
}

}  // namespace lcalsbo::tasks
