#include "maskspec/probe.hpp"

#include <algorithm>
#include <cmath>

namespace maskspec::probe {

VecD LayerWeights::effective() const {
  if (raw.size() == 0) throw ConfigError("layer weights: empty");
  const double mx = raw.maxCoeff();
  VecD e = (raw.array() - mx).exp();
  return e / e.sum();
}

MatD extract_layer_pooled(const model::ModelConfig& mc, const model::ModelState<float>& state,
                          const MatF& patch_vecs) {
  if (mc.n_layers < 1) throw ConfigError("probe: encoder must have at least one layer");
  const MatF tokens = model::embed(mc, state, patch_vecs, {});
  const model::EncodeOutput<float> out = model::encode(mc, state, tokens);
  MatD pooled(mc.n_layers, mc.d_model);
  for (int l = 0; l < mc.n_layers; ++l)
    pooled.row(l) = out.per_layer_tokens[static_cast<size_t>(l)]
                        .colwise()
                        .mean()
                        .cast<double>();
  return pooled;
}

VecD aggregate(const MatD& layer_pooled, const LayerWeights& w) {
  if (w.raw.size() != layer_pooled.rows())
    throw ConfigError("aggregate: one weight per encoder layer required");
  const VecD s = w.effective();
  return layer_pooled.transpose() * s;
}

ProbeModel init_probe(const ProbeConfig& cfg, int n_layers, int d_model, uint64_t seed) {
  cfg.validate();
  if (n_layers < 1) throw ConfigError("probe: encoder must have at least one layer");
  Rng rng = Rng::derive(seed, "probe-init");
  ProbeModel m;
  m.head = cfg.head;
  m.weights.raw = VecD::Zero(n_layers);
  auto fill_normal = [&](MatD& w) {
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = 0.02 * rng.normal();
  };
  if (cfg.head == ProbeConfig::Head::kMlp) {
    m.fc1_w.resize(d_model, d_model);
    fill_normal(m.fc1_w);
    m.fc1_b = VecD::Zero(d_model);
  }
  m.out_w.resize(cfg.n_classes, d_model);
  fill_normal(m.out_w);
  m.out_b = VecD::Zero(cfg.n_classes);
  return m;
}

namespace {

double gelu_d(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad_d(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return phi + x * pdf;
}

VecD softmax_vec(const VecD& v) {
  const double mx = v.maxCoeff();
  VecD e = (v.array() - mx).exp();
  return e / e.sum();
}

struct FlatParam {
  double* data;
  Eigen::Index size;
  bool decay;
};

std::vector<FlatParam> probe_param_refs(ProbeModel& m) {
  std::vector<FlatParam> refs;
  refs.push_back({m.weights.raw.data(), m.weights.raw.size(), false});
  if (m.fc1_w.size()) {
    refs.push_back({m.fc1_w.data(), m.fc1_w.size(), true});
    refs.push_back({m.fc1_b.data(), m.fc1_b.size(), false});
  }
  refs.push_back({m.out_w.data(), m.out_w.size(), true});
  refs.push_back({m.out_b.data(), m.out_b.size(), false});
  return refs;
}

ProbeModel zeros_like(const ProbeModel& m) {
  ProbeModel z = m;
  z.weights.raw.setZero();
  if (z.fc1_w.size()) {
    z.fc1_w.setZero();
    z.fc1_b.setZero();
  }
  z.out_w.setZero();
  z.out_b.setZero();
  return z;
}

// Cross-entropy gradient of one example accumulated into g. Returns the
// example's loss.
double example_backward(const ProbeModel& m, const ProbeExample& ex, double scale,
                        ProbeModel& g) {
  const VecD s = m.weights.effective();
  const VecD e = ex.layer_pooled.transpose() * s;

  VecD logits, h_pre, h;
  if (m.head == ProbeConfig::Head::kMlp) {
    h_pre = m.fc1_w * e + m.fc1_b;
    h = h_pre.unaryExpr([](double v) { return gelu_d(v); });
    logits = m.out_w * h + m.out_b;
  } else {
    logits = m.out_w * e + m.out_b;
  }

  const VecD probs = softmax_vec(logits);
  const double loss = -std::log(std::max(probs[ex.label], 1e-300));

  VecD d_logits = probs * scale;
  d_logits[ex.label] -= scale;

  VecD d_e;
  if (m.head == ProbeConfig::Head::kMlp) {
    g.out_w.noalias() += d_logits * h.transpose();
    g.out_b += d_logits;
    VecD d_h = m.out_w.transpose() * d_logits;
    VecD d_h_pre =
        d_h.cwiseProduct(h_pre.unaryExpr([](double v) { return gelu_grad_d(v); }));
    g.fc1_w.noalias() += d_h_pre * e.transpose();
    g.fc1_b += d_h_pre;
    d_e = m.fc1_w.transpose() * d_h_pre;
  } else {
    g.out_w.noalias() += d_logits * e.transpose();
    g.out_b += d_logits;
    d_e = m.out_w.transpose() * d_logits;
  }

  const VecD d_s = ex.layer_pooled * d_e;
  const double dot = s.dot(d_s);
  g.weights.raw += (s.array() * (d_s.array() - dot)).matrix();
  return loss * scale;
}

}  // namespace

VecD probe_logits(const ProbeModel& m, const MatD& layer_pooled) {
  const VecD e = aggregate(layer_pooled, m.weights);
  if (m.head == ProbeConfig::Head::kMlp) {
    const VecD h =
        (m.fc1_w * e + m.fc1_b).unaryExpr([](double v) { return gelu_d(v); });
    return m.out_w * h + m.out_b;
  }
  return m.out_w * e + m.out_b;
}

int probe_predict(const ProbeModel& m, const MatD& layer_pooled) {
  const VecD logits = probe_logits(m, layer_pooled);
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

ProbeModel train_probe(const std::vector<ProbeExample>& examples,
                       const std::vector<size_t>& train_indices, const ProbeConfig& cfg,
                       int n_layers, int d_model, uint64_t fold_seed) {
  cfg.validate();
  if (train_indices.empty()) throw ConfigError("train_probe: empty training set");
  for (size_t i : train_indices) {
    if (examples[i].label < 0 || examples[i].label >= cfg.n_classes)
      throw ConfigError("train_probe: label out of range");
  }

  ProbeModel m = init_probe(cfg, n_layers, d_model, fold_seed);
  ProbeModel grads = zeros_like(m);
  ProbeModel mom1 = zeros_like(m);
  ProbeModel mom2 = zeros_like(m);

  const int n_train = static_cast<int>(train_indices.size());
  const int batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_updates = static_cast<long long>(cfg.epochs) * batches_per_epoch;

  constexpr double kBeta1 = 0.9, kBeta2 = 0.98, kEps = 1e-8;
  long long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(fold_seed, "probe-epoch", static_cast<uint64_t>(epoch));
    const std::vector<int> order = shuffle_rng.sample_without_replacement(n_train, n_train);
    for (int b = 0; b < batches_per_epoch; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(lo + cfg.batch_size, n_train);
      const double scale = 1.0 / (hi - lo);

      auto g_refs = probe_param_refs(grads);
      for (auto& r : g_refs) std::fill(r.data, r.data + r.size, 0.0);
      for (int i = lo; i < hi; ++i)
        example_backward(m, examples[train_indices[static_cast<size_t>(order[static_cast<size_t>(i)])]],
                         scale, grads);

      const double u =
          total_updates > 1 ? static_cast<double>(t) / static_cast<double>(total_updates - 1) : 0.0;
      const double lr = cfg.lr_end + 0.5 * (cfg.lr - cfg.lr_end) * (1.0 + std::cos(M_PI * u));
      ++t;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));

      auto p_refs = probe_param_refs(m);
      auto m_refs = probe_param_refs(mom1);
      auto v_refs = probe_param_refs(mom2);
      g_refs = probe_param_refs(grads);
      for (size_t ri = 0; ri < p_refs.size(); ++ri) {
        const double wd = p_refs[ri].decay ? cfg.weight_decay : 0.0;
        for (Eigen::Index j = 0; j < p_refs[ri].size; ++j) {
          const double g = g_refs[ri].data[j];
          const double m_new = kBeta1 * m_refs[ri].data[j] + (1.0 - kBeta1) * g;
          const double v_new = kBeta2 * v_refs[ri].data[j] + (1.0 - kBeta2) * g * g;
          m_refs[ri].data[j] = m_new;
          v_refs[ri].data[j] = v_new;
          const double update =
              (m_new / bc1) / (std::sqrt(v_new / bc2) + kEps) + wd * p_refs[ri].data[j];
          p_refs[ri].data[j] -= lr * update;
        }
      }
    }
  }
  return m;
}

double probe_accuracy(const ProbeModel& m, const std::vector<ProbeExample>& examples,
                      const std::vector<size_t>& indices) {
  if (indices.empty()) throw ConfigError("probe_accuracy: empty index set");
  int correct = 0;
  for (size_t i : indices)
    if (probe_predict(m, examples[i].layer_pooled) == examples[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

std::vector<int> stratified_folds(const std::vector<ProbeExample>& examples, int folds,
                                  uint64_t seed, int n_classes) {
  if (folds < 2) throw ConfigError("stratified_folds: folds must be >= 2");
  std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes));
  for (size_t i = 0; i < examples.size(); ++i) {
    const int label = examples[i].label;
    if (label < 0 || label >= n_classes) throw ConfigError("stratified_folds: label out of range");
    by_class[static_cast<size_t>(label)].push_back(i);
  }
  for (int c = 0; c < n_classes; ++c)
    if (static_cast<int>(by_class[static_cast<size_t>(c)].size()) < folds)
      throw ConfigError("stratified_folds: class " + std::to_string(c) +
                        " has fewer examples than folds");

  std::vector<int> fold_of(examples.size(), -1);
  for (int c = 0; c < n_classes; ++c) {
    auto& members = by_class[static_cast<size_t>(c)];
    Rng rng = Rng::derive(seed, "folds", static_cast<uint64_t>(c));
    const int n = static_cast<int>(members.size());
    const std::vector<int> order = rng.sample_without_replacement(n, n);
    for (int i = 0; i < n; ++i)
      fold_of[members[static_cast<size_t>(order[static_cast<size_t>(i)])]] = i % folds;
  }
  return fold_of;
}

ProbeReport run_probe(const model::ModelConfig& mc, model::ModelState<float>& state,
                      const std::vector<ProbeClip>& clips, const ProbeConfig& cfg) {
  cfg.validate();
  if (clips.empty()) throw ConfigError("run_probe: no clips");

  ProbeReport report;
  report.encoder_hash_before = model::state_hash(state);

  std::vector<ProbeExample> examples;
  examples.reserve(clips.size());
  for (const auto& clip : clips) {
    if (clip.label < 0 || clip.label >= cfg.n_classes)
      throw ConfigError("run_probe: label out of range for clip " + clip.id);
    examples.push_back({extract_layer_pooled(mc, state, clip.patch_vecs), clip.label});
  }

  const std::vector<int> fold_of = stratified_folds(examples, cfg.folds, cfg.seed, cfg.n_classes);
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<size_t> train_idx, test_idx;
    for (size_t i = 0; i < examples.size(); ++i)
      (fold_of[i] == f ? test_idx : train_idx).push_back(i);
    const ProbeModel m = train_probe(examples, train_idx, cfg, mc.n_layers, mc.d_model,
                                     Rng::derive(cfg.seed, "fold-seed", static_cast<uint64_t>(f))
                                         .next_u64());
    report.fold_accuracy.push_back(probe_accuracy(m, examples, test_idx));
  }
  double sum = 0.0;
  for (double a : report.fold_accuracy) sum += a;
  report.mean_accuracy = sum / static_cast<double>(report.fold_accuracy.size());

  report.encoder_hash_after = model::state_hash(state);
  if (report.encoder_hash_after != report.encoder_hash_before)
    throw NumericError("run_probe: frozen encoder changed during probing");
  return report;
}

}  // namespace maskspec::probe
