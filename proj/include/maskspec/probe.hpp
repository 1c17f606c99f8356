// Downstream evaluation with a frozen encoder: clips are embedded once, a
// softmax-weighted mixture over the per-layer mean-pooled token embeddings
// feeds a small classification head, and only the mixture weights and head
// train. Accuracy is reported per stratified fold and as the fold mean.
#pragma once

#include <string>
#include <vector>

#include "maskspec/common.hpp"
#include "maskspec/grid.hpp"
#include "maskspec/model.hpp"

namespace maskspec::probe {

struct ProbeConfig {
  enum class Head { kLinear, kMlp };

  int n_classes = 4;
  Head head = Head::kLinear;
  int epochs = 50;
  double lr = 1e-2;
  double lr_end = 1e-6;
  int folds = 5;
  int batch_size = 16;
  uint64_t seed = 0;
  double weight_decay = 0.05;

  void validate() const {
    if (n_classes < 2) throw ConfigError("probe: n_classes must be >= 2");
    if (epochs < 0) throw ConfigError("probe: epochs must be >= 0");
    if (lr <= 0.0 || lr_end <= 0.0) throw ConfigError("probe: learning rates must be positive");
    if (folds < 1) throw ConfigError("probe: folds must be >= 1");
    if (batch_size <= 0) throw ConfigError("probe: batch_size must be positive");
    if (weight_decay < 0.0) throw ConfigError("probe: weight_decay must be >= 0");
  }
};

struct LayerWeights {
  VecD raw;

  VecD effective() const;  // softmax(raw), sums to 1
};

// One clip prepared for probing: per-layer mean-pooled token embeddings
// (n_layers x d_model) plus its label.
struct ProbeExample {
  MatD layer_pooled;
  int label = -1;
};

// Runs the frozen encoder over unmasked patches and mean-pools each layer's
// tokens. Rows follow encoder layer order (block outputs only).
MatD extract_layer_pooled(const model::ModelConfig& mc, const model::ModelState<float>& state,
                          const MatF& patch_vecs);

// Softmax-weighted mixture of per-layer pooled embeddings.
VecD aggregate(const MatD& layer_pooled, const LayerWeights& w);

struct ProbeModel {
  ProbeConfig::Head head = ProbeConfig::Head::kLinear;
  LayerWeights weights;
  MatD fc1_w;  // mlp head only
  VecD fc1_b;
  MatD out_w;
  VecD out_b;
};

ProbeModel init_probe(const ProbeConfig& cfg, int n_layers, int d_model, uint64_t seed);

VecD probe_logits(const ProbeModel& m, const MatD& layer_pooled);
int probe_predict(const ProbeModel& m, const MatD& layer_pooled);

// Trains mixture weights + head on the given examples with the adaptive
// optimizer and cosine lr decay to cfg.lr_end. Only the probe parameters
// move; the encoder is not referenced at all.
ProbeModel train_probe(const std::vector<ProbeExample>& examples,
                       const std::vector<size_t>& train_indices, const ProbeConfig& cfg,
                       int n_layers, int d_model, uint64_t fold_seed);

double probe_accuracy(const ProbeModel& m, const std::vector<ProbeExample>& examples,
                      const std::vector<size_t>& indices);

// Deterministic stratified fold ids (one per example, in [0, folds)).
// Every class must appear in every fold.
std::vector<int> stratified_folds(const std::vector<ProbeExample>& examples, int folds,
                                  uint64_t seed, int n_classes);

struct ProbeReport {
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
  uint64_t encoder_hash_before = 0;
  uint64_t encoder_hash_after = 0;
};

struct ProbeClip {
  std::string id;
  MatF patch_vecs;
  int label = -1;
};

// Full harness: extract embeddings under the frozen encoder, k-fold train
// and evaluate, and verify the encoder parameters are bit-identical
// afterwards (a mismatch is a hard NumericError).
ProbeReport run_probe(const model::ModelConfig& mc, model::ModelState<float>& state,
                      const std::vector<ProbeClip>& clips, const ProbeConfig& cfg);

}  // namespace maskspec::probe
