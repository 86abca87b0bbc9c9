#pragma once

// Test-time path: encoder + classifier only, softmax probabilities, argmax
// labels, and the accuracy / macro-F1 metrics.

#include <algorithm>
#include <vector>

#include "slarda/data.hpp"
#include "slarda/models.hpp"

namespace slarda {

struct Prediction {
  Tensor probabilities;  ///< [B x C], rows sum to 1
  std::vector<int> labels;
};

/// argmax with ties broken by the lowest class index.
inline int argmax_row(const Tensor& m, std::size_t row) {
  const auto C = m.dim(1);
  int best = 0;
  for (std::size_t c = 1; c < C; ++c)
    if (m.at(row, c) > m.at(row, static_cast<std::size_t>(best))) best = static_cast<int>(c);
  return best;
}

/// p = softmax(C(E(X))) with the encoder in evaluation mode; no graph is kept.
inline Prediction predict_target(ModelBundle& bundle, const Tensor& batch) {
  const auto& s = batch.shape;
  const auto& arch = bundle.architecture();
  if (s.size() != 3 || s[1] != arch.encoder.input_channels)
    throw ShapeError("predict_target: batch shape " + to_string(s) + " does not match the model's " +
                     std::to_string(arch.encoder.input_channels) + " input channels");
  auto features = bundle.encoder(constant(batch), false);
  auto logits = bundle.classifier(detach(features));
  Prediction p;
  p.probabilities = ops::softmax_rows(logits->value);
  p.labels.resize(s[0]);
  for (std::size_t i = 0; i < s[0]; ++i) p.labels[i] = argmax_row(p.probabilities, i);
  return p;
}

/// Predicted labels for the selected samples, evaluated in chunks.
inline std::vector<int> predict_labels(ModelBundle& bundle, const DomainDataset& ds,
                                       const std::vector<std::size_t>& indices, std::size_t chunk = 256) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); i += chunk) {
    const auto n = std::min(chunk, indices.size() - i);
    std::span<const std::size_t> idx(indices.data() + i, n);
    auto p = predict_target(bundle, make_batch(ds, idx));
    out.insert(out.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

/// Accuracy in percent.
inline double accuracy_percent(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw ShapeError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
  return 100.0 * static_cast<double>(ok) / static_cast<double>(truth.size());
}

/// Macro-averaged F1 in percent over classes 0..C-1; classes absent from both
/// truth and prediction are skipped.
inline double macro_f1_percent(std::span<const int> truth, std::span<const int> pred, std::size_t num_classes) {
  if (truth.size() != pred.size()) throw ShapeError("macro_f1: length mismatch");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == static_cast<int>(c), p = pred[i] == static_cast<int>(c);
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    if (tp + fp + fn == 0) continue;
    total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++counted;
  }
  return counted ? 100.0 * total / static_cast<double>(counted) : 0.0;
}

struct EvalMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Metrics on the selected samples; labels are read for evaluation only.
inline EvalMetrics evaluate(ModelBundle& bundle, const DomainDataset& ds, const std::vector<std::size_t>& indices) {
  const auto pred = predict_labels(bundle, ds, indices);
  const auto truth = batch_labels(ds, indices, /*for_evaluation=*/true);
  return {accuracy_percent(truth, pred), macro_f1_percent(truth, pred, ds.num_classes)};
}

}  // namespace slarda
