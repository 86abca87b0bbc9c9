#pragma once

// EMA teacher, confidence-filtered pseudo labels, and the class-conditional
// alignment loss.

#include <vector>

#include "slarda/inference.hpp"

namespace slarda {

/// W_teacher <- alpha * W_teacher + (1 - alpha) * W_student, element-wise.
inline void ema_update(std::span<Tensor> teacher, std::span<const Tensor> student, double alpha) {
  if (teacher.size() != student.size()) throw ShapeError("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (teacher[i].shape != student[i].shape)
      throw ShapeError("ema_update: shape mismatch at tensor " + std::to_string(i) + ": " +
                       to_string(teacher[i].shape) + " vs " + to_string(student[i].shape));
    auto& t = teacher[i].data;
    const auto& s = student[i].data;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = alpha * t[j] + (1.0 - alpha) * s[j];
  }
}

/// Teacher weights mirroring a target bundle. Never touched by an optimizer.
struct TeacherState {
  ModelBundle model;
  double alpha = 0.996;
  long updates = 0;

  TeacherState() = default;
  TeacherState(const ModelBundle& student, double momentum) : model(student), alpha(momentum) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("teacher momentum must lie in [0, 1]");
    model.role = Role::Teacher;
    model.freeze_all();
  }
};

/// EMA over every parameter and buffer of the student bundle.
inline void ema_update(TeacherState& teacher, ModelBundle& student) {
  auto tp = teacher.model.params();
  auto sp = student.params();
  if (tp.size() != sp.size()) throw ShapeError("ema_update: teacher/student parameter count mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    Tensor& t = (*tp[i].var)->value;
    const Tensor& s = (*sp[i].var)->value;
    ema_update(std::span<Tensor>(&t, 1), std::span<const Tensor>(&s, 1), teacher.alpha);
  }
  auto tb = teacher.model.buffers();
  auto sb = student.buffers();
  for (std::size_t i = 0; i < tb.size(); ++i)
    ema_update(std::span<Tensor>(tb[i].tensor, 1), std::span<const Tensor>(sb[i].tensor, 1), teacher.alpha);
  ++teacher.updates;
}

struct PseudoLabelBatch {
  std::vector<std::size_t> retained;  ///< indices into the batch
  std::vector<int> labels;            ///< argmax class per retained index
  std::vector<double> confidences;    ///< max softmax probability per retained index
  double threshold = 0.0;
  std::size_t batch_size = 0;
  double mean_confidence = 0.0;  ///< over the whole batch

  double retained_fraction() const {
    return batch_size ? static_cast<double>(retained.size()) / static_cast<double>(batch_size) : 0.0;
  }
};

/// Keeps row i iff its maximum probability exceeds `zeta`.
inline PseudoLabelBatch select_confident(const Tensor& probabilities, double zeta) {
  if (probabilities.rank() != 2) throw ShapeError("select_confident: expected [B x C] probabilities");
  PseudoLabelBatch pl;
  pl.threshold = zeta;
  pl.batch_size = probabilities.dim(0);
  double conf_sum = 0.0;
  for (std::size_t i = 0; i < pl.batch_size; ++i) {
    const int c = argmax_row(probabilities, i);
    const double conf = probabilities.at(i, static_cast<std::size_t>(c));
    conf_sum += conf;
    if (conf > zeta) {
      pl.retained.push_back(i);
      pl.labels.push_back(c);
      pl.confidences.push_back(conf);
    }
  }
  pl.mean_confidence = pl.batch_size ? conf_sum / static_cast<double>(pl.batch_size) : 0.0;
  return pl;
}

/// Teacher forward in evaluation mode, softmax, and confidence filtering.
inline PseudoLabelBatch confident_pseudo_labels(TeacherState& teacher, const Tensor& batch, double zeta) {
  return select_confident(predict_target(teacher.model, batch).probabilities, zeta);
}

/// Mean cross-entropy of the retained rows against their pseudo labels; zero
/// when nothing is retained.
inline Var class_conditional_loss(const Var& logits, const PseudoLabelBatch& pl) {
  for (auto i : pl.retained)
    if (logits->value.rank() != 2 || i >= logits->value.dim(0))
      throw ShapeError("class_conditional_loss: retained index " + std::to_string(i) + " out of range");
  return ops::cross_entropy_rows(logits, pl.retained, pl.labels);
}

/// L_adv + lambda * L_ca
inline Var combined_target_loss(const Var& adversarial, const Var& conditional, double lambda) {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (lambda == 0.0) return adversarial;
  return ops::weighted_sum({adversarial, conditional}, {1.0, lambda});
}

}  // namespace slarda
