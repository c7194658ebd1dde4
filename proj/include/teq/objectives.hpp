#pragma once

// Loss functions. Every contrastive term uses the stop-gradient similarity
//   d(x, y) = exp(cos(x, stopgrad(y)) / lambda)
// so gradients only ever reach the anchor argument.

#include <span>
#include <vector>

#include "teq/nn.hpp"

namespace teq {

constexpr double kDefaultTemperature = 0.1;

/// exp(cos(x, y) / lambda). Throws on zero-norm input ("degenerate code").
double similarity(std::span<const double> x, std::span<const double> y,
                  double lambda = kDefaultTemperature);

template <class T>
struct NceResult {
  T loss = T(0);
  nn::Matrix<T> grad;  // dLoss/dCodes with partners held constant
};

/// Contrastive loss over codes grouped in pairs. Each code is an anchor once;
/// its positive is the other member of its group and its negatives are, for
/// every other group, the member occupying the positive's slot (first or
/// second occurrence). Loss is the mean over anchors.
///
/// `targets`, when given, supplies the detached partner codes instead of
/// `codes` itself (same shape). Gradients are taken w.r.t. `codes` only.
template <class T>
NceResult<T> paired_nce_loss(const nn::Matrix<T>& codes, std::span<const int> group_ids,
                             T lambda, const nn::Matrix<T>* targets = nullptr);

/// Equivariance objective; ids identify couples (one relative transformation
/// shared by the two videos of a couple).
template <class T>
NceResult<T> equivariance_loss(const nn::Matrix<T>& codes, std::span<const int> couple_ids,
                               T lambda = T(kDefaultTemperature),
                               const nn::Matrix<T>* targets = nullptr);

/// Instance discrimination objective; ids identify source instances.
template <class T>
NceResult<T> instance_loss(const nn::Matrix<T>& codes, std::span<const int> instance_ids,
                           T lambda = T(kDefaultTemperature),
                           const nn::Matrix<T>* targets = nullptr);

template <class T>
struct CrossEntropyResult {
  T loss = T(0);
  nn::Matrix<T> grad;  // dLoss/dLogits
};

/// Mean softmax cross-entropy. Throws on a label outside [0, classes).
template <class T>
CrossEntropyResult<T> cross_entropy(const nn::Matrix<T>& logits, std::span<const int> labels);

template <class T>
struct AuxTask {
  bool enabled = true;
  const nn::Matrix<T>* logits = nullptr;
  std::span<const int> labels;
};

template <class T>
struct AuxResult {
  CrossEntropyResult<T> speed, direction, overlap;
};

/// Cross-entropies of the three heads. A disabled head yields loss 0 and a
/// zero gradient of its logits' shape.
template <class T>
AuxResult<T> aux_losses(const AuxTask<T>& speed, const AuxTask<T>& direction,
                        const AuxTask<T>& overlap);

struct LossWeights {
  double equi = 1.0;
  double inst = 1.0;
  double aux_speed = 1.0;
  double aux_direction = 1.0;
  double aux_overlap = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double equi = 0.0;
  double inst = 0.0;
  double aux_speed = 0.0;
  double aux_direction = 0.0;
  double aux_overlap = 0.0;
  double total = 0.0;
};

/// Fills `total` as the weighted sum of the components.
LossBreakdown total_loss(const LossWeights& weights, LossBreakdown components);

}  // namespace teq
