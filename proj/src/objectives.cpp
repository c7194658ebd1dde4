#include "teq/objectives.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <map>

namespace teq {

double similarity(std::span<const double> x, std::span<const double> y, double lambda) {
  if (x.size() != y.size()) throw Error("similarity needs equal-length vectors");
  if (!(lambda > 0.0)) throw Error("temperature must be positive");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) throw Error("degenerate code");
  return std::exp(dot / (std::sqrt(nx) * std::sqrt(ny)) / lambda);
}

namespace {

struct PairSlots {
  std::vector<int> group;    // dense group index per row
  std::vector<int> slot;     // 0 for first occurrence, 1 for second
  std::vector<std::array<int, 2>> members;  // rows per dense group
};

PairSlots pair_slots(std::span<const int> ids, std::size_t rows) {
  if (ids.size() != rows) throw Error("malformed batch plan");
  PairSlots s;
  s.group.resize(rows);
  s.slot.resize(rows);
  std::map<int, int> dense;
  for (std::size_t r = 0; r < rows; ++r) {
    auto [it, fresh] = dense.try_emplace(ids[r], static_cast<int>(s.members.size()));
    const int g = it->second;
    if (fresh) {
      s.members.push_back({static_cast<int>(r), -1});
      s.slot[r] = 0;
    } else {
      if (s.members[g][1] != -1) throw Error("malformed batch plan");
      s.members[g][1] = static_cast<int>(r);
      s.slot[r] = 1;
    }
    s.group[r] = g;
  }
  for (const auto& m : s.members)
    if (m[1] == -1) throw Error("malformed batch plan");
  if (s.members.size() < 2) throw Error("malformed batch plan");
  return s;
}

}  // namespace

template <class T>
NceResult<T> paired_nce_loss(const nn::Matrix<T>& codes, std::span<const int> group_ids,
                             T lambda, const nn::Matrix<T>* targets) {
  if (!(lambda > T(0))) throw Error("temperature must be positive");
  const auto rows = static_cast<std::size_t>(codes.rows());
  const PairSlots slots = pair_slots(group_ids, rows);
  const nn::Matrix<T>& tgt = targets ? *targets : codes;
  if (tgt.rows() != codes.rows() || tgt.cols() != codes.cols()) {
    throw Error("target codes must match code shape");
  }

  NceResult<T> out;
  out.grad = nn::Matrix<T>::Zero(codes.rows(), codes.cols());
  // non-finite codes propagate as a non-finite loss for the caller to report
  if (!codes.allFinite() || !tgt.allFinite()) {
    out.loss = std::numeric_limits<T>::quiet_NaN();
    return out;
  }
  std::vector<T> norm(rows), tnorm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    norm[r] = codes.row(r).norm();
    tnorm[r] = tgt.row(r).norm();
    if (!(norm[r] > T(0)) || !(tnorm[r] > T(0))) throw Error("degenerate code");
  }

  const std::size_t groups = slots.members.size();
  std::vector<int> partners(groups);
  std::vector<T> cosv(groups), prob(groups);
  double total = 0.0;

  for (std::size_t a = 0; a < rows; ++a) {
    const int g = slots.group[a];
    const int partner_slot = 1 - slots.slot[a];
    // index 0 of `partners` is the positive, the rest are negatives
    partners[0] = slots.members[g][partner_slot];
    std::size_t n = 1;
    for (std::size_t h = 0; h < groups; ++h)
      if (static_cast<int>(h) != g) partners[n++] = slots.members[h][partner_slot];

    T max_logit = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < groups; ++j) {
      cosv[j] = codes.row(a).dot(tgt.row(partners[j])) / (norm[a] * tnorm[partners[j]]);
      max_logit = std::max(max_logit, cosv[j] / lambda);
    }
    T denom = T(0);
    for (std::size_t j = 0; j < groups; ++j) {
      prob[j] = std::exp(cosv[j] / lambda - max_logit);
      denom += prob[j];
    }
    for (auto& p : prob) p /= denom;
    total += -(cosv[0] / lambda - max_logit - std::log(denom));

    // d(-log p_pos)/d cos_j = (p_j - [j == pos]) / lambda
    auto grow = out.grad.row(a);
    for (std::size_t j = 0; j < groups; ++j) {
      const T coef = (prob[j] - (j == 0 ? T(1) : T(0))) / lambda;
      const auto y = tgt.row(partners[j]);
      grow += coef * (y / (norm[a] * tnorm[partners[j]]) -
                      cosv[j] * codes.row(a) / (norm[a] * norm[a]));
    }
  }
  out.loss = static_cast<T>(total / rows);
  out.grad /= static_cast<T>(rows);
  return out;
}

template <class T>
NceResult<T> equivariance_loss(const nn::Matrix<T>& codes, std::span<const int> couple_ids,
                               T lambda, const nn::Matrix<T>* targets) {
  return paired_nce_loss(codes, couple_ids, lambda, targets);
}

template <class T>
NceResult<T> instance_loss(const nn::Matrix<T>& codes, std::span<const int> instance_ids,
                           T lambda, const nn::Matrix<T>* targets) {
  return paired_nce_loss(codes, instance_ids, lambda, targets);
}

template <class T>
CrossEntropyResult<T> cross_entropy(const nn::Matrix<T>& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw Error("one label per logit row required");
  }
  CrossEntropyResult<T> out;
  out.grad = nn::softmax_rows(logits);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols()) throw Error("label out of range");
    const T m = logits.row(r).maxCoeff();
    const T lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, y);
    out.grad(r, y) -= T(1);
  }
  const auto n = static_cast<T>(std::max<Eigen::Index>(logits.rows(), 1));
  out.loss = static_cast<T>(total / n);
  out.grad /= n;
  return out;
}

template <class T>
AuxResult<T> aux_losses(const AuxTask<T>& speed, const AuxTask<T>& direction,
                        const AuxTask<T>& overlap) {
  auto run = [](const AuxTask<T>& task) {
    if (task.enabled) {
      if (!task.logits) throw Error("enabled auxiliary task needs logits");
      return cross_entropy(*task.logits, task.labels);
    }
    CrossEntropyResult<T> off;
    if (task.logits) off.grad = nn::Matrix<T>::Zero(task.logits->rows(), task.logits->cols());
    return off;
  };
  return {run(speed), run(direction), run(overlap)};
}

LossBreakdown total_loss(const LossWeights& w, LossBreakdown c) {
  c.total = w.equi * c.equi + w.inst * c.inst + w.aux_speed * c.aux_speed +
            w.aux_direction * c.aux_direction + w.aux_overlap * c.aux_overlap;
  return c;
}

#define TEQ_INSTANTIATE(T)                                                                   \
  template NceResult<T> paired_nce_loss<T>(const nn::Matrix<T>&, std::span<const int>, T,    \
                                           const nn::Matrix<T>*);                            \
  template NceResult<T> equivariance_loss<T>(const nn::Matrix<T>&, std::span<const int>, T,  \
                                             const nn::Matrix<T>*);                          \
  template NceResult<T> instance_loss<T>(const nn::Matrix<T>&, std::span<const int>, T,      \
                                         const nn::Matrix<T>*);                              \
  template CrossEntropyResult<T> cross_entropy<T>(const nn::Matrix<T>&, std::span<const int>); \
  template AuxResult<T> aux_losses<T>(const AuxTask<T>&, const AuxTask<T>&, const AuxTask<T>&);

TEQ_INSTANTIATE(float)
TEQ_INSTANTIATE(double)

#undef TEQ_INSTANTIATE

}  // namespace teq
