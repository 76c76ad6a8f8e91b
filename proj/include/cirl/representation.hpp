#pragma once

#include "cirl/tensor.hpp"

namespace cirl {

// Columns with population standard deviation at or below this are treated as
// degenerate: z-scored to all zeros, and their correlation entries are 0.
inline constexpr double kDegenerateStd = 1e-8;

// Column-wise Z-score of a B x N representation batch (population std).
// Near-constant columns are mapped to zeros rather than raising, since dead
// features are common early in training.
template <class T>
Tensor<T> zscore_columns(const Tensor<T>& r);

// Cross-correlation matrix between feature columns of the original and
// augmented representation batches: C_ij is the cosine similarity of the
// z-scored i-th column of ro and j-th column of ra, which equals the Pearson
// correlation of the raw columns. Entries touching a degenerate column are 0.
template <class T>
Tensor<T> correlation_matrix(const Tensor<T>& ro, const Tensor<T>& ra);

// (1/2) * ||C - I||_F^2 over an N x N correlation matrix.
template <class T>
T factorization_loss(const Tensor<T>& c);

// ||C||_F^2 - ||diag(C)||_2^2: squared off-diagonal mass. Lower means the
// feature dimensions are closer to pairwise independent.
template <class T>
T independence_degree(const Tensor<T>& c);

// Fused forward/backward of factorization_loss(correlation_matrix(ro, ra)),
// differentiating through the z-score. Degenerate columns get zero gradient.
template <class T>
struct FactorizationGrad {
  T loss = T(0);
  Tensor<T> c;     // correlation matrix, kept for logging and probes
  Tensor<T> d_ro;  // dL/dro, shape of ro
  Tensor<T> d_ra;  // dL/dra, shape of ra
};

template <class T>
FactorizationGrad<T> factorization_loss_grad(const Tensor<T>& ro,
                                             const Tensor<T>& ra);

}  // namespace cirl
