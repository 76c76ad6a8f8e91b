#include "cirl/representation.hpp"

#include <cmath>
#include <vector>

#include "cirl/error.hpp"
#include "cirl/kernels.hpp"

namespace cirl {

namespace {

template <class T>
void check_batch(const Tensor<T>& r, const char* who) {
  require(r.rank() == 2, std::string(who) + ": expected a B x N matrix");
  require(r.dim(0) >= 2, std::string(who) + ": needs at least 2 samples");
}

// Centers the columns of r and reports each column's centered L2 norm. A
// column is degenerate when its population std is <= kDegenerateStd, i.e.
// norm <= kDegenerateStd * sqrt(B).
template <class T>
void center_columns(const Tensor<T>& r, Tensor<T>& centered,
                    std::vector<T>& norm, std::vector<bool>& degenerate) {
  const std::size_t b = r.dim(0), n = r.dim(1);
  std::vector<T> mean(n, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = r.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) mean[j] += row[j];
  }
  const T inv_b = T(1) / static_cast<T>(b);
  for (std::size_t j = 0; j < n; ++j) mean[j] *= inv_b;

  centered = Tensor<T>({b, n});
  std::vector<T> sq(n, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = r.data() + i * n;
    T* crow = centered.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T v = row[j] - mean[j];
      crow[j] = v;
      sq[j] += v * v;
    }
  }
  norm.assign(n, T(0));
  degenerate.assign(n, false);
  const T thresh = static_cast<T>(kDegenerateStd) *
                   std::sqrt(static_cast<T>(b));
  for (std::size_t j = 0; j < n; ++j) {
    norm[j] = std::sqrt(sq[j]);
    degenerate[j] = norm[j] <= thresh;
  }
}

// Unit-normalizes the centered columns in place; degenerate columns become 0.
template <class T>
void normalize_columns(Tensor<T>& centered, const std::vector<T>& norm,
                       const std::vector<bool>& degenerate) {
  const std::size_t b = centered.dim(0), n = centered.dim(1);
  std::vector<T> inv(n);
  for (std::size_t j = 0; j < n; ++j)
    inv[j] = degenerate[j] ? T(0) : T(1) / norm[j];
  for (std::size_t i = 0; i < b; ++i) {
    T* row = centered.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv[j];
  }
}

}  // namespace

template <class T>
Tensor<T> zscore_columns(const Tensor<T>& r) {
  check_batch(r, "zscore_columns");
  const std::size_t b = r.dim(0), n = r.dim(1);
  Tensor<T> z;
  std::vector<T> norm;
  std::vector<bool> degenerate;
  center_columns(r, z, norm, degenerate);
  // Population std = norm / sqrt(B), so z = centered * sqrt(B) / norm.
  const T root_b = std::sqrt(static_cast<T>(b));
  std::vector<T> inv(n);
  for (std::size_t j = 0; j < n; ++j)
    inv[j] = degenerate[j] ? T(0) : root_b / norm[j];
  for (std::size_t i = 0; i < b; ++i) {
    T* row = z.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv[j];
  }
  return z;
}

template <class T>
Tensor<T> correlation_matrix(const Tensor<T>& ro, const Tensor<T>& ra) {
  check_batch(ro, "correlation_matrix");
  require(ro.same_shape(ra), "correlation_matrix: Ro/Ra shape mismatch");
  const std::size_t b = ro.dim(0), n = ro.dim(1);

  Tensor<T> uo, ua;
  std::vector<T> norm_o, norm_a;
  std::vector<bool> deg_o, deg_a;
  center_columns(ro, uo, norm_o, deg_o);
  center_columns(ra, ua, norm_a, deg_a);
  normalize_columns(uo, norm_o, deg_o);
  normalize_columns(ua, norm_a, deg_a);

  // C = Uo^T * Ua; unit columns make this the cosine similarity, which is
  // unchanged by the z-score's per-column scaling.
  Tensor<T> c({n, n});
  kernels::gemm<T>(true, false, n, n, b, T(1), uo.data(), n, ua.data(), n,
                   T(0), c.data(), n);
  return c;
}

template <class T>
T factorization_loss(const Tensor<T>& c) {
  require(c.rank() == 2 && c.dim(0) == c.dim(1),
          "factorization_loss: C must be square");
  const std::size_t n = c.dim(0);
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T d = c(i, j) - (i == j ? T(1) : T(0));
      acc += d * d;
    }
  }
  return acc / T(2);
}

template <class T>
T independence_degree(const Tensor<T>& c) {
  require(c.rank() == 2 && c.dim(0) == c.dim(1),
          "independence_degree: C must be square");
  const std::size_t n = c.dim(0);
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      acc += c(i, j) * c(i, j);
    }
  }
  return acc;
}

template <class T>
FactorizationGrad<T> factorization_loss_grad(const Tensor<T>& ro,
                                             const Tensor<T>& ra) {
  check_batch(ro, "factorization_loss_grad");
  require(ro.same_shape(ra), "factorization_loss_grad: Ro/Ra shape mismatch");
  const std::size_t b = ro.dim(0), n = ro.dim(1);

  Tensor<T> uo, ua;
  std::vector<T> norm_o, norm_a;
  std::vector<bool> deg_o, deg_a;
  center_columns(ro, uo, norm_o, deg_o);
  center_columns(ra, ua, norm_a, deg_a);
  normalize_columns(uo, norm_o, deg_o);
  normalize_columns(ua, norm_a, deg_a);

  FactorizationGrad<T> out;
  out.c = Tensor<T>({n, n});
  kernels::gemm<T>(true, false, n, n, b, T(1), uo.data(), n, ua.data(), n,
                   T(0), out.c.data(), n);
  out.loss = factorization_loss(out.c);

  // G = dL/dC = C - I.
  Tensor<T> g = out.c;
  for (std::size_t i = 0; i < n; ++i) g(i, i) -= T(1);

  // dL/dUo = Ua * G^T, dL/dUa = Uo * G.
  Tensor<T> duo({b, n}), dua({b, n});
  kernels::gemm<T>(false, true, b, n, n, T(1), ua.data(), n, g.data(), n, T(0),
                   duo.data(), n);
  kernels::gemm<T>(false, false, b, n, n, T(1), uo.data(), n, g.data(), n,
                   T(0), dua.data(), n);

  // Through u = c / ||c||: dc = (du - u * (u . du)) / ||c||, then through the
  // centering: dr = dc - mean(dc). Degenerate columns carry no gradient.
  auto through_normalization = [&](Tensor<T>& du, const Tensor<T>& u,
                                   const std::vector<T>& norm,
                                   const std::vector<bool>& degenerate) {
    std::vector<T> udotdu(n, T(0));
    for (std::size_t i = 0; i < b; ++i) {
      const T* urow = u.data() + i * n;
      const T* durow = du.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) udotdu[j] += urow[j] * durow[j];
    }
    std::vector<T> colmean(n, T(0));
    for (std::size_t i = 0; i < b; ++i) {
      const T* urow = u.data() + i * n;
      T* durow = du.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T dc = degenerate[j]
                         ? T(0)
                         : (durow[j] - urow[j] * udotdu[j]) / norm[j];
        durow[j] = dc;
        colmean[j] += dc;
      }
    }
    const T inv_b = T(1) / static_cast<T>(b);
    for (std::size_t j = 0; j < n; ++j) colmean[j] *= inv_b;
    for (std::size_t i = 0; i < b; ++i) {
      T* durow = du.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) durow[j] -= colmean[j];
    }
  };
  through_normalization(duo, uo, norm_o, deg_o);
  through_normalization(dua, ua, norm_a, deg_a);

  out.d_ro = std::move(duo);
  out.d_ra = std::move(dua);
  return out;
}

template Tensor<float> zscore_columns<float>(const Tensor<float>&);
template Tensor<double> zscore_columns<double>(const Tensor<double>&);
template Tensor<float> correlation_matrix<float>(const Tensor<float>&,
                                                 const Tensor<float>&);
template Tensor<double> correlation_matrix<double>(const Tensor<double>&,
                                                   const Tensor<double>&);
template float factorization_loss<float>(const Tensor<float>&);
template double factorization_loss<double>(const Tensor<double>&);
template float independence_degree<float>(const Tensor<float>&);
template double independence_degree<double>(const Tensor<double>&);
template struct FactorizationGrad<float>;
template struct FactorizationGrad<double>;
template FactorizationGrad<float> factorization_loss_grad<float>(
    const Tensor<float>&, const Tensor<float>&);
template FactorizationGrad<double> factorization_loss_grad<double>(
    const Tensor<double>&, const Tensor<double>&);

}  // namespace cirl
