#include <algorithm>

#include "fedtt/error.hpp"
#include "fedtt/kernels.hpp"
#include "fedtt/tt.hpp"

namespace fedtt {

// Column factors are swept right to left against the reshaped input; each
// step maps (B*M, k_j*r_{j+1}) -> (B*M, r_j). The row factors then expand the
// resulting (r_n, B) state right to left into (P, B), batch index innermost.
Matrix TtContraction::forward(const TTWeight& w, const Matrix& x) {
  if (x.cols != w.cols())
    throw ShapeError("TT contraction: input width " + std::to_string(x.cols) + " != " +
                     std::to_string(w.cols()));
  const std::size_t J = w.order();
  const std::size_t n = w.row_modes();
  const auto d = w.dims();
  const auto& r = w.ranks();
  const std::size_t B = x.rows;
  batch_ = B;
  col_inputs_.assign(J - n, {});
  row_inputs_.assign(n, {});

  std::vector<double> state = x.data;
  std::size_t rows = B * w.cols();  // B * M_j * k_j, narrowed each step
  for (std::size_t j = J; j-- > n;) {
    const std::size_t inner = d[j] * r[j + 1];
    rows /= d[j];
    std::vector<double> out(rows * r[j], 0.0);
    kernels::gemm_nt(rows, r[j], inner, state.data(), inner, w.factor(j).data(), inner, out.data(),
                     r[j]);
    col_inputs_[j - n] = std::move(state);
    state = std::move(out);
  }
  // state: B x r_n  ->  r_n x B
  std::vector<double> s(state.size());
  const std::size_t rn = r[n];
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < rn; ++a) s[a * B + b] = state[b * rn + a];

  std::size_t cols = B;
  for (std::size_t j = n; j-- > 0;) {
    const std::size_t outer = r[j] * d[j];
    std::vector<double> out(outer * cols, 0.0);
    kernels::gemm_nn(outer, cols, r[j + 1], w.factor(j).data(), r[j + 1], s.data(), cols,
                     out.data(), cols);
    row_inputs_[j] = std::move(s);
    s = std::move(out);
    cols *= d[j];
  }
  const std::size_t P = w.rows();
  Matrix y(B, P);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t b = 0; b < B; ++b) y(b, p) = s[p * B + b];
  return y;
}

Matrix TtContraction::backward(const TTWeight& w, const Matrix& dy,
                               std::span<const bool> need_grad, std::vector<Tensor>& factor_grads,
                               bool want_dx) {
  const std::size_t J = w.order();
  const std::size_t n = w.row_modes();
  const auto d = w.dims();
  const auto& r = w.ranks();
  const std::size_t B = batch_;
  const std::size_t P = w.rows();
  if (dy.rows != B || dy.cols != P)
    throw ShapeError("TT contraction backward: upstream gradient is " + std::to_string(dy.rows) +
                     "x" + std::to_string(dy.cols) + ", expected " + std::to_string(B) + "x" +
                     std::to_string(P));
  if (need_grad.size() != J) throw ShapeError("TT contraction backward: mask length != factors");
  if (factor_grads.size() != J) {
    factor_grads.clear();
    for (std::size_t j = 0; j < J; ++j) factor_grads.emplace_back(w.factor(j).shape());
  }

  // Cols at the input of row step j: B * prod(d[j+1..n-1]).
  std::vector<std::size_t> row_cols(n, B);
  {
    std::size_t c = B;
    for (std::size_t j = n; j-- > 0;) {
      row_cols[j] = c;
      c *= d[j];
    }
  }

  std::vector<double> ds(P * B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p) ds[p * B + b] = dy(b, p);

  const bool need_cols = want_dx || std::any_of(need_grad.begin() + static_cast<std::ptrdiff_t>(n),
                                                need_grad.end(), [](bool v) { return v; });
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t outer = r[j] * d[j];
    const std::size_t cols = row_cols[j];
    const std::vector<double>& s_in = row_inputs_[j];
    if (need_grad[j])
      kernels::gemm_nt(outer, r[j + 1], cols, ds.data(), cols, s_in.data(), cols,
                       factor_grads[j].data(), r[j + 1]);
    const bool downstream =
        need_cols || std::any_of(need_grad.begin() + static_cast<std::ptrdiff_t>(j + 1),
                                 need_grad.begin() + static_cast<std::ptrdiff_t>(n),
                                 [](bool v) { return v; });
    if (!downstream) return Matrix();
    std::vector<double> ds_in(r[j + 1] * cols, 0.0);
    kernels::gemm_tn(r[j + 1], cols, outer, w.factor(j).data(), r[j + 1], ds.data(), cols,
                     ds_in.data(), cols);
    ds = std::move(ds_in);
  }
  // ds: r_n x B -> B x r_n
  const std::size_t rn = r[n];
  std::vector<double> dout(B * rn);
  for (std::size_t a = 0; a < rn; ++a)
    for (std::size_t b = 0; b < B; ++b) dout[b * rn + a] = ds[a * B + b];

  std::size_t rows = B;
  for (std::size_t j = n; j < J; ++j) {
    const std::size_t inner = d[j] * r[j + 1];
    const std::vector<double>& in = col_inputs_[j - n];
    if (need_grad[j])
      kernels::gemm_tn(r[j], inner, rows, dout.data(), r[j], in.data(), inner,
                       factor_grads[j].data(), inner);
    const bool downstream =
        want_dx || std::any_of(need_grad.begin() + static_cast<std::ptrdiff_t>(j + 1),
                               need_grad.end(), [](bool v) { return v; });
    if (!downstream) return Matrix();
    std::vector<double> din(rows * inner, 0.0);
    kernels::gemm_nn(rows, inner, r[j], dout.data(), r[j], w.factor(j).data(), inner, din.data(),
                     inner);
    dout = std::move(din);
    rows *= d[j];
  }
  return Matrix(B, w.cols(), std::move(dout));
}

}  // namespace fedtt
