#include "stem/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stem/errors.hpp"

namespace stem {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream msg;
    msg << "matrix data length " << data_.size() << " does not match shape " << rows_ << "x"
        << cols_;
    throw ShapeError(msg.str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void affine_into(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& y) {
  const std::size_t n = x.rows();
  const std::size_t in = w.cols();
  const std::size_t out = w.rows();
  if (x.cols() != in || b.size() != out) {
    throw ShapeError("affine: x " + x.shape_string() + ", W " + w.shape_string() + ", b " +
                     b.shape_string());
  }
  // Transposed copy of W turns the inner loop into a contiguous axpy.
  std::vector<double> wt(in * out);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = w(o, i);
  }
  y = Matrix(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.row(r).data();
    const double* bias = b.data().data();
    for (std::size_t o = 0; o < out; ++o) yr[o] = bias[o];
    const double* xr = x.row(r).data();
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wrow = wt.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wrow[o];
    }
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> acc) {
  const std::size_t n = x.size();
  const double* xs = x.data();
  double* as = acc.data();
  for (std::size_t i = 0; i < n; ++i) as[i] += alpha * xs[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void softmax_inplace(std::span<double> z) {
  if (z.empty()) throw ShapeError("softmax of empty vector");
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : z) v /= total;
}

std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> out(z.begin(), z.end());
  softmax_inplace(out);
  return out;
}

}  // namespace stem
