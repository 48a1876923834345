// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffsynth {

/// Raised when a run/module configuration violates its documented constraints.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when persisted data (corpus, checkpoint, wav) is malformed.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

/// Dense time-major matrix: rows index time steps (tokens, frames or samples),
/// columns index channels. Row-major storage, channels contiguous per step.
template <typename Real>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, Real(0)) {}

  Real& at(std::size_t t, std::size_t c) { return data[t * cols + c]; }
  Real at(std::size_t t, std::size_t c) const { return data[t * cols + c]; }

  Real* row(std::size_t t) { return data.data() + t * cols; }
  const Real* row(std::size_t t) const { return data.data() + t * cols; }

  std::span<Real> row_span(std::size_t t) { return {row(t), cols}; }
  std::span<const Real> row_span(std::size_t t) const { return {row(t), cols}; }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

template <typename Real>
Matrix<Real> operator+(const Matrix<Real>& a, const Matrix<Real>& b) {
  require(a.same_shape(b), "matrix add: shape mismatch");
  Matrix<Real> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace diffsynth
