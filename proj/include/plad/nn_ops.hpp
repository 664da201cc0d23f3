#pragma once

#include <vector>

#include "plad/autograd.hpp"

// Small graph-building compositions shared by the network modules.
namespace plad::nn {

inline ag::Tensor linear(const ag::Tensor& x, const ag::Tensor& w,
                         const ag::Tensor& b) {
  return ag::add_rowvec(ag::matmul(x, w), b);
}

// Repeat a [1, c] row `rows` times. The zeros carrier takes no gradient; the
// row receives the column sums through add_rowvec.
inline ag::Tensor broadcast_row(const ag::Tensor& row, int rows) {
  return ag::add_rowvec(ag::Tensor::zeros(rows, row.cols()), row);
}

// Broadcast a [1, 1] scalar tensor to [rows, cols].
inline ag::Tensor broadcast_scalar(const ag::Tensor& s, int rows, int cols) {
  ag::Tensor ones_row = ag::Tensor::constant(1, cols, std::vector<double>(cols, 1.0));
  return broadcast_row(ag::matmul(s, ones_row), rows);
}

// Column j of a as a [rows, 1] tensor.
inline ag::Tensor take_col(const ag::Tensor& a, int j) {
  return ag::transpose(ag::take_rows(ag::transpose(a), j, 1));
}

}  // namespace plad::nn
