#include "softorder/ops.hpp"

#include <cmath>

namespace softorder {

Tensor affine_forward(const Tensor& W, const Tensor& bias, const Tensor& x) {
  if (W.rank() != 2 || x.rank() != 2 || W.dim(1) != x.dim(1))
    throw ShapeError("affine_forward: weight " + W.shape_str() + " incompatible with input " +
                     x.shape_str());
  const Index batch = x.dim(0), m_out = W.dim(0), m_in = W.dim(1);
  if (bias.size() != m_out)
    throw ShapeError("affine_forward: bias " + bias.shape_str() + " does not match weight " +
                     W.shape_str());
  Tensor out({batch, m_out});
  out.matrix(batch, m_out).noalias() = x.matrix(batch, m_in) * W.matrix(m_out, m_in).transpose();
  out.matrix(batch, m_out).rowwise() +=
      Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.array().data(), m_out);
  return out;
}

namespace {

// Lay out 3x3 patches of one image as rows: (h*w) x (c*9), padding with zeros.
void im2col3x3(const Tensor& x, Index item, Index c, Index h, Index w, RowMatrixXs& cols) {
  cols.setZero(h * w, c * 9);
  const Index base = item * c * h * w;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const Index row = i * w + j;
        for (Index di = -1; di <= 1; ++di) {
          const Index ii = i + di;
          if (ii < 0 || ii >= h) continue;
          for (Index dj = -1; dj <= 1; ++dj) {
            const Index jj = j + dj;
            if (jj < 0 || jj >= w) continue;
            cols(row, ch * 9 + (di + 1) * 3 + (dj + 1)) = x[base + (ch * h + ii) * w + jj];
          }
        }
      }
    }
  }
}

} // namespace

Tensor conv2d_forward(const Tensor& K, const Tensor& bias, const Tensor& x) {
  if (K.rank() != 4 || K.dim(2) != 3 || K.dim(3) != 3)
    throw ShapeError("conv2d_forward: kernel must be [c_out x c_in x 3 x 3], got " + K.shape_str());
  if (x.rank() != 4 || x.dim(1) != K.dim(1))
    throw ShapeError("conv2d_forward: input " + x.shape_str() + " channel count does not match kernel " +
                     K.shape_str());
  const Index batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3), c_out = K.dim(0);
  if (bias.size() != c_out)
    throw ShapeError("conv2d_forward: bias " + bias.shape_str() + " does not match kernel " +
                     K.shape_str());
  Tensor out({batch, c_out, h, w});
  RowMatrixXs cols;
  ConstMatrixMap kmat = K.matrix(c_out, c_in * 9);
  for (Index b = 0; b < batch; ++b) {
    im2col3x3(x, b, c_in, h, w, cols);
    // (h*w) x c_out
    RowMatrixXs y = cols * kmat.transpose();
    for (Index f = 0; f < c_out; ++f) {
      const Index base = ((b * c_out) + f) * h * w;
      for (Index p = 0; p < h * w; ++p) out[base + p] = y(p, f) + bias[f];
    }
  }
  return out;
}

Tensor maxpool2x2(const Tensor& x, std::vector<Index>* argmax) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2)
    throw ShapeError("maxpool2x2: need [batch x c x h x w] with h,w >= 2, got " + x.shape_str());
  const Index batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / 2, ow = w / 2;
  Tensor out({batch, c, oh, ow});
  if (argmax) argmax->assign(static_cast<size_t>(out.size()), 0);
  Index o = 0;
  for (Index b = 0; b < batch; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (b * c + ch) * h * w;
      for (Index i = 0; i < oh; ++i) {
        for (Index j = 0; j < ow; ++j, ++o) {
          Index best = base + (2 * i) * w + 2 * j;
          for (Index di = 0; di < 2; ++di)
            for (Index dj = 0; dj < 2; ++dj) {
              const Index idx = base + (2 * i + di) * w + (2 * j + dj);
              if (x[idx] > x[best]) best = idx;
            }
          out[o] = x[best];
          if (argmax) (*argmax)[static_cast<size_t>(o)] = best;
        }
      }
    }
  }
  return out;
}

Tensor activate(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::Identity:
      return x;
    case Activation::Relu: {
      Tensor y = x;
      y.array() = y.array().max(Scalar(0));
      return y;
    }
    case Activation::Sigmoid: {
      Tensor y = x;
      y.array() = Scalar(1) / (Scalar(1) + (-y.array()).exp());
      return y;
    }
  }
  throw ContractError("activate: unknown kind");
}

Tensor softmax_axis(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw ContractError("softmax_axis: axis out of range");
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  const Index len = x.dim(axis);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor y = x;
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      Scalar mx = y[(o * len) * inner + in];
      for (Index j = 1; j < len; ++j) mx = std::max(mx, y[(o * len + j) * inner + in]);
      Scalar sum = 0;
      for (Index j = 0; j < len; ++j) {
        const Index idx = (o * len + j) * inner + in;
        y[idx] = std::exp(y[idx] - mx);
        sum += y[idx];
      }
      for (Index j = 0; j < len; ++j) y[(o * len + j) * inner + in] /= sum;
    }
  }
  return y;
}

Tensor finite_difference_grad(const std::function<Scalar(const Tensor&)>& f, const Tensor& x,
                              Scalar h) {
  if (h <= 0) throw ContractError("finite_difference_grad: h must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe[i];
    probe[i] = orig + h;
    const Scalar fp = f(probe);
    probe[i] = orig - h;
    const Scalar fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

} // namespace softorder
