#include "spacealign/nn.hpp"

#include <cmath>

namespace spacealign::nn {

std::size_t ParameterSet::add(std::string name, Mat init) {
  names.push_back(std::move(name));
  values.push_back(std::move(init));
  return values.size() - 1;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  out.names = names;
  out.values.reserve(values.size());
  for (const Mat& v : values) out.values.push_back(Mat::Zero(v.rows(), v.cols()));
  return out;
}

void ParameterSet::set_zero() {
  for (Mat& v : values) v.setZero();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Mat& v : values) n += static_cast<std::size_t>(v.size());
  return n;
}

Vec ParameterSet::flatten() const {
  Vec flat(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index offset = 0;
  for (const Mat& v : values) {
    flat.segment(offset, v.size()) = Eigen::Map<const Vec>(v.data(), v.size());
    offset += v.size();
  }
  return flat;
}

void ParameterSet::unflatten(const Vec& flat) {
  require(flat.size() == static_cast<Eigen::Index>(scalar_count()), "unflatten: size mismatch");
  Eigen::Index offset = 0;
  for (Mat& v : values) {
    Eigen::Map<Vec>(v.data(), v.size()) = flat.segment(offset, v.size());
    offset += v.size();
  }
}

void ParameterSet::round_to_float() {
  for (Mat& v : values) v = v.cast<float>().cast<double>();
}

// ---------------------------------------------------------------------------

Dense Dense::create(ParameterSet& params, const std::string& name, int in, int out, Rng& rng, double gain) {
  Dense d;
  d.in = in;
  d.out = out;
  const double limit = gain * std::sqrt(6.0 / (in + out));
  Mat w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  d.weight = params.add(name + ".weight", std::move(w));
  d.bias = params.add(name + ".bias", Mat::Zero(1, out));
  return d;
}

Mat Dense::forward(const ParameterSet& p, const Mat& x) const {
  require(x.cols() == in, "dense: input width mismatch");
  Mat y = x * p[weight];
  y.rowwise() += p[bias].row(0);
  return y;
}

Mat Dense::backward(const ParameterSet& p, const Mat& x, const Mat& dy, ParameterSet* grads) const {
  if (grads) {
    (*grads)[weight].noalias() += x.transpose() * dy;
    (*grads)[bias] += dy.colwise().sum();
  }
  return dy * p[weight].transpose();
}

// ---------------------------------------------------------------------------

Conv2d Conv2d::create(ParameterSet& params, const std::string& name, int cin, int cout, int kernel, int stride,
                      int pad, int in_h, int in_w, Rng& rng) {
  Conv2d c;
  c.cin = cin;
  c.cout = cout;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.in_h = in_h;
  c.in_w = in_w;
  c.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  c.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  require(c.out_h > 0 && c.out_w > 0, "conv: kernel larger than padded input");
  const int fan_in = kernel * kernel * cin;
  const int fan_out = kernel * kernel * cout;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Mat w(fan_in, cout);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  c.weight = params.add(name + ".weight", std::move(w));
  c.bias = params.add(name + ".bias", Mat::Zero(1, cout));
  return c;
}

Mat Conv2d::im2col(const Mat& x, int batch) const {
  require(x.rows() == static_cast<Eigen::Index>(batch) * in_h * in_w && x.cols() == cin, "conv: input shape mismatch");
  const int patch = kernel * kernel * cin;
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(batch) * out_h * out_w, patch);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double* dst = cols.row((static_cast<Eigen::Index>(n) * out_h + oy) * out_w + ox).data();
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in_w) continue;
            const double* src = x.row((static_cast<Eigen::Index>(n) * in_h + iy) * in_w + ix).data();
            double* out = dst + (ky * kernel + kx) * cin;
            for (int c = 0; c < cin; ++c) out[c] = src[c];
          }
        }
      }
    }
  }
  return cols;
}

Mat Conv2d::forward(const ParameterSet& p, const Mat& cols) const {
  Mat y = cols * p[weight];
  y.rowwise() += p[bias].row(0);
  return y;
}

Mat Conv2d::backward(const ParameterSet& p, const Mat& cols, const Mat& dy, int batch, ParameterSet* grads,
                     bool need_input_grad) const {
  if (grads) {
    (*grads)[weight].noalias() += cols.transpose() * dy;
    (*grads)[bias] += dy.colwise().sum();
  }
  if (!need_input_grad) return Mat();
  const Mat dcols = dy * p[weight].transpose();
  Mat dx = Mat::Zero(static_cast<Eigen::Index>(batch) * in_h * in_w, cin);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const double* src = dcols.row((static_cast<Eigen::Index>(n) * out_h + oy) * out_w + ox).data();
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in_w) continue;
            double* out = dx.row((static_cast<Eigen::Index>(n) * in_h + iy) * in_w + ix).data();
            const double* in = src + (ky * kernel + kx) * cin;
            for (int c = 0; c < cin; ++c) out[c] += in[c];
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Mat silu(const Mat& x) {
  return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

Mat silu_backward(const Mat& x, const Mat& dy) {
  return x.binaryExpr(dy, [](double v, double g) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return g * s * (1.0 + v * (1.0 - s));
  });
}

Mat tanh(const Mat& x) {
  return x.unaryExpr([](double v) { return std::tanh(v); });
}

Mat tanh_backward(const Mat& y, const Mat& dy) { return dy.cwiseProduct((1.0 - y.array().square()).matrix()); }

Mat normalize_rows(const Mat& x, Vec* norms) {
  Vec n = x.rowwise().norm();
  require((n.array() > 0.0).all(), "normalize_rows: zero vector");
  if (norms) *norms = n;
  return n.cwiseInverse().asDiagonal() * x;
}

Mat normalize_rows_backward(const Mat& y, const Vec& norms, const Mat& dy) {
  const Vec dots = (y.cwiseProduct(dy)).rowwise().sum();
  Mat dx = dy - dots.asDiagonal() * y;
  return norms.cwiseInverse().asDiagonal() * dx;
}

// ---------------------------------------------------------------------------

Adam::Adam(const ParameterSet& params, AdamConfig cfg)
    : cfg_(cfg), first_(params.zeros_like()), second_(params.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads, double learning_rate) {
  require(params.size() == grads.size() && params.size() == first_.size(), "adam: parameter set mismatch");
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = first_[i].array();
    auto v = second_[i].array();
    const auto g = grads[i].array();
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
    params[i].array() -= learning_rate * (m / c1) / ((v / c2).sqrt() + cfg_.epsilon);
  }
}

double MultiStepSchedule::rate(int step) const {
  double lr = base;
  for (double m : milestones) {
    if (step >= static_cast<int>(m * total_steps)) lr *= factor;
  }
  return lr;
}

}  // namespace spacealign::nn
