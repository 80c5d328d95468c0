#pragma once

#include "spacealign/common.hpp"
#include "spacealign/rng.hpp"

#include <string>
#include <vector>

namespace spacealign::nn {

// Ordered, named parameter blocks. Layers refer to blocks by index so the
// same descriptor works against values, gradients and optimizer moments.
struct ParameterSet {
  std::vector<std::string> names;
  std::vector<Mat> values;

  std::size_t add(std::string name, Mat init);
  std::size_t size() const { return values.size(); }
  Mat& operator[](std::size_t i) { return values[i]; }
  const Mat& operator[](std::size_t i) const { return values[i]; }

  ParameterSet zeros_like() const;
  void set_zero();
  std::size_t scalar_count() const;
  Vec flatten() const;
  void unflatten(const Vec& flat);
  // Rounds every value through float32, matching a checkpoint round trip.
  void round_to_float();
};

struct Dense {
  std::size_t weight = 0;  // in x out
  std::size_t bias = 0;    // 1 x out
  int in = 0;
  int out = 0;

  // Glorot-uniform weights scaled by gain, zero bias.
  static Dense create(ParameterSet& params, const std::string& name, int in, int out, Rng& rng, double gain = 1.0);
  Mat forward(const ParameterSet& p, const Mat& x) const;
  // Accumulates weight/bias gradients into grads when non-null; returns dL/dx.
  Mat backward(const ParameterSet& p, const Mat& x, const Mat& dy, ParameterSet* grads) const;
};

// 2-D convolution over NHWC activations stored as (N*H*W) x channels.
struct Conv2d {
  std::size_t weight = 0;  // (k*k*cin) x cout
  std::size_t bias = 0;    // 1 x cout
  int cin = 0, cout = 0, kernel = 0, stride = 1, pad = 0;
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;

  static Conv2d create(ParameterSet& params, const std::string& name, int cin, int cout, int kernel, int stride,
                       int pad, int in_h, int in_w, Rng& rng);
  Mat im2col(const Mat& x, int batch) const;
  Mat forward(const ParameterSet& p, const Mat& cols) const;
  // Returns dL/dx in NHWC layout when need_input_grad, else an empty matrix.
  Mat backward(const ParameterSet& p, const Mat& cols, const Mat& dy, int batch, ParameterSet* grads,
               bool need_input_grad) const;
};

Mat silu(const Mat& x);
Mat silu_backward(const Mat& x, const Mat& dy);
Mat tanh(const Mat& x);
// Takes the forward output y = tanh(x).
Mat tanh_backward(const Mat& y, const Mat& dy);

// Row-wise L2 normalization and its backward pass (given the outputs and the input norms).
Mat normalize_rows(const Mat& x, Vec* norms = nullptr);
Mat normalize_rows_backward(const Mat& y, const Vec& norms, const Mat& dy);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig cfg = {});
  void step(ParameterSet& params, const ParameterSet& grads, double learning_rate);
  long steps() const { return steps_; }

 private:
  AdamConfig cfg_;
  ParameterSet first_;
  ParameterSet second_;
  long steps_ = 0;
};

// Piecewise-constant decay: base * factor^(number of milestones passed),
// milestones given as fractions of the total step count.
struct MultiStepSchedule {
  double base = 5e-4;
  int total_steps = 1;
  std::vector<double> milestones{0.6, 0.85};
  double factor = 0.3;

  double rate(int step) const;
};

}  // namespace spacealign::nn
