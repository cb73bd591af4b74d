#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "hdrl/rng.hpp"

// Minimal differentiable building blocks: dense and LSTM layers with exact
// analytic backward passes, categorical and Beta policy heads, a
// bias-corrected adaptive-moment optimizer, a finite-difference gradient
// checker and a flat parameter checkpoint format. All math is in doubles.
namespace hdrl::neural {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// One parameter tensor with its gradient accumulator and optimizer moments.
struct ParamBlock {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;

  ParamBlock(std::string block_name, int rows, int cols)
      : name(std::move(block_name)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        m(Matrix::Zero(rows, cols)),
        v(Matrix::Zero(rows, cols)) {}

  long long size() const { return static_cast<long long>(value.size()); }
};

long long param_count(const std::vector<ParamBlock*>& params);

// Orthogonal initialization scaled by `gain` (QR of a Gaussian matrix with
// sign-fixed diagonal).
Matrix orthogonal(int rows, int cols, double gain, RngStream& rng);

enum class Activation { Identity, Tanh };

// y = act(W x + b), batched over columns.
class DenseLayer {
 public:
  DenseLayer(int in, int out, Activation act, double gain, RngStream& rng,
             const std::string& name);

  const Matrix& forward(const Matrix& x);
  // Accumulates parameter gradients, returns gradient w.r.t. the input.
  Matrix backward(const Matrix& d_out);

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  ParamBlock weight;
  ParamBlock bias;

 private:
  Activation act_;
  Matrix x_;  // cached input
  Matrix y_;  // cached output
};

// Single-layer LSTM over a fixed-length sequence; only the final hidden state
// is exposed (heads consume the last step). Gate order: input, forget, cell,
// output.
class LstmLayer {
 public:
  LstmLayer(int in, int hidden, RngStream& rng, const std::string& name);

  // seq[t] is in x batch; returns hidden x batch at the final step.
  const Matrix& forward(const std::vector<Matrix>& seq);
  // Backpropagation through time from a gradient on the final hidden state.
  void backward(const Matrix& d_hidden);

  int in_dim() const { return static_cast<int>(w_in.value.cols()); }
  int hidden_dim() const { return static_cast<int>(w_rec.value.cols()); }

  ParamBlock w_in;   // 4H x I
  ParamBlock w_rec;  // 4H x H
  ParamBlock bias;   // 4H x 1

 private:
  struct StepCache {
    Matrix x, h_prev, c_prev;
    Matrix gate_i, gate_f, gate_g, gate_o;
    Matrix c, tanh_c;
  };
  std::vector<StepCache> cache_;
  Matrix h_;
};

// Stack of dense layers.
class Mlp {
 public:
  void add(DenseLayer layer) { layers_.push_back(std::move(layer)); }

  const Matrix& forward(const Matrix& x);
  Matrix backward(const Matrix& d_out);

  std::vector<ParamBlock*> params();
  std::vector<DenseLayer>& layers() { return layers_; }
  int out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<DenseLayer> layers_;
  Matrix out_;
};

// Builds tanh hidden layers and a linear output layer.
Mlp make_mlp(int in, const std::vector<int>& hidden, int out, double out_gain,
             RngStream& rng, const std::string& name);

// LSTM followed by a dense stack; consumes sequences of feature vectors.
class RecurrentNet {
 public:
  RecurrentNet(int in, int lstm_width, const std::vector<int>& hidden, int out,
               double out_gain, RngStream& rng, const std::string& name);

  // seq[t]: in x batch. Output: out x batch.
  const Matrix& forward(const std::vector<Matrix>& seq);
  void backward(const Matrix& d_out);

  std::vector<ParamBlock*> params();
  LstmLayer& lstm() { return lstm_; }
  Mlp& head() { return head_; }
  int out_dim() const { return head_.out_dim(); }

 private:
  LstmLayer lstm_;
  Mlp head_;
};

// --- categorical head -------------------------------------------------------

Vector softmax(const Vector& logits);
double categorical_log_prob(const Vector& logits, int index);
// d log p(index) / d logits = e_index - softmax(logits)
Vector categorical_log_prob_grad(const Vector& logits, int index);
int sample_categorical(const Vector& logits, RngStream& rng);
int argmax(const Vector& logits);
double categorical_entropy(const Vector& logits);
Vector categorical_entropy_grad(const Vector& logits);

// --- Beta head ---------------------------------------------------------------

double softplus(double x);
double sigmoid(double x);
double digamma(double x);
double trigamma(double x);

// Shape parameters per action coordinate; alpha, beta > 1 (unimodal).
struct BetaParams {
  Vector alpha;
  Vector beta;
};

// raw = [alpha raw block; beta raw block], each mapped by 1 + softplus.
BetaParams beta_from_raw(const Vector& raw);

// Samples strictly inside (0,1)^d.
Vector beta_sample(const BetaParams& params, RngStream& rng);
Vector beta_mean(const BetaParams& params);
double beta_log_prob(const BetaParams& params, const Vector& action);
// Gradient of log-density w.r.t. the raw head outputs (through 1+softplus).
Vector beta_log_prob_grad_raw(const BetaParams& params, const Vector& action,
                              const Vector& raw);
double beta_entropy(const BetaParams& params);
Vector beta_entropy_grad_raw(const BetaParams& params, const Vector& raw);

// --- optimizer ---------------------------------------------------------------

// Bias-corrected adaptive-moment descent step; zeroes gradients afterwards.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamBlock*>& params);

  int steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// --- verification ------------------------------------------------------------

// Central finite differences (h per parameter entry) against the gradients
// currently stored in the blocks; `loss` must be a pure forward evaluation.
// Returns the worst relative error.
double grad_check(const std::vector<ParamBlock*>& params,
                  const std::function<double()>& loss, double h = 1e-5);

// --- checkpoints -------------------------------------------------------------

// Flat binary layout: magic, version, block count, then per block the name,
// shape and column-major values. Stable across runs.
void save_params(const std::string& path,
                 const std::vector<ParamBlock*>& params);
void load_params(const std::string& path,
                 const std::vector<ParamBlock*>& params);

}  // namespace hdrl::neural
