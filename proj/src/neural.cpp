#include "hdrl/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hdrl::neural {

long long param_count(const std::vector<ParamBlock*>& params) {
  long long total = 0;
  for (const ParamBlock* block : params) total += block->size();
  return total;
}

Matrix orthogonal(int rows, int cols, double gain, RngStream& rng) {
  const bool transpose = rows < cols;
  const int r = transpose ? cols : rows;
  const int c = transpose ? rows : cols;
  Matrix gauss(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(gauss);
  Matrix q = qr.householderQ() * Matrix::Identity(r, c);
  for (int j = 0; j < c; ++j)
    if (qr.matrixQR()(j, j) < 0.0) q.col(j) = -q.col(j);
  q *= gain;
  return transpose ? Matrix(q.transpose()) : q;
}

// --- dense -------------------------------------------------------------------

DenseLayer::DenseLayer(int in, int out, Activation act, double gain,
                       RngStream& rng, const std::string& name)
    : weight(name + "/weight", out, in),
      bias(name + "/bias", out, 1),
      act_(act) {
  weight.value = orthogonal(out, in, gain, rng);
}

const Matrix& DenseLayer::forward(const Matrix& x) {
  if (x.rows() != weight.value.cols())
    throw std::invalid_argument("dense forward: input shape mismatch");
  x_ = x;
  y_ = (weight.value * x).colwise() + Vector(bias.value.col(0));
  if (act_ == Activation::Tanh) y_ = y_.array().tanh();
  return y_;
}

Matrix DenseLayer::backward(const Matrix& d_out) {
  if (d_out.rows() != y_.rows() || d_out.cols() != y_.cols())
    throw std::invalid_argument("dense backward: upstream shape mismatch");
  Matrix d_pre = d_out;
  if (act_ == Activation::Tanh)
    d_pre.array() *= 1.0 - y_.array().square();
  weight.grad.noalias() += d_pre * x_.transpose();
  bias.grad.col(0) += d_pre.rowwise().sum();
  return weight.value.transpose() * d_pre;
}

// --- LSTM --------------------------------------------------------------------

LstmLayer::LstmLayer(int in, int hidden, RngStream& rng,
                     const std::string& name)
    : w_in(name + "/w_in", 4 * hidden, in),
      w_rec(name + "/w_rec", 4 * hidden, hidden),
      bias(name + "/bias", 4 * hidden, 1) {
  w_in.value = orthogonal(4 * hidden, in, 1.0, rng);
  w_rec.value = orthogonal(4 * hidden, hidden, 1.0, rng);
}

const Matrix& LstmLayer::forward(const std::vector<Matrix>& seq) {
  if (seq.empty()) throw std::invalid_argument("lstm forward: empty sequence");
  const int H = hidden_dim();
  const int B = static_cast<int>(seq[0].cols());
  cache_.clear();
  cache_.reserve(seq.size());
  Matrix h = Matrix::Zero(H, B);
  Matrix c = Matrix::Zero(H, B);
  for (const Matrix& x : seq) {
    if (x.rows() != in_dim() || x.cols() != B)
      throw std::invalid_argument("lstm forward: input shape mismatch");
    StepCache step;
    step.x = x;
    step.h_prev = h;
    step.c_prev = c;
    Matrix z = ((w_in.value * x + w_rec.value * h).colwise() +
                Vector(bias.value.col(0)));
    step.gate_i = z.topRows(H).unaryExpr([](double v) { return sigmoid(v); });
    step.gate_f =
        z.middleRows(H, H).unaryExpr([](double v) { return sigmoid(v); });
    step.gate_g = z.middleRows(2 * H, H).array().tanh();
    step.gate_o =
        z.bottomRows(H).unaryExpr([](double v) { return sigmoid(v); });
    c = step.gate_f.cwiseProduct(step.c_prev) +
        step.gate_i.cwiseProduct(step.gate_g);
    step.c = c;
    step.tanh_c = c.array().tanh();
    h = step.gate_o.cwiseProduct(step.tanh_c);
    cache_.push_back(std::move(step));
  }
  h_ = h;
  return h_;
}

void LstmLayer::backward(const Matrix& d_hidden) {
  if (cache_.empty()) throw std::logic_error("lstm backward before forward");
  const int H = hidden_dim();
  Matrix dh = d_hidden;
  Matrix dc = Matrix::Zero(dh.rows(), dh.cols());
  for (int t = static_cast<int>(cache_.size()) - 1; t >= 0; --t) {
    const StepCache& step = cache_[t];
    const Matrix d_o = dh.cwiseProduct(step.tanh_c);
    dc.array() +=
        dh.array() * step.gate_o.array() * (1.0 - step.tanh_c.array().square());
    const Matrix d_f = dc.cwiseProduct(step.c_prev);
    const Matrix d_i = dc.cwiseProduct(step.gate_g);
    const Matrix d_g = dc.cwiseProduct(step.gate_i);

    Matrix dz(4 * H, dh.cols());
    dz.topRows(H) =
        (d_i.array() * step.gate_i.array() * (1.0 - step.gate_i.array()))
            .matrix();
    dz.middleRows(H, H) =
        (d_f.array() * step.gate_f.array() * (1.0 - step.gate_f.array()))
            .matrix();
    dz.middleRows(2 * H, H) =
        (d_g.array() * (1.0 - step.gate_g.array().square())).matrix();
    dz.bottomRows(H) =
        (d_o.array() * step.gate_o.array() * (1.0 - step.gate_o.array()))
            .matrix();

    w_in.grad.noalias() += dz * step.x.transpose();
    w_rec.grad.noalias() += dz * step.h_prev.transpose();
    bias.grad.col(0) += dz.rowwise().sum();

    dh = w_rec.value.transpose() * dz;
    dc = dc.cwiseProduct(step.gate_f);
  }
}

// --- MLP ---------------------------------------------------------------------

const Matrix& Mlp::forward(const Matrix& x) {
  const Matrix* cur = &x;
  for (DenseLayer& layer : layers_) cur = &layer.forward(*cur);
  out_ = *cur;
  return out_;
}

Matrix Mlp::backward(const Matrix& d_out) {
  Matrix d = d_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    d = it->backward(d);
  return d;
}

std::vector<ParamBlock*> Mlp::params() {
  std::vector<ParamBlock*> blocks;
  for (DenseLayer& layer : layers_) {
    blocks.push_back(&layer.weight);
    blocks.push_back(&layer.bias);
  }
  return blocks;
}

Mlp make_mlp(int in, const std::vector<int>& hidden, int out, double out_gain,
             RngStream& rng, const std::string& name) {
  Mlp mlp;
  int width = in;
  int index = 0;
  for (const int h : hidden) {
    mlp.add(DenseLayer(width, h, Activation::Tanh, std::sqrt(2.0), rng,
                       name + "/dense" + std::to_string(index++)));
    width = h;
  }
  mlp.add(DenseLayer(width, out, Activation::Identity, out_gain, rng,
                     name + "/dense" + std::to_string(index)));
  return mlp;
}

RecurrentNet::RecurrentNet(int in, int lstm_width,
                           const std::vector<int>& hidden, int out,
                           double out_gain, RngStream& rng,
                           const std::string& name)
    : lstm_(in, lstm_width, rng, name + "/lstm"),
      head_(make_mlp(lstm_width, hidden, out, out_gain, rng, name)) {}

const Matrix& RecurrentNet::forward(const std::vector<Matrix>& seq) {
  return head_.forward(lstm_.forward(seq));
}

void RecurrentNet::backward(const Matrix& d_out) {
  lstm_.backward(head_.backward(d_out));
}

std::vector<ParamBlock*> RecurrentNet::params() {
  std::vector<ParamBlock*> blocks{&lstm_.w_in, &lstm_.w_rec, &lstm_.bias};
  for (ParamBlock* block : head_.params()) blocks.push_back(block);
  return blocks;
}

// --- categorical head --------------------------------------------------------

Vector softmax(const Vector& logits) {
  const double peak = logits.maxCoeff();
  Vector p = (logits.array() - peak).exp();
  return p / p.sum();
}

double categorical_log_prob(const Vector& logits, int index) {
  const double peak = logits.maxCoeff();
  const double lse = peak + std::log((logits.array() - peak).exp().sum());
  return logits(index) - lse;
}

Vector categorical_log_prob_grad(const Vector& logits, int index) {
  Vector g = -softmax(logits);
  g(index) += 1.0;
  return g;
}

int sample_categorical(const Vector& logits, RngStream& rng) {
  const Vector p = softmax(logits);
  const double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return i;
  }
  return static_cast<int>(p.size()) - 1;
}

int argmax(const Vector& logits) {
  int index = 0;
  logits.maxCoeff(&index);
  return index;
}

double categorical_entropy(const Vector& logits) {
  const Vector p = softmax(logits);
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  return h;
}

Vector categorical_entropy_grad(const Vector& logits) {
  const Vector p = softmax(logits);
  const double h = categorical_entropy(logits);
  Vector g(p.size());
  for (int i = 0; i < p.size(); ++i)
    g(i) = -p(i) * (std::log(std::max(p(i), 1e-300)) + h);
  return g;
}

// --- special functions -------------------------------------------------------

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double digamma(double x) {
  double result = 0.0;
  while (x < 8.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv2 = 1.0 / (x * x);
  result += std::log(x) - 0.5 / x -
            inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                            inv2 * (1.0 / 252.0 -
                                    inv2 * (1.0 / 240.0 - inv2 / 132.0))));
  return result;
}

double trigamma(double x) {
  double result = 0.0;
  while (x < 8.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result +=
      inv * (1.0 + 0.5 * inv +
             inv2 * (1.0 / 6.0 -
                     inv2 * (1.0 / 30.0 -
                             inv2 * (1.0 / 42.0 -
                                     inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0)))));
  return result;
}

// --- Beta head ---------------------------------------------------------------

BetaParams beta_from_raw(const Vector& raw) {
  if (raw.size() % 2 != 0)
    throw std::invalid_argument("beta_from_raw: raw width must be even");
  const int d = static_cast<int>(raw.size()) / 2;
  BetaParams params;
  params.alpha.resize(d);
  params.beta.resize(d);
  for (int i = 0; i < d; ++i) {
    params.alpha(i) = 1.0 + softplus(raw(i));
    params.beta(i) = 1.0 + softplus(raw(d + i));
  }
  return params;
}

namespace {

constexpr double kInterior = 1e-12;

// Marsaglia-Tsang; valid for shape >= 1.
double sample_gamma(double shape, RngStream& rng) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace

Vector beta_sample(const BetaParams& params, RngStream& rng) {
  const int d = static_cast<int>(params.alpha.size());
  Vector a(d);
  for (int i = 0; i < d; ++i) {
    const double x = sample_gamma(params.alpha(i), rng);
    const double y = sample_gamma(params.beta(i), rng);
    a(i) = std::clamp(x / (x + y), kInterior, 1.0 - kInterior);
  }
  return a;
}

Vector beta_mean(const BetaParams& params) {
  return params.alpha.array() / (params.alpha + params.beta).array();
}

double beta_log_prob(const BetaParams& params, const Vector& action) {
  if (action.size() != params.alpha.size())
    throw std::invalid_argument("beta_log_prob: dimension mismatch");
  double lp = 0.0;
  for (int i = 0; i < action.size(); ++i) {
    const double a = params.alpha(i);
    const double b = params.beta(i);
    const double x = action(i);
    lp += (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) -
          std::lgamma(a) - std::lgamma(b) + std::lgamma(a + b);
  }
  return lp;
}

Vector beta_log_prob_grad_raw(const BetaParams& params, const Vector& action,
                              const Vector& raw) {
  const int d = static_cast<int>(action.size());
  Vector g(2 * d);
  for (int i = 0; i < d; ++i) {
    const double a = params.alpha(i);
    const double b = params.beta(i);
    const double psi_ab = digamma(a + b);
    const double d_alpha = std::log(action(i)) - digamma(a) + psi_ab;
    const double d_beta = std::log1p(-action(i)) - digamma(b) + psi_ab;
    g(i) = d_alpha * sigmoid(raw(i));
    g(d + i) = d_beta * sigmoid(raw(d + i));
  }
  return g;
}

double beta_entropy(const BetaParams& params) {
  double h = 0.0;
  for (int i = 0; i < params.alpha.size(); ++i) {
    const double a = params.alpha(i);
    const double b = params.beta(i);
    h += std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b) -
         (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) +
         (a + b - 2.0) * digamma(a + b);
  }
  return h;
}

Vector beta_entropy_grad_raw(const BetaParams& params, const Vector& raw) {
  const int d = static_cast<int>(params.alpha.size());
  Vector g(2 * d);
  for (int i = 0; i < d; ++i) {
    const double a = params.alpha(i);
    const double b = params.beta(i);
    const double tri_ab = trigamma(a + b);
    const double d_alpha =
        -(a - 1.0) * trigamma(a) + (a + b - 2.0) * tri_ab;
    const double d_beta = -(b - 1.0) * trigamma(b) + (a + b - 2.0) * tri_ab;
    g(i) = d_alpha * sigmoid(raw(i));
    g(d + i) = d_beta * sigmoid(raw(d + i));
  }
  return g;
}

// --- optimizer ---------------------------------------------------------------

void Adam::step(const std::vector<ParamBlock*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (ParamBlock* block : params) {
    block->m = beta1_ * block->m + (1.0 - beta1_) * block->grad;
    block->v.array() = beta2_ * block->v.array() +
                       (1.0 - beta2_) * block->grad.array().square();
    const Matrix m_hat = block->m / bc1;
    const Matrix v_hat = block->v / bc2;
    block->value.array() -=
        lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
    block->grad.setZero();
  }
}

// --- verification ------------------------------------------------------------

double grad_check(const std::vector<ParamBlock*>& params,
                  const std::function<double()>& loss, double h) {
  double worst = 0.0;
  for (ParamBlock* block : params) {
    for (long long i = 0; i < block->size(); ++i) {
      double* entry = block->value.data() + i;
      const double saved = *entry;
      *entry = saved + h;
      const double up = loss();
      *entry = saved - h;
      const double down = loss();
      *entry = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = *(block->grad.data() + i);
      const double denom =
          std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

// --- checkpoints -------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'H', 'D', 'R', 'L', 'N', 'E', 'T', '1'};
}

void save_params(const std::string& path,
                 const std::vector<ParamBlock*>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t count = static_cast<std::uint32_t>(params.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const ParamBlock* block : params) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(block->name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(block->name.data(), name_len);
    const std::uint32_t rows = static_cast<std::uint32_t>(block->value.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(block->value.cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(block->value.data()),
              static_cast<std::streamsize>(sizeof(double) * block->value.size()));
  }
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

void load_params(const std::string& path,
                 const std::vector<ParamBlock*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_params: bad header in " + path);
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != params.size())
    throw std::runtime_error("load_params: block count mismatch");
  for (ParamBlock* block : params) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (name != block->name ||
        static_cast<Eigen::Index>(rows) != block->value.rows() ||
        static_cast<Eigen::Index>(cols) != block->value.cols())
      throw std::runtime_error("load_params: layout mismatch at " + name);
    in.read(reinterpret_cast<char*>(block->value.data()),
            static_cast<std::streamsize>(sizeof(double) * block->value.size()));
  }
  if (!in) throw std::runtime_error("load_params: truncated file " + path);
}

}  // namespace hdrl::neural
