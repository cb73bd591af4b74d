#include "hdrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hdrl::env {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Uniform-linear-array response with half-wavelength spacing, array axis
// along x; entry n is exp(j*pi*n*cos(theta)) for the direction array->target.
CVector ula_response(int elements, const Vec2& array_pos, const Vec2& target) {
  const Vec2 diff = target - array_pos;
  const double d = diff.norm();
  const double cos_theta = d > 0.0 ? diff.x() / d : 1.0;
  CVector v(elements);
  for (int n = 0; n < elements; ++n) {
    const double arg = M_PI * n * cos_theta;
    v(n) = Complex(std::cos(arg), std::sin(arg));
  }
  return v;
}

CVector cn_vector(int n, RngStream& rng) {
  CVector v(n);
  const double scale = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < n; ++i)
    v(i) = Complex(rng.normal() * scale, rng.normal() * scale);
  return v;
}

CMatrix cn_matrix(int rows, int cols, RngStream& rng) {
  CMatrix m(rows, cols);
  const double scale = 1.0 / std::sqrt(2.0);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r)
      m(r, c) = Complex(rng.normal() * scale, rng.normal() * scale);
  return m;
}

}  // namespace

void SystemConfig::validate() const {
  require(num_ops >= 1, "num_ops must be >= 1");
  require(bs_per_op >= 1, "bs_per_op must be >= 1");
  require(users_per_op >= 1, "users_per_op must be >= 1");
  require(num_antennas >= 1, "num_antennas must be >= 1");
  require(num_ris >= 1, "num_ris must be >= 1");
  require(elements_per_ris >= 1, "elements_per_ris must be >= 1");
  require(steps_per_episode >= 1, "steps_per_episode must be >= 1");
  require(rician_kappa >= 0.0, "rician_kappa must be >= 0");
  require(tx_power_per_bs > 0.0, "tx_power_per_bs must be > 0");
  require(noise_power > 0.0, "noise_power must be > 0");
  require(pathloss_ref_gain > 0.0, "pathloss_ref_gain must be > 0");
  require(reference_distance > 0.0, "reference_distance must be > 0");
  require(exp_bs_ris > 0.0 && exp_ris_user > 0.0 && exp_bs_user > 0.0,
          "path-loss exponents must be > 0");
}

void RisAllocation::validate(int num_ops) const {
  for (const int b : owner)
    require(b >= 1 && b <= num_ops, "RIS owner index out of range");
}

void UserAssociation::validate(int bs_per_op) const {
  for (const int a : serving_bs)
    require(a >= 1 && a <= bs_per_op, "serving BS index out of range");
}

std::pair<double, double> rician_weights(double kappa) {
  const double w_los = kappa / (kappa + 1.0);
  return {w_los, 1.0 - w_los};
}

double path_loss(double d, double alpha, double c0, double d0) {
  if (d <= 0.0) throw std::domain_error("path_loss: distance must be > 0");
  return c0 * std::pow(d / d0, -alpha);
}

Topology sample_topology(const SystemConfig& config, RngStream& rng) {
  Topology topo;
  topo.bs.resize(config.num_ops);
  topo.users.resize(config.num_ops);
  for (int s = 0; s < config.num_ops; ++s) {
    topo.bs[s].reserve(config.bs_per_op);
    for (int j = 0; j < config.bs_per_op; ++j) {
      const double theta = rng.uniform(0.0, M_PI);
      topo.bs[s].push_back(Vec2(150.0 * std::cos(theta), 150.0 * std::sin(theta)));
    }
    topo.users[s].reserve(config.users_per_op);
    for (int k = 0; k < config.users_per_op; ++k) {
      // Area-uniform over the semicircular annulus.
      const double r = std::sqrt(rng.uniform(25.0, 49.0));
      const double theta = rng.uniform(0.0, M_PI);
      topo.users[s].push_back(Vec2(r * std::cos(theta), r * std::sin(theta)));
    }
  }
  topo.ris.reserve(config.num_ris);
  for (int l = 0; l < config.num_ris; ++l)
    topo.ris.push_back(Vec2(rng.uniform(-5.0, 5.0), 0.0));
  return topo;
}

ChannelSet sample_channels(const Topology& topology, const SystemConfig& config,
                           RngStream& rng) {
  const int S = config.num_ops;
  const int J = config.bs_per_op;
  const int K = config.users_per_op;
  const int N = config.num_antennas;
  const int L = config.num_ris;
  const int M = config.elements_per_ris;
  const auto [w_los, w_nlos] = rician_weights(config.rician_kappa);
  const double a_los = std::sqrt(w_los);
  const double a_nlos = std::sqrt(w_nlos);

  ChannelSet ch;
  ch.direct.assign(S, std::vector<std::vector<CVector>>(J));
  ch.bs_ris.assign(S, std::vector<std::vector<CMatrix>>(J));
  ch.ris_user.assign(S, std::vector<std::vector<CVector>>(L));

  for (int s = 0; s < S; ++s) {
    for (int j = 0; j < J; ++j) {
      const Vec2& bs = topology.bs[s][j];
      ch.direct[s][j].reserve(K);
      for (int k = 0; k < K; ++k) {
        const Vec2& user = topology.users[s][k];
        const double eta = path_loss((user - bs).norm(), config.exp_bs_user,
                                     config.pathloss_ref_gain,
                                     config.reference_distance);
        const CVector los = ula_response(N, bs, user);
        ch.direct[s][j].push_back(std::sqrt(eta) *
                                  (a_los * los + a_nlos * cn_vector(N, rng)));
      }
      ch.bs_ris[s][j].reserve(L);
      for (int l = 0; l < L; ++l) {
        const Vec2& ris = topology.ris[l];
        const double eta = path_loss((ris - bs).norm(), config.exp_bs_ris,
                                     config.pathloss_ref_gain,
                                     config.reference_distance);
        const CMatrix los =
            ula_response(M, ris, bs) * ula_response(N, bs, ris).adjoint();
        ch.bs_ris[s][j].push_back(std::sqrt(eta) *
                                  (a_los * los + a_nlos * cn_matrix(M, N, rng)));
      }
    }
    for (int l = 0; l < L; ++l) {
      const Vec2& ris = topology.ris[l];
      ch.ris_user[s][l].reserve(K);
      for (int k = 0; k < K; ++k) {
        const Vec2& user = topology.users[s][k];
        const double eta = path_loss((user - ris).norm(), config.exp_ris_user,
                                     config.pathloss_ref_gain,
                                     config.reference_distance);
        const CVector los = ula_response(M, ris, user);
        ch.ris_user[s][l].push_back(
            std::sqrt(eta) * (a_los * los + a_nlos * cn_vector(M, rng)));
      }
    }
  }
  return ch;
}

void zero_reflected_paths(ChannelSet& channels) {
  for (auto& per_op : channels.bs_ris)
    for (auto& per_bs : per_op)
      for (auto& g : per_bs) g.setZero();
  for (auto& per_op : channels.ris_user)
    for (auto& per_ris : per_op)
      for (auto& h : per_ris) h.setZero();
}

std::vector<CVector> compose_phase_matrices(const RisAllocation& alloc,
                                            const PhaseConfig& phases, int op,
                                            int elements_per_ris) {
  const int L = static_cast<int>(alloc.owner.size());
  if (op < 1)
    throw std::invalid_argument("compose_phase_matrices: op index out of range");
  std::vector<CVector> diag;
  diag.reserve(L);
  for (int l = 0; l < L; ++l) {
    if (alloc.owner[l] == op) {
      const Eigen::VectorXd& phi = phases.phase.at(l);
      if (phi.size() != elements_per_ris)
        throw std::invalid_argument("phase vector size mismatch");
      CVector d(elements_per_ris);
      for (int m = 0; m < elements_per_ris; ++m)
        d(m) = Complex(std::cos(phi(m)), std::sin(phi(m)));
      diag.push_back(std::move(d));
    } else {
      diag.push_back(CVector::Ones(elements_per_ris));
    }
  }
  return diag;
}

std::vector<CMatrix> effective_channels(const ChannelSet& channels,
                                        const RisAllocation& alloc,
                                        const PhaseConfig& phases, int op) {
  if (op < 1 || op > static_cast<int>(channels.direct.size()))
    throw std::invalid_argument("effective_channels: op index out of range");
  const int s = op - 1;
  const int J = static_cast<int>(channels.direct[s].size());
  const int K = static_cast<int>(channels.direct[s][0].size());
  const int L = static_cast<int>(channels.ris_user[s].size());
  const int N = static_cast<int>(channels.direct[s][0][0].size());
  if (static_cast<int>(alloc.owner.size()) != L)
    throw std::invalid_argument("effective_channels: allocation size mismatch");
  const int M = static_cast<int>(channels.ris_user[s][0][0].size());
  const std::vector<CVector> diag =
      compose_phase_matrices(alloc, phases, op, M);

  std::vector<CMatrix> per_user(K, CMatrix(N, J));
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < J; ++j) {
      CVector h = channels.direct[s][j][k];
      for (int l = 0; l < L; ++l) {
        const CMatrix& g = channels.bs_ris[s][j][l];
        if (g.rows() != M || g.cols() != N)
          throw std::invalid_argument("effective_channels: dimension mismatch");
        h += g.adjoint() * diag[l].cwiseProduct(channels.ris_user[s][l][k]);
      }
      per_user[k].col(j) = h;
    }
  }
  return per_user;
}

CMatrix normalize_beamforming(const CMatrix& raw, const UserAssociation& assoc,
                              double p_bs) {
  const int K = static_cast<int>(raw.cols());
  if (static_cast<int>(assoc.serving_bs.size()) != K)
    throw std::invalid_argument("normalize_beamforming: association size mismatch");
  int max_bs = 0;
  for (const int a : assoc.serving_bs) max_bs = std::max(max_bs, a);
  CMatrix out = raw;
  for (int j = 1; j <= max_bs; ++j) {
    double power = 0.0;
    int members = 0;
    for (int k = 0; k < K; ++k) {
      if (assoc.serving_bs[k] == j) {
        power += raw.col(k).squaredNorm();
        ++members;
      }
    }
    if (members == 0) continue;
    if (power <= 0.0)
      throw std::runtime_error("normalize_beamforming: degenerate all-zero beam group");
    const double scale = std::sqrt(p_bs / power);
    for (int k = 0; k < K; ++k)
      if (assoc.serving_bs[k] == j) out.col(k) *= scale;
  }
  return out;
}

Eigen::VectorXd sinr(const std::vector<CMatrix>& user_channels,
                     const CMatrix& beam, const UserAssociation& assoc,
                     double noise_power) {
  const int K = static_cast<int>(user_channels.size());
  Eigen::VectorXd gamma(K);
  for (int k = 0; k < K; ++k) {
    const int j = assoc.serving_bs[k] - 1;
    const CVector h = user_channels[k].col(j);
    const double signal = std::norm(h.dot(beam.col(k)));
    double interference = 0.0;
    for (int kb = 0; kb < K; ++kb) {
      if (kb == k || assoc.serving_bs[kb] != assoc.serving_bs[k]) continue;
      interference += std::norm(h.dot(beam.col(kb)));
    }
    gamma(k) = signal / (interference + noise_power);
  }
  return gamma;
}

double sum_rate(const Eigen::VectorXd& gamma) {
  double rate = 0.0;
  for (int k = 0; k < gamma.size(); ++k) {
    if (gamma(k) < 0.0) throw std::domain_error("sum_rate: negative SINR");
    rate += std::log2(1.0 + gamma(k));
  }
  return rate;
}

StepResult step(const ChannelSet& channels, const RisAllocation& alloc,
                const std::vector<OpAction>& actions,
                const SystemConfig& config) {
  if (static_cast<int>(actions.size()) != config.num_ops)
    throw std::invalid_argument("step: one action per operator required");
  StepResult result;
  result.rate.resize(config.num_ops);
  result.user_channels.resize(config.num_ops);
  result.tx_channels.resize(config.num_ops);
  result.beam.resize(config.num_ops);
  result.sinr.resize(config.num_ops);

  for (int s = 0; s < config.num_ops; ++s) {
    const OpAction& act = actions[s];
    act.assoc.validate(config.bs_per_op);
    auto per_user = effective_channels(channels, alloc, act.phases, s + 1);
    const CMatrix w =
        normalize_beamforming(act.beam_raw, act.assoc, config.tx_power_per_bs);
    const Eigen::VectorXd gamma =
        sinr(per_user, w, act.assoc, config.noise_power);

    CMatrix tx(config.num_antennas, config.users_per_op);
    for (int k = 0; k < config.users_per_op; ++k)
      tx.col(k) = per_user[k].col(act.assoc.serving_bs[k] - 1);

    result.rate[s] = sum_rate(gamma);
    result.user_channels[s] = std::move(per_user);
    result.tx_channels[s] = std::move(tx);
    result.beam[s] = w;
    result.sinr[s] = gamma;
  }
  return result;
}

}  // namespace hdrl::env
