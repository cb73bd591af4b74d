#pragma once

#include <Eigen/Dense>
#include <complex>
#include <utility>
#include <vector>

#include "hdrl/rng.hpp"

// Multi-surface multi-operator downlink simulator: scenario geometry, Rician
// channel sampling, frequency-selective reflection, beamforming power
// normalization, per-user SINR and per-operator sum-rate.
namespace hdrl::env {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using Vec2 = Eigen::Vector2d;

struct SystemConfig {
  int num_ops = 2;            // S
  int bs_per_op = 2;          // J_s
  int users_per_op = 5;       // K_s
  int num_antennas = 10;      // N
  int num_ris = 4;            // L
  int elements_per_ris = 20;  // M_l
  double rician_kappa = 10.0;
  double tx_power_per_bs = 0.5;  // watts
  int steps_per_episode = 10;    // T
  double noise_power = 1e-11;    // watts
  double pathloss_ref_gain = 1e-3;  // linear gain at reference distance
  double reference_distance = 1.0;  // meters
  double exp_bs_ris = 2.5;
  double exp_ris_user = 2.8;
  double exp_bs_user = 3.5;

  void validate() const;  // throws std::invalid_argument
};

struct Topology {
  std::vector<std::vector<Vec2>> bs;     // [op][bs]
  std::vector<Vec2> ris;                 // [ris]
  std::vector<std::vector<Vec2>> users;  // [op][user]
};

// One full draw of sub-channels for a single time step.
struct ChannelSet {
  // direct[op][bs][user]: N
  std::vector<std::vector<std::vector<CVector>>> direct;
  // bs_ris[op][bs][ris]: M_l x N
  std::vector<std::vector<std::vector<CMatrix>>> bs_ris;
  // ris_user[op][ris][user]: M_l
  std::vector<std::vector<std::vector<CVector>>> ris_user;
};

// Owner operator of each surface; entries are 1-based in {1..S}. Evaluation
// helpers may use owner 0 for "assigned to nobody" (identity reflection for
// every operator); validate() rejects it on the decision path.
struct RisAllocation {
  std::vector<int> owner;

  void validate(int num_ops) const;
};

// Serving base station per user of one operator; entries 1-based in {1..J_s}.
struct UserAssociation {
  std::vector<int> serving_bs;

  void validate(int bs_per_op) const;
};

// Phase design emitted by one operator: one vector per surface, in [0, 2pi].
// Each operator emits phases for every surface even though only the surfaces
// it owns are applied.
struct PhaseConfig {
  std::vector<Eigen::VectorXd> phase;  // [ris]: M_l
};

struct OpAction {
  PhaseConfig phases;
  UserAssociation assoc;
  CMatrix beam_raw;  // N x K_s, unnormalized
};

struct StepResult {
  std::vector<double> rate;                            // per OP
  std::vector<std::vector<CMatrix>> user_channels;     // [op][user]: N x J_s
  std::vector<CMatrix> tx_channels;                    // [op]: N x K_s
  std::vector<CMatrix> beam;                           // [op]: normalized W_s
  std::vector<Eigen::VectorXd> sinr;                   // [op]: per-user SINR
};

// LoS/NLoS mixing weights; the pair sums to 1.0 exactly.
std::pair<double, double> rician_weights(double kappa);

// eta(d) = c0 * (d / d0)^-alpha; throws std::domain_error for d <= 0.
double path_loss(double d, double alpha, double c0, double d0);

// Base stations on the semicircle of radius 150 m, surfaces on the x-axis in
// [-5, 5], users in the semicircular annulus with radii 5-7 m.
Topology sample_topology(const SystemConfig& config, RngStream& rng);

ChannelSet sample_channels(const Topology& topology, const SystemConfig& config,
                           RngStream& rng);

// Removes every reflected path (direct-only world).
void zero_reflected_paths(ChannelSet& channels);

// Diagonal entries of the per-surface reflection matrices as seen by `op`
// (1-based): exp(j*phi) for owned surfaces, exactly 1 otherwise.
std::vector<CVector> compose_phase_matrices(const RisAllocation& alloc,
                                            const PhaseConfig& phases, int op,
                                            int elements_per_ris);

// Per-user equivalent channel matrices (N x J_s) from the viewpoint of `op`.
std::vector<CMatrix> effective_channels(const ChannelSet& channels,
                                        const RisAllocation& alloc,
                                        const PhaseConfig& phases, int op);

// Scales each base station's beam columns by a common factor so per-station
// transmit power equals p_bs. Throws on an all-zero column group.
CMatrix normalize_beamforming(const CMatrix& raw, const UserAssociation& assoc,
                              double p_bs);

// SINR per user; interference sums only over users of the same base station.
Eigen::VectorXd sinr(const std::vector<CMatrix>& user_channels,
                     const CMatrix& beam, const UserAssociation& assoc,
                     double noise_power);

// Sum over users of log2(1 + gamma); throws std::domain_error on gamma < 0.
double sum_rate(const Eigen::VectorXd& gamma);

// Full per-operator pipeline for one time step.
StepResult step(const ChannelSet& channels, const RisAllocation& alloc,
                const std::vector<OpAction>& actions,
                const SystemConfig& config);

}  // namespace hdrl::env
