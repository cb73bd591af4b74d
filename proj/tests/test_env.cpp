#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "hdrl/env.hpp"

using namespace hdrl;
using namespace hdrl::env;

namespace {

SystemConfig tiny_config() {
  SystemConfig cfg;
  cfg.num_ops = 2;
  cfg.bs_per_op = 2;
  cfg.users_per_op = 2;
  cfg.num_antennas = 2;
  cfg.num_ris = 2;
  cfg.elements_per_ris = 2;
  cfg.steps_per_episode = 3;
  return cfg;
}

PhaseConfig zero_phases(const SystemConfig& cfg) {
  PhaseConfig phases;
  for (int l = 0; l < cfg.num_ris; ++l)
    phases.phase.push_back(Eigen::VectorXd::Zero(cfg.elements_per_ris));
  return phases;
}

// Straight transcription of the per-operator pipeline using full dense
// reflection matrices; deliberately independent of the library's code path.
double oracle_op_rate(const ChannelSet& ch, const RisAllocation& alloc,
                      const OpAction& act, const SystemConfig& cfg, int s) {
  const int J = cfg.bs_per_op;
  const int K = cfg.users_per_op;
  const int L = cfg.num_ris;
  const int M = cfg.elements_per_ris;

  std::vector<CMatrix> phi(L);
  for (int l = 0; l < L; ++l) {
    phi[l] = CMatrix::Identity(M, M);
    if (alloc.owner[l] == s + 1)
      for (int m = 0; m < M; ++m)
        phi[l](m, m) = std::exp(Complex(0.0, act.phases.phase[l](m)));
  }

  std::vector<std::vector<CVector>> h(J, std::vector<CVector>(K));
  for (int j = 0; j < J; ++j)
    for (int k = 0; k < K; ++k) {
      CVector sum = ch.direct[s][j][k];
      for (int l = 0; l < L; ++l)
        sum += ch.bs_ris[s][j][l].adjoint() * phi[l] * ch.ris_user[s][l][k];
      h[j][k] = sum;
    }

  // Per-station power normalization.
  CMatrix w = act.beam_raw;
  for (int j = 1; j <= J; ++j) {
    double power = 0.0;
    bool any = false;
    for (int k = 0; k < K; ++k)
      if (act.assoc.serving_bs[k] == j) {
        power += w.col(k).squaredNorm();
        any = true;
      }
    if (!any) continue;
    const double scale = std::sqrt(cfg.tx_power_per_bs / power);
    for (int k = 0; k < K; ++k)
      if (act.assoc.serving_bs[k] == j) w.col(k) *= scale;
  }

  double rate = 0.0;
  for (int k = 0; k < K; ++k) {
    const int j = act.assoc.serving_bs[k] - 1;
    const Complex own = (h[j][k].adjoint() * w.col(k))(0, 0);
    double interference = 0.0;
    for (int kb = 0; kb < K; ++kb) {
      if (kb == k || act.assoc.serving_bs[kb] != act.assoc.serving_bs[k])
        continue;
      const Complex cross = (h[j][k].adjoint() * w.col(kb))(0, 0);
      interference += std::norm(cross);
    }
    rate += std::log2(1.0 + std::norm(own) / (interference + cfg.noise_power));
  }
  return rate;
}

OpAction random_action(const SystemConfig& cfg, RngStream& rng) {
  OpAction act;
  for (int l = 0; l < cfg.num_ris; ++l) {
    Eigen::VectorXd phi(cfg.elements_per_ris);
    for (int m = 0; m < cfg.elements_per_ris; ++m)
      phi(m) = rng.uniform(0.0, 2.0 * M_PI);
    act.phases.phase.push_back(phi);
  }
  act.assoc.serving_bs.resize(cfg.users_per_op);
  for (int k = 0; k < cfg.users_per_op; ++k)
    act.assoc.serving_bs[k] = 1 + static_cast<int>(rng.uniform_int(cfg.bs_per_op));
  act.beam_raw.resize(cfg.num_antennas, cfg.users_per_op);
  for (int k = 0; k < cfg.users_per_op; ++k)
    for (int n = 0; n < cfg.num_antennas; ++n)
      act.beam_raw(n, k) = Complex(rng.normal(), rng.normal());
  return act;
}

}  // namespace

TEST_CASE("path loss follows the power law") {
  CHECK(path_loss(1.0, 3.5, 1e-3, 1.0) == doctest::Approx(1e-3));
  CHECK(path_loss(10.0, 2.0, 1e-3, 1.0) == doctest::Approx(1e-5));
  // 100^3.5 = 1e7 exactly
  CHECK(path_loss(100.0, 3.5, 1e-3, 1.0) == doctest::Approx(1e-10).epsilon(1e-12));
  CHECK_THROWS_AS(path_loss(0.0, 2.0, 1e-3, 1.0), std::domain_error);
  CHECK_THROWS_AS(path_loss(-1.0, 2.0, 1e-3, 1.0), std::domain_error);
}

TEST_CASE("topology respects the scenario geometry") {
  SystemConfig cfg = tiny_config();
  cfg.num_ops = 2;
  cfg.bs_per_op = 2;
  RngStream rng(42);
  const Topology topo = sample_topology(cfg, rng);

  int bs_count = 0;
  for (const auto& per_op : topo.bs)
    for (const auto& p : per_op) {
      CHECK(p.norm() == doctest::Approx(150.0).epsilon(1e-9));
      ++bs_count;
    }
  CHECK(bs_count == 4);

  for (const auto& per_op : topo.users)
    for (const auto& p : per_op) {
      CHECK(p.norm() >= 5.0);
      CHECK(p.norm() <= 7.0);
    }
  for (const auto& p : topo.ris) {
    CHECK(p.y() == 0.0);
    CHECK(std::abs(p.x()) <= 5.0);
  }

  RngStream rng2(42);
  const Topology again = sample_topology(cfg, rng2);
  for (int s = 0; s < cfg.num_ops; ++s)
    for (int j = 0; j < cfg.bs_per_op; ++j)
      CHECK(topo.bs[s][j] == again.bs[s][j]);
}

TEST_CASE("rician weights always sum to one exactly") {
  RngStream rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double kappa = rng.uniform(0.0, 1e6);
    const auto [w_los, w_nlos] = rician_weights(kappa);
    CHECK(w_los + w_nlos == 1.0);
  }
  CHECK(rician_weights(10.0).first == 10.0 / 11.0);
}

TEST_CASE("channel sampling matches the Rician construction") {
  SystemConfig cfg = tiny_config();
  RngStream topo_rng(1);
  const Topology topo = sample_topology(cfg, topo_rng);

  SUBCASE("large kappa collapses onto the deterministic component") {
    cfg.rician_kappa = 1e12;
    RngStream rng(3);
    const ChannelSet ch = sample_channels(topo, cfg, rng);
    const double d = (topo.users[0][0] - topo.bs[0][0]).norm();
    const double amp = std::sqrt(
        path_loss(d, cfg.exp_bs_user, cfg.pathloss_ref_gain, cfg.reference_distance));
    for (int n = 0; n < cfg.num_antennas; ++n) {
      CHECK(std::abs(std::abs(ch.direct[0][0][0](n)) - amp) <= 1e-5 * amp);
    }
  }

  SUBCASE("kappa zero reproduces the path-loss second moment") {
    cfg.rician_kappa = 0.0;
    cfg.num_antennas = 1;
    cfg.bs_per_op = 1;
    cfg.users_per_op = 1;
    cfg.num_ris = 1;
    cfg.elements_per_ris = 1;
    cfg.num_ops = 1;
    RngStream rng(5);
    const double d = (topo.users[0][0] - topo.bs[0][0]).norm();
    const double eta = path_loss(d, cfg.exp_bs_user, cfg.pathloss_ref_gain,
                                 cfg.reference_distance);
    double acc = 0.0;
    const int draws = 100000;
    Topology small = topo;
    small.bs = {{topo.bs[0][0]}};
    small.users = {{topo.users[0][0]}};
    small.ris = {topo.ris[0]};
    for (int i = 0; i < draws; ++i) {
      const ChannelSet ch = sample_channels(small, cfg, rng);
      acc += std::norm(ch.direct[0][0][0](0));
    }
    CHECK(acc / draws == doctest::Approx(eta).epsilon(0.02));
  }
}

TEST_CASE("phase matrices compose per ownership") {
  SystemConfig cfg = tiny_config();
  RisAllocation alloc{{1, 2}};
  PhaseConfig phases = zero_phases(cfg);
  phases.phase[0] << M_PI, M_PI;

  SUBCASE("unowned surface is exactly identity") {
    const auto diag = compose_phase_matrices(alloc, phases, 2, 2);
    CHECK(diag[0](0) == Complex(1.0, 0.0));
    CHECK(diag[0](1) == Complex(1.0, 0.0));
  }
  SUBCASE("zero phases give identity") {
    phases.phase[0].setZero();
    const auto diag = compose_phase_matrices(alloc, phases, 1, 2);
    CHECK(std::abs(diag[0](0) - Complex(1.0, 0.0)) < 1e-15);
  }
  SUBCASE("pi phases give -1") {
    const auto diag = compose_phase_matrices(alloc, phases, 1, 2);
    CHECK(std::abs(diag[0](0) - Complex(-1.0, 0.0)) < 1e-12);
  }
  SUBCASE("unit modulus everywhere") {
    RngStream rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      PhaseConfig random = zero_phases(cfg);
      for (auto& p : random.phase)
        for (int m = 0; m < p.size(); ++m) p(m) = rng.uniform(0.0, 2.0 * M_PI);
      for (int op = 1; op <= 2; ++op)
        for (const auto& d : compose_phase_matrices(alloc, random, op, 2))
          for (int m = 0; m < d.size(); ++m)
            CHECK(std::abs(std::abs(d(m)) - 1.0) < 1e-12);
    }
  }
  SUBCASE("op index out of range") {
    CHECK_THROWS_AS(compose_phase_matrices(alloc, phases, 0, 2),
                    std::invalid_argument);
  }
}

TEST_CASE("effective channels sum reflected and direct paths") {
  SystemConfig cfg = tiny_config();
  RngStream topo_rng(2);
  const Topology topo = sample_topology(cfg, topo_rng);
  RngStream rng(9);
  ChannelSet ch = sample_channels(topo, cfg, rng);
  RisAllocation alloc{{1, 2}};
  PhaseConfig phases = zero_phases(cfg);

  SUBCASE("zero reflected paths leave the direct channel") {
    ChannelSet direct_only = ch;
    zero_reflected_paths(direct_only);
    const auto h = effective_channels(direct_only, alloc, phases, 1);
    for (int k = 0; k < cfg.users_per_op; ++k)
      for (int j = 0; j < cfg.bs_per_op; ++j)
        CHECK((h[k].col(j) - direct_only.direct[0][j][k]).norm() == 0.0);
  }

  SUBCASE("scalar composition") {
    SystemConfig one = cfg;
    one.num_ops = 1;
    one.bs_per_op = 1;
    one.users_per_op = 1;
    one.num_antennas = 1;
    one.num_ris = 1;
    one.elements_per_ris = 1;
    ChannelSet scalar;
    scalar.direct = {{{CVector::Zero(1)}}};
    scalar.bs_ris = {{{CMatrix::Ones(1, 1)}}};
    scalar.ris_user = {{{CVector::Ones(1)}}};
    RisAllocation a1{{1}};
    PhaseConfig p1;
    p1.phase.push_back(Eigen::VectorXd::Zero(1));
    const auto h = effective_channels(scalar, a1, p1, 1);
    CHECK(std::abs(h[0](0, 0) - Complex(1.0, 0.0)) < 1e-15);
  }

  SUBCASE("random instance matches term-by-term evaluation") {
    RngStream arng(13);
    for (int trial = 0; trial < 20; ++trial) {
      PhaseConfig random = zero_phases(cfg);
      for (auto& p : random.phase)
        for (int m = 0; m < p.size(); ++m) p(m) = arng.uniform(0.0, 2.0 * M_PI);
      const auto h = effective_channels(ch, alloc, random, 1);
      const auto diag = compose_phase_matrices(alloc, random, 1, 2);
      for (int k = 0; k < cfg.users_per_op; ++k)
        for (int j = 0; j < cfg.bs_per_op; ++j) {
          CVector manual = ch.direct[0][j][k];
          for (int l = 0; l < cfg.num_ris; ++l) {
            for (int n = 0; n < cfg.num_antennas; ++n) {
              Complex acc(0.0, 0.0);
              for (int m = 0; m < cfg.elements_per_ris; ++m)
                acc += std::conj(ch.bs_ris[0][j][l](m, n)) * diag[l](m) *
                       ch.ris_user[0][l][k](m);
              manual(n) += acc;
            }
          }
          CHECK((h[k].col(j) - manual).norm() < 1e-12 * manual.norm());
        }
    }
  }

  SUBCASE("identity neutrality is bit exact") {
    PhaseConfig mutated = phases;
    mutated.phase[1] << 1.234, 5.678;  // surface 2 belongs to the other OP
    const auto base = effective_channels(ch, alloc, phases, 1);
    const auto after = effective_channels(ch, alloc, mutated, 1);
    for (int k = 0; k < cfg.users_per_op; ++k)
      for (int j = 0; j < cfg.bs_per_op; ++j)
        for (int n = 0; n < cfg.num_antennas; ++n)
          CHECK(base[k](n, j) == after[k](n, j));
  }
}

TEST_CASE("beamforming normalization enforces per-station power") {
  UserAssociation assoc{{1}};
  CMatrix raw(2, 1);
  raw << Complex(2.0, 0.0), Complex(0.0, 0.0);

  SUBCASE("single user scaling") {
    const CMatrix w = normalize_beamforming(raw, assoc, 0.5);
    CHECK(w.col(0).squaredNorm() == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("idempotence") {
    const CMatrix w = normalize_beamforming(raw, assoc, 0.5);
    const CMatrix again = normalize_beamforming(w, assoc, 0.5);
    CHECK((w - again).norm() <= 1e-12);
  }
  SUBCASE("symmetric split") {
    UserAssociation both{{1, 1}};
    CMatrix two(2, 2);
    two << Complex(1, 0), Complex(0, 0), Complex(0, 0), Complex(1, 0);
    const CMatrix w = normalize_beamforming(two, both, 0.5);
    CHECK(w.col(0).squaredNorm() == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w.col(1).squaredNorm() == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("degenerate all-zero group") {
    CMatrix zero = CMatrix::Zero(2, 1);
    CHECK_THROWS_AS(normalize_beamforming(zero, assoc, 0.5), std::runtime_error);
  }
  SUBCASE("random groups hit the power constraint") {
    RngStream rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const int K = 3;
      const int J = 2;
      UserAssociation a;
      a.serving_bs.resize(K);
      for (int k = 0; k < K; ++k)
        a.serving_bs[k] = 1 + static_cast<int>(rng.uniform_int(J));
      CMatrix m(2, K);
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < 2; ++n) m(n, k) = Complex(rng.normal(), rng.normal());
      const CMatrix w = normalize_beamforming(m, a, 0.7);
      for (int j = 1; j <= J; ++j) {
        double power = 0.0;
        bool any = false;
        for (int k = 0; k < K; ++k)
          if (a.serving_bs[k] == j) {
            power += w.col(k).squaredNorm();
            any = true;
          }
        if (any) CHECK(power == doctest::Approx(0.7).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("sinr divides own-beam power by co-station interference plus noise") {
  SUBCASE("single user, unit everything") {
    std::vector<CMatrix> h{CMatrix(2, 1)};
    h[0] << Complex(1, 0), Complex(0, 0);
    CMatrix w(2, 1);
    w << Complex(1, 0), Complex(0, 0);
    const Eigen::VectorXd gamma = sinr(h, w, UserAssociation{{1}}, 1.0);
    CHECK(gamma(0) == doctest::Approx(1.0));
  }
  SUBCASE("orthogonal beams produce no interference") {
    std::vector<CMatrix> h(2, CMatrix(2, 1));
    h[0] << Complex(1, 0), Complex(0, 0);
    h[1] << Complex(0, 0), Complex(1, 0);
    CMatrix w(2, 2);
    w << Complex(1, 0), Complex(0, 0), Complex(0, 0), Complex(1, 0);
    const Eigen::VectorXd gamma = sinr(h, w, UserAssociation{{1, 1}}, 1e-2);
    CHECK(gamma(0) == doctest::Approx(100.0));
    CHECK(gamma(1) == doctest::Approx(100.0));
  }
  SUBCASE("fixed literals match direct evaluation") {
    std::vector<CMatrix> h(2, CMatrix(2, 1));
    h[0] << Complex(0.3, -0.2), Complex(-0.1, 0.4);
    h[1] << Complex(0.5, 0.1), Complex(0.2, -0.3);
    CMatrix w(2, 2);
    w << Complex(0.6, 0.2), Complex(-0.3, 0.1), Complex(0.1, -0.5),
        Complex(0.4, 0.4);
    const double sigma2 = 0.05;
    const Eigen::VectorXd gamma = sinr(h, w, UserAssociation{{1, 1}}, sigma2);
    for (int k = 0; k < 2; ++k) {
      const Complex own = (h[k].adjoint() * w.col(k))(0, 0);
      const Complex cross = (h[k].adjoint() * w.col(1 - k))(0, 0);
      const double expect = std::norm(own) / (std::norm(cross) + sigma2);
      CHECK(gamma(k) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("own-beam gain monotonicity") {
    std::vector<CMatrix> h(2, CMatrix(2, 1));
    h[0] << Complex(0.4, 0.0), Complex(0.1, 0.2);
    h[1] << Complex(0.2, 0.1), Complex(0.3, 0.0);
    CMatrix w(2, 2);
    w << Complex(0.5, 0.0), Complex(0.2, 0.0), Complex(0.0, 0.0),
        Complex(0.3, 0.0);
    const Eigen::VectorXd before = sinr(h, w, UserAssociation{{1, 1}}, 0.01);
    CMatrix boosted = w;
    boosted.col(0) *= 1.5;  // larger own-beam gain for user 1
    const Eigen::VectorXd after = sinr(h, boosted, UserAssociation{{1, 1}}, 0.01);
    CHECK(after(0) > before(0));
  }
}

TEST_CASE("sum rate is the log2 sum") {
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK(sum_rate(one) == doctest::Approx(1.0));
  Eigen::VectorXd zeros = Eigen::VectorXd::Zero(2);
  CHECK(sum_rate(zeros) == doctest::Approx(0.0));
  Eigen::VectorXd pair(2);
  pair << 3.0, 1.0;
  CHECK(sum_rate(pair) == doctest::Approx(3.0));
  Eigen::VectorXd bad(1);
  bad << -0.5;
  CHECK_THROWS_AS(sum_rate(bad), std::domain_error);
}

TEST_CASE("step pipeline matches the independent oracle") {
  SystemConfig cfg = tiny_config();
  RngStream topo_rng(21);
  const Topology topo = sample_topology(cfg, topo_rng);
  RngStream ch_rng(22);
  RngStream act_rng(23);

  for (int trial = 0; trial < 10; ++trial) {
    const ChannelSet ch = sample_channels(topo, cfg, ch_rng);
    RisAllocation alloc{{1 + static_cast<int>(act_rng.uniform_int(2)),
                         1 + static_cast<int>(act_rng.uniform_int(2))}};
    std::vector<OpAction> actions;
    for (int s = 0; s < cfg.num_ops; ++s)
      actions.push_back(random_action(cfg, act_rng));
    const StepResult result = step(ch, alloc, actions, cfg);
    for (int s = 0; s < cfg.num_ops; ++s) {
      const double expect = oracle_op_rate(ch, alloc, actions[s], cfg, s);
      CHECK(result.rate[s] == doctest::Approx(expect).epsilon(1e-10));
    }
  }
}

TEST_CASE("step with zero reflection is allocation independent") {
  SystemConfig cfg = tiny_config();
  RngStream topo_rng(31);
  const Topology topo = sample_topology(cfg, topo_rng);
  RngStream ch_rng(32);
  ChannelSet ch = sample_channels(topo, cfg, ch_rng);
  zero_reflected_paths(ch);
  RngStream act_rng(33);
  std::vector<OpAction> actions;
  for (int s = 0; s < cfg.num_ops; ++s) actions.push_back(random_action(cfg, act_rng));

  const StepResult a = step(ch, RisAllocation{{1, 1}}, actions, cfg);
  const StepResult b = step(ch, RisAllocation{{2, 1}}, actions, cfg);
  for (int s = 0; s < cfg.num_ops; ++s)
    CHECK(a.rate[s] == doctest::Approx(b.rate[s]).epsilon(1e-14));
}

TEST_CASE("zero phases on owned surfaces equal identity reflection") {
  SystemConfig cfg = tiny_config();
  RngStream topo_rng(41);
  const Topology topo = sample_topology(cfg, topo_rng);
  RngStream ch_rng(42);
  const ChannelSet ch = sample_channels(topo, cfg, ch_rng);
  RngStream act_rng(43);
  std::vector<OpAction> actions;
  for (int s = 0; s < cfg.num_ops; ++s) {
    actions.push_back(random_action(cfg, act_rng));
    for (auto& p : actions.back().phases.phase) p.setZero();
  }
  // All surfaces owned by OP 1 with zero phases: OP 2 sees identity either way.
  const StepResult all_one = step(ch, RisAllocation{{1, 1}}, actions, cfg);
  const StepResult all_two = step(ch, RisAllocation{{2, 2}}, actions, cfg);
  CHECK(all_one.rate[1] == doctest::Approx(all_two.rate[1]).epsilon(1e-12));
}
