#include <doctest.h>

#include <cmath>
#include <random>

#include "dmdfm/errors.hpp"
#include "dmdfm/gmm.hpp"
#include "dmdfm/rng.hpp"
#include "support/oracles.hpp"

using namespace dmdfm;

namespace {

/// AR(1) + factor panel with i.i.d. noise; the supplied scores are the truth.
struct TestData {
  PanelDataset panel;
  PanelTensor scores;
};

TestData simulate_linear(int n, int t, int r, double rho, const Vector& beta, double noise_sd,
                         std::uint64_t seed) {
  Rng rng(seed);
  TestData out;
  out.panel = oracle::make_panel(Matrix::Zero(n, t));
  out.scores = PanelTensor(n, t, r);
  for (int i = 0; i < n; ++i) {
    double y_prev = rng.normal();
    for (int s = 0; s < t; ++s) {
      double v = rho * y_prev;
      for (int j = 0; j < r; ++j) {
        const double f = rng.normal();
        out.scores.at(i, s, j) = f;
        v += beta[j] * f;
      }
      v += noise_sd * rng.normal();
      out.panel.y(i, s) = v;
      y_prev = v;
    }
  }
  return out;
}

GmmProblem identity_block_problem(int n, int ne) {
  GmmProblem p;
  p.n = n;
  p.n_periods = ne + 2;
  p.r = 0;
  p.dy = Matrix::Zero(n, ne);
  p.dy_lag = Matrix::Zero(n, ne);
  p.df = PanelTensor(n, ne, 0);
  p.block_rows.assign(ne, 1);
  p.block_offsets.resize(ne);
  for (int e = 0; e < ne; ++e) p.block_offsets[e] = e;
  p.moment_count = ne;
  p.blocks.assign(n, std::vector<Vector>(ne, Vector::Constant(1, 1.0)));
  return p;
}

}  // namespace

TEST_CASE("uncollapsed moment counts match the block-count formula") {
  // (Te, r) -> Te(Te-1)/2 + r Te (Te-1), panel has Te + 1 columns.
  for (auto [te, r, expected] : {std::tuple{3, 0, 3L}, std::tuple{4, 2, 30L}, std::tuple{5, 1, 30L}}) {
    const TestData td = simulate_linear(4, te + 1, r, 0.3, Vector::Constant(r, 0.5), 0.1, 7);
    const GmmProblem p = build_instruments(td.panel, td.scores);
    CHECK(p.moment_count == expected);
  }
}

TEST_CASE("blocks enumerate the instrument definition by hand") {
  // Te = 3 (4 columns), r = 0: equations at columns 2 and 3 with response
  // lags (y0) and (y0, y1).
  const TestData td = simulate_linear(3, 4, 0, 0.3, Vector(0), 0.1, 8);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  REQUIRE(p.n_equations() == 2);
  CHECK(p.block_rows == std::vector<int>{1, 2});
  CHECK(p.moment_count == 3);
  // Rows are hand-built H entries up to the per-row equilibration constant.
  auto scale = [&](int e, int row, int i, double raw) { return p.blocks[i][e][row] / raw; };
  const double s00 = scale(0, 0, 0, td.panel.y(0, 0));
  const double s10 = scale(1, 0, 0, td.panel.y(0, 0));
  const double s11 = scale(1, 1, 0, td.panel.y(0, 1));
  for (int i = 0; i < 3; ++i) {
    CHECK(p.blocks[i][0][0] == doctest::Approx(s00 * td.panel.y(i, 0)).epsilon(1e-12));
    CHECK(p.blocks[i][1][0] == doctest::Approx(s10 * td.panel.y(i, 0)).epsilon(1e-12));
    CHECK(p.blocks[i][1][1] == doctest::Approx(s11 * td.panel.y(i, 1)).epsilon(1e-12));
  }
  CHECK(p.dy(1, 0) == td.panel.y(1, 2) - td.panel.y(1, 1));
  CHECK(p.dy_lag(1, 0) == td.panel.y(1, 1) - td.panel.y(1, 0));
}

TEST_CASE("lag-depth cap keeps one response instrument per equation") {
  const TestData td = simulate_linear(3, 6, 0, 0.3, Vector(0), 0.1, 9);
  InstrumentOptions opts;
  opts.max_lag_depth = 1;
  const GmmProblem p = build_instruments(td.panel, td.scores, opts);
  for (int rows : p.block_rows) CHECK(rows == 1);
  CHECK(p.moment_count == p.n_equations());
}

TEST_CASE("one-step weight inverts the MA(1) pattern for identity blocks") {
  const GmmProblem p = identity_block_problem(5, 2);
  const WeightMatrix wm = one_step_weight(p);
  CHECK(wm.w(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(wm.w(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(wm.w(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_FALSE(wm.regularized);
}

TEST_CASE("one-step weight is invariant to duplicating every individual") {
  const TestData td = simulate_linear(12, 5, 1, 0.4, Vector::Constant(1, 0.7), 0.5, 10);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  GmmProblem doubled = p;
  doubled.n = 2 * p.n;
  doubled.dy.conservativeResize(2 * p.n, Eigen::NoChange);
  doubled.dy_lag.conservativeResize(2 * p.n, Eigen::NoChange);
  PanelTensor df2(2 * p.n, p.n_equations(), p.r);
  for (int i = 0; i < p.n; ++i) {
    doubled.dy.row(p.n + i) = p.dy.row(i);
    doubled.dy_lag.row(p.n + i) = p.dy_lag.row(i);
    df2.individual(i) = p.df.individual(i);
    df2.individual(p.n + i) = p.df.individual(i);
    doubled.blocks.push_back(p.blocks[i]);
  }
  doubled.df = df2;
  const Matrix w1 = one_step_weight(p).w;
  const Matrix w2 = one_step_weight(doubled).w;
  CHECK((w1 - w2).cwiseAbs().maxCoeff() < 1e-9 * w1.cwiseAbs().maxCoeff());
}

TEST_CASE("identity-U weight matches the dense definition") {
  const TestData td = simulate_linear(9, 5, 0, 0.4, Vector(0), 0.5, 11);
  InstrumentOptions opts;
  opts.identity_u = true;
  const GmmProblem p = build_instruments(td.panel, td.scores, opts);
  Matrix dense = Matrix::Zero(p.q(), p.q());
  for (int i = 0; i < p.n; ++i) {
    const Matrix z = p.z_matrix(i);
    dense += z * z.transpose();
  }
  dense /= p.n;
  const Matrix expected = dense.inverse();
  CHECK((one_step_weight(p).w - expected).cwiseAbs().maxCoeff() <
        1e-8 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("noiseless AR(1) is recovered exactly") {
  const TestData td = simulate_linear(10, 5, 0, 0.5, Vector(0), 0.0, 12);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate est = gmm_solve(p, one_step_weight(p));
  CHECK(est.rho_hat == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(est.residuals.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noiseless factor model is recovered exactly") {
  const TestData td = simulate_linear(10, 5, 1, 0.6, Vector::Constant(1, 0.8), 0.0, 13);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate est = gmm_solve(p, one_step_weight(p));
  CHECK(est.rho_hat == doctest::Approx(0.6).epsilon(1e-8));
  CHECK(est.beta_f_hat[0] == doctest::Approx(0.8).epsilon(1e-8));
}

TEST_CASE("closed form matches a derivative-free minimization of the objective") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rr(seed * 31);
    const int n = 15 + rr.uniform_int(10);
    const int r = rr.uniform_int(3);
    Vector beta(r);
    for (int j = 0; j < r; ++j) beta[j] = rr.uniform(0.3, 1.2);
    const TestData td = simulate_linear(n, 5, r, 0.5, beta, 0.4, seed);
    const GmmProblem p = build_instruments(td.panel, td.scores);
    const WeightMatrix wm = one_step_weight(p);
    const GmmEstimate est = gmm_solve(p, wm);

    // Oracle: minimize the weighted moment quadratic form assembled from
    // dense Z matrices, by Nelder-Mead.
    const oracle::DenseGmm d = oracle::dense_pieces(p);
    auto objective = [&](const Vector& theta) {
      Vector g = Vector::Zero(p.q());
      for (int i = 0; i < p.n; ++i) g += d.z[i] * (d.dy[i] - d.x[i] * theta);
      g /= p.n;
      return g.dot(wm.w * g);
    };
    const Vector start = Vector::Zero(r + 1);
    const Vector opt = oracle::nelder_mead(objective, start);
    CHECK(std::abs(opt[0] - est.rho_hat) < 1e-5);
    for (int j = 0; j < r; ++j) CHECK(std::abs(opt[j + 1] - est.beta_f_hat[j]) < 1e-5);
  }
}

TEST_CASE("gradient of the objective vanishes at the estimate") {
  const TestData td = simulate_linear(25, 6, 2, 0.4, (Vector(2) << 0.9, 0.5).finished(), 0.6, 14);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate est = gmm_solve(p, one_step_weight(p));
  const oracle::DenseGmm d = oracle::dense_pieces(p);
  Vector g = Vector::Zero(p.q());
  for (int i = 0; i < p.n; ++i) g += d.z[i] * (d.dy[i] - d.x[i] * est.coefficients());
  g /= p.n;
  const Vector grad = -2.0 * d.sx.transpose() * (est.weight_used * g) / p.n;
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("estimate beats 1000 random perturbations") {
  const TestData td = simulate_linear(20, 5, 1, 0.5, Vector::Constant(1, 0.8), 0.5, 15);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const WeightMatrix wm = one_step_weight(p);
  const GmmEstimate est = gmm_solve(p, wm);
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector beta = est.beta_f_hat;
    double rho = est.rho_hat + 0.2 * rng.normal();
    for (int j = 0; j < beta.size(); ++j) beta[j] += 0.2 * rng.normal();
    CHECK(gmm_objective(p, wm.w, rho, beta) >= est.objective_value - 1e-12);
  }
}

TEST_CASE("projected sample moment reproduces the objective") {
  const TestData td = simulate_linear(18, 5, 1, 0.5, Vector::Constant(1, 0.8), 0.5, 16);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate est = gmm_solve(p, one_step_weight(p));
  const oracle::DenseGmm d = oracle::dense_pieces(p);
  Vector g = Vector::Zero(p.q());
  for (int i = 0; i < p.n; ++i) g += d.z[i] * (d.dy[i] - d.x[i] * est.coefficients());
  g /= p.n;
  CHECK(g.dot(est.weight_used * g) ==
        doctest::Approx(est.objective_value).epsilon(1e-10));
}

TEST_CASE("exactly identified: estimate is independent of the weight") {
  const TestData td = simulate_linear(20, 3, 1, 0.5, Vector::Constant(1, 0.8), 0.3, 17);
  InstrumentOptions opts;
  opts.contemporaneous_f_only = true;
  const GmmProblem p = build_instruments(td.panel, td.scores, opts);
  REQUIRE(p.q() == p.n_params());
  Rng rng(5);
  Matrix base = Matrix::Zero(p.q(), p.q());
  for (int i = 0; i < p.q(); ++i) base(i, i) = 1.0 + rng.uniform01();
  WeightMatrix w1{Matrix::Identity(p.q(), p.q()), false};
  WeightMatrix w2{base, false};
  const GmmEstimate e1 = gmm_solve(p, w1);
  const GmmEstimate e2 = gmm_solve(p, w2);
  CHECK(std::abs(e1.rho_hat - e2.rho_hat) < 1e-8);
  CHECK((e1.beta_f_hat - e2.beta_f_hat).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("estimates are invariant to individual reordering") {
  const TestData td = simulate_linear(14, 5, 1, 0.5, Vector::Constant(1, 0.8), 0.5, 18);
  const GmmProblem p = build_instruments(td.panel, td.scores);

  PanelDataset reversed = td.panel;
  PanelTensor scores_rev(td.scores.n, td.scores.t, td.scores.k);
  for (int i = 0; i < td.panel.n_individuals; ++i) {
    reversed.y.row(i) = td.panel.y.row(td.panel.n_individuals - 1 - i);
    scores_rev.individual(i) = td.scores.individual(td.panel.n_individuals - 1 - i);
  }
  const GmmProblem p2 = build_instruments(reversed, scores_rev);
  const GmmEstimate e1 = two_step(p);
  const GmmEstimate e2 = two_step(p2);
  CHECK(std::abs(e1.rho_hat - e2.rho_hat) < 1e-10);
  CHECK((e1.beta_f_hat - e2.beta_f_hat).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("two-step on noiseless data returns the first step flagged") {
  const TestData td = simulate_linear(10, 5, 1, 0.6, Vector::Constant(1, 0.8), 0.0, 19);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate est = two_step(p);
  CHECK(est.second_step_degenerate);
  CHECK(est.rho_hat == doctest::Approx(0.6).epsilon(1e-8));
  CHECK(est.first_step_objective.has_value());
}

TEST_CASE("two-step estimates are invariant to nonsingular instrument transforms") {
  const TestData td = simulate_linear(30, 4, 1, 0.5, Vector::Constant(1, 0.8), 0.4, 20);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate lib = two_step(p);

  // Dense oracle, untransformed and transformed by a fixed nonsingular C.
  const Vector plain = oracle::dense_gmm(p, true);
  Rng rng(6);
  Matrix c(p.q(), p.q());
  for (int i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
  c += 3.0 * Matrix::Identity(p.q(), p.q());
  const Vector transformed = oracle::dense_gmm(p, true, &c);

  CHECK((plain - transformed).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(plain[0] - lib.rho_hat) < 1e-8);
  CHECK(std::abs(plain[1] - lib.beta_f_hat[0]) < 1e-8);
}

TEST_CASE("one-step and two-step agree for large homoskedastic panels") {
  std::vector<double> gap_rho, gap_beta;
  for (int seed = 0; seed < 100; ++seed) {
    const TestData td =
        simulate_linear(2000, 5, 1, 0.5, Vector::Constant(1, 0.8), 1.0, 1000 + seed);
    const GmmProblem p = build_instruments(td.panel, td.scores);
    const GmmEstimate one = gmm_solve(p, one_step_weight(p));
    const GmmEstimate two = two_step(p);
    gap_rho.push_back(std::abs(one.rho_hat - two.rho_hat));
    gap_beta.push_back(std::abs(one.beta_f_hat[0] - two.beta_f_hat[0]));
  }
  CHECK(oracle::median(gap_rho) < 0.02);
  CHECK(oracle::median(gap_beta) < 0.02);
}

TEST_CASE("avar scales with the residual variance at fixed weight") {
  const TestData td = simulate_linear(25, 5, 1, 0.5, Vector::Constant(1, 0.8), 0.5, 21);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  GmmEstimate est = gmm_solve(p, one_step_weight(p));
  const Matrix base = asymptotic_variance(est, p);
  est.residuals *= 3.0;
  const Matrix scaled = asymptotic_variance(est, p);
  CHECK((scaled - 9.0 * base).cwiseAbs().maxCoeff() < 1e-10 * base.cwiseAbs().maxCoeff());
}

TEST_CASE("avar halves when every individual is duplicated") {
  const TestData td = simulate_linear(12, 5, 1, 0.5, Vector::Constant(1, 0.8), 0.5, 22);
  const TestData twice = [&] {
    TestData out;
    out.panel = oracle::make_panel(Matrix(2 * 12, 5));
    out.scores = PanelTensor(24, 5, 1);
    out.panel.y << td.panel.y, td.panel.y;
    out.scores.flat << td.scores.flat, td.scores.flat;
    return out;
  }();
  const GmmProblem p1 = build_instruments(td.panel, td.scores);
  const GmmProblem p2 = build_instruments(twice.panel, twice.scores);
  const WeightMatrix w1 = one_step_weight(p1);
  const GmmEstimate e1 = gmm_solve(p1, w1);
  const GmmEstimate e2 = gmm_solve(p2, one_step_weight(p2));
  const Matrix a1 = asymptotic_variance(e1, p1);
  const Matrix a2 = asymptotic_variance(e2, p2);
  CHECK((a2 - 0.5 * a1).cwiseAbs().maxCoeff() < 1e-8 * a1.cwiseAbs().maxCoeff());
}

TEST_CASE("avar diagonal tracks the Monte Carlo sampling variance") {
  const int reps = 100;
  std::vector<double> rho_hats, beta_hats, avar_rho, avar_beta;
  for (int rep = 0; rep < reps; ++rep) {
    const TestData td =
        simulate_linear(200, 10, 1, 0.5, Vector::Constant(1, 0.8), 1.0, 5000 + rep);
    const GmmProblem p = build_instruments(td.panel, td.scores);
    const GmmEstimate est = gmm_solve(p, one_step_weight(p));
    rho_hats.push_back(est.rho_hat);
    beta_hats.push_back(est.beta_f_hat[0]);
    avar_rho.push_back(est.avar(0, 0));
    avar_beta.push_back(est.avar(1, 1));
  }
  auto variance = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (v.size() - 1);
  };
  const double ratio_rho = oracle::median(avar_rho) / variance(rho_hats);
  const double ratio_beta = oracle::median(avar_beta) / variance(beta_hats);
  CHECK(ratio_rho > 0.5);
  CHECK(ratio_rho < 2.0);
  CHECK(ratio_beta > 0.5);
  CHECK(ratio_beta < 2.0);
}

namespace {
bool g_warned = false;
void record_warning(const std::string&) { g_warned = true; }
}  // namespace

TEST_CASE("singular weight accumulation falls back to a flagged pseudo-inverse") {
  GmmProblem p = identity_block_problem(4, 2);
  // A zero instrument row makes the accumulation singular.
  for (auto& blocks : p.blocks) blocks[1] = Vector::Constant(1, 0.0);
  g_warned = false;
  set_warn_handler(&record_warning);
  const WeightMatrix wm = one_step_weight(p);
  set_warn_handler(nullptr);
  CHECK(wm.regularized);
  CHECK(g_warned);
}

TEST_CASE("rank-deficient design reports the condition number") {
  const TestData td = simulate_linear(10, 5, 0, 0.0, Vector(0), 0.0, 23);
  GmmProblem p = build_instruments(td.panel, td.scores);
  p.dy_lag.setZero();  // no regressor signal at all
  CHECK_THROWS_WITH_AS(gmm_solve(p, one_step_weight(p)),
                       doctest::Contains("condition number"), NumericalError);
}

TEST_CASE("estimate serializes to json with flags") {
  const TestData td = simulate_linear(10, 5, 1, 0.5, Vector::Constant(1, 0.8), 0.3, 24);
  const GmmProblem p = build_instruments(td.panel, td.scores);
  const GmmEstimate est = two_step(p);
  const std::string json = est.to_json();
  CHECK(json.find("\"rho_hat\":") != std::string::npos);
  CHECK(json.find("\"std_errors\":") != std::string::npos);
  CHECK(json.find("\"first_step_objective\":") != std::string::npos);
}
