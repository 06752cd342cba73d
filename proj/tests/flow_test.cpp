#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "flowfill/flow.hpp"
#include "support.hpp"

using namespace flowfill;
using flowfill::testing::random_matrix;
using flowfill::testing::relative_error;

namespace {

// Every s network outputs ln 2 and every t network 0.5, whatever the input.
FlowModel constant_flow(std::size_t layers) {
  FlowArchitecture arch{2, 4, std::vector<Partition>(layers, Partition{true, false})};
  FlowModel m(arch);
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string p = "coupling." + std::to_string(k);
    m.params().tensor(p + ".s.3.bias").setConstant(std::atanh(std::numbers::ln2));
    m.params().tensor(p + ".t.3.bias").setConstant(0.5);
  }
  return m;
}

void randomize(FlowModel& m, RngStream& rng, double scale) {
  for (Index i = 0; i < m.params().flat_size(); ++i) m.params().flat()(i) = scale * rng.normal();
}

double log_normal2(double a, double b) {
  return -std::log(2.0 * std::numbers::pi) - 0.5 * (a * a + b * b);
}

}  // namespace

TEST(Coupling, HandEvaluatedLayer) {
  const FlowModel m = constant_flow(1);
  Matrix x(1, 2);
  x << 1.0, 2.0;
  const FlowResult r = coupling_forward(x, m, 0);
  EXPECT_DOUBLE_EQ(r.z(0, 0), 1.0);
  EXPECT_NEAR(r.z(0, 1), 4.5, 1e-14);
  EXPECT_NEAR(r.logdet(0), std::numbers::ln2, 1e-14);
  EXPECT_NEAR(coupling_inverse(r.z, m, 0)(0, 1), 2.0, 1e-14);
}

TEST(Coupling, TwoLayersCompose) {
  const FlowModel m = constant_flow(2);
  Matrix x(1, 2);
  x << 1.0, 2.0;
  const FlowResult r = flow_forward(x, m);
  EXPECT_DOUBLE_EQ(r.z(0, 0), 1.0);
  EXPECT_NEAR(r.z(0, 1), 9.5, 1e-13);
  EXPECT_NEAR(r.logdet(0), 2.0 * std::numbers::ln2, 1e-14);
}

TEST(Flow, LogLikelihoodHandValue) {
  const FlowModel m = constant_flow(1);
  Matrix x(1, 2);
  x << 1.0, 2.0;
  EXPECT_NEAR(log_likelihood(x, m)(0), log_normal2(1.0, 4.5) + std::numbers::ln2, 1e-13);
}

TEST(Flow, ZeroParametersAreIdentity) {
  RngStream rng(3);
  const auto parts = FlowModel::sample_partitions(4, 3, rng);
  const FlowModel m(FlowArchitecture{4, 8, parts});
  const Matrix x = random_matrix(10, 4, rng);
  const FlowResult r = flow_forward(x, m);
  EXPECT_EQ(r.z, x);
  EXPECT_TRUE((r.logdet.array() == 0.0).all());
}

TEST(Flow, PartitionsAreProperSubsets) {
  RngStream rng(8);
  for (Index dim = 2; dim <= 10; ++dim) {
    for (const auto& d : FlowModel::sample_partitions(dim, 20, rng)) {
      const auto kept = std::count(d.begin(), d.end(), true);
      EXPECT_GT(kept, 0);
      EXPECT_LT(kept, dim);
    }
  }
  const auto one = FlowModel::sample_partitions(1, 3, rng);
  for (const auto& d : one) EXPECT_FALSE(d[0]);
}

TEST(Flow, DefaultHiddenWidth) {
  RngStream rng(1);
  EXPECT_EQ(FlowModel::create(3, rng).architecture().hidden_width, 8);
  EXPECT_EQ(FlowModel::create(12, rng).architecture().hidden_width, 12);
  EXPECT_EQ(FlowModel::create(3, rng).layers().size(), kDefaultCouplingLayers);
}

TEST(Flow, RejectsBadPartitionsAndShapes) {
  EXPECT_THROW(FlowModel(FlowArchitecture{2, 4, {Partition{true, true}}}), UsageError);
  EXPECT_THROW(FlowModel(FlowArchitecture{2, 4, {Partition{false, false}}}), UsageError);
  EXPECT_THROW(FlowModel(FlowArchitecture{2, 4, {Partition{true}}}), UsageError);
  RngStream rng(1);
  const FlowModel m = FlowModel::create(3, rng);
  EXPECT_THROW(flow_forward(Matrix::Zero(2, 4), m), UsageError);
  EXPECT_THROW(nll_loss(Matrix(0, 3), m), UsageError);
}

TEST(Flow, NonFiniteNamesCouplingLayer) {
  FlowModel m = constant_flow(2);
  Matrix x(1, 2);
  x << 1.0, 1e308;
  try {
    flow_forward(x, m);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coupling layer"), std::string::npos) << e.what();
  }
}

TEST(Nll, ExamplesFromDefinition) {
  RngStream rng(4);
  FlowModel m = FlowModel::create(3, rng);
  const Matrix batch = random_matrix(6, 3, rng);
  const Vector ll = log_likelihood(batch, m);
  EXPECT_NEAR(nll_loss(batch.topRows(1), m), -ll(0), 1e-14);

  Matrix permuted = batch.colwise().reverse();
  EXPECT_NEAR(nll_loss(permuted, m), nll_loss(batch, m), 1e-13);
  Matrix doubled(12, 3);
  doubled << batch, batch;
  EXPECT_NEAR(nll_loss(doubled, m), nll_loss(batch, m), 1e-13);
  EXPECT_NEAR(nll_loss(batch, m), -ll.mean(), 1e-13);
}

TEST(Flow, TapeAndBatchPathsAgree) {
  RngStream rng(5);
  FlowModel m = FlowModel::create(4, rng);
  randomize(m, rng, 0.3);
  const Matrix x = random_matrix(7, 4, rng);
  diff::Tape tape;
  const diff::Binding b = tape.bind(m.params(), false);
  const auto out = m.forward(tape, tape.constant(x), b);
  const FlowResult r = flow_forward(x, m);
  EXPECT_EQ(tape.value(out.z), r.z);
  EXPECT_EQ(Vector(tape.value(out.logdet).col(0)), r.logdet);
}

// Bijectivity for arbitrary parameter values, not just the initialization.
// Rounding grows with the magnitudes reached inside the flow, so the bound is
// 1e-9 relative to the largest |z|.
TEST(FlowProperty, RoundTrip) {
  for (int trial = 0; trial < 10; ++trial) {
    RngStream rng(500 + trial);
    const Index dim = 1 + static_cast<Index>(rng.uniform_index(16));
    FlowModel m = FlowModel::create(dim, rng);
    randomize(m, rng, 0.5);
    const Matrix x = random_matrix(200, dim, rng, 2.0);
    const Matrix z = flow_forward(x, m).z;
    const double magnitude = std::max(1.0, z.cwiseAbs().maxCoeff());
    EXPECT_LT((flow_inverse(z, m) - x).cwiseAbs().maxCoeff(), 1e-9 * magnitude)
        << "dim " << dim << ", max |z| " << magnitude;
  }
}

TEST(FlowProperty, RoundTripAtInitialization) {
  RngStream rng(510);
  const FlowModel m = FlowModel::create(16, rng);
  const Matrix x = random_matrix(1000, 16, rng);
  EXPECT_LT((flow_inverse(flow_forward(x, m).z, m) - x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FlowProperty, LogdetMatchesNumericJacobian) {
  for (Index dim = 1; dim <= 6; ++dim) {
    RngStream rng(600 + static_cast<std::uint64_t>(dim));
    FlowModel m = FlowModel::create(dim, rng);
    randomize(m, rng, 0.4);
    const Matrix x = random_matrix(5, dim, rng);
    const Vector logdet = flow_forward(x, m).logdet;
    const double h = 1e-6;
    for (Index r = 0; r < x.rows(); ++r) {
      Matrix jac(dim, dim);
      for (Index j = 0; j < dim; ++j) {
        Matrix plus = x.row(r), minus = x.row(r);
        plus(0, j) += h;
        minus(0, j) -= h;
        jac.col(j) = ((flow_forward(plus, m).z - flow_forward(minus, m).z) / (2 * h)).transpose();
      }
      const double numeric = std::log(std::abs(jac.determinant()));
      EXPECT_NEAR(numeric, logdet(r), 1e-4) << "dim " << dim << " row " << r;
    }
  }
}

TEST(FlowProperty, OneDimensionalDensityIntegratesToOne) {
  for (int trial = 0; trial < 5; ++trial) {
    RngStream rng(700 + trial);
    FlowModel m = FlowModel::create(1, rng);
    randomize(m, rng, 0.5);
    Matrix ends(2, 1);
    ends << -8.0, 8.0;
    const Matrix span = flow_inverse(ends, m);
    const double lo = span(0, 0), hi = span(1, 0);
    ASSERT_LT(lo, hi);
    const Index n = 100000;
    Matrix grid(n + 1, 1);
    for (Index i = 0; i <= n; ++i) grid(i, 0) = lo + (hi - lo) * static_cast<double>(i) / n;
    const Vector density = log_likelihood(grid, m).array().exp();
    const double dx = (hi - lo) / n;
    const double mass = dx * (density.sum() - 0.5 * (density(0) + density(n)));
    EXPECT_NEAR(mass, 1.0, 0.01) << "trial " << trial;
  }
}

TEST(FlowProperty, NllGradientMatchesFiniteDifferences) {
  RngStream rng(42);
  FlowModel m = FlowModel::create(3, rng, FlowOptions{2, 4});
  randomize(m, rng, 0.3);
  const Matrix batch = random_matrix(5, 3, rng);
  const diff::LossFn loss = [&](diff::Tape& t, const diff::Binding& b) {
    return nll_loss(t, t.constant(batch), m, b);
  };
  const auto check = flowfill::testing::check_gradients(loss, m.params());
  EXPECT_LT(check.max_error, 1e-4) << "worst coordinate " << check.worst;
  EXPECT_LE(check.skipped * 10, check.checked) << check.skipped << " coordinates skipped";
}
