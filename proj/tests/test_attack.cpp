#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "ddv/attack.hpp"
#include "ddv/error.hpp"
#include "support.hpp"

using namespace ddv;
using testing::check_gradient;
using testing::worst;

namespace {

// Decoder whose output ignores the signature: logit +20 on `codes`, -20 elsewhere.
attack::DecoderParams constant_decoder(const testing::TinyModels& m, const std::vector<CodeIndex>& codes) {
  auto dec = attack::original_decoder(m.visit, m.patient);
  dec.visit_decoder[2].setZero();
  dec.visit_decoder[3].setConstant(-20.0);
  for (auto c : codes) dec.visit_decoder[3](c, 0) = 20.0;
  return dec;
}

std::vector<attack::PurchasedPair> pairs_with_visits(const testing::TinyModels& m,
                                                     const std::vector<VisitVector>& visits, std::size_t n) {
  std::vector<attack::PurchasedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    attack::PurchasedPair p;
    p.record = {"r" + std::to_string(i), visits, std::nullopt};
    p.signature.vector = embed::Vector::Zero(static_cast<Eigen::Index>(m.patient.p));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_CASE("confusion arithmetic on a two-visit toy") {
  Confusion c;
  c.add(VisitVector({1, 2, 7}), VisitVector({1, 2, 3}));  // TP 2, FP 1, FN 1
  c.add(VisitVector({4}), VisitVector({4, 5}));           // TP 1, FN 1
  CHECK(c.true_positives == 3);
  CHECK(c.false_positives == 1);
  CHECK(c.false_negatives == 2);
  const auto pr = score(c);
  CHECK(pr.precision == doctest::Approx(0.75));
  CHECK(pr.recall == doctest::Approx(0.6));
  CHECK(pr.precision_defined);
}

TEST_CASE("perfect and empty reconstructions") {
  const auto m = testing::tiny_models(3, 8, 8, 1);
  const std::vector<VisitVector> visits{VisitVector({1, 5}), VisitVector({1, 5})};
  const auto pairs = pairs_with_visits(m, visits, 4);

  const auto perfect = attack::evaluate_attack(constant_decoder(m, {1, 5}), pairs);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);

  const auto none = attack::evaluate_attack(constant_decoder(m, {}), pairs);
  CHECK(none.recall == 0.0);
  CHECK(none.precision == 0.0);
  CHECK_FALSE(none.precision_defined);
}

TEST_CASE("parameter distance on hand-computed vectors") {
  nn::Vector zero = nn::Vector::Zero(3), v(3);
  v << 1, 2, 2;
  const auto d = attack::parameter_distance(v, zero);
  CHECK(d.distance == doctest::Approx(9.0));
  CHECK(d.ratio == doctest::Approx(1.0));

  const auto same = attack::parameter_distance(v, v);
  CHECK(same.distance == 0.0);
  CHECK(same.ratio == 0.0);

  nn::Vector bumped = v;
  bumped(1) += 1.0;
  CHECK(attack::parameter_distance(v, bumped).distance == doctest::Approx(1.0));
  CHECK_THROWS_AS(attack::parameter_distance(v, nn::Vector::Zero(4)), PreconditionError);
}

TEST_CASE("parameter distance behaves as a squared metric") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  auto draw = [&] {
    nn::Vector x(20);
    for (auto& e : x) e = g(rng);
    return x;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = draw(), b = draw(), c = draw();
    const double ab = attack::parameter_distance(a, b).distance;
    const double ba = attack::parameter_distance(b, a).distance;
    const double bc = attack::parameter_distance(b, c).distance;
    const double ac = attack::parameter_distance(a, c).distance;
    CHECK(ab == doctest::Approx(ba));
    CHECK(ab > 0.0);
    CHECK(ac <= 2.0 * (ab + bc) + 1e-12);
  }
}

TEST_CASE("decoder parameter distance covers both decoder blocks") {
  const auto m = testing::tiny_models(4, 8, 8, 1);
  const auto a = attack::original_decoder(m.visit, m.patient);
  CHECK(attack::parameter_distance(a, a).distance == 0.0);
  auto b = a;
  b.patient_decoder[0](0, 0) += 1.0;
  b.visit_decoder[0](0, 0) += 2.0;
  const auto d = attack::parameter_distance(a, b);
  CHECK(d.distance == doctest::Approx(5.0));
  CHECK(d.ratio == doctest::Approx(5.0 / a.flatten().squaredNorm()));
  CHECK(a.flatten().size() ==
        static_cast<Eigen::Index>(a.patient_decoder.parameter_count() + a.visit_decoder.parameter_count()));
}

TEST_CASE("purchased corpus preconditions") {
  const auto m = testing::tiny_models(5, 8, 8, 1);
  const auto enc = embed::public_encoder(m.visit, m.patient);
  attack::PurchasedCorpus empty;
  CHECK_THROWS_AS(attack::validate(empty), PreconditionError);
  CHECK_THROWS_AS(attack::retrain_decoder(empty, enc, {}, 1), PreconditionError);

  std::mt19937_64 rng(1);
  attack::PurchasedCorpus mixed{attack::publish(m.corpus.records, enc, 0.1, rng)};
  CHECK_NOTHROW(attack::validate(mixed));
  mixed.pairs[1].signature.model_version = 2;
  CHECK_THROWS_AS(attack::validate(mixed), PreconditionError);
}

TEST_CASE("decoder loss gradients match central differences") {
  const auto m = testing::tiny_models(6, 8, 6, 2);
  const auto enc = embed::public_encoder(m.visit, m.patient);
  std::mt19937_64 rng(2);
  const auto all = attack::publish(m.corpus.records, enc, 0.3, rng);
  const std::vector<attack::PurchasedPair> batch(all.begin(), all.begin() + 5);
  auto dec = attack::original_decoder(m.visit, m.patient);
  auto pg = dec.patient_decoder.zeros_like();
  auto vg = dec.visit_decoder.zeros_like();
  attack::decoder_loss(dec, batch, {}, &pg, &vg);
  auto loss = [&] { return attack::decoder_loss(dec, batch); };
  CHECK(worst(check_gradient(dec.patient_decoder, pg, loss)) < 1e-4);
  CHECK(worst(check_gradient(dec.visit_decoder, vg, loss)) < 1e-4);
}

TEST_CASE("retrained decoder is deterministic per seed and keeps the public shape") {
  const auto m = testing::tiny_models(7, 8, 8, 3);
  const auto enc = embed::public_encoder(m.visit, m.patient);
  std::mt19937_64 rng(3);
  const attack::PurchasedCorpus bought{attack::publish(m.corpus.records, enc, 0.2, rng)};
  attack::AttackConfig cfg;
  cfg.visit_stage.epochs = 3;
  cfg.patient_stage.epochs = 3;
  cfg.joint_stage.epochs = 2;
  const auto a = attack::retrain_decoder(bought, enc, cfg, 9);
  const auto b = attack::retrain_decoder(bought, enc, cfg, 9);
  CHECK(a.flatten() == b.flatten());
  CHECK(a.input_gain == b.input_gain);
  const auto original = attack::original_decoder(m.visit, m.patient);
  CHECK(a.patient_decoder.same_shape(original.patient_decoder));
  CHECK(a.visit_decoder.same_shape(original.visit_decoder));
  for (Eigen::Index k = 0; k < a.input_gain.size(); ++k) {
    CHECK(a.input_gain(k) >= 0.0);
    CHECK(a.input_gain(k) <= 1.0);
  }
  CHECK(original.input_gain.isOnes());
}

TEST_CASE("base-rate predictor follows the weighted marginal rule") {
  // Code 0 in every visit, code 1 in one of five, code 2 never.
  std::vector<PatientRecord> records;
  for (int i = 0; i < 5; ++i)
    records.push_back({"p" + std::to_string(i), {VisitVector(i == 0 ? std::vector<CodeIndex>{0, 1} : std::vector<CodeIndex>{0})}, 0});
  const auto f = attack::marginal_frequencies(records, 4);
  CHECK(f(0) == 1.0);
  CHECK(f(1) == doctest::Approx(0.2));
  CHECK(f(2) == 0.0);
  // w+ = 3: code 1 gets 0.6 / (0.6 + 0.8) < 0.5.
  const auto pr = attack::base_rate_recovery(records, records, 4);
  CHECK(pr.precision == 1.0);
  CHECK(pr.recall == doctest::Approx(5.0 / 6.0));
  // w+ = 5: 1.0 / (1.0 + 0.8) > 0.5, so code 1 is predicted in every visit.
  const auto pr5 = attack::base_rate_recovery(records, records, 4, {5.0, 1.0});
  CHECK(pr5.precision == doctest::Approx(0.6));
  CHECK(pr5.recall == 1.0);
}

TEST_CASE("noise sweep validates its grid and writes one row per sigma") {
  const auto m = testing::tiny_models(8, 8, 8, 2);
  attack::AttackConfig cfg;
  cfg.visit_stage.epochs = 2;
  cfg.patient_stage.epochs = 2;
  cfg.joint_stage.epochs = 1;
  const std::vector<double> unsorted{0.4, 0.2}, negative{-0.1}, grid{0.0, 0.5};
  CHECK_THROWS_AS(attack::noise_sweep(m.corpus, m.visit, m.patient, unsorted, cfg, 1), PreconditionError);
  CHECK_THROWS_AS(attack::noise_sweep(m.corpus, m.visit, m.patient, negative, cfg, 1), PreconditionError);
  const auto reports = attack::noise_sweep(m.corpus, m.visit, m.patient, grid, cfg, 1);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].epsilon == 0.0);
  CHECK(reports[1].epsilon == 0.5);
  CHECK(reports[0].param_distance == 0.0);
  for (const auto& r : reports) {
    CHECK(r.precision >= 0.0);
    CHECK(r.precision <= 1.0);
    CHECK(r.recall >= 0.0);
    CHECK(r.recall <= 1.0);
    CHECK(r.param_distance >= 0.0);
  }
  std::ostringstream out;
  attack::write_report_table(out, reports);
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "epsilon\tprecision\trecall\tparam_distance\tratio");
}
