#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "vcmix/simulator.hpp"

using vcmix::SimConfig;

namespace {

SimConfig base(std::size_t n = 20000) {
  SimConfig c;
  c.n_clones = n;
  c.n_persons = 20;
  c.alpha = 1.0;
  c.beta = 200.0;
  c.pi = 0.2;
  c.seed = 3;
  return c;
}

} // namespace

TEST(Simulate, DeterministicPerSeed) {
  const auto a = vcmix::simulate(base(2000));
  const auto b = vcmix::simulate(base(2000));
  EXPECT_EQ(a.clones, b.clones);
  EXPECT_EQ(a.truth.labels, b.truth.labels);
  auto other = base(2000);
  other.seed = 4;
  EXPECT_NE(vcmix::simulate(other).clones, a.clones);
}

TEST(Simulate, ShapeAndIds) {
  const auto cfg = base(1000);
  const auto out = vcmix::simulate(cfg);
  ASSERT_EQ(out.clones.size(), 1000u);
  ASSERT_EQ(out.truth.keys.size(), 1000u);
  std::set<std::string> persons;
  std::set<std::pair<std::string, std::string>> keys;
  for (std::size_t i = 0; i < out.clones.size(); ++i) {
    const auto &s = out.clones[i];
    EXPECT_EQ(s.size(), 3u);
    EXPECT_EQ(s.person_id, out.truth.keys[i].person_id);
    EXPECT_EQ(s.clone_id, out.truth.keys[i].clone_id);
    EXPECT_NO_THROW(vcmix::validate(s));
    persons.insert(s.person_id);
    keys.insert({s.person_id, s.clone_id});
  }
  EXPECT_EQ(persons.size(), cfg.n_persons);
  EXPECT_EQ(keys.size(), out.clones.size());
  EXPECT_EQ(out.clones.front().person_id, "P00");
  EXPECT_EQ(out.clones.front().clone_id, "C000");
}

TEST(Simulate, OffsetsSharedWithinPerson) {
  const auto out = vcmix::simulate(base(1000));
  for (std::size_t i = 1; i < out.clones.size(); ++i)
    if (out.clones[i].person_id == out.clones[i - 1].person_id) {
      EXPECT_EQ(out.clones[i].offsets, out.clones[i - 1].offsets);
    }
}

TEST(Simulate, ZeroPiGivesNoDynamicClones) {
  auto cfg = base(3000);
  cfg.pi = 0.0;
  const auto out = vcmix::simulate(cfg);
  for (bool l : out.truth.labels)
    EXPECT_FALSE(l);
  for (const auto &l : out.truth.lambdas)
    EXPECT_EQ(l.size(), 1u);
}

TEST(Simulate, MomentsMatchGeneratingLaws) {
  auto cfg = base(60000);
  cfg.n_persons = 100;
  const auto out = vcmix::simulate(cfg);
  const double n = static_cast<double>(out.truth.labels.size());
  double k = 0;
  for (bool l : out.truth.labels)
    k += l;
  EXPECT_NEAR(k / n, 0.2, 3.0 * std::sqrt(0.2 * 0.8 / n));

  double s = 0, ss = 0, m_all = 0, n_all = 0, n_static = 0;
  for (std::size_t i = 0; i < out.truth.lambdas.size(); ++i) {
    for (double l : out.truth.lambdas[i]) {
      m_all += l;
      ++n_all;
    }
    if (out.truth.labels[i])
      continue;
    const double l = out.truth.lambdas[i][0];
    s += l;
    ss += l * l;
    ++n_static;
  }
  const double m = cfg.alpha / cfg.beta, v = cfg.alpha / (cfg.beta * cfg.beta);
  EXPECT_NEAR(m_all / n_all, m, 3.0 * std::sqrt(v / n_all));
  const double mean = s / n_static, var = ss / n_static - mean * mean;
  EXPECT_NEAR(mean, m, 4.0 * std::sqrt(v / n_static));
  // Gamma(1, b): fourth central moment 9 v^2
  EXPECT_NEAR(var, v, 4.0 * v * std::sqrt(8.0 / n_static));
}

TEST(Simulate, CountsArePoissonGivenLambda) {
  const auto out = vcmix::simulate(base());
  double z = 0, zz = 0, n = 0;
  for (std::size_t i = 0; i < out.clones.size(); ++i) {
    const auto &s = out.clones[i];
    const auto &l = out.truth.lambdas[i];
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double mu = l[l.size() == 1 ? 0 : k] * static_cast<double>(s.offsets[k]);
      if (mu < 1.0)
        continue;
      const double r = (static_cast<double>(s.counts[k]) - mu) / std::sqrt(mu);
      z += r;
      zz += r * r;
      ++n;
    }
  }
  ASSERT_GT(n, 10000);
  EXPECT_NEAR(z / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(zz / n, 1.0, 0.05);
}

TEST(Simulate, MissingnessDropsFollowupsOnly) {
  auto cfg = base();
  cfg.missing_rate = 0.14;
  const auto out = vcmix::simulate(cfg);
  double observed = 0, possible = 0;
  for (const auto &s : out.clones) {
    ASSERT_GE(s.size(), 1u);
    EXPECT_EQ(s.time_at(0), 0u);
    for (std::size_t k = 1; k < s.size(); ++k)
      EXPECT_GT(s.time_at(k), s.time_at(k - 1));
    observed += static_cast<double>(s.size() - 1);
    possible += cfg.n_followups - 1;
  }
  const double drop = 1.0 - observed / possible;
  EXPECT_NEAR(drop, 0.14, 4.0 * std::sqrt(0.14 * 0.86 / possible));
}

TEST(Simulate, MissingnessKeepsLabelsAndOffsets) {
  auto cfg = base(3000);
  const auto full = vcmix::simulate(cfg);
  cfg.missing_rate = 0.21;
  const auto miss = vcmix::simulate(cfg);
  EXPECT_EQ(full.truth.labels, miss.truth.labels);
  for (std::size_t i = 0; i < full.clones.size(); ++i)
    for (std::size_t k = 0; k < miss.clones[i].size(); ++k) {
      const auto t = miss.clones[i].time_at(k);
      EXPECT_EQ(miss.clones[i].offsets[k], full.clones[i].offsets[t]);
      EXPECT_EQ(miss.clones[i].counts[k], full.clones[i].counts[t]);
    }
}

TEST(Simulate, InvalidConfigs) {
  auto c = base(100);
  c.n_followups = 1;
  EXPECT_THROW(vcmix::simulate(c), vcmix::InvalidParameter);
  c = base(100);
  c.pi = 1.5;
  EXPECT_THROW(vcmix::simulate(c), vcmix::InvalidParameter);
  c = base(100);
  c.missing_rate = 1.0;
  EXPECT_THROW(vcmix::simulate(c), vcmix::InvalidParameter);
  c = base(10);
  c.n_persons = 11;
  EXPECT_THROW(vcmix::simulate(c), vcmix::InvalidParameter);
  c = base(10);
  c.alpha = 0.0;
  EXPECT_THROW(vcmix::simulate(c), vcmix::InvalidParameter);
}
