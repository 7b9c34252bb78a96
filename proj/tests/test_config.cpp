#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <string>

#include "qmetro/config.hpp"

namespace qmetro {
namespace {

constexpr const char* kDcConfig = R"(seed = 7
workers = 2

[model]
name = "nv_dc"

[model.prior]
omega = [0.0, 1.0]

[agent]
kind = "mlp"

[budget]
kind = "measurements"
amount = 12

[loss]
mode = "log"

[training]
batch_size = 16
steps = 5

[particles]
count = 300
)";

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "test.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(Config, ParsesTheDocumentedKeys) {
  const auto c = parse_config(kDcConfig);
  EXPECT_EQ(c.model, "nv_dc");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.workers, 2u);
  EXPECT_EQ(c.agent_kind, "mlp");
  EXPECT_EQ(c.nv.budget.kind, BudgetKind::Measurements);
  EXPECT_DOUBLE_EQ(c.nv.budget.amount, 12.0);
  EXPECT_EQ(c.nv.budget.max_steps, 12u);
  EXPECT_EQ(c.loss.mode, LossMode::Log);
  EXPECT_EQ(c.training.batch_size, 16u);
  EXPECT_EQ(c.training.steps, 5u);
  EXPECT_EQ(c.nv.particles, 300u);
  ASSERT_EQ(c.nv.priors.size(), 1u);
  EXPECT_EQ(c.nv.priors[0].name, "omega");
}

TEST(Config, DefaultsForEveryModel) {
  for (const auto& name : model_names()) {
    const auto c = default_config(name);
    EXPECT_EQ(c.model, name);
    EXPECT_NO_THROW(make_task(c)) << name;
  }
  const auto dc = default_config("nv_dc");
  EXPECT_EQ(dc.nv.particles, 480u);
  EXPECT_EQ(dc.training.decay_steps, 100.0);
  EXPECT_THROW(default_config("nv_quantum"), ConfigError);
}

TEST(Config, UnknownKeysAreRejectedWithTheirLine) {
  const std::string text = std::string(kDcConfig) + "\n[training]\nbatchsize = 3\n";
  const auto top = error_of("seed = 1\nlearning = 3\n");
  EXPECT_NE(top.find("test.toml:2"), std::string::npos) << top;
  EXPECT_NE(top.find("'learning'"), std::string::npos) << top;
  const auto nested = error_of("[model]\nname = \"nv_dc\"\ncolour = \"red\"\n");
  EXPECT_NE(nested.find("test.toml:3"), std::string::npos) << nested;
  EXPECT_NE(nested.find("colour"), std::string::npos) << nested;
  EXPECT_FALSE(error_of("[particles]\ncount = 10\nsmoothing = 2\n").empty());
}

TEST(Config, TypeAndValueErrors) {
  EXPECT_NE(error_of("seed = \"seven\"\n").find("'seed'"), std::string::npos);
  EXPECT_FALSE(error_of("[model]\nname = \"nv_dc\"\n[model.prior]\nomega = [1.0, 0.0]\n").empty());
  EXPECT_FALSE(error_of("[model]\nname = \"nv_dc\"\n[loss]\nmode = \"huber\"\n").empty());
  EXPECT_FALSE(error_of("[model]\nname = \"nv_dc\"\n[budget]\nkind = \"photons\"\namount = 3\n").empty());
  EXPECT_FALSE(error_of("[model]\nname = \"warp_drive\"\n").empty());
  EXPECT_FALSE(error_of("seed = [1, 2\n").empty());
}

TEST(Config, DumpRoundTripsForEveryModel) {
  for (const auto& name : model_names()) {
    const auto c = default_config(name);
    const auto text = dump_config(c);
    const auto again = parse_config(text, name);
    EXPECT_EQ(dump_config(again), text) << name;
    EXPECT_EQ(config_hash(again), config_hash(c)) << name;
  }
  const auto custom = parse_config(kDcConfig);
  EXPECT_EQ(dump_config(parse_config(dump_config(custom))), dump_config(custom));
}

TEST(Config, HashCoversTheModelButNotTheRunSettings) {
  const auto base = parse_config(kDcConfig);
  auto reseeded = base;
  reseeded.seed = 99;
  reseeded.workers = 5;
  reseeded.training.steps = 1000;
  EXPECT_EQ(config_hash(reseeded), config_hash(base));
  auto particles = base;
  particles.nv.particles = 301;
  EXPECT_NE(config_hash(particles), config_hash(base));
  auto budget = base;
  budget.nv.budget.amount = 13;
  budget.nv.budget.max_steps = 13;
  EXPECT_NE(config_hash(budget), config_hash(base));
  const auto other = default_config("nv_ac");
  EXPECT_NE(config_hash(other), config_hash(base));
  EXPECT_EQ(hash_hex(0xABCull), "0000000000000abc");
}

TEST(Config, TimeBudgetNeedsAStepCap) {
  const std::string text = "[model]\nname = \"nv_dc\"\n[budget]\nkind = \"time\"\namount = 100\n";
  EXPECT_FALSE(error_of(text).empty());
  const auto c = parse_config(text + "max_steps = 50\n");
  EXPECT_EQ(c.nv.budget.kind, BudgetKind::TotalTime);
  EXPECT_EQ(c.nv.budget.max_steps, 50u);
}

TEST(Config, ShippedConfigsLoadAndCoverEveryModel) {
  std::set<std::string> models;
  for (const auto& entry : std::filesystem::directory_iterator(QMETRO_CONFIG_DIR)) {
    if (entry.path().extension() != ".toml") continue;
    SCOPED_TRACE(entry.path().string());
    const auto c = load_config(entry.path());
    EXPECT_NO_THROW(make_task(c));
    models.insert(c.model);
  }
  for (const auto& name : model_names()) EXPECT_TRUE(models.count(name)) << name;
}

}  // namespace
}  // namespace qmetro
