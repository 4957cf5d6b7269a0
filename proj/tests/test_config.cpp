#include <fstream>

#include "doctest.h"
#include "refdrop/config.hpp"
#include "test_support.hpp"

using namespace refdrop;
using namespace refdrop::cli;
using nlohmann::json;

namespace {

double rfg_coefficient(const RunConfig& c) {
  return std::get<policy::Rfg>(c.pipeline.policy).coefficient;
}

std::string error_key(const json& doc) {
  try {
    resolve_config(doc);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("empty config yields the default pipeline") {
  const auto c = resolve_config(json::object());
  const pipeline::PipelineConfig d;
  CHECK(c.preset == Preset::Consistent);
  CHECK(c.pipeline.latent_size == d.latent_size);
  CHECK(c.pipeline.tokens() == 256);
  CHECK(c.pipeline.model_dim == d.model_dim);
  CHECK(c.pipeline.num_blocks == 4);
  CHECK(c.pipeline.key_dim == 32);
  CHECK(c.pipeline.value_dim == 32);
  CHECK(c.pipeline.steps == 20);
  CHECK(c.pipeline.batch_size == 4);
  CHECK(c.pipeline.weight_seed == 42);
  CHECK(c.pipeline.noise_seed == 7);
  CHECK(rfg_coefficient(c) == 0.35);
  CHECK(c.precision == oracle::Precision::F32);
  CHECK(resolve_config(json()).pipeline.batch_size == 4);
}

TEST_CASE("presets resolve to the published reference strengths") {
  CHECK(rfg_coefficient(resolve_config({{"preset", "diverse"}})) == -0.3);
  CHECK(rfg_coefficient(resolve_config({{"preset", "temporal"}})) == 0.2);
  const double consistent = rfg_coefficient(resolve_config({{"preset", "consistent"}}));
  CHECK(consistent == 0.35);
  CHECK(consistent >= 0.3);
  CHECK(consistent <= 0.4);
  CHECK(kConsistentLow == 0.3);
  CHECK(kConsistentHigh == 0.4);

  const auto blend = resolve_config({{"preset", "blend"}, {"num_references", 3}});
  const auto& multi = std::get<policy::RfgMulti>(blend.pipeline.policy);
  CHECK(multi.coefficients.size() == 3);
  for (double cj : multi.coefficients) {
    CHECK(cj == 0.3);
    CHECK(cj >= 0.2);
    CHECK(cj <= 0.4);
  }
  CHECK(kBlendLow == 0.2);
  CHECK(kBlendHigh == 0.4);
  CHECK(resolve_config({{"preset", "custom"}}).preset == Preset::Custom);
}

TEST_CASE("explicit keys override the preset") {
  CHECK(rfg_coefficient(resolve_config({{"preset", "diverse"}, {"coefficient", -0.5}})) == -0.5);
  const auto c = resolve_config({{"preset", "temporal"}, {"policy", "concat"}});
  CHECK(std::holds_alternative<policy::Concat>(c.pipeline.policy));
  const auto m = resolve_config({{"policy", "rfg_multi"}, {"coefficients", {0.25, 0.35}}});
  CHECK(std::get<policy::RfgMulti>(m.pipeline.policy).coefficients ==
        std::vector<double>{0.25, 0.35});
  CHECK(m.num_references == 2);
}

TEST_CASE("all policy names parse") {
  for (const char* name :
       {"plain", "concat", "cross_frame", "rfg", "rfg_multi", "rfg_rank1"}) {
    CHECK(policy_name(resolve_config({{"policy", name}}).pipeline.policy) == name);
  }
}

TEST_CASE("errors name the offending key") {
  CHECK(error_key({{"coefficinet", 0.3}}) == "coefficinet");
  CHECK(error_key({{"check", {{"trails", 3}}}}) == "check.trails");
  CHECK(error_key({{"bench", {{"grid", {{{"L", 4}, {"d", 4}, {"d_v", 4}}}}}}}) == "bench.grid[0].B");
  CHECK(error_key({{"preset", "loud"}}) == "preset");
  CHECK(error_key({{"policy", "magic"}}) == "policy");
  CHECK(error_key({{"precision", "f16"}}) == "precision");
  CHECK(error_key({{"steps", 0}}) == "steps");
  CHECK(error_key({{"steps", "ten"}}) == "steps");
  CHECK(error_key({{"seed", -1}}) == "seed");
  CHECK(error_key({{"coefficient", "big"}}) == "coefficient");
  CHECK(error_key({{"batch_size", 1}}) == "batch_size");
  CHECK(error_key({{"policy", "concat"}, {"layer_coefficients", {0.1, 0.1, 0.1, 0.1}}}) ==
        "layer_coefficients");
  CHECK(error_key({{"layer_coefficients", {0.1}}}) == "layer_coefficients");
  CHECK(error_key({{"shared_noise", {9}}}) == "shared_noise");
  CHECK(error_key({{"num_references", 3}, {"coefficients", {0.1, 0.2}}}) == "coefficients");
  CHECK(error_key({{"check", {{"grid", "4x4"}}}}) == "check.grid");
  CHECK(error_key({{"check", {{"threshold", -1.0}}}}) == "check.threshold");
  CHECK(error_key({{"sweep", {{"coefficients", json::array()}}}}) == "sweep.coefficients");
  CHECK(error_key(json::array()) == "");

  try {
    resolve_config({{"coefficinet", 0.3}});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("coefficinet") != std::string::npos);
  }
}

TEST_CASE("config files") {
  const auto dir = testing::scratch_dir("config");
  CHECK_THROWS_AS(load_config_file((dir / "missing.json").string()), ConfigError);
  std::ofstream(dir / "bad.json") << "{\"steps\": 3,";
  try {
    load_config_file((dir / "bad.json").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("malformed JSON") != std::string::npos);
  }
  std::ofstream(dir / "good.json") << R"({"steps": 3, "check": {"trials": 2}})";
  const auto doc = load_config_file((dir / "good.json").string());
  CHECK(resolve_config(doc).pipeline.steps == 3);
}

TEST_CASE("merge_json lets overrides win and keeps siblings") {
  json base = {{"steps", 3}, {"check", {{"trials", 2}, {"grid", "1x1x1"}}}};
  merge_json(base, {{"steps", 5}, {"check", {{"trials", 9}}}});
  CHECK(base["steps"] == 5);
  CHECK(base["check"]["trials"] == 9);
  CHECK(base["check"]["grid"] == "1x1x1");
}

TEST_CASE("grids") {
  const auto g = parse_grid("1x1x1,8x4x32");
  REQUIRE(g.size() == 2);
  CHECK(g[1] == oracle::GridCell{8, 4, 32});
  CHECK_THROWS_AS(parse_grid("8x4"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grid("8x0x4"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grid("axbxc"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grid(""), std::invalid_argument);

  const auto from_lists =
      resolve_config({{"check", {{"grid", {{"L", {1, 2}}, {"d", {4}}, {"d_v", {1, 32}}}}}}});
  CHECK(from_lists.check.grid.size() == 4);

  const auto bench = resolve_config({{"bench", {{"grid", "64x64x64x8,16x8x8x2"}}}});
  REQUIRE(bench.bench.grid.size() == 2);
  CHECK(bench.bench.grid[1] == BenchCell{16, 8, 8, 2});
  CHECK(resolve_config({}).bench.grid ==
        std::vector<BenchCell>{{64, 64, 64, 8}, {256, 64, 64, 4}});
}

TEST_CASE("to_json round-trips through resolve_config") {
  for (const json& doc :
       {json::object(), json{{"preset", "blend"}, {"num_references", 2}, {"batch_size", 5}},
        json{{"preset", "diverse"}, {"precision", "f64"}, {"shared_noise", {2}}},
        json{{"layer_coefficients", {0.1, 0.2, 0.3, 0.4}}, {"check", {{"threshold", 1e-6}}}},
        json{{"policy", "rfg_rank1"}, {"bench", {{"grid", "8x8x8x2"}}}}}) {
    const auto first = resolve_config(doc);
    const auto text = to_json(first);
    CHECK(to_json(resolve_config(text)) == text);
  }
}
