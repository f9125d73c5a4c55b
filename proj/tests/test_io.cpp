#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <string>

#include "ductnav/checkpoint.hpp"
#include "ductnav/config.hpp"

using namespace ductnav;

TEST(config, defaults_round_trip_through_resolved_text) {
    const config::RunConfig def;
    const std::string text = config::resolved_text(def);
    const auto back = config::parse_config(text);
    EXPECT_EQ(config::resolved_text(back), text);
    EXPECT_EQ(config::config_hash(back), config::config_hash(def));
}

TEST(config, overrides_round_trip_bitwise) {
    const auto cfg = config::parse_config(R"(
[run]
algo = sac
seed = 42
[duct]
max_bend_deg = 17.3
radius = 0.3
[quad]
mass = 0.0301
[ppo]
lr = 0.00033
hidden = 64, 32
[sac]
lr_constant = true
lr_initial = 0.0003
)");
    EXPECT_EQ(cfg.algo, config::Algo::SAC);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.ppo.hidden, (std::vector<int>{64, 32}));
    EXPECT_DOUBLE_EQ(cfg.env.duct.max_bend_angle, 17.3 * std::numbers::pi / 180.0);
    const auto again = config::parse_config(config::resolved_text(cfg));
    EXPECT_EQ(again.env.duct.max_bend_angle, cfg.env.duct.max_bend_angle);
    EXPECT_EQ(again.env.quad.k_thrust, cfg.env.quad.k_thrust);
    EXPECT_EQ(config::resolved_text(again), config::resolved_text(cfg));
}

TEST(config, derived_thrust_balances_gravity) {
    const auto cfg = config::parse_config("[quad]\nmass = 0.05\n");
    const auto& q = cfg.env.quad;
    EXPECT_NEAR(4 * q.k_thrust * q.omega_hover * q.omega_hover, 0.05 * q.gravity, 1e-15);
}

TEST(config, unknown_key_is_rejected_by_name) {
    try {
        config::parse_config("[ppo]\nhorizn = 12\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("ppo.horizn"), std::string::npos);
    }
}

TEST(config, unknown_section_and_bare_keys_rejected) {
    EXPECT_THROW(config::parse_config("[pp0]\nhorizon = 12\n"), ConfigError);
    EXPECT_THROW(config::parse_config("horizon = 12\n"), ConfigError);
}

TEST(config, malformed_values_rejected) {
    EXPECT_THROW(config::parse_config("[ppo]\nhorizon = 12.5\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[ppo]\ngamma = fast\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[ppo]\ngamma = nan\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[run]\nalgo = td3\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[reward]\npreset = a2c\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[sac]\nlr_constant = maybe\n"), ConfigError);
}

TEST(config, invalid_values_fail_validation) {
    EXPECT_THROW(config::parse_config("[ppo]\ngamma = 1.5\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[sac]\ntau = 0\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[duct]\nradius = -1\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[reward]\nw_crash = -3\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[run]\niterations = 0\n"), ConfigError);
    EXPECT_THROW(config::parse_config("[ppo]\nreward_scale = 0\n"), ConfigError);
}

TEST(config, reward_preset_applies_before_weights_regardless_of_order) {
    const auto cfg = config::parse_config("[reward]\nw_progress = 7\npreset = sac\n");
    EXPECT_EQ(cfg.env.reward.weight(env::Term::Progress), 7.0);
    EXPECT_EQ(cfg.env.reward.weight(env::Term::CenterlineDeviation), 10.0);
    EXPECT_EQ(cfg.env.reward.preset, env::Preset::SAC);
}

TEST(config, hash_tracks_numbers_but_not_output_dir) {
    config::RunConfig a;
    config::RunConfig b = a;
    b.out_dir = "elsewhere";
    EXPECT_EQ(config::config_hash(a), config::config_hash(b));
    b.ppo.lr = 2e-3;
    EXPECT_NE(config::config_hash(a), config::config_hash(b));
}

TEST(config, fnv1a_reference_values) {
    EXPECT_EQ(config::fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(config::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(config::fnv1a("foobar"), 0x85944171f73967e8ULL);
}

// ---------------------------------------------------------------------------

namespace {

ckpt::Checkpoint sample_checkpoint() {
    ckpt::Checkpoint c;
    c.meta["algo"] = "ppo";
    c.meta["iteration"] = 7;
    c.meta["nested"] = {{"b", 2}, {"a", 0.1}};
    c.put("f", std::vector<float>{1.5f, -0.0f, std::numeric_limits<float>::denorm_min(),
                                  std::numeric_limits<float>::max(), 3.14159274f});
    c.put("d", std::vector<double>{0.1, -1e-300, 2.0 / 3.0});
    c.put("u", std::vector<std::uint8_t>{0, 1, 255});
    c.put("empty", std::vector<float>{});
    return c;
}

}  // namespace

TEST(checkpoint, arrays_round_trip_bitwise) {
    const auto c = sample_checkpoint();
    const auto back = ckpt::decode(ckpt::encode(c));
    const auto& f = back.get<float>("f");
    const auto& f0 = c.get<float>("f");
    ASSERT_EQ(f.size(), f0.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint32_t>(f[i]), std::bit_cast<std::uint32_t>(f0[i]));
    EXPECT_EQ(back.get<double>("d"), c.get<double>("d"));
    EXPECT_EQ(back.get<std::uint8_t>("u"), c.get<std::uint8_t>("u"));
    EXPECT_TRUE(back.get<float>("empty").empty());
    EXPECT_EQ(back.meta, c.meta);
}

TEST(checkpoint, encode_decode_encode_is_byte_identical) {
    const std::string a = ckpt::encode(sample_checkpoint());
    EXPECT_EQ(ckpt::encode(ckpt::decode(a)), a);
}

TEST(checkpoint, little_endian_layout) {
    ckpt::Checkpoint c;
    c.put("x", std::vector<float>{1.0f});
    const std::string b = ckpt::encode(c);
    EXPECT_EQ(b.substr(0, 8), "DNAVCKPT");
    EXPECT_EQ(static_cast<unsigned char>(b[8]), ckpt::kFormatVersion);
    // 1.0f = 0x3f800000 stored low byte first
    EXPECT_EQ(static_cast<unsigned char>(b[b.size() - 1]), 0x3f);
    EXPECT_EQ(static_cast<unsigned char>(b[b.size() - 2]), 0x80);
    EXPECT_EQ(static_cast<unsigned char>(b[b.size() - 4]), 0x00);
}

TEST(checkpoint, version_mismatch_rejected_with_clear_error) {
    std::string b = ckpt::encode(sample_checkpoint());
    b[8] = 9;
    try {
        ckpt::decode(b);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos);
    }
}

TEST(checkpoint, corrupt_inputs_rejected) {
    const std::string b = ckpt::encode(sample_checkpoint());
    EXPECT_THROW(ckpt::decode("nonsense"), IoError);
    EXPECT_THROW(ckpt::decode("XNAVCKPT" + b.substr(8)), IoError);
    EXPECT_THROW(ckpt::decode(b.substr(0, b.size() - 3)), IoError);
    EXPECT_THROW(ckpt::decode(b + "x"), IoError);
    EXPECT_THROW(ckpt::load("/nonexistent/dir/ckpt.bin"), IoError);
}

TEST(checkpoint, missing_or_mistyped_array_reported) {
    const auto c = sample_checkpoint();
    EXPECT_THROW(c.get<float>("nope"), IoError);
    EXPECT_THROW(c.get<double>("f"), IoError);
}
