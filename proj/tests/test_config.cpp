#include <doctest.h>

#include "mimlite/config.hpp"

using namespace mimlite;

namespace {

const char* kSample = R"(
# experiment settings
[pretrain]
epochs = 50
mask_ratio = 0.75
normalize_targets = true
tag = mae baseline

[distill]
lambda = 0.5
enabled = yes

[sweep.low_mask]
mask_ratio = 0.4
)";

}  // namespace

TEST_CASE("parsing reads sections, trims, and skips comments") {
    const Config cfg = Config::parse_string(kSample);
    CHECK(cfg.has_section("pretrain"));
    CHECK(cfg.has_section("sweep.low_mask"));
    CHECK_FALSE(cfg.has_section("finetune"));
    CHECK(cfg.get_int("pretrain", "epochs", -1) == 50);
    CHECK(cfg.get_double("pretrain", "mask_ratio", 0.0) == doctest::Approx(0.75));
    CHECK(cfg.get_bool("pretrain", "normalize_targets", false));
    CHECK(cfg.get_bool("distill", "enabled", false));
    CHECK(cfg.get_string("pretrain", "tag", "") == "mae baseline");  // spaces kept
    CHECK(cfg.get_double("sweep.low_mask", "mask_ratio", 0.0) == doctest::Approx(0.4));
}

TEST_CASE("missing keys fall back; require_string does not") {
    const Config cfg = Config::parse_string(kSample);
    CHECK(cfg.get_int("pretrain", "batch_size", 128) == 128);
    CHECK(cfg.get_string("pretrain", "absent", "dflt") == "dflt");
    CHECK(cfg.require_string("pretrain", "tag") == "mae baseline");
    CHECK_THROWS_AS(cfg.require_string("pretrain", "absent"), InputError);
}

TEST_CASE("type errors and malformed lines are input errors") {
    const Config cfg = Config::parse_string(kSample);
    CHECK_THROWS_AS(cfg.get_int("pretrain", "mask_ratio", 0), InputError);
    CHECK_THROWS_AS(cfg.get_double("pretrain", "tag", 0.0), InputError);
    CHECK_THROWS_AS(cfg.get_bool("pretrain", "epochs", false), InputError);

    CHECK_THROWS_AS(Config::parse_string("key = 1\n"), InputError);  // before any section
    CHECK_THROWS_AS(Config::parse_string("[a]\nnot a pair\n"), InputError);
    CHECK_THROWS_AS(Config::parse_string("[unterminated\n"), InputError);
    CHECK_THROWS_AS(Config::parse_string("[a]\nx = 1\nx = 2\n"), InputError);  // duplicate
    CHECK_THROWS_AS(Config::parse_file("/nonexistent/config.ini"), InputError);

    // Dotted keys are legal: sweep arms store "section.key" override paths.
    const Config sweep = Config::parse_string("[sweep.arm]\npretrain.mask_ratio = 0.6\n");
    CHECK(sweep.get_double("sweep.arm", "pretrain.mask_ratio", 0.0) == doctest::Approx(0.6));

    // Line numbers surface in the message.
    try {
        Config::parse_string("[a]\nok = 1\nbroken\n", "test.ini");
        CHECK(false);
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("test.ini:3") != std::string::npos);
    }
}

TEST_CASE("overrides update values and create sections") {
    Config cfg = Config::parse_string(kSample);
    cfg.apply_override("pretrain.epochs=99");
    CHECK(cfg.get_int("pretrain", "epochs", -1) == 99);

    cfg.apply_override("finetune.base_lr = 0.004");
    CHECK(cfg.get_double("finetune", "base_lr", 0.0) == doctest::Approx(0.004));

    // Section names may contain dots; the key is the last component.
    cfg.apply_override("sweep.low_mask.mask_ratio=0.3");
    CHECK(cfg.get_double("sweep.low_mask", "mask_ratio", 0.0) == doctest::Approx(0.3));

    CHECK_THROWS_AS(cfg.apply_override("no_equals"), InputError);
    CHECK_THROWS_AS(cfg.apply_override("nodot=1"), InputError);
    CHECK_THROWS_AS(cfg.apply_override(".key=1"), InputError);
    CHECK_THROWS_AS(cfg.apply_override("section.=1"), InputError);
}

TEST_CASE("unknown keys are caught against a schema") {
    Config cfg = Config::parse_string("[pretrain]\nepochs = 5\nepohcs = 9\n");
    try {
        cfg.require_known_keys("pretrain", {"epochs", "mask_ratio"});
        CHECK(false);
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("epohcs") != std::string::npos);
    }
    cfg.require_known_keys("absent_section", {"anything"});  // no-op
}
