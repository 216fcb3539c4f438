#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef MIMLITE_BIN
#error "MIMLITE_BIN must point at the command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

const char* kLeanConfig = R"(
[model]
image_size = 8
patch_size = 4
depth = 2
embed_dim = 16
num_heads = 2
mlp_ratio = 2.0

[decoder]
depth = 1
embed_dim = 12
num_heads = 2

[pretrain]
epochs = 2
batch_size = 8
base_lr = 0.02
warmup_epochs = 1
seed = 5

[probe]
epochs = 4
batch_size = 16
base_lr = 1.0
seed = 3

[analyze]
mode = cka
batch_size = 8
max_batches = 1
seed = 1

[data]
kind = synthetic_blobs
image_size = 8
num_classes = 2
total = 24
train_fraction = 0.67
seed = 9
)";

int run_cli(const std::string& tail) {
    const std::string cmd = std::string(MIMLITE_BIN) + " " + tail + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path p = fs::temp_directory_path() / ("mimlite_cli_" + name + ".ini");
    std::ofstream f(p, std::ios::trunc);
    f << text;
    return p;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mimlite_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run executes configured stages and exits 0") {
    const fs::path cfg = write_config("run", kLeanConfig);
    const fs::path out = fresh_dir("run_out");
    const int rc = run_cli("run --config " + cfg.string() + " --out " + out.string());
    CHECK(rc == 0);
    CHECK(fs::exists(out / "pretrain" / "encoder.ckpt"));
    CHECK(fs::exists(out / "probe" / "metrics.csv"));
    CHECK(fs::exists(out / "analyze" / "cka.csv"));
    CHECK(fs::exists(out / "manifest.json"));
    fs::remove_all(out);
    fs::remove(cfg);
}

TEST_CASE("overrides change behaviour from the command line") {
    const fs::path cfg = write_config("ovr", kLeanConfig);
    const fs::path out = fresh_dir("ovr_out");
    const int rc = run_cli("pretrain --config " + cfg.string() +
                           " --override pretrain.epochs=1 --out " + out.string());
    CHECK(rc == 0);
    const std::string losses = slurp(out / "losses.csv");
    // 16 train images, batch 8, 1 epoch => 2 step rows + header.
    int lines = 0;
    for (char c : losses)
        if (c == '\n') ++lines;
    CHECK(lines == 3);
    fs::remove_all(out);
    fs::remove(cfg);
}

TEST_CASE("the analyze mode argument overrides the config") {
    const fs::path cfg = write_config("mode", kLeanConfig);
    const fs::path out = fresh_dir("mode_out");
    const int rc = run_cli("analyze attention --config " + cfg.string() + " --out " +
                           out.string());
    CHECK(rc == 0);
    CHECK(fs::exists(out / "attention_distance.csv"));
    CHECK_FALSE(fs::exists(out / "cka.csv"));
    fs::remove_all(out);
    fs::remove(cfg);
}

TEST_CASE("bad input exits 2") {
    const fs::path out = fresh_dir("bad_out");
    CHECK(run_cli("run --config /nonexistent.ini --out " + out.string()) == 2);

    const fs::path typo = write_config("typo", std::string(kLeanConfig) + "\n[pretrain2]\nx = 1\n");
    CHECK(run_cli("run --config " + typo.string() + " --out " + out.string()) == 2);
    fs::remove(typo);

    const fs::path bad_value =
        write_config("badvalue", std::string(kLeanConfig) + "\n[sweep.a]\npretrain.epochs = maybe\n");
    CHECK(run_cli("run --config " + bad_value.string() + " --out " + out.string()) == 2);
    fs::remove(bad_value);

    const fs::path cfg = write_config("usage", kLeanConfig);
    CHECK(run_cli("explode --config " + cfg.string() + " --out " + out.string()) == 2);
    CHECK(run_cli("pretrain --out " + out.string()) == 2);  // missing --config
    fs::remove(cfg);
    fs::remove_all(out);
}

TEST_CASE("help exits 0") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("pretrain --help") == 0);
}
