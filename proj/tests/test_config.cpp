#include <catch_amalgamated.hpp>

#include <filesystem>

#include "pvp/config.hpp"
#include "pvp/error.hpp"
#include "pvp/io.hpp"

using namespace pvp;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
    const auto dir = std::filesystem::temp_directory_path() / "pvp_test_config";
    std::filesystem::create_directories(dir);
    const auto p = dir / name;
    io::write_file(p, contents);
    return p;
}

}  // namespace

TEST_CASE("defaults carry the published hyperparameters") {
    const StageConfig c;
    CHECK(c.loss.margin == 1.0);
    CHECK(c.loss.tau == 0.02);
    CHECK(c.stage2.lambda == 0.5);
    CHECK(c.stage1.epochs == 40);
    CHECK(c.stage2.epochs == 20);
    CHECK(c.stage1.lr == 0.1);
    CHECK(c.stage2.lr_text == 1e-4);
    CHECK(c.stage2.lr_pvp == 1e-6);
    CHECK(c.stage2.context_length == 16);
    CHECK(c.batch_size == 32);
    CHECK(c.loss.gamma == 1.0);
    CHECK(c.loss.eta == 1.0);
    CHECK(c.loss.nu == 1.0);
    CHECK(c.loss.vtc == LossVariant::cross_entropy);
    CHECK(c.loss.visual == LossVariant::ranking);
    CHECK(c.loss.text == LossVariant::ranking);
    CHECK(c.infer.alpha == 0.5);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("flags override the config file") {
    const auto path = temp_file("lambda.toml", "[stage2]\nlambda = 0.3\nepochs = 5\n");
    CHECK(load_config(path).stage2.lambda == 0.3);
    const auto c = load_config(path, {{"stage2.lambda", "0.7"}});
    CHECK(c.stage2.lambda == 0.7);
    CHECK(c.stage2.epochs == 5);
}

TEST_CASE("out-of-range values raise a range error") {
    CHECK_THROWS_AS(load_config({}, {{"stage2.lambda", "1.5"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"infer.alpha", "-0.1"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"loss.tau", "0"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"batch_size", "0"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"stage2.context_length", "80"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"stage1.prompt_extent", "6"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"stage1.epochs", "-1"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"stage1.lr", "fast"}}), ParameterError);
    CHECK_THROWS_AS(load_config({}, {{"stage2.normalize", "maybe"}}), ParameterError);
}

TEST_CASE("unknown keys list the valid ones") {
    try {
        StageConfig c;
        apply_setting(c, "stage2.lamda", "0.5");
        FAIL("expected ParameterError");
    } catch (const ParameterError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("stage2.lamda") != std::string::npos);
        CHECK(msg.find("stage2.lambda") != std::string::npos);
        CHECK(msg.find("loss.margin") != std::string::npos);
    }
    const auto path = temp_file("unknown.toml", "[loss]\nmargn = 2.0\n");
    CHECK_THROWS_AS(load_config(path), ParameterError);
}

TEST_CASE("tables and dotted keys are equivalent") {
    const auto a = temp_file("tables.toml", "seed = 9\n[loss]\nmargin = 2.0\nvtc = \"RL\"\n[encoder]\nembed_dim = 32\n");
    const auto b = temp_file("dotted.toml", "seed = 9\nloss.margin = 2.0\nloss.vtc = \"RL\"\nencoder.embed_dim = 32\n");
    const auto ca = load_config(a);
    const auto cb = load_config(b);
    CHECK(config_to_json(ca) == config_to_json(cb));
    CHECK(ca.loss.margin == 2.0);
    CHECK(ca.loss.vtc == LossVariant::ranking);
    CHECK(ca.encoder.embed_dim == 32);
    CHECK(ca.seed == 9);
}

TEST_CASE("malformed and missing config files are input errors") {
    CHECK_THROWS_AS(load_config(temp_file("broken.toml", "[loss\nmargin = ")), InputError);
    CHECK_THROWS_AS(load_config("/nonexistent/pvp.toml"), InputError);
    CHECK_THROWS_AS(load_config(temp_file("array.toml", "seed = [1, 2]\n")), InputError);
}

TEST_CASE("integer TOML values are accepted for real settings") {
    const auto c = load_config(temp_file("ints.toml", "[loss]\nmargin = 2\n"));
    CHECK(c.loss.margin == 2.0);
}

TEST_CASE("json round trip covers every key") {
    StageConfig c;
    apply_setting(c, "stage2.lambda", "0.25");
    apply_setting(c, "loss.text", "CE");
    apply_setting(c, "stage1.embedding_space", "true");
    apply_setting(c, "seed", "18446744073709551615");
    const auto j = config_to_json(c);
    CHECK(j.size() == config_keys().size());
    const auto back = config_from_json(j);
    CHECK(config_to_json(back) == j);
    CHECK(back.seed == 18446744073709551615ULL);
    for (const auto& k : config_keys()) CHECK(setting_value(back, k) == setting_value(c, k));
}

TEST_CASE("run manifest records config, inputs and blob ids") {
    RunManifest m;
    m.command = "train-stage1";
    m.argv = {"pvp", "train-stage1", "--seed", "3"};
    m.config.seed = 3;
    const auto input = temp_file("input.txt", "hello\n");
    m.add_input(input);
    m.outputs.push_back("out.pvpc");
    const auto j = m.to_json();
    CHECK(j["seed"] == 3);
    CHECK(j["command"] == "train-stage1");
    // git hash-object of "hello\n".
    CHECK(j["inputs"][0]["blob"] == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(j["config"]["stage2.lambda"] == 0.5);
}
