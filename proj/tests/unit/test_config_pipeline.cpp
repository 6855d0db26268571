#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <unistd.h>

#include "fcos/config.hpp"
#include "fcos/hash.hpp"
#include "fcos/pipeline.hpp"

using namespace fcos;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("fcos_pipe_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTiny =
    "[dataset]\nper_cell = 8\nlength = 64\nsnr_db = 0, 10\n"
    "[train]\nepochs = 1\nbatch = 32\n"
    "[fcos]\nwarm_epochs = 1\nprobe_epochs = 1\nfinal_epochs = 1\n"
    "[baseline]\nmethod = l1-channel\nfinetune_epochs = 1\n";

std::string config_error(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
    const auto c = parse_config("");
    EXPECT_EQ(c.model.name, "plain-cnn1d");
    EXPECT_EQ(c.train.lr, 0.001);
    EXPECT_EQ(c.train.batch, 128u);
    EXPECT_EQ(c.train.epochs, 30u);
    EXPECT_EQ(c.fcos.beta, 0.005);
    EXPECT_EQ(c.fcos.warm_epochs, 20u);
    EXPECT_EQ(c.fcos.probe_epochs, 5u);
    EXPECT_EQ(c.fcos.final_epochs, 80u);
    EXPECT_FALSE(c.baseline.method.has_value());
    EXPECT_EQ(c.model.num_classes, c.dataset.spec.classes.size());
}

TEST(Config, ReportsEveryBadFieldTogether) {
    const auto msg = config_error("[train]\nlr = -1\nbatch = many\n[fcos]\nkeep_ratio = 1.5\nsimilarity = manhattan\n");
    for (const char* f : {"train.lr", "train.batch", "fcos.keep_ratio", "fcos.similarity"}) EXPECT_NE(msg.find(f), std::string::npos) << f;
}

TEST(Config, UnknownSectionsAndKeys) {
    EXPECT_NE(config_error("[optim]\nlr = 1\n").find("optim: unknown section"), std::string::npos);
    EXPECT_NE(config_error("[train]\nlearning_rate = 1\n").find("train.learning_rate: unknown key"), std::string::npos);
    EXPECT_NE(config_error("[model]\narch = vgg\n").find("model.arch"), std::string::npos);
    EXPECT_NE(config_error("[train\n").find("config line"), std::string::npos);
}

TEST(Config, ResolvedSnapshotRoundTrips) {
    for (const char* text : {"", kTiny, "[model]\narch = residual-cnn1d\n[fcos]\nsimilarity = euclidean\norder = input-first\nkeep_ratio = 0.3\n"}) {
        const auto c = parse_config(text);
        const auto ini = to_ini(c);
        EXPECT_EQ(to_ini(parse_config(ini)), ini);
    }
}

TEST(Config, SeedOverrideReachesEverySeed) {
    auto c = parse_config(kTiny);
    c.override_seed(42);
    EXPECT_EQ(c.dataset.spec.seed, 42u);
    EXPECT_EQ(c.model.seed, 42u);
    EXPECT_EQ(c.train.seed, 42u);
    EXPECT_EQ(c.baseline.seed, 42u);
}

TEST(Config, OptionsFollowSections) {
    const auto c = parse_config("[train]\nlr = 0.01\nbatch = 64\n[fcos]\nbeta = 0.02\nprobe_epochs = 3\n");
    const auto t = c.train_options("warm", 7);
    EXPECT_EQ(t.epochs, 7u);
    EXPECT_EQ(t.batch, 64u);
    EXPECT_EQ(t.optimizer.lr, 0.01);
    const auto l = c.lacd_options(2);
    EXPECT_EQ(l.beta, 0.02);
    EXPECT_EQ(l.probe.epochs, 3u);
    EXPECT_EQ(l.probe.workers, 2u);
}

TEST(Pipeline, OutputDirectoryPrecedence) {
    auto c = parse_config("[output]\ndir = from_config\n");
    EXPECT_EQ(resolve_output_dir(fs::path("flag"), c), fs::path("flag"));
    EXPECT_EQ(resolve_output_dir(std::nullopt, c), fs::path("from_config"));
    c.output_dir.clear();
    ::setenv("FCOS_OUT", "from_env", 1);
    EXPECT_EQ(resolve_output_dir(std::nullopt, c), fs::path("from_env"));
    ::unsetenv("FCOS_OUT");
    EXPECT_EQ(resolve_output_dir(std::nullopt, c), fs::path("fcos_out"));
}

TEST(Pipeline, StageNames) {
    for (auto s : {Stage::Data, Stage::Train, Stage::Stage1, Stage::Lacd, Stage::Final, Stage::Baseline, Stage::Report})
        EXPECT_EQ(stage_from_string(to_string(s)), s);
    EXPECT_EQ(to_string(Stage::Stage1), "prune-channels");
    EXPECT_THROW(stage_from_string("prune"), ConfigError);
}

TEST(Pipeline, KeysChainThroughUpstreamSections) {
    const Pipeline a(parse_config(kTiny), "unused");
    const Pipeline b(parse_config(std::string(kTiny) + "[model]\nkernel = 5\n"), "unused");
    EXPECT_EQ(a.key(Stage::Data), b.key(Stage::Data));
    EXPECT_NE(a.key(Stage::Train), b.key(Stage::Train));
    EXPECT_NE(a.key(Stage::Final), b.key(Stage::Final));
    auto beta = parse_config(kTiny);
    beta.fcos.beta = 0.01;
    const Pipeline c(beta, "unused");
    EXPECT_EQ(a.key(Stage::Stage1), c.key(Stage::Stage1));
    EXPECT_NE(a.key(Stage::Lacd), c.key(Stage::Lacd));
}

TEST(Pipeline, RunMatchesManualSequenceAndResumes) {
    const auto manual = tmpdir("manual");
    const auto automatic = tmpdir("auto");
    const auto cfg = parse_config(kTiny);

    Pipeline m(cfg, manual);
    EXPECT_THROW(m.train(), ConfigError);
    m.gen_data();
    m.train();
    m.prune_channels();
    m.lacd();
    m.finetune();
    m.baseline();
    m.report();

    Pipeline r(cfg, automatic);
    r.run();
    for (auto s : {Stage::Data, Stage::Train, Stage::Stage1, Stage::Lacd, Stage::Final, Stage::Baseline})
        EXPECT_EQ(sha256_hex(slurp(m.artifact(s))), sha256_hex(slurp(r.artifact(s)))) << to_string(s);
    EXPECT_EQ(slurp(manual / "report.csv"), slurp(automatic / "report.csv"));
    EXPECT_EQ(slurp(automatic / "config.resolved.ini"), to_ini(cfg));

    const auto stage1 = sha256_hex(slurp(r.artifact(Stage::Stage1)));
    const auto trained = fs::last_write_time(r.artifact(Stage::Train));
    Pipeline again(cfg, automatic);
    again.run(Stage::Lacd, true);
    EXPECT_EQ(sha256_hex(slurp(r.artifact(Stage::Stage1))), stage1);
    EXPECT_EQ(fs::last_write_time(r.artifact(Stage::Train)), trained);

    auto other = cfg;
    other.train.lr = 0.01;
    Pipeline refused(other, automatic);
    const auto snapshot = slurp(automatic / "config.resolved.ini");
    try {
        refused.run(Stage::Lacd, true);
        FAIL() << "resume under a different config was accepted";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("refusing to resume"), std::string::npos) << e.what();
    }
    EXPECT_EQ(slurp(automatic / "config.resolved.ini"), snapshot);

    const auto ev = r.evaluate(r.artifact(Stage::Final), Split::Val);
    EXPECT_GE(ev.accuracy, 0.0);
    EXPECT_LE(ev.accuracy, 1.0);
}
