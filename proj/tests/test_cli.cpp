#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kDir = fs::temp_directory_path() / "noisehgnn_test_cli";

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + NOISEHGNN_CLI + "\" " + args + " > \"" + (kDir / "last.log").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string write_config(const std::string& name, const json& doc) {
    fs::create_directories(kDir);
    const fs::path file = kDir / name;
    std::ofstream(file) << doc.dump(2);
    return file.string();
}

json tiny() {
    return {{"data", {{"synthetic", {{"n_target", 45}, {"n_aux", {15, 15}}, {"classes", 3}, {"feature_dim", 6}}}}},
            {"model", {{"dim", 6}, {"k", 3}, {"encoder", {{"layers", 1}, {"heads", 1}, {"hidden_size", 4}}}}},
            {"train", {{"epochs", 3}, {"patience", 2}, {"metapaths", {"0,~0"}}}},
            {"seeds", {0}},
            {"out_dir", (kDir / "out").string()}};
}

}  // namespace

TEST_CASE("cli exit codes") {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    const std::string ok = write_config("ok.json", tiny());

    CHECK(run("--help") == 0);
    CHECK(run("") == 2);
    CHECK(run("train --bogus-flag") == 2);
    CHECK(run("validate-data --config " + ok) == 0);
    CHECK(run("train --config " + ok + " --seeds 1,x") == 2);
    CHECK(run("train --config " + ok + " --ablation sideways") == 2);
    CHECK(run("train --config " + ok + " --noise-ratio 1.0") == 2);
    CHECK(run("train --config " + (kDir / "missing.json").string()) == 2);

    json unknown = tiny();
    unknown["model"]["encoder"]["depth"] = 4;
    CHECK(run("train --config " + write_config("unknown.json", unknown)) == 2);
    std::ifstream log(kDir / "last.log");
    const std::string text((std::istreambuf_iterator<char>(log)), std::istreambuf_iterator<char>());
    CHECK(text.find("model.encoder.depth") != std::string::npos);

    json diverge = tiny();
    diverge["train"]["lr"] = 1e300;
    diverge["train"]["epochs"] = 10;
    CHECK(run("train --config " + write_config("diverge.json", diverge)) == 3);

    json absent = tiny();
    absent["data"] = {{"kind", "hgb"}, {"path", (kDir / "no_such_dir").string()}};
    CHECK(run("validate-data --config " + write_config("absent.json", absent)) == 1);
}

TEST_CASE("cli train, gen-synthetic and validate-data") {
    const std::string ok = write_config("ok.json", tiny());
    CHECK(run("train --config " + ok + " --out " + (kDir / "trained").string() + " --noise-ratio 0.2 --noise-seed 5") == 0);
    std::ifstream in(kDir / "trained" / "train_report.json");
    REQUIRE(in.good());
    const json rep = json::parse(in);
    CHECK(rep["config"]["noise"]["ratio"] == 0.2);
    CHECK(rep["runs"][0]["seeds"]["noise"] == 5);

    CHECK(run("gen-synthetic --config " + ok + " " + (kDir / "hgb").string()) == 0);
    json hgb = tiny();
    hgb["data"] = {{"kind", "hgb"}, {"path", (kDir / "hgb").string()}};
    CHECK(run("validate-data --config " + write_config("hgb.json", hgb)) == 0);
    CHECK(run("gen-synthetic --config " + ok) == 2);
}
