#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "impactlab/logtemplate.hpp"
#include "impactlab/synthgen.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string output;  // stdout and stderr
};

// Runs the tool inside `dir`.
Result cli(const fs::path& dir, const std::string& args, const std::string& env = {}) {
    const std::string cmd = "cd '" + dir.string() + "' && " + env + (env.empty() ? "" : " ") + IMPACTLAB_CLI + " " +
                            args + " 2>&1";
    Result r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::size_t count_lines(const fs::path& path) {
    std::istringstream in(slurp(path));
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

struct Workdir {
    fs::path path;
    explicit Workdir(const char* name) : path(fs::temp_directory_path() / (std::string("impactlab_cli_") + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~Workdir() { fs::remove_all(path); }
};

const char* kTableRows =
    "2019/01/01 07:30:00, Host A, Interface Gig 0/0/1 down\n"
    "2019/01/01 07:30:10, Host A, Interface Gig 0/0/1 state changed\n"
    "2019/01/01 07:30:20, Host A, user:B logged in\n"
    "2019/01/01 07:30:31, Host A, Interface Gig 0/0/2 down\n";

// Small model settings shared by the train/eval tests.
const std::string kSmall = "--set gen.window=8 --set model.channels=2 --set model.hidden=4 --set train.epochs=2";

}  // namespace

TEST_CASE("templates subcommand") {
    Workdir w("templates");
    spit(w.path / "table.log", kTableRows);
    auto r = cli(w.path, "templates --input table.log --out cat.json --counts counts.csv");
    CHECK(r.code == 0);
    const auto cat = impactlab::logtemplate::TemplateCatalog::load((w.path / "cat.json").string());
    CHECK(cat.size() == 3);
    CHECK(r.output.find("line 1 -> 0") != std::string::npos);
    CHECK(r.output.find("line 4 -> 0") != std::string::npos);
    CHECK(slurp(w.path / "counts.csv") == "slot_start,template,count\n"
                                          "2019/01/01 07:30:00,0,2\n"
                                          "2019/01/01 07:30:00,1,1\n"
                                          "2019/01/01 07:30:00,2,1\n");
    CHECK(fs::exists(w.path / "cat.json.manifest.json"));

    SUBCASE("empty input") {
        spit(w.path / "empty.log", "");
        r = cli(w.path, "templates --input empty.log --out empty.json");
        CHECK(r.code == 0);
        CHECK(r.output.find("warning") != std::string::npos);
        CHECK(impactlab::logtemplate::TemplateCatalog::load((w.path / "empty.json").string()).size() == 0);
    }
    SUBCASE("binary garbage") {
        spit(w.path / "junk.log", std::string("\x7f\x45\x4c\x46\x02\x01\x01\x00\xff\xfe\n", 11));
        r = cli(w.path, "templates --input junk.log --out junk.json");
        CHECK(r.code == 2);
        CHECK(r.output.find("malformed") != std::string::npos);
        CHECK_FALSE(fs::exists(w.path / "junk.json"));
    }
}

TEST_CASE("gen subcommand") {
    Workdir w("gen");
    auto r = cli(w.path, "gen --train 12 --eval 6 --seed 1 --out a");
    REQUIRE(r.code == 0);
    CHECK(count_lines(w.path / "a" / "train.jsonl") == 13);  // header + samples
    CHECK(count_lines(w.path / "a" / "eval.jsonl") == 7);
    CHECK(cli(w.path, "gen --train 12 --eval 6 --seed 1 --out b").code == 0);
    CHECK(slurp(w.path / "a" / "train.jsonl") == slurp(w.path / "b" / "train.jsonl"));
    CHECK(slurp(w.path / "a" / "eval.jsonl") == slurp(w.path / "b" / "eval.jsonl"));

    SUBCASE("matches the library defaults") {
        const auto data = impactlab::synthgen::build_dataset({}, 12, 6, 1);
        std::ostringstream out;
        impactlab::synthgen::write_dataset(out, {1, 100, 60, "synthetic"}, data.train);
        CHECK(out.str() == slurp(w.path / "a" / "train.jsonl"));
    }
    SUBCASE("seed from the environment") {
        CHECK(cli(w.path, "gen --train 12 --eval 6 --out c", "IMPACTLAB_SEED=1").code == 0);
        CHECK(slurp(w.path / "a" / "train.jsonl") == slurp(w.path / "c" / "train.jsonl"));
        CHECK(cli(w.path, "gen --train 12 --eval 6 --out d", "IMPACTLAB_SEED=2").code == 0);
        CHECK(slurp(w.path / "a" / "train.jsonl") != slurp(w.path / "d" / "train.jsonl"));
        CHECK(cli(w.path, "gen --train 2 --eval 1 --out e", "IMPACTLAB_SEED=x").code == 2);
    }
    SUBCASE("manifest") {
        const auto m = nlohmann::json::parse(slurp(w.path / "a" / "manifest.json"));
        CHECK(m["subcommand"] == "gen");
        CHECK(m["seeds"]["dataset"] == 1);
        CHECK(m["outputs"].size() == 2);
        CHECK(m["outputs"]["a/train.jsonl"].get<std::string>().size() == 64);
        CHECK(m["config"]["gen.window"] == "60");
    }
    SUBCASE("usage errors") {
        CHECK(cli(w.path, "gen --train 0 --out z").code == 2);
        CHECK(cli(w.path, "gen --train 3").code == 2);
        CHECK(cli(w.path, "gen --train 3 --out z --set nosuch.key=1").code == 2);
        CHECK(cli(w.path, "gen --train 3 --out z --set gen.window=100000").code == 2);
        CHECK(cli(w.path, "frobnicate").code == 2);
        CHECK(cli(w.path, "--help").code == 0);
    }
    SUBCASE("printed config round-trips") {
        r = cli(w.path, "gen --print-config --set gen.window=30");
        CHECK(r.code == 0);
        CHECK(r.output.find("gen.window = 30") != std::string::npos);
        CHECK(r.output.find("train.lr = ") != std::string::npos);
        spit(w.path / "all.cfg", r.output);
        CHECK(cli(w.path, "gen --train 12 --eval 6 --seed 1 --out f --config all.cfg --set gen.window=60").code == 0);
        CHECK(slurp(w.path / "a" / "train.jsonl") == slurp(w.path / "f" / "train.jsonl"));
    }
}

TEST_CASE("train, eval, predict and replay") {
    Workdir w("pipeline");
    REQUIRE(cli(w.path, "gen --train 24 --eval 8 --seed 2 --set gen.window=8 --out d").code == 0);
    auto r = cli(w.path, "train --data d/train.jsonl --out m.json --curve curve.csv --quiet " + kSmall);
    REQUIRE(r.code == 0);
    CHECK(count_lines(w.path / "curve.csv") == 3);
    r = cli(w.path, "eval --data d/eval.jsonl --checkpoint m.json --out report.csv --json report.json "
                    "--predictions preds.csv");
    REQUIRE(r.code == 0);
    CHECK(count_lines(w.path / "report.csv") == 11);
    CHECK(slurp(w.path / "report.csv").find(",full,0,") != std::string::npos);
    CHECK(count_lines(w.path / "preds.csv") == 9);

    r = cli(w.path, "predict --window d/eval.jsonl --checkpoint m.json --index 3 --out p.json");
    CHECK(r.code == 0);
    CHECK(r.output.find(" min, V ") != std::string::npos);
    CHECK(r.output.find("volume*min") != std::string::npos);
    const auto p = nlohmann::json::parse(slurp(w.path / "p.json"));
    std::istringstream preds(slurp(w.path / "preds.csv"));
    std::string line;
    for (int i = 0; i < 5; ++i) std::getline(preds, line);
    CHECK(line.rfind(std::to_string(p["sample_id"].get<int>()) + ",", 0) == 0);

    SUBCASE("replay reproduces every output") {
        const auto before = slurp(w.path / "m.json");
        fs::remove(w.path / "m.json");
        r = cli(w.path, "replay m.json.manifest.json");
        CHECK(r.code == 0);
        CHECK(r.output.find("identical  m.json") != std::string::npos);
        CHECK(slurp(w.path / "m.json") == before);
        r = cli(w.path, "replay report.csv.manifest.json");
        CHECK(r.code == 0);
        CHECK(r.output.find("DIFFERENT") == std::string::npos);
    }
    SUBCASE("replay refuses changed inputs") {
        spit(w.path / "d" / "train.jsonl", slurp(w.path / "d" / "train.jsonl") + "\n");
        CHECK(cli(w.path, "replay m.json.manifest.json").code == 2);
    }
    SUBCASE("dimension and file errors") {
        REQUIRE(cli(w.path, "gen --train 2 --eval 2 --seed 2 --set gen.window=9 --out d9").code == 0);
        r = cli(w.path, "eval --data d9/eval.jsonl --checkpoint m.json --out bad.csv");
        CHECK(r.code == 2);
        CHECK(r.output.find("window dimension W") != std::string::npos);
        r = cli(w.path, "predict --window d9/eval.jsonl --checkpoint m.json");
        CHECK(r.code == 2);
        CHECK(cli(w.path, "eval --data d/eval.jsonl --checkpoint missing.json --out bad.csv").code == 2);
        spit(w.path / "trunc.json", slurp(w.path / "m.json").substr(0, 100));
        r = cli(w.path, "predict --window d/eval.jsonl --checkpoint trunc.json");
        CHECK(r.code == 2);
        CHECK(r.output.find("truncated") != std::string::npos);
    }
    SUBCASE("divergence is a runtime failure") {
        r = cli(w.path, "train --data d/train.jsonl --out div.json --quiet " + kSmall +
                            " --set train.lr=1e6 --set train.epochs=60 --set train.stall_patience=100");
        CHECK(r.code == 1);
        CHECK(r.output.find("diverged") != std::string::npos);
    }
}

TEST_CASE("ablation subcommand") {
    Workdir w("ablation");
    REQUIRE(cli(w.path, "gen --train 16 --eval 8 --seed 2 --set gen.window=8 --out d").code == 0);
    const auto r = cli(w.path, "ablation --train-data d/train.jsonl --eval-data d/eval.jsonl --out ab.csv "
                               "--curves curves --set ablation.seeds=1,2 " +
                                   kSmall);
    REQUIRE(r.code == 0);
    CHECK(count_lines(w.path / "ab.csv") == 1 + 4 * 2 * 8 + 4 * 8);
    for (const char* v : {"full", "no_merge", "no_individual", "gru_temporal"}) {
        CHECK(r.output.find(v) != std::string::npos);
        CHECK(fs::exists(w.path / "curves" / (std::string(v) + "_seed2.csv")));
    }
    CHECK(slurp(w.path / "ab.csv").rfind("pattern,target,variant,seed,mse,rel_err_mean,ci95,n,status\n", 0) == 0);
}
