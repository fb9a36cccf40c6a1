#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("UBER_CLI");
    REQUIRE_MESSAGE(p != nullptr, "UBER_CLI must point at the built binary");
    return p;
}

int run(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = cli() + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workdir {
    fs::path dir;
    explicit Workdir(const std::string& name) {
        dir = fs::temp_directory_path() / ("ubergnn_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workdir() { std::error_code ec; fs::remove_all(dir, ec); }
    std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

const std::string kSmallGen =
    " --n-items 60 --n-users 16 --n-clusters 3 --sessions-per-user 4"
    " --len-min 3 --len-max 6 --seed 5";

}  // namespace

TEST_CASE("gen-synthetic twice produces byte-identical files") {
    Workdir w("gen");
    CHECK(run("gen-synthetic --out-dir " + (w / "a") + kSmallGen) == 0);
    CHECK(run("gen-synthetic --out-dir " + (w / "b") + kSmallGen) == 0);
    for (const char* f : {"interactions.csv", "portraits.csv", "schema.json"}) {
        const std::string a = slurp(w.dir / "a" / f);
        CHECK(!a.empty());
        CHECK(a == slurp(w.dir / "b" / f));
    }
}

TEST_CASE("prepare writes a manifest whose counts are consistent") {
    Workdir w("prep");
    REQUIRE(run("gen-synthetic --out-dir " + (w / "data") + kSmallGen) == 0);
    CHECK(run("prepare --interactions " + (w / "data/interactions.csv") +
              " --out-dir " + (w / "out") + " --ratio 0.75 --seed 3"
              " --min-item-count 2") == 0);
    const json manifest = json::parse(slurp(w.dir / "out" / "manifest.json"));
    CHECK(manifest.at("n_sessions").get<std::size_t>() ==
          manifest.at("n_train_sessions").get<std::size_t>() +
              manifest.at("n_test_sessions").get<std::size_t>());
    CHECK(manifest.at("n_rejected_rows").get<std::size_t>() == 0);
    CHECK(manifest.at("n_items").get<std::size_t>() > 0);
    CHECK(manifest.at("n_pairs").get<std::size_t>() >=
          2 * manifest.at("n_sessions").get<std::size_t>());
    const json vocab = json::parse(slurp(w.dir / "out" / "vocabulary.json"));
    CHECK(vocab.size() == manifest.at("n_items").get<std::size_t>());
    CHECK(fs::exists(w.dir / "out" / "train.csv"));
    CHECK(fs::exists(w.dir / "out" / "test.csv"));
}

TEST_CASE("grad-check exits zero within tolerance and nonzero beyond it") {
    CHECK(run("grad-check --preset micro") == 0);
    // an absurdly tight tolerance must trip the documented exit code 7
    CHECK(run("grad-check --preset micro --tol 1e-12") == 7);
    CHECK(run("grad-check --preset unknown") == 2);
}

TEST_CASE("documented error exit codes") {
    Workdir w("err");
    // bad arguments
    CHECK(run("definitely-not-a-command") != 0);
    CHECK(run("train") == 2);  // missing required inputs
    // data error: nonexistent file
    CHECK(run("prepare --interactions " + (w / "missing.csv")) == 4);
    // empty dataset: everything filtered away
    {
        std::ofstream f(w / "tiny.csv");
        f << "user_id,item_id,timestamp,session_id\nu1,i1,1,s1\nu1,i2,2,s1\n";
    }
    CHECK(run("prepare --interactions " + (w / "tiny.csv") + " --out-dir " +
              (w / "out")) == 5);
    // checkpoint error: garbage file
    {
        std::ofstream f(w / "bad.bin");
        f << "garbage";
        std::ofstream p(w / "portraits.csv");
        p << "user_id,f\nu1,a\n";
    }
    CHECK(run("evaluate --checkpoint " + (w / "bad.bin") + " --interactions " +
              (w / "tiny.csv") + " --portraits " + (w / "portraits.csv")) == 8);
}

TEST_CASE("train, evaluate and recommend round trip through the filesystem") {
    Workdir w("flow");
    REQUIRE(run("gen-synthetic --out-dir " + (w / "data") + kSmallGen) == 0);
    REQUIRE(run("prepare --interactions " + (w / "data/interactions.csv") +
                " --out-dir " + (w / "prep") + " --min-item-count 2 --seed 1") == 0);
    const std::string train_args =
        "train --interactions " + (w / "prep/train.csv") + " --portraits " +
        (w / "data/portraits.csv") + " --schema " + (w / "data/schema.json") +
        " --vocab " + (w / "prep/vocabulary.json") +
        " --hidden 6 --user-dim 4 --fm-dim 3 --dnn-hidden 8 --epochs 2 --seed 2"
        " --min-item-count 2";
    REQUIRE(run(train_args + " --out-dir " + (w / "run1")) == 0);
    CHECK(fs::exists(w.dir / "run1" / "checkpoint.bin"));
    CHECK(fs::exists(w.dir / "run1" / "metrics.jsonl"));

    // determinism across reruns: bitwise-identical checkpoint
    REQUIRE(run(train_args + " --out-dir " + (w / "run2")) == 0);
    CHECK(slurp(w.dir / "run1" / "checkpoint.bin") ==
          slurp(w.dir / "run2" / "checkpoint.bin"));
    CHECK(slurp(w.dir / "run1" / "metrics.jsonl") ==
          slurp(w.dir / "run2" / "metrics.jsonl"));

    CHECK(run("evaluate --checkpoint " + (w / "run1/checkpoint.bin") +
              " --interactions " + (w / "prep/test.csv") + " --portraits " +
              (w / "data/portraits.csv") + " --out " + (w / "eval.json")) == 0);
    const json ev = json::parse(slurp(w.dir / "eval.json"));
    CHECK(ev.at("k").get<std::size_t>() == 20);
    CHECK(ev.at("p_at_k").get<double>() >= 0.0);
    CHECK(ev.at("n_cases").get<std::size_t>() > 0);

    const json vocab = json::parse(slurp(w.dir / "prep" / "vocabulary.json"));
    const std::string item = vocab.at(0).get<std::string>();
    CHECK(run("recommend --checkpoint " + (w / "run1/checkpoint.bin") +
              " --portraits " + (w / "data/portraits.csv") +
              " --user u0001 --items " + item + " --k 5",
              w / "recs.txt") == 0);
    std::ifstream recs(w / "recs.txt");
    std::string id;
    double prob;
    std::size_t lines = 0;
    while (recs >> id >> prob) {
        ++lines;
        CHECK(prob >= 0.0);
        CHECK(prob <= 1.0);
    }
    CHECK(lines == 5);
    // a recommendation over unknown-only items maps to exit code 9
    CHECK(run("recommend --checkpoint " + (w / "run1/checkpoint.bin") +
              " --portraits " + (w / "data/portraits.csv") +
              " --user u0001 --items not_an_item --k 5") == 9);
}

TEST_CASE("config files fill in train flags, and flags override them") {
    Workdir w("cfg");
    REQUIRE(run("gen-synthetic --out-dir " + (w / "data") + kSmallGen) == 0);
    json cfg;
    cfg["interactions"] = w / "data/interactions.csv";
    cfg["portraits"] = w / "data/portraits.csv";
    cfg["schema"] = w / "data/schema.json";
    cfg["hidden"] = 6;
    cfg["user-dim"] = 4;
    cfg["fm-dim"] = 3;
    cfg["dnn-hidden"] = "8";
    cfg["epochs"] = 2;
    cfg["seed"] = 2;
    cfg["min-item-count"] = 2;
    std::ofstream(w / "train.json") << cfg.dump();
    REQUIRE(run("train --config " + (w / "train.json") + " --out-dir " + (w / "c1")) == 0);

    // the flag wins over the config key: epochs 1 means fewer metric lines
    REQUIRE(run("train --config " + (w / "train.json") + " --epochs 1 --out-dir " +
                (w / "c2")) == 0);
    auto count_lines = [&](const fs::path& p) {
        std::ifstream in(p);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) ++n;
        return n;
    };
    CHECK(count_lines(w.dir / "c1" / "metrics.jsonl") == 2);
    CHECK(count_lines(w.dir / "c2" / "metrics.jsonl") == 1);

    // unknown config keys are configuration errors
    cfg["learning_rate_typo"] = 1;
    std::ofstream(w / "bad.json") << cfg.dump();
    CHECK(run("train --config " + (w / "bad.json") + " --out-dir " + (w / "c3")) == 2);
}
