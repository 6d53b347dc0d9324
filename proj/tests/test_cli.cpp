#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* path = std::getenv("FLAGFED_CLI");
    REQUIRE_MESSAGE(path != nullptr, "FLAGFED_CLI must point at the flagfed binary");
    return path;
}

int run(const std::string& args) {
    std::string cmd = cli() + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// rounds.csv with the wall_seconds column blanked out
std::string rounds_without_wall(const fs::path& path) {
    std::ifstream in(path);
    std::string line, out;
    while (std::getline(in, line)) {
        auto cut = line.rfind(',');
        out += line.substr(0, cut) + "\n";
    }
    return out;
}

const std::string kSynthFlags =
    " --samples 400 --val-samples 120 --labels 12 --themes 3 --features 5"
    " --overlap 0.1 --density 2 --noise 0.3 --seed 9";

}  // namespace

TEST_CASE("synth writes reproducible dataset files") {
    auto dir = fresh_dir("flagfed_cli_synth");
    CHECK(run("synth" + kSynthFlags + " --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "train.jsonl"));
    CHECK(fs::exists(dir / "val.jsonl"));
    auto first = read_file(dir / "train.jsonl");

    CHECK(run("synth" + kSynthFlags + " --out " + dir.string()) == 0);
    CHECK(read_file(dir / "train.jsonl") == first);
    fs::remove_all(dir);
}

TEST_CASE("synth rejects invalid specs with the configuration exit code") {
    auto dir = fresh_dir("flagfed_cli_badsynth");
    CHECK(run("synth --samples 100 --labels 8 --themes 0 --out " + dir.string()) == 2);
    CHECK(run("synth --samples 0 --labels 8 --themes 2 --out " + dir.string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("partition writes shards, report files, and conserves rows") {
    auto data = fresh_dir("flagfed_cli_data");
    REQUIRE(run("synth" + kSynthFlags + " --out " + data.string()) == 0);

    auto cmda = fresh_dir("flagfed_cli_cmda");
    CHECK(run("partition --train " + (data / "train.jsonl").string() + " --val " +
              (data / "val.jsonl").string() + " --clients 3 --partitioner cmda --seed 4 --out " +
              cmda.string()) == 0);
    for (const char* name : {"sizes.csv", "ldist.csv", "kl.csv", "summary.json"})
        CHECK(fs::exists(cmda / name));

    std::size_t total = 0;
    for (int c = 0; c < 3; ++c) {
        std::ifstream in(cmda / ("client_" + std::to_string(c) + "_train.jsonl"));
        std::string header;
        std::getline(in, header);
        total += nlohmann::json::parse(header).at("n").get<std::size_t>();
    }
    CHECK(total == 400);

    auto random = fresh_dir("flagfed_cli_random");
    CHECK(run("partition --train " + (data / "train.jsonl").string() + " --val " +
              (data / "val.jsonl").string() +
              " --clients 3 --partitioner random --seed 4 --out " + random.string()) == 0);

    auto total_kl = [](const fs::path& dir) {
        std::ifstream in(dir / "summary.json");
        return nlohmann::json::parse(in).at("total_kl").get<double>();
    };
    CHECK(total_kl(cmda) >= 5.0 * total_kl(random));

    // analyze over existing shards reproduces the partition-time summary
    auto reanalyzed = fresh_dir("flagfed_cli_analyze");
    CHECK(run("analyze --shards " + cmda.string() + " --partitioner cmda --out " +
              reanalyzed.string()) == 0);
    CHECK(total_kl(reanalyzed) == doctest::Approx(total_kl(cmda)));

    fs::remove_all(data);
    fs::remove_all(cmda);
    fs::remove_all(random);
    fs::remove_all(reanalyzed);
}

TEST_CASE("train runs end to end and is deterministic modulo wall clock") {
    auto dir = fresh_dir("flagfed_cli_train");
    std::string flags = "train" + kSynthFlags +
                        " --clients 3 --partitioner cmda --strategy flag --alpha 0.3"
                        " --rounds 2 --local-epochs 1 --batch-size 64 --lr 0.01 --out ";
    CHECK(run(flags + dir.string()) == 0);
    CHECK(fs::exists(dir / "rounds.csv"));
    CHECK(fs::exists(dir / "checkpoints" / "round_2.params"));
    auto first = rounds_without_wall(dir / "rounds.csv");

    CHECK(run(flags + dir.string()) == 0);
    CHECK(rounds_without_wall(dir / "rounds.csv") == first);
    fs::remove_all(dir);
}

TEST_CASE("centralized baseline feeds convergence tracking") {
    auto central = fresh_dir("flagfed_cli_central");
    std::string base = kSynthFlags +
                       " --clients 3 --partitioner cmda --rounds 2 --local-epochs 1"
                       " --batch-size 64 --lr 0.05";
    REQUIRE(run("train" + base + " --strategy central --out " + central.string()) == 0);
    REQUIRE(fs::exists(central / "centralized.json"));

    auto fed = fresh_dir("flagfed_cli_fed");
    CHECK(run("train" + base + " --strategy fedavg --centralized " +
              (central / "centralized.json").string() + " --out " + fed.string()) == 0);
    REQUIRE(fs::exists(fed / "convergence.json"));
    std::ifstream in(fed / "convergence.json");
    auto j = nlohmann::json::parse(in);
    CHECK(j.contains("target_map"));
    CHECK(j.contains("rounds_to_target"));
    fs::remove_all(central);
    fs::remove_all(fed);
}

TEST_CASE("sweep emits one ascending row per alpha") {
    auto dir = fresh_dir("flagfed_cli_sweep");
    CHECK(run("sweep" + kSynthFlags +
              " --clients 3 --partitioner cmda --rounds 1 --local-epochs 1 --batch-size 64"
              " --alphas 0.6,0.0,0.3 --out " + dir.string()) == 0);
    std::ifstream in(dir / "sweep.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "alpha,final_amap,final_gmap");
    std::vector<double> alphas;
    while (std::getline(in, line)) alphas.push_back(std::stod(line.substr(0, line.find(','))));
    REQUIRE(alphas.size() == 3);
    CHECK(alphas[0] == 0.0);
    CHECK(alphas[1] == 0.3);
    CHECK(alphas[2] == 0.6);
    fs::remove_all(dir);
}

TEST_CASE("config file values apply and flags override them") {
    auto dir = fresh_dir("flagfed_cli_config");
    fs::path cfg = dir / "config.json";
    {
        std::ofstream out(cfg);
        out << R"({"samples": 300, "val_samples": 90, "labels": 8, "themes": 2,)"
            << R"( "features": 4, "noise": 0.2, "seed": 3})";
    }
    CHECK(run("synth --config " + cfg.string() + " --out " + dir.string()) == 0);
    {
        std::ifstream in(dir / "train.jsonl");
        std::string header;
        std::getline(in, header);
        CHECK(nlohmann::json::parse(header).at("n").get<int>() == 300);
    }
    // explicit flag wins over the config value
    CHECK(run("synth --config " + cfg.string() + " --samples 150 --out " + dir.string()) == 0);
    {
        std::ifstream in(dir / "train.jsonl");
        std::string header;
        std::getline(in, header);
        CHECK(nlohmann::json::parse(header).at("n").get<int>() == 150);
    }
    fs::remove_all(dir);
}

TEST_CASE("malformed dataset files exit with the integrity code") {
    auto dir = fresh_dir("flagfed_cli_badfile");
    fs::path bad = dir / "bad.jsonl";
    {
        std::ofstream out(bad);
        out << R"({"n":2,"d":1,"l":1,"label_names":["a"]})" << "\n";
        out << R"({"x":[0.0],"y":[0]})" << "\n";
    }
    CHECK(run("partition --train " + bad.string() + " --val " + bad.string() +
              " --clients 2 --out " + dir.string()) == 3);
    fs::remove_all(dir);
}
