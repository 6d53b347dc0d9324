// flagfed: synthesize multi-label data, partition it across simulated
// clients, run federated training experiments, and analyze heterogeneity.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "flagfed/dataset.hpp"
#include "flagfed/errors.hpp"
#include "flagfed/federate.hpp"
#include "flagfed/metrics.hpp"
#include "flagfed/model.hpp"
#include "flagfed/partition.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace flagfed;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIntegrity = 3;
constexpr int kExitDivergence = 4;

struct ExperimentConfig {
    // data source: either explicit files or an inline synthetic spec
    std::string train_path;
    std::string val_path;
    std::string shards_dir;
    SynthSpec synth{20000, 40, 32, 10, 0.1, 2, 0.5, 0};
    std::size_t val_samples = 5000;

    std::size_t n_clients = 10;
    std::string partitioner = "cmda";
    std::string strategy = "flag";
    double alpha = 0.3;
    std::size_t rounds = 10;
    TrainConfig tcfg;
    AslConfig acfg;
    std::size_t hidden = 0;
    double target_fraction = 0.8;
    double epsilon = 1e-6;
    std::uint64_t seed = 0;
    std::string centralized_path;
    std::string out_dir = "out";
};

// Flat JSON config; any key a command-line flag did not set explicitly.
void apply_config_file(const std::string& path, const CLI::App* cmd, ExperimentConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    auto want = [&](const char* flag, const char* key) {
        return j.contains(key) && (cmd->get_option_no_throw(flag) == nullptr ||
                                   cmd->get_option_no_throw(flag)->count() == 0);
    };
    if (want("--train", "train")) cfg.train_path = j["train"].get<std::string>();
    if (want("--val", "val")) cfg.val_path = j["val"].get<std::string>();
    if (want("--shards", "shards")) cfg.shards_dir = j["shards"].get<std::string>();
    if (want("--samples", "samples")) cfg.synth.n_samples = j["samples"].get<std::size_t>();
    if (want("--val-samples", "val_samples")) cfg.val_samples = j["val_samples"].get<std::size_t>();
    if (want("--labels", "labels")) cfg.synth.n_labels = j["labels"].get<std::size_t>();
    if (want("--features", "features")) cfg.synth.n_features = j["features"].get<std::size_t>();
    if (want("--themes", "themes")) cfg.synth.n_themes = j["themes"].get<std::size_t>();
    if (want("--overlap", "overlap")) cfg.synth.theme_overlap = j["overlap"].get<double>();
    if (want("--density", "density")) cfg.synth.label_density = j["density"].get<std::size_t>();
    if (want("--noise", "noise")) cfg.synth.noise_std = j["noise"].get<double>();
    if (want("--clients", "clients")) cfg.n_clients = j["clients"].get<std::size_t>();
    if (want("--partitioner", "partitioner")) cfg.partitioner = j["partitioner"].get<std::string>();
    if (want("--strategy", "strategy")) cfg.strategy = j["strategy"].get<std::string>();
    if (want("--alpha", "alpha")) cfg.alpha = j["alpha"].get<double>();
    if (want("--rounds", "rounds")) cfg.rounds = j["rounds"].get<std::size_t>();
    if (want("--batch-size", "batch_size")) cfg.tcfg.batch_size = j["batch_size"].get<std::size_t>();
    if (want("--lr", "learning_rate")) cfg.tcfg.learning_rate = j["learning_rate"].get<double>();
    if (want("--weight-decay", "weight_decay"))
        cfg.tcfg.weight_decay = j["weight_decay"].get<double>();
    if (want("--local-epochs", "local_epochs"))
        cfg.tcfg.local_epochs = j["local_epochs"].get<std::size_t>();
    if (want("--hidden", "hidden")) cfg.hidden = j["hidden"].get<std::size_t>();
    if (want("--gamma-pos", "gamma_pos")) cfg.acfg.gamma_pos = j["gamma_pos"].get<double>();
    if (want("--gamma-neg", "gamma_neg")) cfg.acfg.gamma_neg = j["gamma_neg"].get<double>();
    if (want("--margin", "margin")) cfg.acfg.margin = j["margin"].get<double>();
    if (want("--target-fraction", "target_fraction"))
        cfg.target_fraction = j["target_fraction"].get<double>();
    if (want("--epsilon", "epsilon")) cfg.epsilon = j["epsilon"].get<double>();
    if (want("--seed", "seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (want("--centralized", "centralized"))
        cfg.centralized_path = j["centralized"].get<std::string>();
    if (want("--out", "out")) cfg.out_dir = j["out"].get<std::string>();
}

void add_synth_flags(CLI::App* cmd, ExperimentConfig& cfg) {
    cmd->add_option("--samples", cfg.synth.n_samples, "training samples to generate");
    cmd->add_option("--val-samples", cfg.val_samples, "validation samples to generate");
    cmd->add_option("--labels", cfg.synth.n_labels, "label count L");
    cmd->add_option("--features", cfg.synth.n_features, "feature dimension D");
    cmd->add_option("--themes", cfg.synth.n_themes, "planted label theme count");
    cmd->add_option("--overlap", cfg.synth.theme_overlap, "out-of-theme label probability");
    cmd->add_option("--density", cfg.synth.label_density, "in-theme positives per sample");
    cmd->add_option("--noise", cfg.synth.noise_std, "feature noise standard deviation");
}

void add_train_flags(CLI::App* cmd, ExperimentConfig& cfg) {
    cmd->add_option("--train", cfg.train_path, "training dataset file");
    cmd->add_option("--val", cfg.val_path, "validation dataset file");
    cmd->add_option("--shards", cfg.shards_dir, "directory of pre-partitioned client files");
    add_synth_flags(cmd, cfg);
    cmd->add_option("--clients", cfg.n_clients, "number of simulated clients");
    cmd->add_option("--partitioner", cfg.partitioner, "cmda or random")
        ->check(CLI::IsMember({"cmda", "random"}));
    cmd->add_option("--rounds", cfg.rounds, "communication rounds");
    cmd->add_option("--batch-size", cfg.tcfg.batch_size, "mini-batch size");
    cmd->add_option("--lr", cfg.tcfg.learning_rate, "learning rate");
    cmd->add_option("--weight-decay", cfg.tcfg.weight_decay, "decoupled weight decay");
    cmd->add_option("--local-epochs", cfg.tcfg.local_epochs, "epochs per round per client");
    cmd->add_option("--hidden", cfg.hidden, "hidden width (0 = linear)");
    cmd->add_option("--gamma-pos", cfg.acfg.gamma_pos, "positive focusing exponent");
    cmd->add_option("--gamma-neg", cfg.acfg.gamma_neg, "negative focusing exponent");
    cmd->add_option("--margin", cfg.acfg.margin, "negative probability margin");
    cmd->add_option("--target-fraction", cfg.target_fraction, "convergence target fraction");
    cmd->add_option("--centralized", cfg.centralized_path,
                    "centralized.json to use as the convergence baseline");
}

std::pair<MultiLabelDataset, MultiLabelDataset> obtain_datasets(const ExperimentConfig& cfg) {
    if (!cfg.train_path.empty() || !cfg.val_path.empty()) {
        if (cfg.train_path.empty() || cfg.val_path.empty())
            throw ConfigError("--train and --val must be given together");
        return {load_dataset(cfg.train_path), load_dataset(cfg.val_path)};
    }
    SynthSpec train_spec = cfg.synth;
    train_spec.seed = cfg.seed;
    SynthSpec val_spec = train_spec;
    val_spec.n_samples = cfg.val_samples;
    return {generate_synthetic(train_spec, 0), generate_synthetic(val_spec, 1)};
}

std::vector<ClientShard> obtain_shards(const ExperimentConfig& cfg) {
    if (!cfg.shards_dir.empty()) {
        std::vector<ClientShard> shards;
        for (std::size_t c = 0;; ++c) {
            fs::path train = fs::path(cfg.shards_dir) / ("client_" + std::to_string(c) +
                                                         "_train.jsonl");
            fs::path val = fs::path(cfg.shards_dir) / ("client_" + std::to_string(c) +
                                                       "_val.jsonl");
            if (!fs::exists(train)) break;
            ClientShard shard;
            shard.client_id = c;
            shard.train = load_dataset(train.string());
            shard.val = load_dataset(val.string());
            shards.push_back(std::move(shard));
        }
        if (shards.size() < 2)
            throw ConfigError("no client shard files found under " + cfg.shards_dir);
        return shards;
    }
    auto [train, val] = obtain_datasets(cfg);
    return cfg.partitioner == "cmda" ? cmda_split(train, val, cfg.n_clients, cfg.seed)
                                     : random_split(train, val, cfg.n_clients, cfg.seed);
}

AggregationStrategy parse_strategy(const std::string& name, double alpha) {
    if (name == "fedavg") return AggregationStrategy::fedavg();
    if (name == "flag") return AggregationStrategy::flag(alpha);
    if (name == "local") return AggregationStrategy::local_only();
    if (name == "central") return AggregationStrategy::centralized();
    throw ConfigError("unknown strategy: " + name);
}

int cmd_synth(const ExperimentConfig& cfg) {
    auto [train, val] = obtain_datasets(cfg);
    fs::create_directories(cfg.out_dir);
    save_dataset(train, (fs::path(cfg.out_dir) / "train.jsonl").string());
    save_dataset(val, (fs::path(cfg.out_dir) / "val.jsonl").string());
    std::cout << "wrote " << train.n_samples() << " train and " << val.n_samples()
              << " val samples to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_partition(const ExperimentConfig& cfg) {
    auto shards = obtain_shards(cfg);
    fs::create_directories(cfg.out_dir);
    for (const auto& shard : shards) {
        std::string stem = "client_" + std::to_string(shard.client_id);
        save_dataset(shard.train, (fs::path(cfg.out_dir) / (stem + "_train.jsonl")).string());
        save_dataset(shard.val, (fs::path(cfg.out_dir) / (stem + "_val.jsonl")).string());
    }
    auto report = heterogeneity_report(shards, cfg.epsilon);
    write_heterogeneity_report(report, cfg.epsilon, cfg.partitioner, cfg.out_dir);
    std::cout << "partitioned into " << shards.size() << " clients, total_kl=" << report.total_kl
              << "\n";
    return 0;
}

int cmd_analyze(const ExperimentConfig& cfg) {
    ExperimentConfig shard_cfg = cfg;
    if (shard_cfg.shards_dir.empty()) throw ConfigError("analyze requires --shards");
    auto shards = obtain_shards(shard_cfg);
    auto report = heterogeneity_report(shards, cfg.epsilon);
    write_heterogeneity_report(report, cfg.epsilon, cfg.partitioner, cfg.out_dir);
    std::cout << "total_kl=" << report.total_kl << "\n";
    return 0;
}

int run_experiment(const ExperimentConfig& cfg, const AggregationStrategy& strategy,
                   const std::string& out_dir, FederationState* out_state = nullptr) {
    auto shards = obtain_shards(cfg);
    fs::create_directories(out_dir);

    FederationOptions opts;
    opts.hidden = cfg.hidden;
    opts.max_threads = std::thread::hardware_concurrency();
    opts.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();

    FederationState state =
        run_federation(shards, strategy, cfg.rounds, cfg.tcfg, cfg.acfg, cfg.seed, opts);
    write_round_log(state, (fs::path(out_dir) / "rounds.csv").string());

    if (strategy.kind == AggregationStrategy::Kind::Centralized) {
        nlohmann::json j = {{"centralized_map", state.log.back().gmap()},
                            {"rounds", cfg.rounds},
                            {"local_epochs", cfg.tcfg.local_epochs}};
        std::ofstream out(fs::path(out_dir) / "centralized.json", std::ios::binary);
        out << j.dump(2) << "\n";
    } else if (!cfg.centralized_path.empty()) {
        std::ifstream in(cfg.centralized_path);
        if (!in) throw ConfigError("cannot open " + cfg.centralized_path);
        double baseline = nlohmann::json::parse(in).at("centralized_map").get<double>();
        auto result =
            convergence(state.log, cfg.target_fraction, baseline, cfg.tcfg.local_epochs);
        save_convergence(result, (fs::path(out_dir) / "convergence.json").string());
    }

    const auto& last = state.log.back();
    std::cout << "final round " << last.round << ": AmAP=" << last.amap()
              << " WmAP=" << last.wmap();
    if (last.global_map_per_client) std::cout << " GmAP=" << last.gmap();
    std::cout << "\n";
    if (out_state != nullptr) *out_state = std::move(state);
    return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
    return run_experiment(cfg, parse_strategy(cfg.strategy, cfg.alpha), cfg.out_dir);
}

int cmd_sweep(const ExperimentConfig& cfg, std::vector<double> alphas) {
    if (alphas.empty()) throw ConfigError("sweep: no alpha values given");
    std::sort(alphas.begin(), alphas.end());
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "sweep.csv", std::ios::binary);
    out.precision(17);
    out << "alpha,final_amap,final_gmap\n";
    for (double alpha : alphas) {
        std::ostringstream sub;
        sub << "alpha_" << alpha;
        FederationState state;
        run_experiment(cfg, AggregationStrategy::flag(alpha),
                       (fs::path(cfg.out_dir) / sub.str()).string(), &state);
        const auto& last = state.log.back();
        out << alpha << "," << last.amap() << "," << last.gmap() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated multi-label learning simulator"};
    app.require_subcommand(1);

    ExperimentConfig cfg;
    std::string config_path;
    std::vector<double> alphas;

    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-label dataset");
    add_synth_flags(synth, cfg);

    auto* partition = app.add_subcommand("partition", "split a dataset across clients");
    add_train_flags(partition, cfg);
    partition->add_option("--epsilon", cfg.epsilon, "KL smoothing epsilon");

    auto* analyze = app.add_subcommand("analyze", "heterogeneity report for existing shards");
    analyze->add_option("--shards", cfg.shards_dir, "shard directory")->required();
    analyze->add_option("--epsilon", cfg.epsilon, "KL smoothing epsilon");
    analyze->add_option("--partitioner", cfg.partitioner, "method name recorded in summary.json");

    auto* train = app.add_subcommand("train", "run one federated experiment");
    add_train_flags(train, cfg);
    train->add_option("--strategy", cfg.strategy, "fedavg, flag, local, or central")
        ->check(CLI::IsMember({"fedavg", "flag", "local", "central"}));
    train->add_option("--alpha", cfg.alpha, "FLAG alpha");

    auto* sweep = app.add_subcommand("sweep", "run FLAG across several alpha values");
    add_train_flags(sweep, cfg);
    sweep->add_option("--alphas", alphas, "alpha values to sweep")->delimiter(',')->required();

    for (auto* cmd : {synth, partition, analyze, train, sweep}) {
        cmd->add_option("--config", config_path, "JSON config file; flags take precedence");
        cmd->add_option("--seed", cfg.seed, "random seed");
        cmd->add_option("--out", cfg.out_dir, "output directory");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        CLI::App* cmd = app.get_subcommands().front();
        if (!config_path.empty()) apply_config_file(config_path, cmd, cfg);
        if (cmd == synth) return cmd_synth(cfg);
        if (cmd == partition) return cmd_partition(cfg);
        if (cmd == analyze) return cmd_analyze(cfg);
        if (cmd == train) return cmd_train(cfg);
        if (cmd == sweep) return cmd_sweep(cfg, alphas);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const DegenerateError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
