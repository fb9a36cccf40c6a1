#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ubergnn/checkpoint.hpp"
#include "ubergnn/data.hpp"
#include "ubergnn/gradcheck.hpp"
#include "ubergnn/metrics.hpp"
#include "ubergnn/micro_fixture.hpp"
#include "ubergnn/model.hpp"
#include "ubergnn/synthetic.hpp"
#include "ubergnn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ubergnn;

namespace {

// Exit codes, also documented in --help:
//   0 success
//   2 bad arguments or configuration
//   4 data, schema or file error
//   5 empty dataset after filtering
//   6 training divergence
//   7 gradient check above tolerance
//   8 checkpoint error
//   9 recommendation error
//   1 internal error
constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  2  bad arguments or configuration\n"
    "  4  data, schema or file error\n"
    "  5  empty dataset after filtering\n"
    "  6  training divergence\n"
    "  7  gradient check above tolerance\n"
    "  8  checkpoint error\n"
    "  9  recommendation error\n"
    "  1  internal error\n";

FileFormat parse_format(const std::string& s) {
    if (s == "csv") return FileFormat::Csv;
    if (s == "jsonl") return FileFormat::Jsonl;
    throw ConfigError("unknown interactions format: " + s);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct TrainArgs {
    std::string interactions, portraits, schema, vocab, out_dir = ".", config_path;
    std::string format = "csv";
    std::string variant = "v4";
    std::string loss = "paper_bce";
    std::string dnn_hidden = "64,64";
    std::size_t hidden = 32, user_dim = 32, fm_dim = 10, steps = 1;
    std::size_t batch = 256, epochs = 30, k = 20;
    std::size_t min_item_count = 5;
    double l2 = 1e-5, val_fraction = 0.2;
    std::uint64_t seed = 1;
    bool tie_reset_update = false;
};

// Config file keys mirror the long flags; flags given on the command line win.
void apply_config_file(const CLI::App& cmd, TrainArgs& args) {
    std::ifstream in(args.config_path);
    if (!in) throw DataError("cannot open config file: " + args.config_path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config file: ") + e.what());
    }
    auto overridden = [&](const std::string& flag) {
        const CLI::Option* opt = cmd.get_option_no_throw("--" + flag);
        return opt != nullptr && opt->count() > 0;
    };
    for (const auto& [key, value] : doc.items()) {
        if (overridden(key)) continue;
        if (key == "interactions") args.interactions = value.get<std::string>();
        else if (key == "portraits") args.portraits = value.get<std::string>();
        else if (key == "schema") args.schema = value.get<std::string>();
        else if (key == "vocab") args.vocab = value.get<std::string>();
        else if (key == "out-dir") args.out_dir = value.get<std::string>();
        else if (key == "format") args.format = value.get<std::string>();
        else if (key == "variant") args.variant = value.get<std::string>();
        else if (key == "loss") args.loss = value.get<std::string>();
        else if (key == "dnn-hidden") args.dnn_hidden = value.get<std::string>();
        else if (key == "hidden") args.hidden = value.get<std::size_t>();
        else if (key == "user-dim") args.user_dim = value.get<std::size_t>();
        else if (key == "fm-dim") args.fm_dim = value.get<std::size_t>();
        else if (key == "steps") args.steps = value.get<std::size_t>();
        else if (key == "batch") args.batch = value.get<std::size_t>();
        else if (key == "epochs") args.epochs = value.get<std::size_t>();
        else if (key == "k") args.k = value.get<std::size_t>();
        else if (key == "min-item-count") args.min_item_count = value.get<std::size_t>();
        else if (key == "l2") args.l2 = value.get<double>();
        else if (key == "val-fraction") args.val_fraction = value.get<double>();
        else if (key == "seed") args.seed = value.get<std::uint64_t>();
        else if (key == "tie-reset-update") args.tie_reset_update = value.get<bool>();
        else throw ConfigError("unknown config key: " + key);
    }
}

ModelConfig model_config_from(const TrainArgs& args) {
    ModelConfig cfg;
    cfg.hidden = args.hidden;
    cfg.user_dim = args.user_dim;
    cfg.fm_dim = args.fm_dim;
    cfg.dnn_hidden.clear();
    for (const std::string& w : split_list(args.dnn_hidden)) {
        cfg.dnn_hidden.push_back(std::stoul(w));
    }
    cfg.variant = variant_from_string(args.variant);
    cfg.prop_steps = args.steps;
    cfg.tie_reset_update_input = args.tie_reset_update;
    cfg.loss_mode = loss_mode_from_string(args.loss);
    return cfg;
}

int cmd_gen_synthetic(const SyntheticConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const SyntheticData data = gen_synthetic(cfg);
    write_synthetic(data, out_dir + "/interactions.csv", out_dir + "/portraits.csv",
                    out_dir + "/schema.json");
    std::cout << "wrote " << data.interactions.size() << " interactions for "
              << cfg.n_users << " users over " << cfg.n_items << " items (seed "
              << cfg.seed << ")\n";
    return 0;
}

int cmd_prepare(const std::string& interactions, const std::string& format,
                const std::string& out_dir, double ratio, std::uint64_t seed,
                std::size_t min_item_count) {
    fs::create_directories(out_dir);
    const LoadResult loaded = load_interactions(interactions, parse_format(format));
    const FilteredDataset filtered = filter_dataset(loaded.records, min_item_count);
    const SplitResult split = split_train_test(filtered.sessions, ratio, seed);

    // Original records regrouped per surviving session, vocabulary-filtered.
    std::map<std::string, std::vector<InteractionRecord>> by_session;
    for (const auto& r : loaded.records) {
        if (filtered.vocabulary.index_of(r.item_id) >= 0) {
            by_session[r.session_id].push_back(r);
        }
    }
    auto collect = [&](const std::vector<Session>& side) {
        std::vector<InteractionRecord> out;
        for (const Session& s : side) {
            for (const auto& r : by_session[s.id]) out.push_back(r);
        }
        return out;
    };
    write_interactions_csv(collect(split.train), out_dir + "/train.csv");
    write_interactions_csv(collect(split.test), out_dir + "/test.csv");
    {
        std::ofstream out(out_dir + "/vocabulary.json");
        json v = filtered.vocabulary.ids();
        out << v.dump() << "\n";
    }
    std::size_t n_pairs = 0;
    for (const Session& s : filtered.sessions) n_pairs += s.items.size() - 1;
    json manifest;
    manifest["n_sessions"] = filtered.sessions.size();
    manifest["n_items"] = filtered.vocabulary.size();
    manifest["n_pairs"] = n_pairs;
    manifest["n_rejected_rows"] = loaded.rejected_rows;
    manifest["n_train_sessions"] = split.train.size();
    manifest["n_test_sessions"] = split.test.size();
    manifest["ratio"] = ratio;
    manifest["seed"] = seed;
    manifest["min_item_count"] = min_item_count;
    {
        std::ofstream out(out_dir + "/manifest.json");
        out << manifest.dump(2) << "\n";
    }
    std::cout << manifest.dump(2) << "\n";
    return 0;
}

int cmd_train(const TrainArgs& args) {
    fs::create_directories(args.out_dir);
    const LoadResult loaded = load_interactions(args.interactions, parse_format(args.format));
    const UserFeatureSchema schema = load_schema(args.schema);
    const PortraitMap portraits = encode_portraits(load_portraits(args.portraits), schema);

    ItemVocabulary vocabulary;
    std::vector<Session> sessions;
    if (!args.vocab.empty()) {
        std::ifstream in(args.vocab);
        if (!in) throw DataError("cannot open vocabulary file: " + args.vocab);
        json v = json::parse(in);
        vocabulary = ItemVocabulary(v.get<std::vector<std::string>>());
        sessions = sessions_with_vocabulary(loaded.records, vocabulary);
        if (sessions.empty()) throw EmptyDatasetError("no usable sessions under the given vocabulary");
    } else {
        FilteredDataset filtered = filter_dataset(loaded.records, args.min_item_count);
        vocabulary = std::move(filtered.vocabulary);
        sessions = std::move(filtered.sessions);
    }

    TrainConfig cfg;
    cfg.model = model_config_from(args);
    cfg.batch_size = args.batch;
    cfg.epochs = args.epochs;
    cfg.l2 = args.l2;
    cfg.seed = args.seed;
    cfg.validation_fraction = args.val_fraction;
    cfg.metric_k = args.k;

    std::ofstream log(args.out_dir + "/metrics.jsonl", std::ios::app);
    std::cout << "training on " << sessions.size() << " sessions, vocabulary "
              << vocabulary.size() << ", seed " << args.seed << "\n";
    const TrainResult result = train(sessions, portraits, vocabulary, schema, cfg);
    std::cout << "model parameters: " << result.best.model.scalar_count() << "\n";
    for (const EpochRecord& rec : result.log) {
        log << epoch_record_json(rec);
        std::cout << epoch_record_json(rec);
    }
    save_checkpoint(result.best, args.out_dir + "/checkpoint.bin");
    std::cout << "best epoch " << result.best.epoch << " (val P@" << args.k << " = "
              << result.best.val_p20 << "), checkpoint written\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& interactions,
                 const std::string& format, const std::string& portraits_path,
                 std::size_t k, const std::string& out_path) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const LoadResult loaded = load_interactions(interactions, parse_format(format));
    const auto sessions = sessions_with_vocabulary(loaded.records, ckpt.vocabulary);
    if (sessions.empty()) throw EmptyDatasetError("no usable sessions to evaluate");
    const PortraitMap portraits =
        encode_portraits(load_portraits(portraits_path), ckpt.schema);
    const EvalResult result =
        evaluate_model(ckpt.model, sessions, portraits, ckpt.schema, k);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << eval_result_json(result);
    }
    std::cout << eval_result_json(result) << eval_result_table(result);
    return 0;
}

int cmd_recommend(const std::string& checkpoint_path, const std::string& portraits_path,
                  const std::string& user_id, const std::string& items, std::size_t k) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto raw = load_portraits(portraits_path);
    auto it = raw.find(user_id);
    const std::map<std::string, std::string> portrait =
        it == raw.end() ? std::map<std::string, std::string>{} : it->second;
    const auto recs = recommend(ckpt, portrait, split_list(items), k);
    for (const Recommendation& r : recs) {
        std::cout << r.item_id << " " << r.probability << "\n";
    }
    return 0;
}

int cmd_grad_check(std::uint64_t seed, double eps, double tol) {
    MicroFixture fx = make_micro_fixture(seed);
    const auto reports = run_grad_check(fx, eps);
    double worst = 0.0;
    for (const GradCheckReport& r : reports) {
        std::cout << r.name << " max_rel_err " << r.max_rel_err << "\n";
        worst = std::max(worst, r.max_rel_err);
    }
    if (worst > tol) {
        std::cerr << "gradient check FAILED: worst " << worst << " > tol " << tol << "\n";
        return 7;
    }
    std::cout << "gradient check passed: worst " << worst << " <= tol " << tol << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"UBER-GNN session-based recommender"};
    app.footer(kExitCodeHelp);
    app.require_subcommand(1);

    // gen-synthetic
    SyntheticConfig syn;
    std::string syn_out = ".";
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
    gen->add_option("--out-dir", syn_out, "output directory");
    gen->add_option("--seed", syn.seed, "random seed");
    gen->add_option("--n-items", syn.n_items, "item count");
    gen->add_option("--n-users", syn.n_users, "user count");
    gen->add_option("--n-clusters", syn.n_clusters, "latent cluster count");
    gen->add_option("--sessions-per-user", syn.sessions_per_user, "sessions per user");
    gen->add_option("--len-min", syn.len_min, "minimum session length");
    gen->add_option("--len-max", syn.len_max, "maximum session length");
    gen->add_option("--cat-fields", syn.n_cat_fields, "categorical portrait fields");
    gen->add_option("--cont-fields", syn.n_cont_fields, "continuous portrait fields");

    // prepare
    std::string prep_interactions, prep_format = "csv", prep_out = ".";
    double prep_ratio = 0.8;
    std::uint64_t prep_seed = 1;
    std::size_t prep_min_count = 5;
    auto* prep = app.add_subcommand("prepare", "filter, build vocabulary and split");
    prep->add_option("--interactions", prep_interactions, "interactions file")->required();
    prep->add_option("--format", prep_format, "csv or jsonl");
    prep->add_option("--out-dir", prep_out, "output directory");
    prep->add_option("--ratio", prep_ratio, "train fraction of the session split");
    prep->add_option("--seed", prep_seed, "split seed");
    prep->add_option("--min-item-count", prep_min_count, "drop items seen fewer times");

    // train
    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train a model end to end");
    tr->add_option("--interactions", ta.interactions, "interactions file");
    tr->add_option("--format", ta.format, "csv or jsonl");
    tr->add_option("--portraits", ta.portraits, "user portraits CSV");
    tr->add_option("--schema", ta.schema, "portrait schema JSON");
    tr->add_option("--vocab", ta.vocab, "pinned vocabulary JSON (optional)");
    tr->add_option("--out-dir", ta.out_dir, "output directory");
    tr->add_option("--config", ta.config_path, "JSON config file; flags override keys");
    tr->add_option("--hidden", ta.hidden, "hidden size d");
    tr->add_option("--user-dim", ta.user_dim, "user embedding dimension M");
    tr->add_option("--fm-dim", ta.fm_dim, "FM latent dimension f");
    tr->add_option("--dnn-hidden", ta.dnn_hidden, "comma list of DNN hidden widths");
    tr->add_option("--variant", ta.variant, "attention variant v1|v2|v3|v4");
    tr->add_option("--steps", ta.steps, "propagation steps T");
    tr->add_flag("--tie-reset-update", ta.tie_reset_update,
                 "tie the reset gate input weights to the update gate");
    tr->add_option("--loss", ta.loss, "paper_bce or categorical_ce");
    tr->add_option("--batch", ta.batch, "batch size");
    tr->add_option("--epochs", ta.epochs, "epoch count");
    tr->add_option("--l2", ta.l2, "L2 penalty");
    tr->add_option("--seed", ta.seed, "seed for init, splits and shuffles");
    tr->add_option("--val-fraction", ta.val_fraction, "validation fraction of train");
    tr->add_option("--k", ta.k, "metric cutoff");
    tr->add_option("--min-item-count", ta.min_item_count, "drop items seen fewer times");

    // evaluate
    std::string ev_ckpt, ev_interactions, ev_format = "csv", ev_portraits, ev_out;
    std::size_t ev_k = 20;
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on held-out data");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--interactions", ev_interactions, "interactions file")->required();
    ev->add_option("--format", ev_format, "csv or jsonl");
    ev->add_option("--portraits", ev_portraits, "user portraits CSV")->required();
    ev->add_option("--k", ev_k, "metric cutoff");
    ev->add_option("--out", ev_out, "write the metrics JSON here");

    // recommend
    std::string rc_ckpt, rc_portraits, rc_user, rc_items;
    std::size_t rc_k = 20;
    auto* rc = app.add_subcommand("recommend", "top-k items for a session prefix");
    rc->add_option("--checkpoint", rc_ckpt, "checkpoint file")->required();
    rc->add_option("--portraits", rc_portraits, "user portraits CSV")->required();
    rc->add_option("--user", rc_user, "user id")->required();
    rc->add_option("--items", rc_items, "comma list of prefix item ids")->required();
    rc->add_option("--k", rc_k, "number of recommendations");

    // grad-check
    std::string gc_preset = "micro";
    std::uint64_t gc_seed = 7;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    auto* gc = app.add_subcommand("grad-check",
                                  "verify analytic gradients against finite differences");
    gc->add_option("--preset", gc_preset, "fixture preset (micro)");
    gc->add_option("--seed", gc_seed, "fixture seed");
    gc->add_option("--eps", gc_eps, "finite-difference step");
    gc->add_option("--tol", gc_tol, "max relative error tolerance");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_synthetic(syn, syn_out);
        if (prep->parsed()) {
            return cmd_prepare(prep_interactions, prep_format, prep_out, prep_ratio,
                               prep_seed, prep_min_count);
        }
        if (tr->parsed()) {
            if (!ta.config_path.empty()) apply_config_file(*tr, ta);
            if (ta.interactions.empty() || ta.portraits.empty() || ta.schema.empty()) {
                throw ConfigError("train needs --interactions, --portraits and --schema "
                                  "(directly or via --config)");
            }
            return cmd_train(ta);
        }
        if (ev->parsed()) {
            return cmd_evaluate(ev_ckpt, ev_interactions, ev_format, ev_portraits, ev_k,
                                ev_out);
        }
        if (rc->parsed()) return cmd_recommend(rc_ckpt, rc_portraits, rc_user, rc_items, rc_k);
        if (gc->parsed()) {
            if (gc_preset != "micro") throw ConfigError("unknown preset: " + gc_preset);
            return cmd_grad_check(gc_seed, gc_eps, gc_tol);
        }
    } catch (const EmptyDatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const TrainingDivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 6;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 8;
    } catch (const RecommendationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 9;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
