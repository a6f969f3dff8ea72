// Command line front end: training, prediction, evaluation, property-suite
// checks, uncertainty reports, and a demo-data generator.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <refineppi/refineppi.hpp>

namespace fs = std::filesystem;
using namespace refineppi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw DataError("write to '" + path + "' failed");
}

std::map<char, ChainGroup> groups_of_flags(const std::string& ligand,
                                           const std::string& receptor) {
    if (ligand.empty() || receptor.empty())
        throw DataError("both --ligand-chains and --receptor-chains need at least one chain");
    std::map<char, ChainGroup> g;
    for (char c : ligand) g[c] = ChainGroup::Ligand;
    for (char c : receptor) {
        if (g.count(c)) throw DataError(std::string("chain '") + c + "' is in both groups");
        g[c] = ChainGroup::Receptor;
    }
    return g;
}

Complex load_pdb(const std::string& path, const std::map<char, ChainGroup>& groups) {
    std::vector<std::string> warnings;
    Complex c = parse_pdb(read_file(path), groups, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s: %s\n", path.c_str(), w.c_str());
    return c;
}

// Loads every structure a dataset references, enforcing one consistent
// chain grouping per structure id.
std::map<std::string, Complex> load_structures(const std::vector<DatasetEntry>& entries,
                                               const std::string& pdb_dir) {
    std::map<std::string, Complex> out;
    std::map<std::string, std::pair<std::string, std::string>> seen;
    for (const DatasetEntry& e : entries) {
        auto it = seen.find(e.pdb);
        if (it != seen.end()) {
            if (it->second != std::make_pair(e.ligand_chains, e.receptor_chains))
                throw DataError("dataset lists conflicting chain groups for '" + e.pdb + "'");
            continue;
        }
        seen[e.pdb] = {e.ligand_chains, e.receptor_chains};
        fs::path path = fs::path(pdb_dir) / (e.pdb + ".pdb");
        out.emplace(e.pdb, load_pdb(path.string(), chain_groups_of(e)));
    }
    return out;
}

std::vector<MutationRecord> to_records(const std::vector<DatasetEntry>& entries) {
    std::vector<MutationRecord> out;
    out.reserve(entries.size());
    for (const DatasetEntry& e : entries) out.push_back({e.pdb, e.mutations, e.ddg});
    return out;
}

// ------------------------------------------------------------------- config

struct RunConfig {
    std::string dataset;
    std::string pdb_dir;
    std::string out;
    int n_folds = 3;
    int fold = -1;  // -1: train on everything, no held-out slice
    std::uint64_t fold_seed = 0;
    std::uint64_t init_seed = 1;
    ModelConfig model;
    PipelineConfig pipeline;
};

RunConfig load_run_config(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config '" + path + "' is not valid JSON: " + e.what());
    }
    static const std::set<std::string> known = {"dataset",   "pdb_dir",   "out",
                                                "n_folds",   "fold",      "fold_seed",
                                                "init_seed", "model",     "pipeline"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!known.count(it.key())) throw DataError("config: unknown key '" + it.key() + "'");
    RunConfig cfg;
    if (doc.contains("dataset")) cfg.dataset = doc.at("dataset").get<std::string>();
    if (doc.contains("pdb_dir")) cfg.pdb_dir = doc.at("pdb_dir").get<std::string>();
    if (doc.contains("out")) cfg.out = doc.at("out").get<std::string>();
    if (doc.contains("n_folds")) cfg.n_folds = doc.at("n_folds").get<int>();
    if (doc.contains("fold")) cfg.fold = doc.at("fold").get<int>();
    if (doc.contains("fold_seed")) cfg.fold_seed = doc.at("fold_seed").get<std::uint64_t>();
    if (doc.contains("init_seed")) cfg.init_seed = doc.at("init_seed").get<std::uint64_t>();
    if (doc.contains("model")) cfg.model = model_config_from_json(doc.at("model"));
    if (doc.contains("pipeline")) cfg.pipeline = pipeline_config_from_json(doc.at("pipeline"));
    // Paths in the config are relative to the config file's directory.
    fs::path base = fs::path(path).parent_path();
    auto rebase = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
    };
    rebase(cfg.dataset);
    rebase(cfg.pdb_dir);
    rebase(cfg.out);
    return cfg;
}

// -------------------------------------------------------------------- train

struct TrainOpts {
    std::string config;
    std::string dataset, pdb_dir, out;
    int fold = -2;  // -2: keep config value
    int n_folds = 0;
    std::int64_t seed = -1;
    std::int64_t init_seed = -1;
    int iterations = 0;
    double lr = 0.0;
    int batch_size = 0;
};

int cmd_train(const TrainOpts& opt) {
    RunConfig cfg = load_run_config(opt.config);
    if (!opt.dataset.empty()) cfg.dataset = opt.dataset;
    if (!opt.pdb_dir.empty()) cfg.pdb_dir = opt.pdb_dir;
    if (!opt.out.empty()) cfg.out = opt.out;
    if (opt.fold != -2) cfg.fold = opt.fold;
    if (opt.n_folds > 0) cfg.n_folds = opt.n_folds;
    if (opt.seed >= 0) cfg.pipeline.seed = static_cast<std::uint64_t>(opt.seed);
    if (opt.init_seed >= 0) cfg.init_seed = static_cast<std::uint64_t>(opt.init_seed);
    if (opt.iterations > 0) cfg.pipeline.max_iterations = opt.iterations;
    if (opt.lr > 0.0) cfg.pipeline.lr = opt.lr;
    if (opt.batch_size > 0) cfg.pipeline.batch_size = opt.batch_size;
    if (cfg.dataset.empty()) throw DataError("train: no dataset (config key or --dataset)");
    if (cfg.pdb_dir.empty()) throw DataError("train: no pdb_dir (config key or --pdb-dir)");
    if (cfg.out.empty()) throw DataError("train: no checkpoint path (config key or --out)");

    std::vector<DatasetEntry> entries = parse_dataset_tsv(read_file(cfg.dataset));
    std::vector<DatasetEntry> train_entries, val_entries;
    if (cfg.fold >= 0) {
        std::map<std::string, int> fold_of = split_folds(entries, cfg.n_folds, cfg.fold_seed);
        for (const DatasetEntry& e : entries)
            (fold_of.at(e.pdb) == cfg.fold ? val_entries : train_entries).push_back(e);
        if (train_entries.empty())
            throw DataError("train: fold split left no training records");
    } else {
        train_entries = entries;
    }
    std::map<std::string, Complex> structures = load_structures(entries, cfg.pdb_dir);

    std::printf("training on %zu records, validating on %zu (fold %d of %d)\n",
                train_entries.size(), val_entries.size(), cfg.fold, cfg.n_folds);
    ModelParams params = ModelParams::init(cfg.model, cfg.init_seed);
    auto on_log = [](const TrainLogEntry& e) {
        std::printf("iter=%d lr=%.3g total=%.6f ddg=%.6f refine=%.6f", e.iteration, e.lr,
                    e.loss_total, e.loss_ddg, e.loss_refine);
        if (e.has_validation) std::printf(" val_mse=%.6f", e.val_mse);
        std::printf("\n");
    };
    TrainRunResult result = run_training(structures, to_records(train_entries),
                                         to_records(val_entries), params, cfg.pipeline, on_log);
    save_checkpoint(cfg.out, params, cfg.pipeline);
    std::printf("done: %d iterations, final lr %.3g", result.iterations, result.final_lr);
    if (!val_entries.empty()) std::printf(", best val mse %.6f", result.best_val_mse);
    std::printf("\nwrote checkpoint %s\n", cfg.out.c_str());
    return kExitOk;
}

// ------------------------------------------------------------------ predict

struct PredictOpts {
    std::string ckpt, pdb, ligand, receptor, mutations, out_pdb;
    std::uint64_t seed = 0;
};

int cmd_predict(const PredictOpts& opt) {
    Checkpoint ckpt = load_checkpoint(opt.ckpt);
    Complex wt = load_pdb(opt.pdb, groups_of_flags(opt.ligand, opt.receptor));
    std::vector<Mutation> muts = parse_mutations(opt.mutations);
    PredictResult res = predict_ddg(wt, muts, ckpt.params, ckpt.pipeline, opt.seed);
    std::printf("predicted ddG: %+.6f kcal/mol\n", res.ddg);
    if (!opt.out_pdb.empty()) {
        write_file(opt.out_pdb, serialize_pdb(res.refined_mutant));
        std::printf("wrote refined mutant backbone %s\n", opt.out_pdb.c_str());
    }
    return kExitOk;
}

// --------------------------------------------------------------------- eval

struct EvalOpts {
    std::string ckpt, dataset, pdb_dir, out;
    int fold = -1;
    int n_folds = 3;
    std::uint64_t fold_seed = 0;
    std::int64_t seed = -1;  // default: the checkpoint's pipeline seed
    std::size_t min_group = 10;
};

int cmd_eval(const EvalOpts& opt) {
    Checkpoint ckpt = load_checkpoint(opt.ckpt);
    std::uint64_t seed =
        opt.seed >= 0 ? static_cast<std::uint64_t>(opt.seed) : ckpt.pipeline.seed;
    std::vector<DatasetEntry> entries = parse_dataset_tsv(read_file(opt.dataset));
    if (opt.fold >= 0) {
        std::map<std::string, int> fold_of = split_folds(entries, opt.n_folds, opt.fold_seed);
        std::vector<DatasetEntry> kept;
        for (const DatasetEntry& e : entries)
            if (fold_of.at(e.pdb) == opt.fold) kept.push_back(e);
        entries = std::move(kept);
        if (entries.empty()) throw DataError("eval: fold holds no records");
    }
    std::map<std::string, Complex> structures = load_structures(entries, opt.pdb_dir);

    std::vector<EvalRecord> records;
    std::vector<double> preds, labels;
    for (const DatasetEntry& e : entries) {
        double pred = predict_ddg(structures.at(e.pdb), e.mutations, ckpt.params, ckpt.pipeline,
                                  seed)
                          .ddg;
        records.push_back({e.pdb, e.ddg, pred});
        preds.push_back(pred);
        labels.push_back(e.ddg);
    }

    std::string tsv = "metric\tvalue\n";
    char line[128];
    auto emit = [&](const char* name, double v) {
        std::snprintf(line, sizeof(line), "%s\t%.6f\n", name, v);
        tsv += line;
    };
    auto emit_or_skip = [&](const char* name, auto&& fn) {
        try {
            emit(name, fn());
        } catch (const std::exception& e) {
            std::fprintf(stderr, "note: %s skipped: %s\n", name, e.what());
        }
    };
    std::snprintf(line, sizeof(line), "n\t%zu\n", records.size());
    tsv += line;
    emit_or_skip("pearson", [&] { return pearson(preds, labels); });
    emit_or_skip("spearman", [&] { return spearman(preds, labels); });
    emit_or_skip("rmse", [&] { return minimized_rmse(preds, labels); });
    emit_or_skip("mae", [&] { return minimized_mae(preds, labels); });
    emit_or_skip("auroc", [&] { return auroc(preds, labels); });
    try {
        PerStructureReport rep = per_structure(records, opt.min_group);
        std::snprintf(line, sizeof(line), "per_structure_n\t%zu\n", rep.entries.size());
        tsv += line;
        emit("per_structure_pearson", rep.mean_pearson);
        emit("per_structure_spearman", rep.mean_spearman);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "note: per-structure metrics skipped: %s\n", e.what());
    }
    std::fputs(tsv.c_str(), stdout);
    if (!opt.out.empty()) {
        write_file(opt.out, tsv);
        std::fprintf(stderr, "wrote %s\n", opt.out.c_str());
    }
    return kExitOk;
}

// -------------------------------------------------------------------- check

struct CheckOpts {
    std::string suite = "all";
    std::uint64_t seed = 2024;
    int complexes = 10;
    int motions = 100;
    int pairs = 20;
    long long mc_samples = 10'000'000;
    int instances = 5;
};

int cmd_check(const CheckOpts& opt) {
    bool all_pass = true;
    if (opt.suite == "equivariance" || opt.suite == "all") {
        EquivarianceReport rep =
            run_equivariance_suite(opt.seed, opt.complexes, opt.motions, 4, 1e-9);
        std::printf("%s\n", rep.summary().c_str());
        all_pass = all_pass && rep.pass();
    }
    if (opt.suite == "moments" || opt.suite == "all") {
        MomentsReport rep = run_moments_suite(opt.seed, opt.pairs, opt.mc_samples, 4.0);
        std::printf("%s\n", rep.summary().c_str());
        all_pass = all_pass && rep.pass();
    }
    if (opt.suite == "gradients" || opt.suite == "all") {
        GradientReport rep = run_gradient_suite(opt.seed, opt.instances, 6, 1e-4);
        std::printf("%s\n", rep.summary().c_str());
        all_pass = all_pass && rep.pass();
    }
    std::printf("%s\n", all_pass ? "all checks passed" : "CHECK FAILURE");
    return all_pass ? kExitOk : kExitCheck;
}

// ----------------------------------------------------- correlate-uncertainty

struct UncertaintyOpts {
    std::string ckpt, pdb, ligand, receptor, rmsf;
    double cutoff = 8.0;
};

int cmd_correlate_uncertainty(const UncertaintyOpts& opt) {
    Checkpoint ckpt = load_checkpoint(opt.ckpt);
    Complex c = load_pdb(opt.pdb, groups_of_flags(opt.ligand, opt.receptor));
    std::vector<double> norms =
        predicted_sigma_norms(c, ckpt.params, ckpt.pipeline.variance_init());

    std::vector<int> iface = interface_residues(c, opt.cutoff);
    std::set<int> iface_set(iface.begin(), iface.end());
    double sum_in = 0.0, sum_out = 0.0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < norms.size(); ++i) {
        if (iface_set.count(static_cast<int>(i))) {
            sum_in += norms[i];
            ++n_in;
        } else {
            sum_out += norms[i];
            ++n_out;
        }
    }
    std::printf("residues: %zu total, %zu at the interface (cutoff %.2f A)\n", norms.size(), n_in,
                opt.cutoff);
    if (n_in > 0)
        std::printf("mean squared covariance norm, interface:     %.6f\n",
                    sum_in / static_cast<double>(n_in));
    if (n_out > 0)
        std::printf("mean squared covariance norm, non-interface: %.6f\n",
                    sum_out / static_cast<double>(n_out));

    std::vector<double> target = rmsf_for_complex(c, parse_rmsf_tsv(read_file(opt.rmsf)));
    double r;
    try {
        r = pearson(norms, target);
    } catch (const std::exception& e) {
        throw DataError(std::string("cannot correlate against this fluctuation table: ") +
                        e.what());
    }
    std::printf("pearson(squared covariance norm, rmsf): %.6f\n", r);
    return kExitOk;
}

// ---------------------------------------------------------------- make-demo

struct DemoOpts {
    std::string out;
    int complexes = 6;
    int per_chain = 8;  // window width 2+1+2 needs at least 7 per chain
    int records = 4;
    std::uint64_t seed = 2024;
};

std::string mutation_text(const std::vector<Mutation>& muts) {
    std::string s;
    for (const Mutation& m : muts) {
        if (!s.empty()) s += ",";
        s += aa_to_one_letter(m.wt_aa);
        s += m.chain_id;
        s += std::to_string(m.seq_number);
        if (m.icode != ' ') s += m.icode;
        s += aa_to_one_letter(m.mt_aa);
    }
    return s;
}

int cmd_make_demo(const DemoOpts& opt) {
    SyntheticDataset data =
        synthetic_benchmark(opt.complexes, opt.per_chain, opt.records, opt.seed);
    fs::create_directories(opt.out);

    std::string tsv = kDatasetHeader + "\n";
    for (const MutationRecord& rec : data.records) {
        const Complex& c = data.structures.at(rec.structure_id);
        std::string ligand, receptor;
        for (const auto& [chain, group] : c.chain_groups)
            (group == ChainGroup::Ligand ? ligand : receptor) += chain;
        char line[160];
        std::snprintf(line, sizeof(line), "%s\t%s\t%s\t%s\t%.9g\n", rec.structure_id.c_str(),
                      ligand.c_str(), receptor.c_str(), mutation_text(rec.mutations).c_str(),
                      rec.ddg);
        tsv += line;
    }
    write_file((fs::path(opt.out) / "dataset.tsv").string(), tsv);

    for (const auto& [id, c] : data.structures) {
        write_file((fs::path(opt.out) / (id + ".pdb")).string(), serialize_pdb(c));
        std::map<std::pair<char, int>, double> rmsf;
        std::vector<double> target = type_linked_rmsf(c);
        for (std::size_t i = 0; i < c.residues.size(); ++i)
            rmsf[{c.residues[i].chain_id, c.residues[i].seq_number}] = target[i];
        write_file((fs::path(opt.out) / (id + "_rmsf.tsv")).string(), serialize_rmsf_tsv(rmsf));
    }

    ModelConfig model;
    model.node_width = 26;
    model.encoder_layers = 1;
    model.refiner_layers = 1;
    model.knn_k = 4;
    PipelineConfig pipeline;
    pipeline.k_recycles = 1;
    pipeline.mask_left = 2;
    pipeline.mask_right = 2;
    pipeline.lr = 1e-3;
    pipeline.batch_size = 2;
    pipeline.max_iterations = 30;
    pipeline.val_every = 10;
    pipeline.seed = 7;
    nlohmann::json config = {{"dataset", "dataset.tsv"},
                             {"pdb_dir", "."},
                             {"out", "demo.ckpt.json"},
                             {"n_folds", 3},
                             {"fold", 0},
                             {"fold_seed", 0},
                             {"init_seed", 1},
                             {"model", model_config_json(model)},
                             {"pipeline", pipeline_config_json(pipeline)}};
    write_file((fs::path(opt.out) / "config.json").string(), config.dump(1) + "\n");
    std::printf("wrote %d structures, %zu records to %s\n", opt.complexes, data.records.size(),
                opt.out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-refining ddG predictor for protein complexes"};
    app.require_subcommand(1);

    TrainOpts train_opt;
    CLI::App* train = app.add_subcommand("train", "fit a model and write a checkpoint");
    train->add_option("--config", train_opt.config, "JSON run config")->required();
    train->add_option("--dataset", train_opt.dataset, "dataset TSV (overrides config)");
    train->add_option("--pdb-dir", train_opt.pdb_dir, "directory of <id>.pdb files");
    train->add_option("--out", train_opt.out, "checkpoint path (overrides config)");
    train->add_option("--fold", train_opt.fold, "held-out validation fold (-1: none)");
    train->add_option("--n-folds", train_opt.n_folds, "number of folds");
    train->add_option("--seed", train_opt.seed, "training seed (overrides config)");
    train->add_option("--init-seed", train_opt.init_seed, "parameter init seed");
    train->add_option("--iterations", train_opt.iterations, "training iterations");
    train->add_option("--lr", train_opt.lr, "learning rate");
    train->add_option("--batch-size", train_opt.batch_size, "batch size");

    PredictOpts pred_opt;
    CLI::App* predict = app.add_subcommand("predict", "score mutations on one complex");
    predict->add_option("--ckpt", pred_opt.ckpt, "checkpoint")->required();
    predict->add_option("--pdb", pred_opt.pdb, "wild-type PDB file")->required();
    predict->add_option("--ligand-chains", pred_opt.ligand, "ligand chain letters")->required();
    predict->add_option("--receptor-chains", pred_opt.receptor, "receptor chain letters")
        ->required();
    predict->add_option("--mutations", pred_opt.mutations, "e.g. TI38A or a comma list")
        ->required();
    predict->add_option("--seed", pred_opt.seed, "corruption seed");
    predict->add_option("--out-pdb", pred_opt.out_pdb, "write the refined mutant backbone here");

    EvalOpts eval_opt;
    CLI::App* eval = app.add_subcommand("eval", "metrics over a labelled dataset");
    eval->add_option("--ckpt", eval_opt.ckpt, "checkpoint")->required();
    eval->add_option("--dataset", eval_opt.dataset, "dataset TSV")->required();
    eval->add_option("--pdb-dir", eval_opt.pdb_dir, "directory of <id>.pdb files")->required();
    eval->add_option("--fold", eval_opt.fold, "restrict to this fold (-1: all records)");
    eval->add_option("--n-folds", eval_opt.n_folds, "number of folds");
    eval->add_option("--fold-seed", eval_opt.fold_seed, "fold shuffle seed");
    eval->add_option("--seed", eval_opt.seed, "corruption seed (default: checkpoint seed)");
    eval->add_option("--min-group", eval_opt.min_group, "per-structure group cutoff");
    eval->add_option("--out", eval_opt.out, "also write the TSV here");

    CheckOpts check_opt;
    CLI::App* check = app.add_subcommand("check", "run the property suites");
    check
        ->add_option("--suite", check_opt.suite,
                     "equivariance, moments, gradients, or all (default)")
        ->check(CLI::IsMember({"equivariance", "moments", "gradients", "all"}));
    check->add_option("--seed", check_opt.seed, "suite seed");
    check->add_option("--complexes", check_opt.complexes, "equivariance: random complexes");
    check->add_option("--motions", check_opt.motions, "equivariance: motions per complex");
    check->add_option("--pairs", check_opt.pairs, "moments: random density pairs");
    check->add_option("--mc-samples", check_opt.mc_samples, "moments: Monte Carlo samples");
    check->add_option("--instances", check_opt.instances, "gradients: instances per group");

    UncertaintyOpts unc_opt;
    CLI::App* unc = app.add_subcommand("correlate-uncertainty",
                                       "learned covariance size vs a fluctuation table");
    unc->add_option("--ckpt", unc_opt.ckpt, "checkpoint")->required();
    unc->add_option("--pdb", unc_opt.pdb, "PDB file")->required();
    unc->add_option("--ligand-chains", unc_opt.ligand, "ligand chain letters")->required();
    unc->add_option("--receptor-chains", unc_opt.receptor, "receptor chain letters")->required();
    unc->add_option("--rmsf", unc_opt.rmsf, "per-residue fluctuation TSV")->required();
    unc->add_option("--cutoff", unc_opt.cutoff, "interface CA-CA cutoff in Angstrom");

    DemoOpts demo_opt;
    CLI::App* demo = app.add_subcommand("make-demo", "write a synthetic labelled dataset");
    demo->add_option("--out", demo_opt.out, "output directory")->required();
    demo->add_option("--complexes", demo_opt.complexes, "number of structures");
    demo->add_option("--per-chain", demo_opt.per_chain, "residues per chain");
    demo->add_option("--records", demo_opt.records, "mutation records per structure");
    demo->add_option("--seed", demo_opt.seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(train_opt);
        if (predict->parsed()) return cmd_predict(pred_opt);
        if (eval->parsed()) return cmd_eval(eval_opt);
        if (check->parsed()) return cmd_check(check_opt);
        if (unc->parsed()) return cmd_correlate_uncertainty(unc_opt);
        if (demo->parsed()) return cmd_make_demo(demo_opt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
