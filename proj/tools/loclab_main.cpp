// Command-line front end: corpus ingestion, partitioning, training,
// evaluation, statistics, experiment matrices, reports and attention
// inspection.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "loclab/checkpoint.hpp"
#include "loclab/config_json.hpp"
#include "loclab/corpus.hpp"
#include "loclab/error.hpp"
#include "loclab/metrics.hpp"
#include "loclab/partition.hpp"
#include "loclab/partition_provider.hpp"
#include "loclab/runner.hpp"
#include "loclab/stats.hpp"
#include "loclab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace loclab;

namespace {

SplitSpec parse_splits(const std::string& text) {
    std::istringstream in(text);
    SplitSpec s;
    char c1 = 0, c2 = 0;
    if (!(in >> s.train >> c1 >> s.val >> c2 >> s.test) || c1 != ',' || c2 != ',')
        fail(errc::invalid_config, "--splits expects 'a,b,c'");
    return s;
}

template <typename T>
T load_json_config(const std::string& path) {
    if (path.empty()) return T{};
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open " + path);
    try {
        return json::parse(in).get<T>();
    } catch (const json::exception& e) {
        fail(errc::invalid_config, path + ": " + e.what());
    }
}

// "none", "fixed:W" or "semantic:CHECKPOINT"; empty result means none.
std::unique_ptr<PartitionProvider> provider_from_spec(const std::string& spec,
                                                      const BoundaryPolicy& policy) {
    if (spec.empty() || spec == "none") return nullptr;
    if (spec.rfind("fixed:", 0) == 0) {
        int w = 0;
        try {
            w = std::stoi(spec.substr(6));
        } catch (const std::exception&) {
        }
        if (w < 1) fail(errc::invalid_config, "bad fixed window in '" + spec + "'");
        return std::make_unique<FixedWindowProvider>(w);
    }
    if (spec.rfind("semantic:", 0) == 0) {
        std::string ref = spec.substr(9);
        if (ref.empty()) fail(errc::invalid_config, "semantic partition needs a checkpoint path");
        return std::make_unique<SemanticProvider>(load_checkpoint(ref), policy);
    }
    fail(errc::invalid_config, "unknown partition spec '" + spec + "'");
}

TokenSequence corpus_from(const std::string& path) {
    if (path.empty()) fail(errc::invalid_config, "a corpus path is required");
    return load_corpus(path);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write " + path.string());
    out << text;
}

int run(int argc, char** argv) {
    CLI::App app{"locality-schedule language model laboratory"};
    app.require_subcommand(1);

    // ingest ---------------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "tokenize a UTF-8 corpus and report split sizes");
    std::string ing_input, ing_splits = "0.8,0.1,0.1";
    int ing_context = 128;
    ingest->add_option("--input", ing_input, "UTF-8 text file")->required();
    ingest->add_option("--splits", ing_splits, "train,val,test fractions");
    ingest->add_option("--context", ing_context, "context length used for minimum-size checks");

    // partition ------------------------------------------------------------
    auto* part = app.add_subcommand("partition", "block-partition a token sequence");
    std::string part_method = "semantic", part_input, part_text, part_ref, part_tau_mode =
        "adaptive", part_out;
    int part_window = 5, part_min = 2, part_max = 12;
    double part_k = 0.5, part_tau = 0.0;
    part->add_option("--method", part_method, "fixed or semantic")
        ->check(CLI::IsMember({"fixed", "semantic"}));
    part->add_option("--input", part_input, "text file to partition");
    part->add_option("--text", part_text, "literal text to partition");
    part->add_option("--window", part_window, "fixed window length");
    part->add_option("--tau-mode", part_tau_mode, "adaptive or fixed threshold")
        ->check(CLI::IsMember({"adaptive", "fixed"}));
    part->add_option("--tau", part_tau, "fixed similarity threshold");
    part->add_option("--k", part_k, "adaptive threshold strength (tau = mean - k*std)");
    part->add_option("--min-len", part_min, "minimum block length");
    part->add_option("--max-len", part_max, "maximum block length");
    part->add_option("--ref-checkpoint", part_ref, "reference checkpoint for semantic mode");
    part->add_option("--out", part_out, "write block indices here (one per token)");

    // train ----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train one run and emit its result");
    std::string tr_model_cfg, tr_train_cfg, tr_schedule = "uniform_distributed";
    std::string tr_partition = "none", tr_eval_partition, tr_corpus, tr_out = ".",
                tr_splits = "0.8,0.1,0.1";
    uint64_t tr_seed = 42;
    train->add_option("--model-config", tr_model_cfg, "model config JSON");
    train->add_option("--train-config", tr_train_cfg, "training config JSON");
    train->add_option("--schedule", tr_schedule,
                      "uniform_distributed | uniform_localist:L | progressive:B:L");
    train->add_option("--partition", tr_partition, "none | fixed:W | semantic:CKPT");
    train->add_option("--eval-partition", tr_eval_partition,
                      "partition source for metrics (defaults to --partition)");
    train->add_option("--seed", tr_seed, "run seed");
    train->add_option("--corpus", tr_corpus, "UTF-8 text file")->required();
    train->add_option("--splits", tr_splits, "train,val,test fractions");
    train->add_option("--out", tr_out, "output directory");

    // eval -----------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "measure a checkpoint on held-out text");
    std::string ev_ckpt, ev_partition, ev_corpus, ev_splits = "0.8,0.1,0.1";
    int ev_context = 128;
    eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    eval->add_option("--partition", ev_partition, "fixed:W | semantic:CKPT")->required();
    eval->add_option("--corpus", ev_corpus, "UTF-8 text file")->required();
    eval->add_option("--splits", ev_splits, "train,val,test fractions (test split is measured)");
    eval->add_option("--context", ev_context, "evaluation window length");

    // stats ----------------------------------------------------------------
    auto* stats = app.add_subcommand("stats", "summaries and tests over (config,seed,value) rows");
    std::string st_input, st_baseline;
    stats->add_option("--input", st_input, "CSV of config,seed,value rows")->required();
    stats->add_option("--baseline", st_baseline, "baseline config (default: first seen)");

    // experiment -----------------------------------------------------------
    auto* exp = app.add_subcommand("experiment", "run a config x seed matrix with caching");
    std::string ex_corpus, ex_matrix, ex_out = "out", ex_cache;
    int ex_jobs = 1;
    exp->add_option("--corpus", ex_corpus, "UTF-8 text file")->required();
    exp->add_option("--matrix", ex_matrix, "plain-text matrix file (default: standard grid)");
    exp->add_option("--out", ex_out, "results directory");
    exp->add_option("--jobs", ex_jobs, "cells trained in parallel");
    exp->add_option("--partition-cache", ex_cache, "pin semantic partitions to this cache file");

    // report ---------------------------------------------------------------
    auto* rep = app.add_subcommand("report", "render tables from a finished matrix");
    std::string rp_in = "out", rp_matrix, rp_format = "markdown";
    rep->add_option("--in", rp_in, "results directory");
    rep->add_option("--matrix", rp_matrix, "matrix file the results were produced with");
    rep->add_option("--format", rp_format, "markdown, csv or json")
        ->check(CLI::IsMember({"markdown", "csv", "json"}));

    // inspect-attention ------------------------------------------------------
    auto* insp = app.add_subcommand("inspect-attention", "per-block attention of one query");
    std::string in_ckpt, in_text, in_partition, in_query = "last";
    bool in_per_layer = false;
    insp->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
    insp->add_option("--text", in_text, "text window to inspect")->required();
    insp->add_option("--partition", in_partition, "fixed:W | semantic:CKPT")->required();
    insp->add_option("--query", in_query, "'last' or a 0-based position");
    insp->add_flag("--per-layer", in_per_layer, "also show per-layer within-block shares");

    CLI11_PARSE(app, argc, argv);

    if (*ingest) {
        TokenSequence seq = corpus_from(ing_input);
        SplitSpec spec = parse_splits(ing_splits);
        CorpusSplits cs = split_corpus(seq, spec, ing_context);
        std::cout << "tokens: " << seq.size() << "\n";
        std::cout << "hash:   " << token_hash_hex(seq.tokens) << "\n";
        std::cout << "train:  " << cs.train.size() << "\n";
        std::cout << "val:    " << cs.val.size() << "\n";
        std::cout << "test:   " << cs.test.size() << "\n";
        return 0;
    }

    if (*part) {
        if (part_input.empty() == part_text.empty())
            fail(errc::invalid_config, "give exactly one of --input or --text");
        TokenSequence seq =
            part_input.empty() ? tokenize(part_text) : corpus_from(part_input);
        Partition p;
        if (part_method == "fixed") {
            p = fixed_window_partition(static_cast<int>(seq.size()), part_window);
        } else {
            if (part_ref.empty())
                fail(errc::invalid_config, "semantic mode needs --ref-checkpoint");
            BoundaryPolicy policy;
            policy.mode = part_tau_mode == "fixed" ? BoundaryPolicy::Threshold::fixed
                                                   : BoundaryPolicy::Threshold::adaptive;
            policy.fixed_tau = part_tau;
            policy.adaptive_k = part_k;
            policy.min_block_len = part_min;
            policy.max_block_len = part_max;
            SemanticProvider prov(load_checkpoint(part_ref), policy);
            p = prov.get(seq.tokens);
        }
        PartitionStats st = partition_stats(p);
        std::cout << "tokens: " << p.size() << "\n";
        std::cout << "blocks: " << st.num_blocks << "\n";
        std::cout << "mean_len: " << st.mean_len << "\n";
        std::cout << "min_len: " << st.min_len << "\n";
        std::cout << "max_len: " << st.max_len << "\n";
        std::ostringstream body;
        for (int i = 0; i < p.size(); ++i) body << p.block_of[i] << "\n";
        if (part_out.empty())
            std::cout << body.str();
        else
            write_file(part_out, body.str());
        return 0;
    }

    if (*train) {
        ModelConfig mc = load_json_config<ModelConfig>(tr_model_cfg);
        TrainConfig tc = load_json_config<TrainConfig>(tr_train_cfg);
        tc.seed = tr_seed;
        LocalityScheduleSpec spec = parse_schedule(tr_schedule);
        TokenSequence corpus = corpus_from(tr_corpus);
        SplitSpec splits = parse_splits(tr_splits);
        BoundaryPolicy policy;
        auto train_prov = provider_from_spec(tr_partition, policy);
        std::string eval_spec = tr_eval_partition.empty() ? tr_partition : tr_eval_partition;
        auto eval_prov = provider_from_spec(eval_spec, policy);
        if (!spec.is_zero() && !train_prov)
            fail(errc::invalid_config, "this schedule needs --partition");

        fs::create_directories(tr_out);
        TrainOutput out = train_run(mc, tc, spec, train_prov.get(), eval_prov.get(), corpus,
                                    splits);
        save_checkpoint(out.params, fs::path(tr_out) / "checkpoint.ckpt");
        json j = out.result;
        write_file(fs::path(tr_out) / "result.json", j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*eval) {
        ModelParams params = load_checkpoint(ev_ckpt);
        BoundaryPolicy policy;
        auto prov = provider_from_spec(ev_partition, policy);
        if (!prov) fail(errc::invalid_config, "eval needs a real partition source");
        TokenSequence corpus = corpus_from(ev_corpus);
        CorpusSplits cs = split_corpus(corpus, parse_splits(ev_splits), ev_context);
        MetricsReport m = evaluate(params, cs.test, ev_context, *prov);
        json j;
        j["perplexity"] = m.perplexity;
        j["entropy_bits"] = m.entropy_bits;
        j["fidelity"] = m.fidelity;
        j["per_layer_entropy"] = m.per_layer_entropy;
        j["per_layer_fidelity"] = m.per_layer_fidelity;
        j["windows"] = m.windows;
        j["positions"] = m.positions;
        j["partition"] = prov->describe();
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*stats) {
        std::ifstream in(st_input);
        if (!in) fail(errc::io_error, "cannot open " + st_input);
        std::vector<SampleSet> groups;
        auto group_of = [&](const std::string& name) -> SampleSet& {
            for (SampleSet& g : groups)
                if (g.label == name) return g;
            groups.push_back({name, {}});
            return groups.back();
        };
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream row(line);
            std::string name, seed, value;
            if (!std::getline(row, name, ',') || !std::getline(row, seed, ',') ||
                !std::getline(row, value))
                fail(errc::invalid_config,
                     st_input + " line " + std::to_string(lineno) + ": expected config,seed,value");
            try {
                group_of(name).values.push_back(std::stod(value));
            } catch (const std::exception&) {
                if (lineno == 1) continue;  // header row
                fail(errc::invalid_config, st_input + " line " + std::to_string(lineno) +
                                               ": bad value '" + value + "'");
            }
        }
        if (groups.empty()) fail(errc::invalid_samples, "no rows in " + st_input);
        if (st_baseline.empty()) st_baseline = groups.front().label;
        const SampleSet* base = nullptr;
        for (const SampleSet& g : groups)
            if (g.label == st_baseline) base = &g;
        if (!base) fail(errc::invalid_config, "baseline '" + st_baseline + "' not in the data");

        json j;
        json jg = json::array();
        for (const SampleSet& g : groups) {
            StatsSummary s = summarize(g);
            jg.push_back({{"config", g.label},
                          {"n", s.n},
                          {"mean", s.mean},
                          {"sd", s.sd},
                          {"cv_percent", s.cv_percent},
                          {"ci", {s.ci_low, s.ci_high}}});
        }
        j["groups"] = std::move(jg);
        j["baseline"] = st_baseline;
        json jp = json::array();
        std::vector<double> raw_p;
        std::vector<size_t> row_of;
        for (const SampleSet& g : groups) {
            if (&g == base) continue;
            json e;
            e["config"] = g.label;
            try {
                PairedTResult t = paired_t(*base, g);
                e["mean_diff"] = t.mean_diff;
                e["sd_diff"] = t.sd_diff;
                e["t"] = t.t;
                e["df"] = t.df;
                e["p"] = t.p;
                e["cohens_d"] = t.cohens_d;
                row_of.push_back(jp.size());
                raw_p.push_back(t.p);
            } catch (const error& err) {
                if (err.code() != errc::degenerate_differences) throw;
                e["degenerate"] = true;
            }
            jp.push_back(std::move(e));
        }
        std::vector<double> adj = bonferroni(raw_p);
        for (size_t i = 0; i < adj.size(); ++i) jp[row_of[i]]["p_bonferroni"] = adj[i];
        j["paired_vs_baseline"] = std::move(jp);
        if (groups.size() >= 2) {
            AnovaResult a = one_way_anova(groups);
            j["anova"] = {{"f", a.f},       {"p", a.p},
                          {"df_between", a.df_between}, {"df_within", a.df_within},
                          {"ms_between", a.ms_between}, {"ms_within", a.ms_within}};
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*exp) {
        ExperimentMatrix m =
            ex_matrix.empty() ? ExperimentMatrix::standard() : ExperimentMatrix::parse_file(ex_matrix);
        TokenSequence corpus = corpus_from(ex_corpus);
        ExperimentResult r = run_experiment(m, corpus, ex_out, ex_jobs, &std::cout,
                                            ex_cache.empty() ? fs::path{} : fs::path(ex_cache));
        if (r.failures) {
            std::cerr << r.failures << " cell(s) failed\n";
            return 1;
        }
        return 0;
    }

    if (*rep) {
        ExperimentMatrix m =
            rp_matrix.empty() ? ExperimentMatrix::standard() : ExperimentMatrix::parse_file(rp_matrix);
        ExperimentResult r = collect_results(m, rp_in);
        ReportBundle b = render_report(r);
        write_file(fs::path(rp_in) / "report.md", b.markdown);
        write_file(fs::path(rp_in) / "report.csv", b.csv);
        write_file(fs::path(rp_in) / "report.json", b.json_text);
        if (rp_format == "markdown")
            std::cout << b.markdown;
        else if (rp_format == "csv")
            std::cout << b.csv;
        else
            std::cout << b.json_text;
        return 0;
    }

    if (*insp) {
        ModelParams params = load_checkpoint(in_ckpt);
        TokenSequence seq = tokenize(in_text);
        BoundaryPolicy policy;
        auto prov = provider_from_spec(in_partition, policy);
        if (!prov) fail(errc::invalid_config, "inspection needs a real partition source");
        Partition p = prov->get(seq.tokens);
        int query = static_cast<int>(seq.tokens.size()) - 1;
        if (in_query != "last") {
            try {
                query = std::stoi(in_query);
            } catch (const std::exception&) {
                fail(errc::invalid_config, "--query must be 'last' or an index");
            }
        }
        InspectReport rep_ = inspect_attention(params, seq.tokens, p, query);
        std::cout << format_inspect(rep_, seq.tokens, in_per_layer);
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
