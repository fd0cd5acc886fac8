#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "loclab/checkpoint.hpp"
#include "loclab/error.hpp"
#include "loclab/runner.hpp"
#include "testutil.hpp"

using namespace loclab;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ExperimentMatrix mini_matrix() {
    ExperimentMatrix m;
    m.model.num_layers = 2;
    m.model.num_heads = 2;
    m.model.d_model = 32;
    m.model.mlp_dim = 128;
    m.model.context_length = 32;
    m.train.steps = 25;
    m.train.batch_size = 4;
    m.train.context_length = 32;
    m.train.learning_rate = 1e-3;
    m.seeds = {1, 2};
    ConfigEntry base;
    base.name = "uniform_distributed";
    base.partition = "none";
    ConfigEntry local;
    local.name = "uniform_localist";
    local.schedule.kind = ScheduleKind::uniform_localist;
    local.schedule.lambda_const = 0.5;
    local.partition = "semantic";
    m.configs = {base, local};
    return m;
}

// Hand-built result set with prescribed per-config perplexities.
ExperimentResult synthetic_result(const std::vector<double>& base_ppl,
                                  const std::vector<double>& quintic_ppl,
                                  bool quintic_csv_only = false) {
    ExperimentResult r;
    r.matrix = mini_matrix();
    r.matrix.seeds.clear();
    for (size_t i = 0; i < base_ppl.size(); ++i) r.matrix.seeds.push_back(100 + i);
    r.matrix.configs[1].name = "progressive_beta5";
    r.matrix.configs[1].schedule.kind = ScheduleKind::progressive;
    r.matrix.configs[1].schedule.beta = 5;
    r.matrix.configs[1].schedule.lambda_max = 1.0;
    r.matrix.configs[1].csv_only = quintic_csv_only;
    r.corpus_hash = "cafebabe";

    auto make_cell = [&](const std::string& name, uint64_t seed, double ppl, double fid) {
        CellOutcome c;
        c.result.config_name = name;
        c.result.seed = seed;
        c.result.final_perplexity = ppl;
        c.result.mean_entropy_bits = 2.5;
        c.result.mean_fidelity = fid;
        c.result.per_layer_entropy = {2.4, 2.6};
        c.result.per_layer_fidelity = {fid, fid};
        c.result.evaluated = true;
        c.result.train_partition = name == "uniform_distributed" ? "none" : "semantic:x";
        c.result.eval_partition = "semantic:x";
        r.cells.push_back({{name, seed}, std::move(c)});
    };
    for (size_t i = 0; i < base_ppl.size(); ++i)
        make_cell("uniform_distributed", r.matrix.seeds[i], base_ppl[i], 0.3);
    for (size_t i = 0; i < quintic_ppl.size(); ++i)
        make_cell("progressive_beta5", r.matrix.seeds[i], quintic_ppl[i], 0.7);
    return r;
}

std::vector<double> five_with_moments(double mean, double sd) {
    double c = sd / std::sqrt(2.5);
    return {mean - 2 * c, mean - c, mean, mean + c, mean + 2 * c};
}

} // namespace

TEST_SUITE_BEGIN("runner");

TEST_CASE("the standard grid matches the published design") {
    auto m = ExperimentMatrix::standard();
    m.validate();
    CHECK(m.seeds == std::vector<uint64_t>{42, 123, 456, 789, 1337});
    CHECK(m.configs.size() == 7);
    CHECK(m.baseline == "uniform_distributed");

    int csv_only = 0, primary = 0;
    for (const auto& c : m.configs) (c.csv_only ? csv_only : primary)++;
    CHECK(primary == 5);   // ranking table width
    CHECK(csv_only == 2);  // beta 2 and beta 4 land in CSV only

    // semantic partitions everywhere a penalty is active, none on the baseline
    for (const auto& c : m.configs)
        CHECK(c.partition == (c.schedule.is_zero() ? "none" : "semantic"));

    // progressive members cover beta 1..5
    std::vector<int> betas;
    for (const auto& c : m.configs)
        if (c.schedule.kind == ScheduleKind::progressive) betas.push_back(c.schedule.beta);
    std::sort(betas.begin(), betas.end());
    CHECK(betas == std::vector<int>{1, 2, 3, 4, 5});
}

TEST_CASE("matrix validation rejects malformed grids") {
    auto m = mini_matrix();
    m.validate();

    auto dup = m;
    dup.seeds = {1, 1};
    CHECK_THROWS_AS(dup.validate(), error);

    auto nobase = m;
    nobase.baseline = "missing";
    CHECK_THROWS_AS(nobase.validate(), error);

    auto penal_base = m;
    penal_base.baseline = "uniform_localist";
    CHECK_THROWS_AS(penal_base.validate(), error);  // baseline must be unpenalized

    auto nopart = m;
    nopart.configs[1].partition = "none";
    CHECK_THROWS_AS(nopart.validate(), error);  // penalty needs partitions

    auto badname = m;
    badname.configs[0].name = "has space";
    CHECK_THROWS_AS(badname.validate(), error);

    auto dupname = m;
    dupname.configs[1] = dupname.configs[0];
    CHECK_THROWS_AS(dupname.validate(), error);

    auto badctx = m;
    badctx.train.context_length = badctx.model.context_length + 1;
    CHECK_THROWS_AS(badctx.validate(), error);

    auto badfixed = m;
    badfixed.configs[1].partition = "fixed:0";
    CHECK_THROWS_AS(badfixed.validate(), error);
}

TEST_CASE("matrix files round trip through the parser") {
    TempDir dir("loclab_matrix_test");
    auto path = dir.path / "m.txt";
    {
        std::ofstream out(path);
        out << "# comment line\n";
        out << "config = uniform_distributed | uniform_distributed | none\n";
        out << "config = quintic | progressive:5:1.0 | semantic | csv-only\n";
        out << "config = windowed | uniform_localist:0.7 | fixed:5 | primary\n";
        out << "seeds = 7, 8\n";
        out << "baseline = uniform_distributed\n";
        out << "splits = 0.8, 0.1, 0.1\n";
        out << "model.num_layers = 2\n";
        out << "model.d_model = 48  # inline comment\n";
        out << "train.steps = 12\n";
        out << "boundary.adaptive_k = 0.75\n";
    }
    auto m = ExperimentMatrix::parse_file(path);
    CHECK(m.seeds == std::vector<uint64_t>{7, 8});
    REQUIRE(m.configs.size() == 3);
    CHECK(m.configs[1].csv_only);
    CHECK(!m.configs[2].csv_only);
    CHECK(m.configs[1].schedule.kind == ScheduleKind::progressive);
    CHECK(m.configs[1].schedule.beta == 5);
    CHECK(m.configs[2].partition == "fixed:5");
    CHECK(m.model.num_layers == 2);
    CHECK(m.model.d_model == 48);
    CHECK(m.train.steps == 12);
    CHECK(m.boundary.adaptive_k == 0.75);

    // defaults: no seeds line keeps the standard five
    auto path2 = dir.path / "m2.txt";
    {
        std::ofstream out(path2);
        out << "config = uniform_distributed | uniform_distributed | none\n";
    }
    CHECK(ExperimentMatrix::parse_file(path2).seeds.size() == 5);

    // errors carry the line number
    auto bad = dir.path / "bad.txt";
    {
        std::ofstream out(bad);
        out << "config = uniform_distributed | uniform_distributed | none\n";
        out << "mystery = 1\n";
    }
    CHECK_THROWS_WITH_AS(ExperimentMatrix::parse_file(bad), doctest::Contains("line 2"), error);

    auto bad2 = dir.path / "bad2.txt";
    {
        std::ofstream out(bad2);
        out << "config = only_two_fields | none\n";
    }
    CHECK_THROWS_AS(ExperimentMatrix::parse_file(bad2), error);
    CHECK_THROWS_AS(ExperimentMatrix::parse_file(dir.path / "missing.txt"), error);
}

TEST_CASE("experiments run, cache, and resume cell by cell") {
    TempDir dir("loclab_runner_test");
    auto matrix = mini_matrix();
    auto corpus = testutil::toy_corpus(40 * 1024, 9);
    std::ostringstream log;

    auto r1 = run_experiment(matrix, corpus, dir.path, 1, &log);
    CHECK(r1.trained == 4);
    CHECK(r1.reused == 0);
    CHECK(r1.failures == 0);
    CHECK(r1.cells.size() == 4);
    CHECK(!r1.reference_checkpoint.empty());
    CHECK(r1.corpus_hash == token_hash_hex(corpus.tokens));
    for (const auto& [key, cell] : r1.cells) {
        CHECK(!cell.failed);
        CHECK(cell.result.evaluated);
        CHECK(cell.result.final_perplexity > 1.0);
        CHECK(cell.result.eval_partition.rfind("semantic:", 0) == 0);
    }
    const auto* base = r1.find("uniform_distributed", 1);
    REQUIRE(base != nullptr);
    CHECK(base->result.train_partition == "none");
    const auto* local = r1.find("uniform_localist", 2);
    REQUIRE(local != nullptr);
    CHECK(local->result.train_partition.rfind("semantic:", 0) == 0);
    CHECK(r1.find("uniform_localist", 99) == nullptr);

    // a second invocation reuses every cell
    auto r2 = run_experiment(matrix, corpus, dir.path, 1, nullptr);
    CHECK(r2.trained == 0);
    CHECK(r2.reused == 4);
    CHECK(r2.find("uniform_distributed", 1)->result.final_perplexity ==
          base->result.final_perplexity);

    // deleting one stored cell retrains exactly that cell, bit-identically
    fs::remove(dir.path / "results" / "uniform_localist__2.json");
    auto r3 = run_experiment(matrix, corpus, dir.path, 1, nullptr);
    CHECK(r3.trained == 1);
    CHECK(r3.reused == 3);
    CHECK(r3.find("uniform_localist", 2)->result.final_perplexity ==
          local->result.final_perplexity);
    CHECK(r3.find("uniform_localist", 2)->result.loss_curve == local->result.loss_curve);

    // collect_results reassembles the same numbers without training
    auto collected = collect_results(matrix, dir.path);
    CHECK(collected.failures == 0);
    CHECK(collected.cells.size() == 4);
    CHECK(collected.find("uniform_distributed", 1)->result.final_perplexity ==
          base->result.final_perplexity);

    // a changed matrix invalidates the cache
    auto matrix2 = matrix;
    matrix2.train.steps = 26;
    auto r4 = run_experiment(matrix2, corpus, dir.path, 1, nullptr);
    CHECK(r4.trained == 4);

    // collecting against a mismatched matrix reports incomplete cells
    auto matrix3 = matrix;
    matrix3.train.steps = 99;
    auto missing = collect_results(matrix3, dir.path);
    CHECK(missing.failures == 4);
}

TEST_CASE("report tables reproduce the headline ratio and gap") {
    auto r = synthetic_result(five_with_moments(7.51, 0.59), five_with_moments(7.84, 0.58));
    auto rep = render_report(r);

    CHECK(rep.markdown.find("1.044x") != std::string::npos);
    CHECK(rep.markdown.find("+4.4%") != std::string::npos);
    CHECK(rep.markdown.find("1.000x") != std::string::npos);
    CHECK(rep.csv.find("1.044x") != std::string::npos);
    CHECK(rep.csv.find("+4.4%") != std::string::npos);
    CHECK(rep.markdown.find("uniform_distributed") != std::string::npos);
    CHECK(rep.markdown.find("progressive_beta5") != std::string::npos);

    // every formatted number in the markdown ranking also appears in the CSV
    CHECK(rep.markdown.find("7.51") != std::string::npos);
    CHECK(rep.csv.find("7.51") != std::string::npos);

    // paired block and spread block made it in
    CHECK(rep.markdown.find("p (Bonferroni") != std::string::npos);
    CHECK(rep.markdown.find("cv%") != std::string::npos);
    CHECK(rep.json_text.find("\"ratio_vs_baseline\"") != std::string::npos);

    // identical samples: ratio collapses to 1.000x and the paired test is
    // flagged degenerate rather than silently skipped
    auto tie = synthetic_result(five_with_moments(7.5, 0.3), five_with_moments(7.5, 0.3));
    auto rep2 = render_report(tie);
    CHECK(rep2.markdown.find("degenerate") != std::string::npos);

    // csv-only configs stay out of the markdown tables but keep CSV rows
    auto hidden = synthetic_result(five_with_moments(7.51, 0.59), five_with_moments(7.84, 0.58),
                                   /*quintic_csv_only=*/true);
    auto rep3 = render_report(hidden);
    CHECK(rep3.markdown.find("progressive_beta5") == std::string::npos);
    CHECK(rep3.csv.find("progressive_beta5") != std::string::npos);
}

TEST_CASE("attention inspection aggregates one query row by block") {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.d_model = 32;
    cfg.mlp_dim = 128;
    cfg.context_length = 16;
    auto params = init_model<float>(cfg);
    auto corpus = testutil::toy_corpus(2048, 10);
    std::vector<int> tokens(corpus.tokens.begin(), corpus.tokens.begin() + 12);

    auto part = fixed_window_partition(12, 4);
    auto rep = inspect_attention(params, tokens, part, 11);
    CHECK(rep.query_pos == 11);
    CHECK(rep.query_block == 2);
    double total = 0.0;
    for (const auto& s : rep.shares) total += s.share;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(rep.per_layer_within.size() == 2);
    // shares arrive sorted, most attended block first
    for (size_t i = 1; i < rep.shares.size(); ++i)
        CHECK(rep.shares[i - 1].share >= rep.shares[i].share);

    // a query in the first block can only see its own block
    auto rep0 = inspect_attention(params, tokens, part, 2);
    REQUIRE(rep0.shares.size() == 1);
    CHECK(rep0.shares[0].share == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(rep0.within_share == doctest::Approx(1.0).epsilon(1e-5));

    // whole-window partition: everything is within-block
    Partition whole;
    whole.block_of.assign(12, 0);
    whole.num_blocks = 1;
    auto rep1 = inspect_attention(params, tokens, whole, 11);
    CHECK(rep1.within_share == doctest::Approx(1.0).epsilon(1e-5));

    CHECK_THROWS_AS(inspect_attention(params, tokens, part, 12), error);
    CHECK_THROWS_AS(inspect_attention(params, tokens, part, -1), error);

    auto text = format_inspect(rep, tokens, true);
    CHECK(text.find("query") != std::string::npos);
    CHECK(text.find("block") != std::string::npos);
}

TEST_SUITE_END();
