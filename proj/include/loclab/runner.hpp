#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loclab/corpus.hpp"
#include "loclab/locality.hpp"
#include "loclab/model.hpp"
#include "loclab/partition.hpp"
#include "loclab/partition_provider.hpp"
#include "loclab/train.hpp"

namespace loclab {

struct ConfigEntry {
    std::string name;
    LocalityScheduleSpec schedule;
    std::string partition;  // "semantic", "fixed:N", or "none"
    bool csv_only = false;  // carried in CSV/JSON output, left out of markdown tables
};

// One experiment grid: every config crossed with every seed. The baseline
// config (by default the unpenalized one) anchors ratios, paired tests, and
// the reference checkpoint for semantic partitions.
struct ExperimentMatrix {
    ModelConfig model;
    TrainConfig train;
    SplitSpec splits;
    BoundaryPolicy boundary;
    std::vector<uint64_t> seeds{42, 123, 456, 789, 1337};
    std::vector<ConfigEntry> configs;
    std::string baseline = "uniform_distributed";

    void validate() const;
    static ExperimentMatrix standard();
    static ExperimentMatrix parse_file(const std::filesystem::path& path);
};

struct CellOutcome {
    RunResult result;
    bool from_cache = false;
    bool failed = false;
    std::string error;
};

struct ExperimentResult {
    ExperimentMatrix matrix;
    std::string corpus_hash;
    std::string reference_checkpoint;  // parameter hash of the partition reference
    std::vector<std::pair<std::pair<std::string, uint64_t>, CellOutcome>> cells;
    int trained = 0;   // cells trained in this invocation
    int reused = 0;    // cells served from the results directory
    int failures = 0;

    const CellOutcome* find(const std::string& config, uint64_t seed) const;
};

// Runs the grid against a results directory, reusing any cell whose stored
// result matches the cell's fingerprint. Unpenalized cells train first; the
// first-seed baseline checkpoint then becomes the frozen reference for
// semantic partitions, and every cell is evaluated against that same
// reference so fidelity numbers are comparable. A failing cell is recorded
// and does not stop its siblings.
ExperimentResult run_experiment(const ExperimentMatrix& m, const TokenSequence& corpus,
                                const std::filesystem::path& out_dir, int jobs = 1,
                                std::ostream* log = nullptr,
                                const std::filesystem::path& partition_cache = {});

struct ReportBundle {
    std::string markdown;
    std::string csv;
    std::string json_text;
};

// Renders the ranking, paired-test, spread, attention-metric and schedule
// tables. Markdown and CSV carry identical formatted numbers.
ReportBundle render_report(const ExperimentResult& r);

// Reassembles an ExperimentResult from a results directory.
ExperimentResult collect_results(const ExperimentMatrix& m,
                                 const std::filesystem::path& out_dir);

struct InspectBlockShare {
    int block = 0;
    int start = 0;
    int end = 0;
    double share = 0.0;
};

struct InspectReport {
    int query_pos = 0;
    int query_block = 0;
    std::vector<InspectBlockShare> shares;  // descending by share, final layer
    double within_share = 0.0;
    std::vector<double> per_layer_within;
    Partition partition;
};

// Head-averaged attention of one query position, aggregated by block.
InspectReport inspect_attention(const ModelParams& params, std::span<const int> tokens,
                                const Partition& partition, int query_pos);

std::string format_inspect(const InspectReport& rep, std::span<const int> tokens, bool per_layer);

} // namespace loclab
