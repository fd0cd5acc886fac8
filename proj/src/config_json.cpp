#include "loclab/config_json.hpp"

#include <sstream>

#include "loclab/error.hpp"

namespace loclab {

using nlohmann::json;

void to_json(json& j, const ModelConfig& c) {
    j = json{{"num_layers", c.num_layers},   {"num_heads", c.num_heads},
             {"d_model", c.d_model},         {"mlp_dim", c.mlp_dim},
             {"vocab_size", c.vocab_size},   {"context_length", c.context_length},
             {"init_seed", c.init_seed}};
}

void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.num_layers = j.value("num_layers", d.num_layers);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.d_model = j.value("d_model", d.d_model);
    c.mlp_dim = j.value("mlp_dim", 4 * c.d_model);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.context_length = j.value("context_length", d.context_length);
    c.init_seed = j.value("init_seed", d.init_seed);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"adam_beta1", c.adam_beta1},
             {"adam_beta2", c.adam_beta2},
             {"adam_eps", c.adam_eps},
             {"grad_clip", c.grad_clip},
             {"steps", c.steps},
             {"batch_size", c.batch_size},
             {"context_length", c.context_length},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.steps = j.value("steps", d.steps);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.context_length = j.value("context_length", d.context_length);
    c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const LocalityScheduleSpec& s) {
    const char* kind = s.kind == ScheduleKind::uniform_distributed ? "uniform_distributed"
                       : s.kind == ScheduleKind::uniform_localist  ? "uniform_localist"
                                                                   : "progressive";
    j = json{{"kind", kind},
             {"beta", s.beta},
             {"lambda_max", s.lambda_max},
             {"lambda_const", s.lambda_const}};
}

void from_json(const json& j, LocalityScheduleSpec& s) {
    std::string kind = j.value("kind", "uniform_distributed");
    if (kind == "uniform_distributed")
        s.kind = ScheduleKind::uniform_distributed;
    else if (kind == "uniform_localist")
        s.kind = ScheduleKind::uniform_localist;
    else if (kind == "progressive")
        s.kind = ScheduleKind::progressive;
    else
        fail(errc::invalid_config, "unknown schedule kind " + kind);
    LocalityScheduleSpec d;
    s.beta = j.value("beta", d.beta);
    s.lambda_max = j.value("lambda_max", d.lambda_max);
    s.lambda_const = j.value("lambda_const", d.lambda_const);
}

void to_json(json& j, const SplitSpec& s) {
    j = json{{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

void from_json(const json& j, SplitSpec& s) {
    SplitSpec d;
    s.train = j.value("train", d.train);
    s.val = j.value("val", d.val);
    s.test = j.value("test", d.test);
}

void to_json(json& j, const BoundaryPolicy& p) {
    j = json{{"threshold_mode", p.mode == BoundaryPolicy::Threshold::adaptive ? "adaptive" : "fixed"},
             {"fixed_tau", p.fixed_tau},
             {"adaptive_k", p.adaptive_k},
             {"min_block_len", p.min_block_len},
             {"max_block_len", p.max_block_len}};
}

void from_json(const json& j, BoundaryPolicy& p) {
    BoundaryPolicy d;
    std::string mode = j.value("threshold_mode", "adaptive");
    if (mode == "adaptive")
        p.mode = BoundaryPolicy::Threshold::adaptive;
    else if (mode == "fixed")
        p.mode = BoundaryPolicy::Threshold::fixed;
    else
        fail(errc::invalid_config, "unknown threshold mode " + mode);
    p.fixed_tau = j.value("fixed_tau", d.fixed_tau);
    p.adaptive_k = j.value("adaptive_k", d.adaptive_k);
    p.min_block_len = j.value("min_block_len", d.min_block_len);
    p.max_block_len = j.value("max_block_len", d.max_block_len);
}

void to_json(json& j, const RunResult& r) {
    j = json{{"fingerprint", r.fingerprint},
             {"config_name", r.config_name},
             {"seed", r.seed},
             {"final_perplexity", r.final_perplexity},
             {"mean_entropy_bits", r.mean_entropy_bits},
             {"mean_fidelity", r.mean_fidelity},
             {"per_layer_entropy", r.per_layer_entropy},
             {"per_layer_fidelity", r.per_layer_fidelity},
             {"loss_curve", r.loss_curve},
             {"penalty_curve", r.penalty_curve},
             {"wall_seconds", r.wall_seconds},
             {"corpus_hash", r.corpus_hash},
             {"train_partition", r.train_partition},
             {"eval_partition", r.eval_partition},
             {"evaluated", r.evaluated}};
}

void from_json(const json& j, RunResult& r) {
    r.fingerprint = j.value("fingerprint", "");
    r.config_name = j.value("config_name", "");
    r.seed = j.value("seed", uint64_t{0});
    r.final_perplexity = j.value("final_perplexity", 0.0);
    r.mean_entropy_bits = j.value("mean_entropy_bits", 0.0);
    r.mean_fidelity = j.value("mean_fidelity", 0.0);
    r.per_layer_entropy = j.value("per_layer_entropy", std::vector<double>{});
    r.per_layer_fidelity = j.value("per_layer_fidelity", std::vector<double>{});
    r.loss_curve = j.value("loss_curve", std::vector<double>{});
    r.penalty_curve = j.value("penalty_curve", std::vector<double>{});
    r.wall_seconds = j.value("wall_seconds", 0.0);
    r.corpus_hash = j.value("corpus_hash", "");
    r.train_partition = j.value("train_partition", "");
    r.eval_partition = j.value("eval_partition", "");
    r.evaluated = j.value("evaluated", false);
}

LocalityScheduleSpec parse_schedule(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.empty()) fail(errc::invalid_config, "empty schedule");
    LocalityScheduleSpec s;
    try {
        if (parts[0] == "uniform_distributed") {
            s.kind = ScheduleKind::uniform_distributed;
            if (parts.size() > 1) fail(errc::invalid_config, "uniform_distributed takes no arguments");
        } else if (parts[0] == "uniform_localist") {
            s.kind = ScheduleKind::uniform_localist;
            s.lambda_const = parts.size() > 1 ? std::stod(parts[1]) : 1.0;
        } else if (parts[0] == "progressive") {
            s.kind = ScheduleKind::progressive;
            s.beta = parts.size() > 1 ? std::stoi(parts[1]) : 1;
            s.lambda_max = parts.size() > 2 ? std::stod(parts[2]) : 1.0;
        } else {
            fail(errc::invalid_config, "unknown schedule " + parts[0]);
        }
    } catch (const std::invalid_argument&) {
        fail(errc::invalid_config, "malformed schedule " + text);
    }
    s.validate();
    return s;
}

std::string schedule_to_string(const LocalityScheduleSpec& spec) {
    std::ostringstream os;
    switch (spec.kind) {
        case ScheduleKind::uniform_distributed:
            os << "uniform_distributed";
            break;
        case ScheduleKind::uniform_localist:
            os << "uniform_localist:" << spec.lambda_const;
            break;
        case ScheduleKind::progressive:
            os << "progressive:" << spec.beta << ":" << spec.lambda_max;
            break;
    }
    return os.str();
}

} // namespace loclab
