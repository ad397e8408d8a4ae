#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msc/cost.hpp"
#include "msc/model.hpp"

// Command implementations behind the CLI front-end. Each run_* function
// writes its artifacts under opts.out, prints a JSON summary to stdout, and
// returns the process exit code (0 success, 1 check failure, 2 config error
// is raised as ConfigError by callees and mapped in main).

namespace msc::cli {

// ---- model config <-> JSON (field names mirror ModelConfig) ----
std::string model_config_to_json_string(const ModelConfig& cfg);
ModelConfig model_config_from_json_string(const std::string& text);

struct FlopsOptions {
    cost::CostInputs inputs;
    std::vector<std::int64_t> sweep_w{2, 4};
    std::vector<std::int64_t> sweep_v{1, 2};
    std::vector<std::int64_t> sweep_r{1, 2, 4};
    std::vector<std::int64_t> sweep_d{1, 2, 4};
    std::string out = "out/flops";
};
int run_flops(const FlopsOptions& opts);

struct MaskOptions {
    std::string kind = "low";  // "high" | "low"
    int t_frames = 2, height = 1, width = 1;
    int w = 3, v = 2, d = 1;
    std::int64_t cap = 65536;
    std::string out = "out/mask";
};
int run_mask(const MaskOptions& opts);

struct GradcheckOptions {
    std::uint64_t seed = 0;
    int n_seeds = 10;
    std::string out;  // optional artifact dir
};
struct GradcheckResult {
    std::string name;
    double max_rel_err = 0;
};
// Analytic vs central finite differences at f64, eps = 1e-5. Relative error
// uses |ga-gn| / max(|ga|, |gn|, 1e-3).
std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed, int n_seeds);
int run_gradcheck(const GradcheckOptions& opts);

struct TrainOptions {
    std::string out = "out/train";
    std::uint64_t seed = 0;
    int steps = 300;
    double lr = 0.08;
    double momentum = 0.9;
    int batch = 1;
    int eval_every = 25;
    bool timings = false;       // wall_ms in metrics is opt-in to keep artifacts byte-reproducible
    std::string resume;         // directory of a previous run to continue from
    std::string config;         // optional model-config JSON path
    // model dims (used when no config file given)
    int t_frames = 8, height = 16, width = 16, channels = 4;
    int l_layers = 2, hidden = 64, heads = 2;
    int w = 3, v = 2, d = 2, base_r = 2, max_r = 2;
    int ffn_mult = 4, t_embed_dim = 32, patch_p = 2, patch_q = 1;
    int diffusion_steps = 50;
    MotionConfig motion;
};
struct TrainSummary {
    double initial_loss = 0, final_loss = 0;
    int steps = 0;
    bool diverged = false;
};
TrainSummary train_model(const TrainOptions& opts);
int run_train(const TrainOptions& opts);

struct SampleOptions {
    std::string ckpt;  // training output dir (contains checkpoint/ and config.json)
    int frames = 8;
    std::uint64_t seed = 0;
    std::string context;  // optional video dir with clean context frames
    std::string out = "out/sample";
};
int run_sample(const SampleOptions& opts);

struct SnrOptions {
    std::vector<double> sigmas{1.0};
    std::vector<int> rs{1, 2, 4};
    std::int64_t trials = 100000;
    std::uint64_t seed = 0;
    std::string out = "out/snr";
};
int run_snr(const SnrOptions& opts);

struct AuditOptions {
    int trials = 20;
    std::uint64_t seed = 0;
    std::string out = "out/audit";
};
struct AuditTrial {
    Grid3 grid;
    int t0 = 0;
    double max_dev = 0;  // max |delta| over frames <= t0; must be exactly 0
};
struct AuditReport {
    std::vector<AuditTrial> trials;
    bool positive_pass = false;
    bool negative_control_failed = false;  // must be true: the unmasked fixture must leak
    bool pass() const { return positive_pass && negative_control_failed; }
};
AuditReport audit_causality(const AuditOptions& opts);
int run_audit(const AuditOptions& opts);

}  // namespace msc::cli
