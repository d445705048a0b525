#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spamae/channel.hpp"
#include "spamae/common.hpp"

namespace spamae {

// SNR values at or above this sentinel mean "no noise injected".
inline constexpr double kNoiselessSnrDb = 900.0;

struct CorruptionConfig {
    double fraction   = 0.6;
    double snr_min_db = -20.0;
    double snr_max_db = 20.0;
};

struct PipelineConfig {
    double mu        = 255.0;
    size_t patch_len = 8;
    CorruptionConfig corruption;
};

struct ModelConfig {
    size_t embed_dim  = 32;
    size_t depth      = 4;
    size_t heads      = 4;
    size_t ff_mult    = 2;
    size_t dec_depth  = 2;
    size_t dec_dim    = 32;
    double mask_ratio = 0.5;
};

struct ParamEncoderConfig {
    size_t slot_embed = 32;
    size_t hidden     = 32;
    size_t target_dim = 32;
    size_t epochs     = 30;
    size_t batch      = 64;
    double kappa_par  = 0.07;
    double lr         = 1e-3;
    // augmentation policy
    double p_permute  = 1.0;
    double p_drop     = 0.3;
    double p_maskflip = 0.1;
    double jitter_std = 0.05;
    double p_gdrop    = 0.1;
};

struct StageConfig {
    size_t epochs    = 0;
    double lambda_mae = 1.0;
    double lambda_sa  = 0.0;
    double lambda_pa  = 0.0;
    double alpha      = 0.7;
    double beta       = 0.3;
    double kappa_pa   = 0.5;
};

struct OptimConfig {
    double lr           = 1e-3;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double eps          = 1e-8;
    double weight_decay = 0.01;
    size_t batch        = 64;
    double warmup_frac  = 0.05;  // linear warmup over this fraction of steps
};

struct DataConfig {
    size_t n_antennas         = 16;
    size_t n_subcarriers      = 16;
    size_t n_train            = 2048;
    size_t n_val              = 256;
    size_t n_test             = 1024;  // unseen-scenario split
    size_t n_seen_scenarios   = 4;
    size_t n_unseen_scenarios = 2;
    size_t max_paths          = 16;  // fixed path slots N_p
    CarrierConfig low_band{3.5e9, 240e3, 16, 16};
    CarrierConfig high_band{28e9, 1.92e6, 16, 16};
    std::vector<size_t> codebook_sizes{4, 8, 16};
};

struct DownstreamConfig {
    std::vector<double> train_ratios{0.01, 0.05, 0.1, 0.5, 1.0};
    std::vector<double> eval_snrs_db{0.0, 10.0, 20.0, kNoiselessSnrDb};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    double head_train_frac = 0.5;  // unseen split portion used to fit heads
    size_t head_epochs     = 40;
    double head_lr         = 1e-2;
    size_t pos_hidden      = 64;
    size_t beam_hidden     = 128;
    size_t chest_blocks    = 2;
    size_t chest_steps     = 400;
    double chest_lr        = 1e-3;
    size_t chest_batch     = 32;
    size_t pilot_stride_antenna = 1;
    size_t pilot_stride_freq    = 1;
    bool run_supervised_twin    = false;
};

struct RunConfig {
    uint64_t seed = 1;
    std::string out_dir = "runs/default";
    DataConfig data;
    PipelineConfig pipeline;
    ModelConfig model;
    ParamEncoderConfig param_encoder;
    StageConfig stage1;
    StageConfig stage2;
    OptimConfig optim;
    DownstreamConfig downstream;

    void validate() const;  // throws config_error
    size_t tokens_per_sample() const {
        return data.n_antennas * data.n_subcarriers / pipeline.patch_len;
    }
};

// Desk-scale defaults (the schedule above); paper_profile() swaps in the
// 32x32 / L=16 / d=64 / batch-1024 / 60-120-100 configuration.
RunConfig default_run_config();
RunConfig paper_profile();

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Layered loading: defaults <- optional base file <- optional override file
// <- "a.b.c=value" assignments.
RunConfig load_run_config(const std::filesystem::path& config_path,
                          const std::vector<std::string>& overrides = {});

uint64_t config_hash(const RunConfig& cfg);

// ADL serializers for nested structs.
void to_json(nlohmann::json& j, const CarrierConfig& c);
void from_json(const nlohmann::json& j, CarrierConfig& c);
void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

}  // namespace spamae
