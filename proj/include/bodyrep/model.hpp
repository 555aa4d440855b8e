#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bodyrep/coarse.hpp"
#include "bodyrep/deform.hpp"
#include "bodyrep/mesh.hpp"
#include "bodyrep/nn.hpp"

namespace bodyrep {

struct LatentCode {
    Eigen::VectorXd shape;  // e_s
    Eigen::VectorXd pose;   // e_p
};

struct ModelConfig {
    int num_vertices = 0;
    int part_count = 0;
    int shape_dim = 50;
    int pose_dim = 72;
    int trunk_hidden = 400;
    int path_hidden1 = 400;
    int path_hidden2 = 800;
    // The ablation variant drops the coarse/skinning path entirely and
    // decodes through the difference path alone.
    bool use_base_path = true;
};

/// All trainable weights plus the data plumbing (scalers, part labels) the
/// decoder needs to stand alone.
struct ModelParams {
    ModelConfig config;

    nn::Parameter enc1_W, enc1_b, enc2_W, enc2_b;
    nn::Parameter shape_mu_W, shape_mu_b, shape_sd_W, shape_sd_b;
    nn::Parameter pose_mu_W, pose_mu_b, pose_sd_W, pose_sd_b;
    nn::Parameter cs1_W, cs1_b, cs2_W, cs2_b, cp1_W, cp1_b, cp2_W, cp2_b, tc_W, tc_b;
    nn::Parameter ds1_W, ds1_b, ds2_W, ds2_b, dp1_W, dp1_b, dp2_W, dp2_b, td_W, td_b;
    nn::Parameter skin_logits;   // V x P
    Eigen::MatrixXi skin_mask;   // V x P; vertex row allows own + adjacent parts

    FeatureScaler scaler_f, scaler_g;
    std::vector<int> part_labels;
    std::vector<std::pair<int, int>> part_adjacency;

    static ModelParams init(const ModelConfig& config, const PartSegmentation& parts,
                            FeatureScaler scaler_f, FeatureScaler scaler_g, uint64_t seed);

    /// Trainable parameters in checkpoint order.
    std::vector<nn::Parameter*> parameters();

    /// Effective skinning matrix W = masked_row_softmax(skin_logits).
    nn::Mat skinning_matrix() const;

    PartSegmentation segmentation() const;
};

Eigen::MatrixXi skinning_mask(const PartSegmentation& parts);

struct EncoderNodes {
    int mu_s, sd_s, mu_p, sd_p;
};
struct DecoderNodes {
    int f_hat;
    int g_hat = -1;  // -1 when the base path is disabled
    int base = -1;
    int diff;
};

EncoderNodes encode_on_tape(nn::Tape& tape, ModelParams& params, int f_node);
DecoderNodes decode_on_tape(nn::Tape& tape, ModelParams& params, int es_node, int ep_node);

struct EncodeResult {
    nn::Mat mu_s, sd_s, mu_p, sd_p;  // rows = batch
};
struct DecodeResult {
    nn::Mat f_hat, g_hat, base, diff;  // scaled feature space
};

/// Deterministic encode (distribution parameters; evaluation uses mu).
EncodeResult encode(ModelParams& params, const nn::Mat& f_scaled);
DecodeResult decode(ModelParams& params, const nn::Mat& e_s, const nn::Mat& e_p);
DecodeResult decode(ModelParams& params, const LatentCode& code);

struct LossWeights {
    double lambda_s = 1.0, lambda_p = 1.0;
    double lambda_r1 = 2.5e3, lambda_rc1 = 1.5e3;
    double lambda_r2 = 2.5e4, lambda_rc2 = 1.5e4;
};

struct LossTerms {
    double total = 0, e_skl = 0, e_pkl = 0;
    double e_l1_1 = 0, e_l1_2 = 0, e_l1_c1 = 0, e_l1_c2 = 0;
};

struct Batch {
    nn::Mat f, g, f_s, g_s;  // rows = samples, scaled feature space
};

/// Forward the six-term loss; when rng is non-null, latents are drawn by
/// reparameterization, otherwise mu is used. When backward is set, gradients
/// accumulate into the parameters.
LossTerms total_loss(ModelParams& params, const Batch& batch, const LossWeights& weights,
                     nn::RandomEngine* rng, bool backward);

struct SampleRecord {
    Eigen::VectorXd f, g;      // posed (equal to f_s/g_s for neutral records)
    Eigen::VectorXd f_s, g_s;  // the subject's neutral features
    bool neutral = false;
    std::string subject;
};

struct FeatureDataset {
    std::vector<SampleRecord> neutral;
    std::vector<SampleRecord> posed;
    int num_vertices = 0;
    int part_count = 0;
};

struct TrainStage {
    int epochs = 0;
    double lambda_r1 = 0, lambda_r2 = 0;
    double lambda_rc1 = -1, lambda_rc2 = -1;  // <0 means 0.6 * lambda_r
};

struct TrainConfig {
    double lambda_s = 1.0, lambda_p = 1.0;
    int batch_size = 24;
    double lr = 1e-4;
    std::vector<TrainStage> stages = {{1600, 2.5e3, 2.5e4, -1, -1}, {600, 1e3, 1e4, -1, -1}};
    uint64_t seed = 0;
    int checkpoint_interval = 0;     // 0 = only the final checkpoint
    std::string checkpoint_path;     // empty = do not write
    std::string log_path;            // per-epoch CSV; empty = do not write
    double early_stop_l1 = 0.0;      // stop once E_L1_1 and E_L1_2 drop below
    // Invoked after every optimizer step when set (used by the simplex check).
    std::function<void(const ModelParams&, long)> step_hook;
};

TrainConfig load_train_config(const std::string& path);

/// Two-stage Adam training over half-neutral/half-posed batches. Returns the
/// per-epoch loss history (last entry = final epoch).
std::vector<LossTerms> train(ModelParams& params, const FeatureDataset& dataset,
                             const TrainConfig& config);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

void save_latent(const LatentCode& code, const std::string& path);
LatentCode load_latent(const std::string& path);

}  // namespace bodyrep
