#include "bodyrep/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "bodyrep/binio.hpp"

namespace bodyrep {

using nn::Mat;
using nn::Parameter;
using nn::RandomEngine;
using nn::Tape;

Eigen::MatrixXi skinning_mask(const PartSegmentation& parts) {
    const int n = static_cast<int>(parts.labels.size());
    Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(n, parts.part_count);
    for (int i = 0; i < n; ++i) {
        const int own = parts.labels[i];
        mask(i, own) = 1;
        for (int p = 0; p < parts.part_count; ++p) {
            if (p != own && parts.adjacent(own, p)) mask(i, p) = 1;
        }
    }
    return mask;
}

namespace {

Parameter make_dense_W(RandomEngine& rng, const std::string& name, int out, int in) {
    return Parameter(name, nn::glorot_uniform(rng, out, in));
}

Parameter make_dense_b(const std::string& name, int out) {
    return Parameter(name, Mat::Zero(out, 1));
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, const PartSegmentation& parts,
                              FeatureScaler scaler_f, FeatureScaler scaler_g, uint64_t seed) {
    if (config.num_vertices <= 0 || config.part_count <= 0) {
        throw std::runtime_error("ModelParams: vertex and part counts must be positive");
    }
    if (static_cast<int>(parts.labels.size()) != config.num_vertices ||
        parts.part_count != config.part_count) {
        throw std::runtime_error("ModelParams: segmentation does not match config");
    }
    RandomEngine rng(seed ^ 0x6d6f64656cULL);
    ModelParams m;
    m.config = config;
    const int fdim = 9 * config.num_vertices;
    const int gdim = 9 * config.part_count;

    m.enc1_W = make_dense_W(rng, "enc_trunk1_W", config.trunk_hidden, fdim);
    m.enc1_b = make_dense_b("enc_trunk1_b", config.trunk_hidden);
    m.enc2_W = make_dense_W(rng, "enc_trunk2_W", config.trunk_hidden, config.trunk_hidden);
    m.enc2_b = make_dense_b("enc_trunk2_b", config.trunk_hidden);
    m.shape_mu_W = make_dense_W(rng, "enc_shape_mu_W", config.shape_dim, config.trunk_hidden);
    m.shape_mu_b = make_dense_b("enc_shape_mu_b", config.shape_dim);
    m.shape_sd_W = make_dense_W(rng, "enc_shape_sd_W", config.shape_dim, config.trunk_hidden);
    m.shape_sd_b = make_dense_b("enc_shape_sd_b", config.shape_dim);
    m.pose_mu_W = make_dense_W(rng, "enc_pose_mu_W", config.pose_dim, config.trunk_hidden);
    m.pose_mu_b = make_dense_b("enc_pose_mu_b", config.pose_dim);
    m.pose_sd_W = make_dense_W(rng, "enc_pose_sd_W", config.pose_dim, config.trunk_hidden);
    m.pose_sd_b = make_dense_b("enc_pose_sd_b", config.pose_dim);

    m.cs1_W = make_dense_W(rng, "dec_cs1_W", config.path_hidden1, config.shape_dim);
    m.cs1_b = make_dense_b("dec_cs1_b", config.path_hidden1);
    m.cs2_W = make_dense_W(rng, "dec_cs2_W", config.path_hidden2, config.path_hidden1);
    m.cs2_b = make_dense_b("dec_cs2_b", config.path_hidden2);
    m.cp1_W = make_dense_W(rng, "dec_cp1_W", config.path_hidden1, config.pose_dim);
    m.cp1_b = make_dense_b("dec_cp1_b", config.path_hidden1);
    m.cp2_W = make_dense_W(rng, "dec_cp2_W", config.path_hidden2, config.path_hidden1);
    m.cp2_b = make_dense_b("dec_cp2_b", config.path_hidden2);
    m.tc_W = make_dense_W(rng, "dec_tc_W", gdim, config.path_hidden2);
    m.tc_b = make_dense_b("dec_tc_b", gdim);

    m.ds1_W = make_dense_W(rng, "dec_ds1_W", config.path_hidden1, config.shape_dim);
    m.ds1_b = make_dense_b("dec_ds1_b", config.path_hidden1);
    m.ds2_W = make_dense_W(rng, "dec_ds2_W", config.path_hidden2, config.path_hidden1);
    m.ds2_b = make_dense_b("dec_ds2_b", config.path_hidden2);
    m.dp1_W = make_dense_W(rng, "dec_dp1_W", config.path_hidden1, config.pose_dim);
    m.dp1_b = make_dense_b("dec_dp1_b", config.path_hidden1);
    m.dp2_W = make_dense_W(rng, "dec_dp2_W", config.path_hidden2, config.path_hidden1);
    m.dp2_b = make_dense_b("dec_dp2_b", config.path_hidden2);
    m.td_W = make_dense_W(rng, "dec_td_W", fdim, config.path_hidden2);
    m.td_b = make_dense_b("dec_td_b", fdim);

    m.skin_mask = skinning_mask(parts);
    Mat logits = Mat::Zero(config.num_vertices, config.part_count);
    for (int i = 0; i < config.num_vertices; ++i) logits(i, parts.labels[i]) = 2.0;
    m.skin_logits = Parameter("skin_logits", std::move(logits));

    m.scaler_f = std::move(scaler_f);
    m.scaler_g = std::move(scaler_g);
    m.part_labels = parts.labels;
    m.part_adjacency.assign(parts.part_adjacency.begin(), parts.part_adjacency.end());
    return m;
}

std::vector<Parameter*> ModelParams::parameters() {
    std::vector<Parameter*> list = {
        &enc1_W, &enc1_b, &enc2_W, &enc2_b,
        &shape_mu_W, &shape_mu_b, &shape_sd_W, &shape_sd_b,
        &pose_mu_W, &pose_mu_b, &pose_sd_W, &pose_sd_b,
        &ds1_W, &ds1_b, &ds2_W, &ds2_b,
        &dp1_W, &dp1_b, &dp2_W, &dp2_b,
        &td_W, &td_b,
    };
    if (config.use_base_path) {
        const std::vector<Parameter*> base = {
            &cs1_W, &cs1_b, &cs2_W, &cs2_b,
            &cp1_W, &cp1_b, &cp2_W, &cp2_b,
            &tc_W, &tc_b, &skin_logits,
        };
        list.insert(list.end(), base.begin(), base.end());
    }
    return list;
}

Mat ModelParams::skinning_matrix() const {
    Tape tape;
    ModelParams& self = const_cast<ModelParams&>(*this);
    const int w = tape.masked_row_softmax(tape.param(self.skin_logits), skin_mask);
    return tape.value(w);
}

PartSegmentation ModelParams::segmentation() const {
    PartSegmentation parts;
    parts.labels = part_labels;
    parts.part_count = config.part_count;
    for (const auto& [a, b] : part_adjacency) parts.part_adjacency.insert({a, b});
    return parts;
}

EncoderNodes encode_on_tape(Tape& tape, ModelParams& p, int f_node) {
    const int h1 = tape.tanh_op(tape.dense(f_node, p.enc1_W, p.enc1_b));
    const int h2 = tape.tanh_op(tape.dense(h1, p.enc2_W, p.enc2_b));
    EncoderNodes out;
    out.mu_s = tape.dense(h2, p.shape_mu_W, p.shape_mu_b);
    out.sd_s = tape.scale(tape.sigmoid(tape.dense(h2, p.shape_sd_W, p.shape_sd_b)), 2.0);
    out.mu_p = tape.dense(h2, p.pose_mu_W, p.pose_mu_b);
    out.sd_p = tape.scale(tape.sigmoid(tape.dense(h2, p.pose_sd_W, p.pose_sd_b)), 2.0);
    return out;
}

DecoderNodes decode_on_tape(Tape& tape, ModelParams& p, int es_node, int ep_node) {
    DecoderNodes out;
    const int ds = tape.tanh_op(
        tape.dense(tape.tanh_op(tape.dense(es_node, p.ds1_W, p.ds1_b)), p.ds2_W, p.ds2_b));
    const int dp = tape.tanh_op(
        tape.dense(tape.tanh_op(tape.dense(ep_node, p.dp1_W, p.dp1_b)), p.dp2_W, p.dp2_b));
    out.diff = tape.tanh_op(tape.dense(tape.add(ds, dp), p.td_W, p.td_b));
    if (!p.config.use_base_path) {
        out.f_hat = out.diff;
        return out;
    }
    const int cs = tape.tanh_op(
        tape.dense(tape.tanh_op(tape.dense(es_node, p.cs1_W, p.cs1_b)), p.cs2_W, p.cs2_b));
    const int cp = tape.tanh_op(
        tape.dense(tape.tanh_op(tape.dense(ep_node, p.cp1_W, p.cp1_b)), p.cp2_W, p.cp2_b));
    out.g_hat = tape.tanh_op(tape.dense(tape.add(cs, cp), p.tc_W, p.tc_b));
    const int w = tape.masked_row_softmax(tape.param(p.skin_logits), p.skin_mask);
    out.base = tape.blend_parts(w, out.g_hat, p.config.part_count, 9);
    out.f_hat = tape.add(out.base, out.diff);
    return out;
}

EncodeResult encode(ModelParams& params, const Mat& f_scaled) {
    if (f_scaled.cols() != 9 * params.config.num_vertices) {
        throw std::runtime_error("encode: feature dimension mismatch");
    }
    Tape tape;
    const EncoderNodes nodes = encode_on_tape(tape, params, tape.constant(f_scaled));
    return {tape.value(nodes.mu_s), tape.value(nodes.sd_s), tape.value(nodes.mu_p),
            tape.value(nodes.sd_p)};
}

DecodeResult decode(ModelParams& params, const Mat& e_s, const Mat& e_p) {
    if (e_s.cols() != params.config.shape_dim || e_p.cols() != params.config.pose_dim ||
        e_s.rows() != e_p.rows()) {
        throw std::runtime_error("decode: latent dimension mismatch");
    }
    Tape tape;
    const DecoderNodes nodes =
        decode_on_tape(tape, params, tape.constant(e_s), tape.constant(e_p));
    DecodeResult out;
    out.f_hat = tape.value(nodes.f_hat);
    out.diff = tape.value(nodes.diff);
    if (nodes.g_hat >= 0) {
        out.g_hat = tape.value(nodes.g_hat);
        out.base = tape.value(nodes.base);
    }
    return out;
}

DecodeResult decode(ModelParams& params, const LatentCode& code) {
    return decode(params, code.shape.transpose(), code.pose.transpose());
}

LossTerms total_loss(ModelParams& params, const Batch& batch, const LossWeights& weights,
                     RandomEngine* rng, bool do_backward) {
    const int B = static_cast<int>(batch.f.rows());
    if (batch.f_s.rows() != B || (params.config.use_base_path && batch.g.rows() != B)) {
        throw std::runtime_error("total_loss: missing neutral pairing in batch");
    }
    Tape tape;
    const EncoderNodes enc = encode_on_tape(tape, params, tape.constant(batch.f));

    int es = enc.mu_s, ep = enc.mu_p;
    if (rng) {
        es = tape.reparameterize(enc.mu_s, enc.sd_s,
                                 rng->normal_matrix(B, params.config.shape_dim));
        ep = tape.reparameterize(enc.mu_p, enc.sd_p,
                                 rng->normal_matrix(B, params.config.pose_dim));
    }
    const int ep_zero = tape.constant(Mat::Zero(B, params.config.pose_dim));

    const DecoderNodes posed = decode_on_tape(tape, params, es, ep);
    const DecoderNodes neutral = decode_on_tape(tape, params, es, ep_zero);

    const int kl_s = tape.gaussian_kl(enc.mu_s, enc.sd_s);
    const int kl_p = tape.gaussian_kl(enc.mu_p, enc.sd_p);
    const int l1_2 = tape.l1_loss(posed.f_hat, batch.f);
    const int l1_1 = tape.l1_loss(neutral.f_hat, batch.f_s);

    std::vector<std::pair<int, double>> terms = {{kl_s, weights.lambda_s},
                                                 {l1_1, weights.lambda_r1},
                                                 {kl_p, weights.lambda_p},
                                                 {l1_2, weights.lambda_r2}};
    int l1_c1 = -1, l1_c2 = -1;
    if (params.config.use_base_path) {
        l1_c2 = tape.l1_loss(posed.g_hat, batch.g);
        l1_c1 = tape.l1_loss(neutral.g_hat, batch.g_s);
        terms.push_back({l1_c1, weights.lambda_rc1});
        terms.push_back({l1_c2, weights.lambda_rc2});
    }
    const int total = tape.weighted_sum(terms);

    LossTerms out;
    out.e_skl = tape.value(kl_s)(0, 0);
    out.e_pkl = tape.value(kl_p)(0, 0);
    out.e_l1_1 = tape.value(l1_1)(0, 0);
    out.e_l1_2 = tape.value(l1_2)(0, 0);
    out.e_l1_c1 = l1_c1 >= 0 ? tape.value(l1_c1)(0, 0) : 0.0;
    out.e_l1_c2 = l1_c2 >= 0 ? tape.value(l1_c2)(0, 0) : 0.0;
    out.total = tape.value(total)(0, 0);

    const std::pair<const char*, double> named[] = {
        {"E_sKL", out.e_skl}, {"E_pKL", out.e_pkl},   {"E_L1_1", out.e_l1_1},
        {"E_L1_2", out.e_l1_2}, {"E_L1_c1", out.e_l1_c1}, {"E_L1_c2", out.e_l1_c2}};
    for (const auto& [name, v] : named) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("total_loss: non-finite term ") + name);
        }
    }

    if (do_backward) tape.backward(total);
    return out;
}

namespace {

Batch assemble_batch(const FeatureDataset& data, const std::vector<int>& neutral_order,
                     const std::vector<int>& posed_order, size_t& neutral_pos, size_t& posed_pos,
                     int half) {
    const auto& posed_list = data.posed.empty() ? data.neutral : data.posed;
    const int fdim = 9 * data.num_vertices;
    const int gdim = 9 * data.part_count;
    Batch b;
    b.f.resize(2 * half, fdim);
    b.f_s.resize(2 * half, fdim);
    b.g.resize(2 * half, gdim);
    b.g_s.resize(2 * half, gdim);
    for (int k = 0; k < half; ++k) {
        const SampleRecord& rec = data.neutral[neutral_order[neutral_pos % neutral_order.size()]];
        ++neutral_pos;
        b.f.row(k) = rec.f.transpose();
        b.g.row(k) = rec.g.transpose();
        b.f_s.row(k) = rec.f_s.transpose();
        b.g_s.row(k) = rec.g_s.transpose();
    }
    for (int k = 0; k < half; ++k) {
        const SampleRecord& rec = posed_list[posed_order[posed_pos % posed_order.size()]];
        ++posed_pos;
        b.f.row(half + k) = rec.f.transpose();
        b.g.row(half + k) = rec.g.transpose();
        b.f_s.row(half + k) = rec.f_s.transpose();
        b.g_s.row(half + k) = rec.g_s.transpose();
    }
    return b;
}

std::vector<int> shuffled_indices(size_t n, RandomEngine& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = n; i > 1; --i) {
        const size_t j = rng.raw() % i;
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace

std::vector<LossTerms> train(ModelParams& params, const FeatureDataset& data,
                             const TrainConfig& config) {
    if (data.neutral.empty()) throw std::runtime_error("train: dataset has no neutral samples");
    if (config.batch_size < 2 || config.batch_size % 2 != 0) {
        throw std::runtime_error("train: batch size must be even and >= 2");
    }
    const int half = config.batch_size / 2;
    const size_t n_posed = data.posed.empty() ? data.neutral.size() : data.posed.size();
    const int steps_per_epoch =
        static_cast<int>(std::max<size_t>(1, (std::max(n_posed, data.neutral.size()) + half - 1) / half));

    auto param_list = params.parameters();
    nn::AdamConfig adam_config;
    adam_config.lr = config.lr;
    nn::AdamState adam(param_list, adam_config);
    RandomEngine rng(config.seed ^ 0x747261696eULL);

    std::ofstream log;
    if (!config.log_path.empty()) {
        log.open(config.log_path);
        if (!log) throw std::runtime_error("train: cannot open log " + config.log_path);
        log << "epoch,e_skl,e_pkl,e_l1_1,e_l1_2,e_l1_c1,e_l1_c2,total\n";
    }

    std::vector<LossTerms> history;
    int epoch = 0;
    for (const TrainStage& stage : config.stages) {
        LossWeights weights;
        weights.lambda_s = config.lambda_s;
        weights.lambda_p = config.lambda_p;
        weights.lambda_r1 = stage.lambda_r1;
        weights.lambda_r2 = stage.lambda_r2;
        weights.lambda_rc1 = stage.lambda_rc1 >= 0 ? stage.lambda_rc1 : 0.6 * stage.lambda_r1;
        weights.lambda_rc2 = stage.lambda_rc2 >= 0 ? stage.lambda_rc2 : 0.6 * stage.lambda_r2;

        for (int e = 0; e < stage.epochs; ++e, ++epoch) {
            const auto neutral_order = shuffled_indices(data.neutral.size(), rng);
            const auto posed_order = shuffled_indices(n_posed, rng);
            size_t npos = 0, ppos = 0;
            LossTerms mean;
            for (int s = 0; s < steps_per_epoch; ++s) {
                const Batch batch =
                    assemble_batch(data, neutral_order, posed_order, npos, ppos, half);
                for (Parameter* p : param_list) p->zero_grad();
                const LossTerms terms = total_loss(params, batch, weights, &rng, true);
                adam.step();
                if (config.step_hook) config.step_hook(params, adam.step_count());
                mean.total += terms.total;
                mean.e_skl += terms.e_skl;
                mean.e_pkl += terms.e_pkl;
                mean.e_l1_1 += terms.e_l1_1;
                mean.e_l1_2 += terms.e_l1_2;
                mean.e_l1_c1 += terms.e_l1_c1;
                mean.e_l1_c2 += terms.e_l1_c2;
            }
            const double inv = 1.0 / steps_per_epoch;
            mean.total *= inv;
            mean.e_skl *= inv;
            mean.e_pkl *= inv;
            mean.e_l1_1 *= inv;
            mean.e_l1_2 *= inv;
            mean.e_l1_c1 *= inv;
            mean.e_l1_c2 *= inv;
            history.push_back(mean);
            if (log) {
                log << epoch << ',' << mean.e_skl << ',' << mean.e_pkl << ',' << mean.e_l1_1 << ','
                    << mean.e_l1_2 << ',' << mean.e_l1_c1 << ',' << mean.e_l1_c2 << ','
                    << mean.total << '\n';
            }
            if (!config.checkpoint_path.empty() && config.checkpoint_interval > 0 &&
                (epoch + 1) % config.checkpoint_interval == 0) {
                save_checkpoint(params, config.checkpoint_path + ".epoch" + std::to_string(epoch));
            }
            if (config.early_stop_l1 > 0 && mean.e_l1_1 < config.early_stop_l1 &&
                mean.e_l1_2 < config.early_stop_l1) {
                if (!config.checkpoint_path.empty()) save_checkpoint(params, config.checkpoint_path);
                return history;
            }
        }
    }
    if (!config.checkpoint_path.empty()) save_checkpoint(params, config.checkpoint_path);
    return history;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_train_config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    TrainConfig c;
    c.lambda_s = j.value("lambda_s", c.lambda_s);
    c.lambda_p = j.value("lambda_p", c.lambda_p);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("learning_rate", c.lr);
    c.seed = j.value("seed", static_cast<uint64_t>(0));
    c.checkpoint_interval = j.value("checkpoint_interval", 0);
    c.early_stop_l1 = j.value("early_stop_l1", 0.0);
    if (j.contains("stages")) {
        c.stages.clear();
        for (const auto& s : j.at("stages")) {
            TrainStage st;
            st.epochs = s.at("epochs").get<int>();
            st.lambda_r1 = s.at("lambda_r1").get<double>();
            st.lambda_r2 = s.at("lambda_r2").get<double>();
            st.lambda_rc1 = s.value("lambda_rc1", -1.0);
            st.lambda_rc2 = s.value("lambda_rc2", -1.0);
            c.stages.push_back(st);
        }
    }
    return c;
}

namespace {
constexpr char kModelMagic[8] = {'B', 'O', 'D', 'Y', 'M', '1', 0, 0};
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
    ModelParams& mutable_params = const_cast<ModelParams&>(params);
    const auto list = mutable_params.parameters();

    nlohmann::json header;
    header["format"] = "BODYM1";
    header["num_vertices"] = params.config.num_vertices;
    header["part_count"] = params.config.part_count;
    header["shape_dim"] = params.config.shape_dim;
    header["pose_dim"] = params.config.pose_dim;
    header["trunk_hidden"] = params.config.trunk_hidden;
    header["path_hidden1"] = params.config.path_hidden1;
    header["path_hidden2"] = params.config.path_hidden2;
    header["use_base_path"] = params.config.use_base_path;
    header["part_labels"] = params.part_labels;
    nlohmann::json adjacency = nlohmann::json::array();
    for (const auto& [a, b] : params.part_adjacency) adjacency.push_back({a, b});
    header["part_adjacency"] = adjacency;
    auto scaler_json = [](const FeatureScaler& s) {
        nlohmann::json out;
        out["min"] = std::vector<double>(s.minimum().data(), s.minimum().data() + s.dim());
        out["max"] = std::vector<double>(s.maximum().data(), s.maximum().data() + s.dim());
        return out;
    };
    header["scaler_f"] = scaler_json(params.scaler_f);
    header["scaler_g"] = scaler_json(params.scaler_g);

    nlohmann::json layers = nlohmann::json::array();
    for (const Parameter* p : list) {
        std::string activation = "none";
        if (p->name.find("_sd_") != std::string::npos) activation = "two_sigmoid";
        else if (p->name == "skin_logits") activation = "masked_softmax_logits";
        else if (p->name.rfind("dec_", 0) == 0 || p->name.rfind("enc_trunk", 0) == 0) activation = "tanh";
        layers.push_back({{"name", p->name},
                          {"rows", p->value.rows()},
                          {"cols", p->value.cols()},
                          {"activation", activation}});
    }
    header["layers"] = layers;

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    write_magic(out, kModelMagic);
    write_u32(out, static_cast<uint32_t>(header_str.size()));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const Parameter* p : list) {
        std::vector<float> buf(static_cast<size_t>(p->value.size()));
        size_t k = 0;
        for (int r = 0; r < p->value.rows(); ++r) {
            for (int c = 0; c < p->value.cols(); ++c) buf[k++] = static_cast<float>(p->value(r, c));
        }
        write_f32_block(out, buf);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    expect_magic(in, kModelMagic, "load_checkpoint");
    const uint32_t header_len = read_u32(in, "load_checkpoint");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), header_len);
    if (!in) throw std::runtime_error("load_checkpoint: truncated header");
    const nlohmann::json header = nlohmann::json::parse(header_str);

    ModelConfig config;
    config.num_vertices = header.at("num_vertices").get<int>();
    config.part_count = header.at("part_count").get<int>();
    config.shape_dim = header.at("shape_dim").get<int>();
    config.pose_dim = header.at("pose_dim").get<int>();
    config.trunk_hidden = header.at("trunk_hidden").get<int>();
    config.path_hidden1 = header.at("path_hidden1").get<int>();
    config.path_hidden2 = header.at("path_hidden2").get<int>();
    config.use_base_path = header.at("use_base_path").get<bool>();

    PartSegmentation parts;
    parts.labels = header.at("part_labels").get<std::vector<int>>();
    parts.part_count = config.part_count;
    for (const auto& e : header.at("part_adjacency")) {
        parts.part_adjacency.insert({e.at(0).get<int>(), e.at(1).get<int>()});
    }
    auto scaler_from = [](const nlohmann::json& j) {
        const auto mn = j.at("min").get<std::vector<double>>();
        const auto mx = j.at("max").get<std::vector<double>>();
        Eigen::VectorXd vmn = Eigen::Map<const Eigen::VectorXd>(mn.data(), mn.size());
        Eigen::VectorXd vmx = Eigen::Map<const Eigen::VectorXd>(mx.data(), mx.size());
        return FeatureScaler(std::move(vmn), std::move(vmx));
    };
    ModelParams params = ModelParams::init(config, parts, scaler_from(header.at("scaler_f")),
                                           scaler_from(header.at("scaler_g")), 0);

    const auto list = params.parameters();
    const auto& layers = header.at("layers");
    if (layers.size() != list.size()) {
        throw std::runtime_error("load_checkpoint: layer list does not match architecture");
    }
    for (size_t k = 0; k < list.size(); ++k) {
        const auto& layer = layers[k];
        Parameter* p = list[k];
        if (layer.at("name").get<std::string>() != p->name ||
            layer.at("rows").get<long>() != p->value.rows() ||
            layer.at("cols").get<long>() != p->value.cols()) {
            throw std::runtime_error("load_checkpoint: layer mismatch at " + p->name);
        }
        const auto buf =
            read_f32_block(in, static_cast<size_t>(p->value.size()), "load_checkpoint");
        size_t idx = 0;
        for (int r = 0; r < p->value.rows(); ++r) {
            for (int c = 0; c < p->value.cols(); ++c) p->value(r, c) = buf[idx++];
        }
        p->zero_grad();
    }
    return params;
}

void save_latent(const LatentCode& code, const std::string& path) {
    nlohmann::json j;
    j["e_s"] = std::vector<double>(code.shape.data(), code.shape.data() + code.shape.size());
    j["e_p"] = std::vector<double>(code.pose.data(), code.pose.data() + code.pose.size());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_latent: cannot open " + path);
    out << j.dump(2) << '\n';
}

LatentCode load_latent(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_latent: cannot open " + path);
    nlohmann::json j;
    in >> j;
    const auto es = j.at("e_s").get<std::vector<double>>();
    const auto ep = j.at("e_p").get<std::vector<double>>();
    LatentCode code;
    code.shape = Eigen::Map<const Eigen::VectorXd>(es.data(), es.size());
    code.pose = Eigen::Map<const Eigen::VectorXd>(ep.data(), ep.size());
    return code;
}

}  // namespace bodyrep
