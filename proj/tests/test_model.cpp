#include <doctest.h>

#include <filesystem>

#include "bodyrep/model.hpp"
#include "bodyrep/synth.hpp"
#include "gradcheck_support.hpp"
#include "test_support.hpp"

using namespace bodyrep;
using nn::Mat;

namespace {

/// Small body-like configuration on the synthetic rig segmentation.
struct Fixture {
    ModelConfig config;
    PartSegmentation parts;
    ModelParams params;
};

Fixture make_fixture(int vertices, int parts_count, int shape_dim, int pose_dim, int hidden,
                     uint64_t seed) {
    Fixture f;
    f.config.num_vertices = vertices;
    f.config.part_count = parts_count;
    f.config.shape_dim = shape_dim;
    f.config.pose_dim = pose_dim;
    f.config.trunk_hidden = hidden;
    f.config.path_hidden1 = hidden;
    f.config.path_hidden2 = hidden;
    f.parts.part_count = parts_count;
    f.parts.labels.resize(vertices);
    for (int i = 0; i < vertices; ++i) f.parts.labels[i] = i % parts_count;
    for (int a = 0; a < parts_count; ++a) {
        for (int b = a + 1; b < parts_count; ++b) f.parts.part_adjacency.insert({a, b});
    }
    Eigen::VectorXd lo_f = Eigen::VectorXd::Constant(9 * vertices, -1.0);
    Eigen::VectorXd hi_f = Eigen::VectorXd::Constant(9 * vertices, 1.0);
    Eigen::VectorXd lo_g = Eigen::VectorXd::Constant(9 * parts_count, -1.0);
    Eigen::VectorXd hi_g = Eigen::VectorXd::Constant(9 * parts_count, 1.0);
    f.params = ModelParams::init(f.config, f.parts, FeatureScaler(lo_f, hi_f),
                                 FeatureScaler(lo_g, hi_g), seed);
    return f;
}

Batch random_batch(const ModelConfig& c, int B, uint64_t seed) {
    nn::RandomEngine rng(seed);
    Batch batch;
    batch.f = 0.5 * rng.normal_matrix(B, 9 * c.num_vertices);
    batch.f_s = 0.5 * rng.normal_matrix(B, 9 * c.num_vertices);
    batch.g = 0.5 * rng.normal_matrix(B, 9 * c.part_count);
    batch.g_s = 0.5 * rng.normal_matrix(B, 9 * c.part_count);
    return batch;
}

}  // namespace

TEST_CASE("encoder output shapes and sigma range") {
    Fixture f = make_fixture(30, 3, 50, 72, 40, 1);
    nn::RandomEngine rng(2);
    const Mat batch = rng.normal_matrix(4, 9 * 30);
    const EncodeResult enc = encode(f.params, batch);
    CHECK(enc.mu_s.cols() == 50);
    CHECK(enc.sd_s.cols() == 50);
    CHECK(enc.mu_p.cols() == 72);
    CHECK(enc.sd_p.cols() == 72);
    CHECK((enc.sd_s.array() > 0.0).all());
    CHECK((enc.sd_s.array() < 2.0).all());
    CHECK((enc.sd_p.array() > 0.0).all());
    CHECK((enc.sd_p.array() < 2.0).all());
}

TEST_CASE("zero-weight encoder reads off the biases") {
    Fixture f = make_fixture(12, 3, 5, 7, 6, 1);
    for (auto* p : f.params.parameters()) p->value.setZero();
    f.params.shape_mu_b.value.col(0).setConstant(0.25);
    f.params.shape_sd_b.value.col(0).setConstant(0.5);
    nn::RandomEngine rng(3);
    const EncodeResult enc = encode(f.params, rng.normal_matrix(2, 9 * 12));
    CHECK((enc.mu_s.array() == 0.25).all());
    const double expected = 2.0 / (1.0 + std::exp(-0.5));
    CHECK(enc.sd_s(0, 0) == doctest::Approx(expected));
}

TEST_CASE("decoder output shapes and one-hot skinning degeneracy") {
    Fixture f = make_fixture(20, 4, 6, 8, 10, 5);
    nn::RandomEngine rng(6);
    const Mat e_s = rng.normal_matrix(3, 6);
    const Mat e_p = rng.normal_matrix(3, 8);
    DecodeResult dec = decode(f.params, e_s, e_p);
    CHECK(dec.f_hat.cols() == 9 * 20);
    CHECK(dec.g_hat.cols() == 9 * 4);
    CHECK(dec.base.cols() == 9 * 20);
    CHECK(dec.diff.cols() == 9 * 20);
    // tanh terminal units keep the scaled outputs inside (-1, 1).
    CHECK((dec.g_hat.array().abs() < 1.0).all());
    CHECK((dec.diff.array().abs() < 1.0).all());
    CHECK((dec.base.array().abs() < 1.0).all());

    // Push the logits to a one-hot configuration: each vertex copies its own
    // part's coarse row exactly.
    f.params.skin_logits.value.setConstant(-50.0);
    for (int v = 0; v < 20; ++v) f.params.skin_logits.value(v, f.parts.labels[v]) = 50.0;
    dec = decode(f.params, e_s, e_p);
    for (int n = 0; n < 3; ++n) {
        for (int v = 0; v < 20; ++v) {
            const int part = f.parts.labels[v];
            for (int c = 0; c < 9; ++c) {
                CHECK(dec.base(n, 9 * v + c) ==
                      doctest::Approx(dec.g_hat(n, 9 * part + c)).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("skinning matrix rows live on the masked simplex") {
    Fixture f = make_fixture(30, 3, 5, 7, 8, 9);
    const Mat W = f.params.skinning_matrix();
    for (int i = 0; i < W.rows(); ++i) {
        double sum = 0;
        for (int j = 0; j < W.cols(); ++j) {
            CHECK(W(i, j) >= 0.0);
            if (!f.params.skin_mask(i, j)) CHECK(W(i, j) == 0.0);
            sum += W(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-7));
    }
}

TEST_CASE("zero targets and zero-initialized decoder give zero loss") {
    Fixture f = make_fixture(10, 2, 4, 5, 6, 11);
    for (auto* p : f.params.parameters()) p->value.setZero();
    Batch batch;
    batch.f = Mat::Zero(3, 90);
    batch.f_s = Mat::Zero(3, 90);
    batch.g = Mat::Zero(3, 18);
    batch.g_s = Mat::Zero(3, 18);
    LossWeights w;
    const LossTerms terms = total_loss(f.params, batch, w, nullptr, false);
    // mu = 0 and sigma = 1 make both KL terms vanish; zero decodes match the
    // zero targets.
    CHECK(terms.e_skl == doctest::Approx(0.0));
    CHECK(terms.e_pkl == doctest::Approx(0.0));
    CHECK(terms.e_l1_1 == doctest::Approx(0.0));
    CHECK(terms.e_l1_2 == doctest::Approx(0.0));
    CHECK(terms.total == doctest::Approx(0.0));
}

TEST_CASE("loss terms are means and assemble with the configured weights") {
    Fixture f = make_fixture(14, 2, 4, 5, 6, 13);
    const Batch batch = random_batch(f.config, 3, 17);
    LossWeights w;
    w.lambda_s = 2.0;
    w.lambda_p = 3.0;
    w.lambda_r1 = 10.0;
    w.lambda_rc1 = 6.0;
    w.lambda_r2 = 100.0;
    w.lambda_rc2 = 60.0;
    const LossTerms terms = total_loss(f.params, batch, w, nullptr, false);

    const DecodeResult posed = decode(f.params, encode(f.params, batch.f).mu_s,
                                      encode(f.params, batch.f).mu_p);
    const double manual_l1_2 = (posed.f_hat - batch.f).array().abs().mean();
    CHECK(terms.e_l1_2 == doctest::Approx(manual_l1_2).epsilon(1e-12));
    const double total = 2.0 * terms.e_skl + 10.0 * terms.e_l1_1 + 6.0 * terms.e_l1_c1 +
                         3.0 * terms.e_pkl + 100.0 * terms.e_l1_2 + 60.0 * terms.e_l1_c2;
    CHECK(terms.total == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("full-model loss gradient matches finite differences") {
    Fixture f = make_fixture(30, 3, 6, 8, 10, 19);
    const Batch batch = random_batch(f.config, 2, 23);
    LossWeights w;
    w.lambda_r1 = 2.5e3;
    w.lambda_rc1 = 1.5e3;
    w.lambda_r2 = 2.5e4;
    w.lambda_rc2 = 1.5e4;
    const double err = bodyrep::testing::model_gradcheck(f.params, batch, w, 12);
    CHECK(err < 1e-4);
}

TEST_CASE("baseline variant drops the base path") {
    Fixture f = make_fixture(12, 2, 4, 5, 6, 29);
    f.config.use_base_path = false;
    ModelParams baseline = ModelParams::init(f.config, f.parts, f.params.scaler_f,
                                             f.params.scaler_g, 31);
    nn::RandomEngine rng(33);
    const DecodeResult dec = decode(baseline, rng.normal_matrix(2, 4), rng.normal_matrix(2, 5));
    CHECK(dec.f_hat.cols() == 9 * 12);
    CHECK(dec.g_hat.size() == 0);
    CHECK((dec.f_hat - dec.diff).cwiseAbs().maxCoeff() == 0.0);
    const Batch batch = random_batch(f.config, 2, 35);
    LossWeights w;
    const LossTerms terms = total_loss(baseline, batch, w, nullptr, false);
    CHECK(terms.e_l1_c1 == 0.0);
    CHECK(terms.e_l1_c2 == 0.0);
    const double err = bodyrep::testing::model_gradcheck(baseline, batch, w, 10);
    CHECK(err < 1e-4);
}

TEST_CASE("neutral decode depends on the shape code alone") {
    Fixture f = make_fixture(12, 2, 4, 5, 6, 37);
    nn::RandomEngine rng(39);
    const Mat e_s = rng.normal_matrix(1, 4);
    const DecodeResult a = decode(f.params, e_s, Mat::Zero(1, 5));
    const DecodeResult b = decode(f.params, e_s, Mat::Zero(1, 5));
    CHECK((a.f_hat - b.f_hat).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training on a toy dataset runs the schedule and logs terms") {
    Fixture f = make_fixture(12, 2, 4, 5, 8, 41);
    nn::RandomEngine rng(43);
    FeatureDataset data;
    data.num_vertices = 12;
    data.part_count = 2;
    for (int s = 0; s < 3; ++s) {
        SampleRecord rec;
        rec.f_s = 0.4 * rng.normal_matrix(9 * 12, 1).col(0);
        rec.g_s = 0.4 * rng.normal_matrix(9 * 2, 1).col(0);
        rec.f = rec.f_s;
        rec.g = rec.g_s;
        rec.neutral = true;
        rec.subject = "s" + std::to_string(s);
        data.neutral.push_back(rec);
        SampleRecord posed = rec;
        posed.f = 0.4 * rng.normal_matrix(9 * 12, 1).col(0);
        posed.g = 0.4 * rng.normal_matrix(9 * 2, 1).col(0);
        posed.neutral = false;
        data.posed.push_back(posed);
    }
    TrainConfig config;
    config.batch_size = 4;
    config.lr = 1e-3;
    config.stages = {{6, 2.5e3, 2.5e4, -1, -1}, {2, 1e3, 1e4, -1, -1}};
    config.seed = 7;

    long simplex_checks = 0;
    config.step_hook = [&](const ModelParams& p, long) {
        const Mat W = p.skinning_matrix();
        for (int i = 0; i < W.rows(); ++i) {
            double sum = 0;
            for (int j = 0; j < W.cols(); ++j) {
                REQUIRE(W(i, j) >= 0.0);
                if (!p.skin_mask(i, j)) REQUIRE(W(i, j) == 0.0);
                sum += W(i, j);
            }
            REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-7));
        }
        ++simplex_checks;
    };

    const auto history = train(f.params, data, config);
    CHECK(history.size() == 8);
    CHECK(simplex_checks > 0);
    CHECK(history.back().total < history.front().total);
}

TEST_CASE("checkpoint round trip preserves weights, config and scalers") {
    Fixture f = make_fixture(12, 3, 4, 5, 6, 47);
    const std::string path =
        (std::filesystem::temp_directory_path() / "model.bodym").string();
    save_checkpoint(f.params, path);
    ModelParams back = load_checkpoint(path);
    CHECK(back.config.num_vertices == 12);
    CHECK(back.config.part_count == 3);
    auto a = f.params.parameters();
    auto b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k]->name == b[k]->name);
        CHECK((a[k]->value - b[k]->value).cwiseAbs().maxCoeff() < 1e-6);
    }
    CHECK((back.scaler_f.minimum() - f.params.scaler_f.minimum()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.part_labels == f.params.part_labels);
    CHECK(back.skin_mask == f.params.skin_mask);

    // A scaler file is not a checkpoint.
    save_scaler(f.params.scaler_f, path + ".scal");
    CHECK_THROWS_WITH_AS(load_checkpoint(path + ".scal"), doctest::Contains("bad magic"),
                         std::runtime_error);
}

TEST_CASE("latent json round trip") {
    LatentCode code;
    code.shape = Eigen::VectorXd::LinSpaced(5, -1, 1);
    code.pose = Eigen::VectorXd::LinSpaced(7, 0, 2);
    const std::string path = (std::filesystem::temp_directory_path() / "latent.json").string();
    save_latent(code, path);
    const LatentCode back = load_latent(path);
    CHECK((back.shape - code.shape).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.pose - code.pose).cwiseAbs().maxCoeff() < 1e-12);
}
