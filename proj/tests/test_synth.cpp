#include <doctest.h>

#include <filesystem>
#include "bodyrep/fitting.hpp"
#include <fstream>

#include "bodyrep/recon.hpp"
#include "bodyrep/synth.hpp"
#include "test_support.hpp"

using namespace bodyrep;
namespace bt = bodyrep::testing;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("template mesh: 302 vertices, connected, oriented, 6 live parts") {
    const SynthRig rig = build_synth_rig(1.0);
    const Mesh& mesh = rig.template_mesh;
    CHECK(mesh.num_vertices() == 302);
    CHECK(is_connected(mesh));
    CHECK(is_consistently_oriented(mesh));
    CHECK(rig.parts.part_count == 6);
    const auto members = rig.parts.part_vertices();
    for (const auto& part : members) CHECK(part.size() >= 3);
    // Torso borders every limb.
    for (int p = 1; p < 6; ++p) CHECK(rig.parts.adjacent(0, p));
    CHECK_FALSE(rig.parts.adjacent(2, 3));
}

TEST_CASE("shape scales move the measured lengths and radii") {
    const SynthRig rig = build_synth_rig(1.0);
    Eigen::VectorXd unit = Eigen::VectorXd::Ones(8);
    const BodyMeasurements base = measure_body(rig, synth_neutral(rig, unit));
    Eigen::VectorXd longer = unit;
    longer[4] = 1.2;  // arm length scale
    const BodyMeasurements stretched = measure_body(rig, synth_neutral(rig, longer));
    CHECK(stretched.length[2] / base.length[2] == doctest::Approx(1.2).epsilon(0.05));
    CHECK(stretched.length[3] / base.length[3] == doctest::Approx(1.2).epsilon(0.05));
    CHECK(stretched.radius[2] == doctest::Approx(base.radius[2]).epsilon(1e-9));

    Eigen::VectorXd thicker = unit;
    thicker[7] = 1.15;  // leg radius scale
    const BodyMeasurements wide = measure_body(rig, synth_neutral(rig, thicker));
    CHECK(wide.radius[4] / base.radius[4] == doctest::Approx(1.15).epsilon(0.01));
}

TEST_CASE("zero pose equals the neutral body") {
    const SynthRig rig = build_synth_rig(1.0);
    Eigen::VectorXd shape = Eigen::VectorXd::Constant(8, 1.05);
    const Mesh neutral = synth_neutral(rig, shape);
    const Mesh posed = synth_posed(rig, shape, Eigen::VectorXd::Zero(5));
    CHECK(bt::max_vertex_deviation(neutral, posed) == 0.0);
}

TEST_CASE("posing moves only the joint's subtree") {
    const SynthRig rig = build_synth_rig(1.0);
    Eigen::VectorXd shape = Eigen::VectorXd::Ones(8);
    Eigen::VectorXd pose = Eigen::VectorXd::Zero(5);
    pose[1] = 0.5;  // left shoulder
    const Mesh neutral = synth_neutral(rig, shape);
    const Mesh posed = synth_posed(rig, shape, pose);
    for (int v = 0; v < neutral.num_vertices(); ++v) {
        const double moved = (posed.vertices[v] - neutral.vertices[v]).norm();
        if (neutral.part_labels[v] == 2) continue;
        CHECK(moved == 0.0);
    }
}

TEST_CASE("synth_generate writes a self-consistent, deterministic corpus") {
    namespace fs = std::filesystem;
    const std::string dir_a = (fs::temp_directory_path() / "synth_a").string();
    const std::string dir_b = (fs::temp_directory_path() / "synth_b").string();
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    SynthConfig config;
    config.seed = 5;
    config.neutral_count = 3;
    config.posed_count = 5;
    config.test_fraction = 0.34;
    synth_generate(config, dir_a);
    synth_generate(config, dir_b);
    CHECK(slurp(dir_a + "/manifest.json") == slurp(dir_b + "/manifest.json"));
    CHECK(slurp(dir_a + "/pose_0000.acap") == slurp(dir_b + "/pose_0000.acap"));
    CHECK(slurp(dir_a + "/scaler_f.scal") == slurp(dir_b + "/scaler_f.scal"));

    const DatasetManifest manifest = load_manifest(dir_a + "/manifest.json");
    CHECK(manifest.samples.size() == 8);
    int test_count = 0;
    for (const auto& s : manifest.samples) {
        if (s.split == "test") ++test_count;
        if (!s.posed) CHECK(s.feature_path == s.neutral_feature_path);
    }
    CHECK(test_count == 2);  // floor(3*0.34) + floor(5*0.34) = 1 + 1

    const FeatureScaler scaler_f = load_scaler(dir_a + "/scaler_f.scal");
    const FeatureScaler scaler_g = load_scaler(dir_a + "/scaler_g.scal");
    const FeatureDataset train = load_feature_dataset(manifest, dir_a, scaler_f, scaler_g, "train");
    CHECK(train.neutral.size() == 2);
    CHECK(train.posed.size() == 4);
    CHECK(train.num_vertices == 302);
    CHECK(train.part_count == 6);
    for (const auto& rec : train.posed) {
        CHECK(rec.f.size() == 9 * 302);
        CHECK(rec.f_s.size() == 9 * 302);
        CHECK(rec.g.size() == 54);
    }
    // Scaled features live inside the declared range (train split fit).
    for (const auto& rec : train.posed) {
        CHECK(rec.f.cwiseAbs().maxCoeff() <= 0.95 + 1e-9);
    }
}

TEST_CASE("neutral-only corpus pairs every record with itself") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "synth_n").string();
    fs::remove_all(dir);
    SynthConfig config;
    config.seed = 9;
    config.neutral_count = 2;
    config.posed_count = 0;
    const DatasetManifest manifest = synth_generate(config, dir);
    CHECK(manifest.samples.size() == 2);
    for (const auto& s : manifest.samples) {
        CHECK_FALSE(s.posed);
        CHECK(s.feature_path == s.neutral_feature_path);
        CHECK(s.coarse_path == s.neutral_coarse_path);
    }
}

TEST_CASE("posed features decode back near the posed mesh") {
    // Round trip through the full pipeline at the articulated-body fidelity
    // (blended joints are not exactly representable; this is a regression
    // bound, not an exactness claim).
    const SynthRig rig = build_synth_rig(1.0);
    const CotanWeights weights = cotan_weights(rig.template_mesh);
    const ReconSolver solver(rig.template_mesh, weights, 0);
    Eigen::VectorXd shape = Eigen::VectorXd::Ones(8);
    Eigen::VectorXd pose(5);
    pose << 0.4, -0.5, 0.3, 0.35, -0.25;
    const Mesh target = synth_posed(rig, shape, pose);
    const AcapFeature f = encode_acap(rig.template_mesh, target, weights);
    const Mesh out = decode_acap(solver, f);
    CHECK(med_after_procrustes(target, out) < 5e-3 * target.bbox_diagonal());
}
