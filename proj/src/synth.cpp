#include "bodyrep/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "bodyrep/nn.hpp"

namespace bodyrep {

namespace {

// Segment layout at unit shape scales. Ring counts at resolution 1.0 give
// exactly 302 vertices: 5 * (11+6+9+9+12+12) + 12 - 5 welds.
struct SegmentSpec {
    std::string name;
    int part = -1;
    int base_rings = 0;
    Vec3 start, end;     // axis at unit scale, before attachment offsets
    double radius = 0.0;
    int parent_part = -1;  // -1 for the torso
};

constexpr int kAround = 5;

struct TubeFrame {
    Vec3 u, v;
};

TubeFrame tube_frame(const Vec3& axis) {
    Vec3 ref = std::abs(axis.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitZ();
    TubeFrame f;
    f.u = axis.cross(ref).normalized();
    f.v = axis.cross(f.u).normalized();
    return f;
}

struct SegmentBuild {
    std::vector<std::vector<int>> rings;
    int base_center = -1;  // equals the weld vertex for child segments
    int tip_center = -1;
};

/// Appends one tube to the mesh. base_weld >= 0 reuses that vertex as the
/// base cap apex instead of creating one.
SegmentBuild append_tube(Mesh& mesh, std::vector<int>& labels, int part, const Vec3& a,
                         const Vec3& b, double radius, int rings, int base_weld) {
    SegmentBuild out;
    const Vec3 axis = (b - a).normalized();
    const TubeFrame frame = tube_frame(axis);
    out.rings.resize(rings);
    for (int t = 0; t < rings; ++t) {
        const Vec3 center = a + (b - a) * (static_cast<double>(t) / (rings - 1));
        for (int j = 0; j < kAround; ++j) {
            // Pentagon with a mirror-symmetric vertex pair about the u axis.
            const double phi = M_PI / 2.0 + 2.0 * M_PI * j / kAround;
            mesh.vertices.push_back(center + radius * (std::cos(phi) * frame.u +
                                                       std::sin(phi) * frame.v));
            labels.push_back(part);
            out.rings[t].push_back(static_cast<int>(mesh.vertices.size()) - 1);
        }
    }
    for (int t = 0; t + 1 < rings; ++t) {
        for (int j = 0; j < kAround; ++j) {
            const int j2 = (j + 1) % kAround;
            const int a0 = out.rings[t][j], a1 = out.rings[t][j2];
            const int b0 = out.rings[t + 1][j], b1 = out.rings[t + 1][j2];
            mesh.triangles.push_back({a0, a1, b1});
            mesh.triangles.push_back({a0, b1, b0});
        }
    }
    if (base_weld >= 0) {
        out.base_center = base_weld;
    } else {
        // Domed apex: a flat cap would give the apex a planar one-ring and a
        // rank-deficient deformation fit.
        mesh.vertices.push_back(a - 0.35 * radius * axis);
        labels.push_back(part);
        out.base_center = static_cast<int>(mesh.vertices.size()) - 1;
    }
    for (int j = 0; j < kAround; ++j) {
        mesh.triangles.push_back({out.base_center, out.rings[0][(j + 1) % kAround], out.rings[0][j]});
    }
    mesh.vertices.push_back(b + 0.35 * radius * axis);
    labels.push_back(part);
    out.tip_center = static_cast<int>(mesh.vertices.size()) - 1;
    for (int j = 0; j < kAround; ++j) {
        mesh.triangles.push_back({out.tip_center, out.rings[rings - 1][j],
                                  out.rings[rings - 1][(j + 1) % kAround]});
    }
    return out;
}

int scaled_rings(int base, double resolution) {
    return std::max(3, static_cast<int>(std::lround(base * resolution)));
}

struct BodyGeometry {
    Mesh mesh;
    std::vector<int> labels;
    std::vector<SegmentBuild> segments;  // torso, head, armL, armR, legL, legR
};

/// shape = {torso_len, torso_rad, head_len, head_rad, arm_len, arm_rad,
///          leg_len, leg_rad} as multiplicative scales.
BodyGeometry build_geometry(double resolution, const Eigen::VectorXd& shape) {
    if (shape.size() != 8) throw std::runtime_error("synth: expected 8 shape parameters");
    const double tl = shape[0], tr = shape[1], hl = shape[2], hr = shape[3];
    const double al = shape[4], ar = shape[5], ll = shape[6], lr = shape[7];

    const double torso_r = 0.16 * tr;
    const double torso_y0 = 0.95, torso_y1 = torso_y0 + 0.52 * tl;
    const double head_r = 0.085 * hr;
    const double arm_r = 0.05 * ar, arm_len = 0.46 * al;
    const double leg_r = 0.065 * lr, leg_len = 0.85 * ll;

    BodyGeometry body;
    body.segments.resize(6);

    // Torso (part 0), axis +y.
    body.segments[0] = append_tube(body.mesh, body.labels, 0, Vec3(0, torso_y0, 0),
                                   Vec3(0, torso_y1, 0), torso_r,
                                   scaled_rings(11, resolution), -1);
    const auto& torso = body.segments[0];

    // Head (part 1) welds onto the torso tip cap apex.
    const Vec3 neck_base = body.mesh.vertices[torso.tip_center] + Vec3(0, 0.03, 0);
    body.segments[1] =
        append_tube(body.mesh, body.labels, 1, neck_base, neck_base + Vec3(0, 0.30 * hl, 0),
                    head_r, scaled_rings(6, resolution), torso.tip_center);

    // Shoulders: the +-x symmetric pentagon pair (j = 1 and j = 4) exists by
    // the ring phase choice; the tube frame for a +y axis has u = -x, so
    // j = 1 lands at +x and j = 4 at -x.
    const int top = static_cast<int>(torso.rings.size()) - 1;
    const int shoulderL = torso.rings[top][1];
    const int shoulderR = torso.rings[top][4];
    const Vec3 pL = body.mesh.vertices[shoulderL];
    const Vec3 pR = body.mesh.vertices[shoulderR];
    body.segments[2] =
        append_tube(body.mesh, body.labels, 2, pL + Vec3(0.03, 0, 0),
                    pL + Vec3(0.03 + arm_len, 0, 0), arm_r, scaled_rings(9, resolution), shoulderL);
    body.segments[3] = append_tube(body.mesh, body.labels, 3, pR - Vec3(0.03, 0, 0),
                                   pR - Vec3(0.03 + arm_len, 0, 0), arm_r,
                                   scaled_rings(9, resolution), shoulderR);

    // Hips: same pair on the bottom ring.
    const int hipL = torso.rings[0][1];
    const int hipR = torso.rings[0][4];
    const Vec3 hL = body.mesh.vertices[hipL];
    const Vec3 hR = body.mesh.vertices[hipR];
    body.segments[4] = append_tube(body.mesh, body.labels, 4, hL - Vec3(0, 0.03, 0),
                                   hL - Vec3(0, 0.03 + leg_len, 0), leg_r,
                                   scaled_rings(12, resolution), hipL);
    body.segments[5] = append_tube(body.mesh, body.labels, 5, hR - Vec3(0, 0.03, 0),
                                   hR - Vec3(0, 0.03 + leg_len, 0), leg_r,
                                   scaled_rings(12, resolution), hipR);
    return body;
}

}  // namespace

SynthRig build_synth_rig(double resolution) {
    BodyGeometry body = build_geometry(resolution, Eigen::VectorXd::Ones(8));
    SynthRig rig;
    rig.resolution = resolution;
    rig.template_mesh = body.mesh;
    rig.template_mesh.part_labels = body.labels;
    rig.parts = make_part_segmentation(rig.template_mesh, body.labels, 6);

    auto make_joint = [&](const std::string& name, int child, const Vec3& axis) {
        SynthJoint j;
        j.name = name;
        j.child_part = child;
        j.weld_vertex = body.segments[child].base_center;
        j.axis = axis;
        j.base_ring = body.segments[child].rings.front();
        j.tip_vertex = body.segments[child].tip_center;
        return j;
    };
    rig.joints = {
        make_joint("neck", 1, Vec3::UnitX()),
        make_joint("shoulder_l", 2, Vec3::UnitZ()),
        make_joint("shoulder_r", 3, Vec3::UnitZ()),
        make_joint("hip_l", 4, Vec3::UnitX()),
        make_joint("hip_r", 5, Vec3::UnitX()),
    };
    rig.mid_rings.resize(6);
    rig.ring_index.assign(rig.template_mesh.num_vertices(), -1);
    rig.ring_count.assign(6, 0);
    for (int part = 0; part < 6; ++part) {
        const auto& rings = body.segments[part].rings;
        rig.mid_rings[part] = rings[rings.size() / 2];
        rig.ring_count[part] = static_cast<int>(rings.size());
        for (size_t t = 0; t < rings.size(); ++t) {
            for (int v : rings[t]) rig.ring_index[v] = static_cast<int>(t);
        }
        rig.ring_index[body.segments[part].tip_center] = static_cast<int>(rings.size()) - 1;
    }
    return rig;
}

Mesh synth_neutral(const SynthRig& rig, const Eigen::VectorXd& shape) {
    BodyGeometry body = build_geometry(rig.resolution, shape);
    Mesh mesh = body.mesh;
    mesh.part_labels = body.labels;
    if (mesh.num_vertices() != rig.template_mesh.num_vertices()) {
        throw std::runtime_error("synth: shape sample changed the vertex count");
    }
    return mesh;
}

Mesh synth_posed(const SynthRig& rig, const Eigen::VectorXd& shape, const Eigen::VectorXd& pose,
                 bool full_ramp) {
    if (pose.size() != rig.pose_dims()) throw std::runtime_error("synth: pose size mismatch");
    Mesh mesh = synth_neutral(rig, shape);
    const std::vector<int>& ring_index = rig.ring_index;
    const std::vector<int>& ring_count = rig.ring_count;

    for (size_t j = 0; j < rig.joints.size(); ++j) {
        const SynthJoint& joint = rig.joints[j];
        const double theta = pose[static_cast<int>(j)];
        if (theta == 0.0) continue;
        const Vec3 pivot = mesh.vertices[joint.weld_vertex];
        constexpr int kBlendRings = 2;
        for (int v = 0; v < mesh.num_vertices(); ++v) {
            if (mesh.part_labels[v] != joint.child_part) continue;
            double w = 1.0;
            if (full_ramp) {
                w = static_cast<double>(ring_index[v] + 1) / ring_count[joint.child_part];
            } else if (ring_index[v] < kBlendRings) {
                w = static_cast<double>(ring_index[v] + 1) / (kBlendRings + 1);
            }
            const Mat3 R = axis_angle_to_rot(joint.axis * (w * theta));
            mesh.vertices[v] = pivot + R * (mesh.vertices[v] - pivot);
        }
    }
    return mesh;
}

BodyMeasurements measure_body(const SynthRig& rig, const Mesh& mesh) {
    BodyMeasurements out;
    out.length.resize(6);
    out.radius.resize(6);
    // Torso: bottom ring center to top ring center; limbs: weld to tip.
    for (int part = 0; part < 6; ++part) {
        Vec3 a, b;
        if (part == 0) {
            a = Vec3::Zero();
            b = Vec3::Zero();
            const SynthJoint& hip = rig.joints[3];
            const SynthJoint& neck = rig.joints[0];
            a = mesh.vertices[hip.weld_vertex];
            b = mesh.vertices[neck.weld_vertex];
        } else {
            const SynthJoint* joint = nullptr;
            for (const auto& j : rig.joints) {
                if (j.child_part == part) joint = &j;
            }
            a = mesh.vertices[joint->weld_vertex];
            b = mesh.vertices[joint->tip_vertex];
        }
        out.length[part] = (b - a).norm();
        const Vec3 axis = (b - a).normalized();
        double r = 0.0;
        for (int v : rig.mid_rings[part]) {
            const Vec3 d = mesh.vertices[v] - a;
            r += (d - d.dot(axis) * axis).norm();
        }
        out.radius[part] = r / rig.mid_rings[part].size();
    }
    return out;
}

SynthConfig load_synth_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_synth_config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    SynthConfig c;
    c.seed = j.value("seed", static_cast<uint64_t>(0));
    c.part_count = j.value("part_count", 6);
    c.resolution = j.value("resolution", 1.0);
    c.neutral_count = j.value("neutral_count", 8);
    c.posed_count = j.value("posed_count", 24);
    c.shape_min = j.value("shape_min", 0.85);
    c.shape_max = j.value("shape_max", 1.2);
    c.pose_angle_max = j.value("pose_angle_max", 0.6);
    c.cycle_test = j.value("cycle_test", false);
    c.test_fraction = j.value("test_fraction", 0.0);
    return c;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    nlohmann::json j;
    j["reference"] = manifest.reference_path;
    j["parts"] = manifest.parts_path;
    j["joints"] = manifest.joints_path;
    j["scaler_f"] = manifest.scaler_f_path;
    j["scaler_g"] = manifest.scaler_g_path;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : manifest.samples) {
        nlohmann::json e;
        e["id"] = s.id;
        e["subject"] = s.subject;
        e["split"] = s.split;
        e["posed"] = s.posed;
        e["mesh"] = s.mesh_path;
        e["feature"] = s.feature_path;
        e["coarse"] = s.coarse_path;
        e["neutral_feature"] = s.neutral_feature_path;
        e["neutral_coarse"] = s.neutral_coarse_path;
        e["gt_shape"] = std::vector<double>(s.gt_shape.data(), s.gt_shape.data() + s.gt_shape.size());
        e["gt_pose"] = std::vector<double>(s.gt_pose.data(), s.gt_pose.data() + s.gt_pose.size());
        samples.push_back(e);
    }
    j["samples"] = samples;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
    nlohmann::json j;
    in >> j;
    DatasetManifest m;
    m.reference_path = j.at("reference").get<std::string>();
    m.parts_path = j.at("parts").get<std::string>();
    m.joints_path = j.value("joints", std::string());
    m.scaler_f_path = j.at("scaler_f").get<std::string>();
    m.scaler_g_path = j.at("scaler_g").get<std::string>();
    for (const auto& e : j.at("samples")) {
        ManifestSample s;
        s.id = e.at("id").get<std::string>();
        s.subject = e.at("subject").get<std::string>();
        s.split = e.at("split").get<std::string>();
        if (s.split != "train" && s.split != "test") {
            throw std::runtime_error("load_manifest: bad split tag " + s.split);
        }
        s.posed = e.at("posed").get<bool>();
        s.mesh_path = e.value("mesh", std::string());
        s.feature_path = e.at("feature").get<std::string>();
        s.coarse_path = e.at("coarse").get<std::string>();
        s.neutral_feature_path = e.at("neutral_feature").get<std::string>();
        s.neutral_coarse_path = e.at("neutral_coarse").get<std::string>();
        const auto gs = e.at("gt_shape").get<std::vector<double>>();
        const auto gp = e.at("gt_pose").get<std::vector<double>>();
        s.gt_shape = Eigen::Map<const Eigen::VectorXd>(gs.data(), gs.size());
        s.gt_pose = Eigen::Map<const Eigen::VectorXd>(gp.data(), gp.size());
        m.samples.push_back(s);
    }
    return m;
}

DatasetManifest synth_generate(const SynthConfig& config, const std::string& out_dir) {
    if (config.part_count != 6) {
        throw std::runtime_error("synth_generate: the template topology has 6 parts");
    }
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const SynthRig rig = build_synth_rig(config.resolution);
    nn::RandomEngine rng(config.seed ^ 0x73796e7468ULL);

    const Mesh& ref = rig.template_mesh;
    const CotanWeights weights = cotan_weights(ref);

    DatasetManifest manifest;
    manifest.reference_path = "reference.obj";
    manifest.parts_path = "parts.json";
    manifest.joints_path = "joints.json";
    manifest.scaler_f_path = "scaler_f.scal";
    manifest.scaler_g_path = "scaler_g.scal";
    save_obj(ref, out_dir + "/reference.obj");
    save_parts(rig.parts, out_dir + "/parts.json");

    {
        nlohmann::json joints;
        nlohmann::json sets = nlohmann::json::array();
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& j : rig.joints) {
            sets.push_back(j.base_ring);
            pairs.push_back({{"a", 0},
                             {"b", j.child_part},
                             {"hinge", {j.axis.x(), j.axis.y(), j.axis.z()}}});
        }
        joints["joints"] = sets;
        joints["pairs"] = pairs;
        std::ofstream out(out_dir + "/joints.json");
        out << joints.dump(2) << '\n';
    }

    // Subjects: shape parameters + one neutral body each.
    struct Subject {
        Eigen::VectorXd shape;
        Mesh neutral;
        AcapFeature f;
        CoarseFeature g;
        std::string id;
    };
    std::vector<Subject> subjects(config.neutral_count);
    for (int s = 0; s < config.neutral_count; ++s) {
        subjects[s].shape = Eigen::VectorXd(8);
        for (int d = 0; d < 8; ++d) {
            subjects[s].shape[d] = rng.uniform(config.shape_min, config.shape_max);
        }
        subjects[s].neutral = synth_neutral(rig, subjects[s].shape);
        subjects[s].f = encode_acap(ref, subjects[s].neutral, weights);
        subjects[s].g = encode_coarse(ref, subjects[s].neutral, subjects[s].f, rig.parts);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "subject_%03d", s);
        subjects[s].id = buf;
    }

    struct Posed {
        int subject;
        Eigen::VectorXd pose;
        Mesh mesh;
        AcapFeature f;
        CoarseFeature g;
        std::string id;
    };
    std::vector<Posed> posed(config.posed_count);
    for (int k = 0; k < config.posed_count; ++k) {
        posed[k].subject = config.neutral_count > 0 ? k % config.neutral_count : 0;
        posed[k].pose = Eigen::VectorXd(rig.pose_dims());
        for (int d = 0; d < rig.pose_dims(); ++d) {
            double a = rng.uniform(-config.pose_angle_max, config.pose_angle_max);
            if (!config.cycle_test) a = std::clamp(a, -M_PI + 1e-3, M_PI - 1e-3);
            posed[k].pose[d] = a;
        }
        const auto& subject = subjects[posed[k].subject];
        posed[k].mesh = synth_posed(rig, subject.shape, posed[k].pose, config.cycle_test);
        posed[k].f = encode_acap(ref, posed[k].mesh, weights);
        posed[k].g = encode_coarse(ref, posed[k].mesh, posed[k].f, rig.parts);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "pose_%04d", k);
        posed[k].id = buf;
    }

    // Split tags: the trailing fraction of each list is held out.
    auto split_of = [&](int index, int total) {
        const int train = total - static_cast<int>(std::floor(total * config.test_fraction));
        return index < train ? "train" : "test";
    };

    // Scalers fit on the train split only (posed and neutral features).
    std::vector<Eigen::VectorXd> f_corpus, g_corpus;
    for (int s = 0; s < config.neutral_count; ++s) {
        if (std::string(split_of(s, config.neutral_count)) != "train") continue;
        f_corpus.push_back(subjects[s].f);
        g_corpus.push_back(subjects[s].g);
    }
    for (int k = 0; k < config.posed_count; ++k) {
        if (std::string(split_of(k, config.posed_count)) != "train") continue;
        f_corpus.push_back(posed[k].f);
        g_corpus.push_back(posed[k].g);
    }
    if (f_corpus.empty()) throw std::runtime_error("synth_generate: empty train split");
    const FeatureScaler scaler_f = FeatureScaler::fit(f_corpus);
    const FeatureScaler scaler_g = FeatureScaler::fit(g_corpus);
    save_scaler(scaler_f, out_dir + "/scaler_f.scal");
    save_scaler(scaler_g, out_dir + "/scaler_g.scal");

    auto emit = [&](const std::string& id, const Mesh& mesh, const AcapFeature& f,
                    const CoarseFeature& g) {
        save_obj(mesh, out_dir + "/" + id + ".obj");
        save_acap(f, out_dir + "/" + id + ".acap");
        save_coarse(g, out_dir + "/" + id + ".coar");
    };

    for (int s = 0; s < config.neutral_count; ++s) {
        const auto& subject = subjects[s];
        emit(subject.id, subject.neutral, subject.f, subject.g);
        ManifestSample sample;
        sample.id = subject.id;
        sample.subject = subject.id;
        sample.split = split_of(s, config.neutral_count);
        sample.posed = false;
        sample.mesh_path = subject.id + ".obj";
        sample.feature_path = subject.id + ".acap";
        sample.coarse_path = subject.id + ".coar";
        sample.neutral_feature_path = sample.feature_path;  // neutral pairs with itself
        sample.neutral_coarse_path = sample.coarse_path;
        sample.gt_shape = subject.shape;
        sample.gt_pose = Eigen::VectorXd::Zero(rig.pose_dims());
        manifest.samples.push_back(sample);
    }
    for (int k = 0; k < config.posed_count; ++k) {
        const auto& p = posed[k];
        const auto& subject = subjects[p.subject];
        emit(p.id, p.mesh, p.f, p.g);
        ManifestSample sample;
        sample.id = p.id;
        sample.subject = subject.id;
        sample.split = split_of(k, config.posed_count);
        sample.posed = true;
        sample.mesh_path = p.id + ".obj";
        sample.feature_path = p.id + ".acap";
        sample.coarse_path = p.id + ".coar";
        sample.neutral_feature_path = subject.id + ".acap";
        sample.neutral_coarse_path = subject.id + ".coar";
        sample.gt_shape = subject.shape;
        sample.gt_pose = p.pose;
        manifest.samples.push_back(sample);
    }
    save_manifest(manifest, out_dir + "/manifest.json");
    return manifest;
}

FeatureDataset load_feature_dataset(const DatasetManifest& manifest, const std::string& base_dir,
                                    const FeatureScaler& scaler_f, const FeatureScaler& scaler_g,
                                    const std::string& split) {
    FeatureDataset data;
    const std::string prefix = base_dir.empty() ? "" : base_dir + "/";
    for (const auto& s : manifest.samples) {
        if (!split.empty() && s.split != split) continue;
        SampleRecord rec;
        rec.subject = s.subject;
        rec.neutral = !s.posed;
        rec.f = scaler_f.scale(load_acap(prefix + s.feature_path));
        rec.g = scaler_g.scale(load_coarse(prefix + s.coarse_path));
        rec.f_s = scaler_f.scale(load_acap(prefix + s.neutral_feature_path));
        rec.g_s = scaler_g.scale(load_coarse(prefix + s.neutral_coarse_path));
        if (data.num_vertices == 0) {
            data.num_vertices = static_cast<int>(rec.f.size() / 9);
            data.part_count = static_cast<int>(rec.g.size() / 9);
        }
        if (rec.neutral) {
            data.neutral.push_back(std::move(rec));
        } else {
            data.posed.push_back(std::move(rec));
        }
    }
    return data;
}

}  // namespace bodyrep
