#pragma once

#include <string>
#include <vector>

#include "bodyrep/coarse.hpp"
#include "bodyrep/deform.hpp"
#include "bodyrep/mesh.hpp"
#include "bodyrep/model.hpp"

namespace bodyrep {

/// Articulated capsule figure: torso, head, two arms, two legs, built from
/// pentagonal tubes welded at single joint vertices so the mesh stays one
/// connected, consistently oriented component. At resolution 1.0 the figure
/// has exactly 302 vertices.
struct SynthConfig {
    uint64_t seed = 0;
    int part_count = 6;         // fixed by the template topology
    double resolution = 1.0;    // scales rings per segment
    int neutral_count = 8;      // one neutral body per subject
    int posed_count = 24;       // posed samples, subjects round-robin
    double shape_min = 0.85;    // segment length/radius scale range
    double shape_max = 1.20;
    double pose_angle_max = 0.6;  // radians per joint
    bool cycle_test = false;      // allow |angle| > pi with full-length ramps
    double test_fraction = 0.0;   // trailing fraction of samples tagged test
};

SynthConfig load_synth_config(const std::string& path);

struct SynthJoint {
    std::string name;
    int child_part = -1;
    int weld_vertex = -1;          // pivot; owned by the parent part
    Vec3 axis = Vec3::UnitX();     // hinge axis
    std::vector<int> base_ring;    // child ring 0, usable as a joint vertex set
    int tip_vertex = -1;           // child tip cap center
};

struct SynthRig {
    double resolution = 1.0;
    Mesh template_mesh;  // unit shape parameters, neutral pose
    PartSegmentation parts;
    std::vector<SynthJoint> joints;        // neck, shoulderL, shoulderR, hipL, hipR
    std::vector<std::vector<int>> mid_rings;  // per part, a mid-segment ring
    std::vector<int> ring_index;           // per vertex, ring within its part
    std::vector<int> ring_count;           // per part
    int shape_dims() const { return 8; }   // {torso,head,arm,leg} x {length,radius}
    int pose_dims() const { return static_cast<int>(joints.size()); }
};

SynthRig build_synth_rig(double resolution);

/// Neutral-pose body for the given shape parameters (scales around 1.0).
Mesh synth_neutral(const SynthRig& rig, const Eigen::VectorXd& shape);

/// Posed body: hinge rotations applied about the subject's joint pivots with
/// a short smooth ramp into each limb (or a full-length ramp in cycle-test
/// mode, which keeps large twists branch-unwindable).
Mesh synth_posed(const SynthRig& rig, const Eigen::VectorXd& shape, const Eigen::VectorXd& pose,
                 bool full_ramp = false);

struct BodyMeasurements {
    std::vector<double> length;  // per part (torso measured hip-to-shoulder)
    std::vector<double> radius;  // per part, at the mid ring
};

BodyMeasurements measure_body(const SynthRig& rig, const Mesh& mesh);

struct ManifestSample {
    std::string id;
    std::string subject;
    std::string split;  // train | test
    bool posed = false;
    std::string mesh_path;
    std::string feature_path;
    std::string coarse_path;
    std::string neutral_feature_path;
    std::string neutral_coarse_path;
    Eigen::VectorXd gt_shape;
    Eigen::VectorXd gt_pose;
};

struct DatasetManifest {
    std::string reference_path;
    std::string parts_path;
    std::string joints_path;
    std::string scaler_f_path;
    std::string scaler_g_path;
    std::vector<ManifestSample> samples;
};

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Generate the corpus on disk: meshes, features, scalers (fit on the train
/// split), part/joint sidecars and the manifest. Returns the manifest.
DatasetManifest synth_generate(const SynthConfig& config, const std::string& out_dir);

/// Load manifest features into a scaled training dataset. Paths in the
/// manifest are resolved against base_dir; split filters to "train"/"test"
/// (empty keeps everything).
FeatureDataset load_feature_dataset(const DatasetManifest& manifest, const std::string& base_dir,
                                    const FeatureScaler& scaler_f, const FeatureScaler& scaler_g,
                                    const std::string& split);

}  // namespace bodyrep
