#pragma once

#include <string>

#include "bodyrep/deform.hpp"
#include "bodyrep/mesh.hpp"

namespace bodyrep {

/// Part-level feature, 9 values per part laid out [r; s] like AcapFeature.
using CoarseFeature = Eigen::VectorXd;

/// Unweighted least-squares affine fit of part k about its centroids.
Mat3 part_deform(const Mesh& ref, const Mesh& target, const PartSegmentation& parts, int part,
                 bool* flagged = nullptr);

/// Align the part rotation's 2*pi branch with the mean of the part's
/// per-vertex ACAP rotations: returns u*(theta + 2*pi*m) with m the argmin
/// over j in [-3, 3].
Vec3 select_branch(const Vec3& r_init, const AcapFeature& acap, const PartSegmentation& parts,
                   int part);

CoarseFeature encode_coarse(const Mesh& ref, const Mesh& target, const AcapFeature& acap,
                            const PartSegmentation& parts);

void save_coarse(const CoarseFeature& g, const std::string& path);
CoarseFeature load_coarse(const std::string& path);

}  // namespace bodyrep
