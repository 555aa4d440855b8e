#include "bodyrep/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bodyrep {

Vec3 Mesh::bbox_min() const {
    Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
    for (const auto& v : vertices) m = m.cwiseMin(v);
    return m;
}

Vec3 Mesh::bbox_max() const {
    Vec3 m = Vec3::Constant(-std::numeric_limits<double>::infinity());
    for (const auto& v : vertices) m = m.cwiseMax(v);
    return m;
}

double Mesh::bbox_diagonal() const {
    if (vertices.empty()) return 0.0;
    return (bbox_max() - bbox_min()).norm();
}

double CotanWeights::weight(int i, int j) const {
    const auto& nbr = neighbors[i];
    auto it = std::lower_bound(nbr.begin(), nbr.end(), j);
    if (it == nbr.end() || *it != j) return 0.0;
    return weights[i][static_cast<size_t>(it - nbr.begin())];
}

std::vector<std::vector<int>> PartSegmentation::part_vertices() const {
    std::vector<std::vector<int>> out(part_count);
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) out[labels[i]].push_back(i);
    return out;
}

bool PartSegmentation::adjacent(int a, int b) const {
    if (a > b) std::swap(a, b);
    return part_adjacency.count({a, b}) > 0;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.scale * (inv.rotation * translation);
    return inv;
}

namespace {

int parse_obj_index(const std::string& token, int num_vertices, int line_no) {
    // Face tokens may carry texture/normal refs: v, v/vt, v//vn, v/vt/vn.
    size_t slash = token.find('/');
    const std::string head = slash == std::string::npos ? token : token.substr(0, slash);
    int idx = 0;
    try {
        idx = std::stoi(head);
    } catch (const std::exception&) {
        throw std::runtime_error("load_obj: bad face index '" + token + "' at line " +
                                 std::to_string(line_no));
    }
    if (idx < 0) idx = num_vertices + idx + 1;  // negative OBJ indices are relative
    if (idx < 1 || idx > num_vertices) {
        throw std::runtime_error("load_obj: index out of range at line " + std::to_string(line_no));
    }
    return idx - 1;
}

}  // namespace

Mesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_obj: cannot open " + path);

    Mesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.size() >= 2 && line[0] == 'v' && (line[1] == ' ' || line[1] == '\t')) {
            std::istringstream ss(line.substr(2));
            Vec3 p;
            if (!(ss >> p.x() >> p.y() >> p.z())) {
                throw std::runtime_error("load_obj: bad vertex at line " + std::to_string(line_no));
            }
            mesh.vertices.push_back(p);
        } else if (line.size() >= 2 && line[0] == 'f' && (line[1] == ' ' || line[1] == '\t')) {
            std::istringstream ss(line.substr(2));
            std::vector<int> poly;
            std::string tok;
            while (ss >> tok) poly.push_back(parse_obj_index(tok, mesh.num_vertices(), line_no));
            if (poly.size() < 3) {
                throw std::runtime_error("load_obj: face with fewer than 3 vertices at line " +
                                         std::to_string(line_no));
            }
            for (size_t k = 1; k + 1 < poly.size(); ++k) {
                mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
            }
        }
    }
    check_indices(mesh);
    if (!is_consistently_oriented(mesh)) {
        std::cerr << "warning: load_obj: " << path << " is non-manifold or inconsistently oriented\n";
    }
    return mesh;
}

void save_obj(const Mesh& mesh, const std::string& path) {
    if (mesh.vertices.empty()) throw std::runtime_error("save_obj: empty mesh");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_obj: cannot open " + path);
    char buf[128];
    for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.12g %.12g %.12g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto& t : mesh.triangles) {
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
    if (!out) throw std::runtime_error("save_obj: write failure on " + path);
}

void check_indices(const Mesh& mesh) {
    const int n = mesh.num_vertices();
    for (size_t f = 0; f < mesh.triangles.size(); ++f) {
        const auto& t = mesh.triangles[f];
        for (int k = 0; k < 3; ++k) {
            if (t[k] < 0 || t[k] >= n) {
                throw std::runtime_error("mesh: triangle " + std::to_string(f) +
                                         " index out of range");
            }
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw std::runtime_error("mesh: triangle " + std::to_string(f) +
                                     " has repeated vertices");
        }
    }
}

bool is_connected(const Mesh& mesh) {
    const int n = mesh.num_vertices();
    if (n == 0) return false;
    std::vector<std::vector<int>> adj(n);
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            adj[t[k]].push_back(t[(k + 1) % 3]);
            adj[t[(k + 1) % 3]].push_back(t[k]);
        }
    }
    std::vector<char> seen(n, 0);
    std::deque<int> queue{0};
    seen[0] = 1;
    int count = 1;
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int w : adj[v]) {
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                queue.push_back(w);
            }
        }
    }
    return count == n;
}

bool is_consistently_oriented(const Mesh& mesh) {
    // Each interior undirected edge must appear once per direction.
    std::map<std::pair<int, int>, int> directed;
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3];
            if (++directed[{a, b}] > 1) return false;
        }
    }
    return true;
}

CotanWeights cotan_weights(const Mesh& mesh) {
    const int n = mesh.num_vertices();
    std::map<std::pair<int, int>, double> edge_weight;  // key a < b

    for (size_t f = 0; f < mesh.triangles.size(); ++f) {
        const auto& t = mesh.triangles[f];
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        const double area2 = (b - a).cross(c - a).norm();
        if (area2 < 1e-16) {
            throw std::runtime_error("cotan_weights: degenerate triangle " + std::to_string(f));
        }
        for (int k = 0; k < 3; ++k) {
            const int i = t[k], j = t[(k + 1) % 3], o = t[(k + 2) % 3];
            const Vec3 u = mesh.vertices[i] - mesh.vertices[o];
            const Vec3 v = mesh.vertices[j] - mesh.vertices[o];
            const double cot = u.dot(v) / u.cross(v).norm();
            auto key = std::minmax(i, j);
            edge_weight[{key.first, key.second}] += 0.5 * cot;
        }
    }

    CotanWeights w;
    w.neighbors.assign(n, {});
    w.weights.assign(n, {});
    for (const auto& [edge, cw] : edge_weight) {
        const double clamped = std::max(cw, CotanWeights::kEpsilonW);
        w.neighbors[edge.first].push_back(edge.second);
        w.weights[edge.first].push_back(clamped);
        w.neighbors[edge.second].push_back(edge.first);
        w.weights[edge.second].push_back(clamped);
    }
    // Neighbor lists come out sorted by construction on the second index only;
    // sort both jointly to keep lookups valid.
    for (int i = 0; i < n; ++i) {
        std::vector<size_t> order(w.neighbors[i].size());
        for (size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(),
                  [&](size_t x, size_t y) { return w.neighbors[i][x] < w.neighbors[i][y]; });
        std::vector<int> nbr(order.size());
        std::vector<double> wt(order.size());
        for (size_t k = 0; k < order.size(); ++k) {
            nbr[k] = w.neighbors[i][order[k]];
            wt[k] = w.weights[i][order[k]];
        }
        w.neighbors[i] = std::move(nbr);
        w.weights[i] = std::move(wt);
    }
    return w;
}

std::vector<Vec3> vertex_normals(const Mesh& mesh) {
    std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
    for (const auto& t : mesh.triangles) {
        const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                           .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        for (int k = 0; k < 3; ++k) normals[t[k]] += n;  // area-weighted
    }
    for (auto& n : normals) {
        const double len = n.norm();
        if (len > 1e-16) n /= len;
    }
    return normals;
}

PartSegmentation make_part_segmentation(const Mesh& mesh, const std::vector<int>& labels,
                                        int part_count) {
    if (static_cast<int>(labels.size()) != mesh.num_vertices()) {
        throw std::runtime_error("part segmentation: label count does not match vertex count");
    }
    PartSegmentation parts;
    parts.labels = labels;
    parts.part_count = part_count;
    std::vector<int> seen(part_count, 0);
    for (int l : labels) {
        if (l < 0 || l >= part_count) throw std::runtime_error("part segmentation: label out of range");
        seen[l] = 1;
    }
    for (int k = 0; k < part_count; ++k) {
        if (!seen[k]) throw std::runtime_error("part segmentation: part " + std::to_string(k) + " owns no vertex");
    }
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = labels[t[k]], b = labels[t[(k + 1) % 3]];
            if (a != b) parts.part_adjacency.insert({std::min(a, b), std::max(a, b)});
        }
    }
    return parts;
}

PartSegmentation load_parts(const std::string& path, int expected_vertices) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_parts: cannot open " + path);
    nlohmann::json j;
    in >> j;
    PartSegmentation parts;
    parts.part_count = j.at("P").get<int>();
    parts.labels = j.at("labels").get<std::vector<int>>();
    if (expected_vertices >= 0 && static_cast<int>(parts.labels.size()) != expected_vertices) {
        throw std::runtime_error("load_parts: label count does not match mesh");
    }
    for (int l : parts.labels) {
        if (l < 0 || l >= parts.part_count) throw std::runtime_error("load_parts: label out of range");
    }
    if (j.contains("adjacency")) {
        for (const auto& e : j.at("adjacency")) {
            int a = e.at(0).get<int>(), b = e.at(1).get<int>();
            if (a != b) parts.part_adjacency.insert({std::min(a, b), std::max(a, b)});
        }
    }
    return parts;
}

void save_parts(const PartSegmentation& parts, const std::string& path) {
    nlohmann::json j;
    j["P"] = parts.part_count;
    j["labels"] = parts.labels;
    nlohmann::json adj = nlohmann::json::array();
    for (const auto& [a, b] : parts.part_adjacency) adj.push_back({a, b});
    j["adjacency"] = adj;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_parts: cannot open " + path);
    out << j.dump(2) << '\n';
}

RigidTransform procrustes_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                bool with_scale) {
    if (source.size() != target.size()) {
        throw std::runtime_error("procrustes_align: point counts differ");
    }
    const int n = static_cast<int>(source.size());
    if (n < 3) throw std::runtime_error("procrustes_align: need at least 3 points");

    Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        cs += source[i];
        ct += target[i];
    }
    cs /= n;
    ct /= n;

    Mat3 cov = Mat3::Zero();
    double src_var = 0.0;
    for (int i = 0; i < n; ++i) {
        cov += (target[i] - ct) * (source[i] - cs).transpose();
        src_var += (source[i] - cs).squaredNorm();
    }

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(1) < 1e-12 * std::max(1.0, svd.singularValues()(0))) {
        throw std::runtime_error("procrustes_align: rank-deficient covariance");
    }
    Mat3 D = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) D(2, 2) = -1.0;

    RigidTransform rt;
    rt.rotation = svd.matrixU() * D * svd.matrixV().transpose();
    if (with_scale) {
        if (src_var < 1e-16) throw std::runtime_error("procrustes_align: degenerate source");
        rt.scale = (svd.singularValues().asDiagonal() * D).trace() / src_var;
    }
    rt.translation = ct - rt.scale * (rt.rotation * cs);
    return rt;
}

}  // namespace bodyrep
