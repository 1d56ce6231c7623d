#include "stgait/skeleton_graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "stgait/errors.hpp"

namespace stgait {

std::string to_string(PartitionStrategy p) { return p == PartitionStrategy::UniLabel ? "unilabel" : "spatial"; }

std::string to_string(AdjacencyNorm n) { return n == AdjacencyNorm::RandomWalk ? "random_walk" : "symmetric"; }

PartitionStrategy parse_partition(const std::string& s) {
    if (s == "unilabel" || s == "UniLabel") return PartitionStrategy::UniLabel;
    if (s == "spatial" || s == "Spatial") return PartitionStrategy::Spatial;
    throw ValidationError("unknown partition strategy '" + s + "'");
}

AdjacencyNorm parse_adjacency_norm(const std::string& s) {
    if (s == "random_walk" || s == "RandomWalk") return AdjacencyNorm::RandomWalk;
    if (s == "symmetric" || s == "Symmetric") return AdjacencyNorm::Symmetric;
    throw ValidationError("unknown adjacency normalization '" + s + "'");
}

void SkeletonGraph::validate() const {
    if (num_joints <= 0) throw ValidationError("skeleton has no joints");
    if (center_joint < 0 || center_joint >= num_joints) throw ValidationError("center joint out of range");
    if (!joint_names.empty() && static_cast<Index>(joint_names.size()) != num_joints) {
        throw ValidationError("joint name count does not match joint count");
    }
    std::set<Edge> seen;
    for (auto [a, b] : edges) {
        if (a < 0 || b < 0 || a >= num_joints || b >= num_joints) {
            throw ValidationError("edge (" + std::to_string(a) + "," + std::to_string(b) + ") out of range");
        }
        if (a == b) throw ValidationError("self-loop on joint " + std::to_string(a));
        if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
            throw ValidationError("duplicate edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
        }
    }
    if (!connected()) throw ValidationError("skeleton graph is disconnected");
}

bool SkeletonGraph::connected() const {
    const auto hops = hops_from_center();
    return std::none_of(hops.begin(), hops.end(), [](Index h) { return h < 0; });
}

Eigen::MatrixXd SkeletonGraph::adjacency() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(num_joints, num_joints);
    for (auto [i, j] : edges) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
    }
    return a;
}

std::vector<Index> SkeletonGraph::hops_from_center() const {
    std::vector<std::vector<Index>> nbr(static_cast<std::size_t>(num_joints));
    for (auto [i, j] : edges) {
        if (i < 0 || j < 0 || i >= num_joints || j >= num_joints) continue;
        nbr[i].push_back(j);
        nbr[j].push_back(i);
    }
    std::vector<Index> hops(static_cast<std::size_t>(num_joints), -1);
    if (center_joint < 0 || center_joint >= num_joints) return hops;
    std::queue<Index> q;
    hops[center_joint] = 0;
    q.push(center_joint);
    while (!q.empty()) {
        const Index u = q.front();
        q.pop();
        for (Index v : nbr[u]) {
            if (hops[v] < 0) {
                hops[v] = hops[u] + 1;
                q.push(v);
            }
        }
    }
    return hops;
}

std::vector<Index> SkeletonGraph::degrees() const {
    std::vector<Index> d(static_cast<std::size_t>(num_joints), 0);
    for (auto [i, j] : edges) {
        ++d[i];
        ++d[j];
    }
    return d;
}

bool operator==(const SkeletonGraph& a, const SkeletonGraph& b) {
    auto canon = [](const SkeletonGraph& g) {
        std::set<Edge> s;
        for (auto [i, j] : g.edges) s.insert({std::min(i, j), std::max(i, j)});
        return s;
    };
    return a.num_joints == b.num_joints && a.center_joint == b.center_joint && a.partition == b.partition &&
           a.norm == b.norm && canon(a) == canon(b);
}

Eigen::MatrixXd AdjacencyStack::total() const {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(num_joints(), num_joints());
    for (const auto& s : subsets) t += s;
    return t;
}

SkeletonGraph build_default_skeleton() {
    using namespace joint;
    SkeletonGraph g;
    g.num_joints = kCount;
    g.center_joint = kRoot;
    g.edges = {
        {kRoot, kSpine},           {kSpine, kNeck},           {kNeck, kHead},
        {kNeck, kLeftShoulder},    {kLeftShoulder, kLeftElbow}, {kLeftElbow, kLeftHand},
        {kNeck, kRightShoulder},   {kRightShoulder, kRightElbow}, {kRightElbow, kRightHand},
        {kRoot, kLeftHip},         {kLeftHip, kLeftKnee},     {kLeftKnee, kLeftFoot},
        {kRoot, kRightHip},        {kRightHip, kRightKnee},   {kRightKnee, kRightFoot},
    };
    g.joint_names = {"root",       "spine",    "neck",       "head",    "l_shoulder", "l_elbow",
                     "l_hand",     "r_shoulder", "r_elbow",  "r_hand",  "l_hip",      "l_knee",
                     "l_foot",     "r_hip",    "r_knee",     "r_foot"};
    return g;
}

AdjacencyStack normalized_adjacency(const SkeletonGraph& graph) {
    graph.validate();
    const Index n = graph.num_joints;
    const Eigen::MatrixXd a_hat = graph.adjacency() + Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd deg = a_hat.rowwise().sum();
    Eigen::MatrixXd normalized;
    if (graph.norm == AdjacencyNorm::RandomWalk) {
        normalized = deg.cwiseInverse().asDiagonal() * a_hat;
    } else {
        const Eigen::VectorXd s = deg.cwiseSqrt().cwiseInverse();
        normalized = s.asDiagonal() * a_hat * s.asDiagonal();
    }

    AdjacencyStack stack;
    if (graph.partition == PartitionStrategy::UniLabel) {
        stack.subsets.push_back(normalized);
        return stack;
    }
    const auto hops = graph.hops_from_center();
    stack.subsets.assign(3, Eigen::MatrixXd::Zero(n, n));
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            if (a_hat(i, j) == 0.0) continue;
            const Index subset = hops[j] == hops[i] ? 0 : (hops[j] < hops[i] ? 1 : 2);
            stack.subsets[subset](i, j) = normalized(i, j);
        }
    return stack;
}

SkeletonGraph permute(const SkeletonGraph& graph, std::span<const Index> perm) {
    const Index n = graph.num_joints;
    if (static_cast<Index>(perm.size()) != n) throw ValidationError("permutation length does not match joint count");
    std::vector<bool> hit(static_cast<std::size_t>(n), false);
    for (Index p : perm) {
        if (p < 0 || p >= n || hit[p]) throw ValidationError("joint relabeling is not a bijection");
        hit[p] = true;
    }
    SkeletonGraph out = graph;
    for (auto& [a, b] : out.edges) {
        a = perm[a];
        b = perm[b];
    }
    out.center_joint = perm[graph.center_joint];
    if (!graph.joint_names.empty()) {
        for (Index i = 0; i < n; ++i) out.joint_names[perm[i]] = graph.joint_names[i];
    }
    return out;
}

SkeletonGraph parse_skeleton(const std::string& text) {
    SkeletonGraph g;
    g.num_joints = 0;
    g.center_joint = 0;
    std::vector<std::pair<Index, std::string>> names;
    std::istringstream in(text);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "joints") {
            if (!(ls >> g.num_joints)) throw ParseError("expected joint count", lineno);
        } else if (key == "joint") {
            Index idx;
            std::string name;
            if (!(ls >> idx >> name)) throw ParseError("expected 'joint <index> <name>'", lineno);
            names.emplace_back(idx, name);
        } else if (key == "edge") {
            Index a, b;
            if (!(ls >> a >> b)) throw ParseError("expected 'edge <a> <b>'", lineno);
            g.edges.emplace_back(a, b);
        } else if (key == "center") {
            if (!(ls >> g.center_joint)) throw ParseError("expected center joint index", lineno);
        } else if (key == "partition") {
            std::string v;
            ls >> v;
            g.partition = parse_partition(v);
        } else if (key == "normalization") {
            std::string v;
            ls >> v;
            g.norm = parse_adjacency_norm(v);
        } else {
            throw ParseError("unknown skeleton key '" + key + "'", lineno);
        }
    }
    if (g.num_joints == 0) g.num_joints = static_cast<Index>(names.size());
    if (!names.empty()) {
        g.joint_names.assign(static_cast<std::size_t>(g.num_joints), "");
        for (auto& [idx, name] : names) {
            if (idx < 0 || idx >= g.num_joints) throw ValidationError("joint name index out of range");
            g.joint_names[idx] = name;
        }
    }
    g.validate();
    return g;
}

SkeletonGraph load_skeleton_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open skeleton file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_skeleton(ss.str());
}

std::string format_skeleton(const SkeletonGraph& graph) {
    std::ostringstream os;
    os << "joints " << graph.num_joints << '\n';
    for (std::size_t i = 0; i < graph.joint_names.size(); ++i) os << "joint " << i << ' ' << graph.joint_names[i] << '\n';
    for (auto [a, b] : graph.edges) os << "edge " << a << ' ' << b << '\n';
    os << "center " << graph.center_joint << '\n';
    os << "partition " << to_string(graph.partition) << '\n';
    os << "normalization " << to_string(graph.norm) << '\n';
    return os.str();
}

}  // namespace stgait
