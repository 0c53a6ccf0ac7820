#include "duet/skeleton.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "duet/error.hpp"

namespace duet {

void Skeleton::validate() const {
  const auto n = parents.size();
  if (n != static_cast<size_t>(kJointCount) || rest_offsets.size() != n ||
      (!names.empty() && names.size() != n)) {
    throw Error("bad-skeleton", "expected 22 joints with offsets");
  }
  if (parents[0] != -1) throw Error("bad-skeleton", "joint 0 must be the root");
  for (size_t j = 1; j < n; ++j) {
    if (parents[j] < 0 || parents[j] >= static_cast<int>(j)) {
      throw Error("bad-skeleton", "parent of joint " + std::to_string(j) + " must precede it");
    }
  }
  for (const auto& o : rest_offsets) {
    if (!o.allFinite()) throw Error("bad-skeleton", "non-finite rest offset");
  }
}

Skeleton Skeleton::smpl22() {
  // Y up, character faces +Z, its left side is +X. Offsets in meters.
  Skeleton s;
  s.names = {"pelvis",         "left_hip",       "right_hip",   "spine1",      "left_knee",
             "right_knee",     "spine2",         "left_ankle",  "right_ankle", "spine3",
             "left_foot",      "right_foot",     "neck",        "left_collar", "right_collar",
             "head",           "left_shoulder",  "right_shoulder", "left_elbow", "right_elbow",
             "left_wrist",     "right_wrist"};
  s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
  s.rest_offsets = {
      {0.0, 0.0, 0.0},       {0.07, -0.09, 0.0},   {-0.07, -0.09, 0.0},  {0.0, 0.11, -0.01},
      {0.03, -0.38, 0.0},    {-0.03, -0.38, 0.0},  {0.0, 0.13, 0.01},    {0.0, -0.40, -0.04},
      {0.0, -0.40, -0.04},   {0.0, 0.05, 0.0},     {0.0, -0.05, 0.13},   {0.0, -0.05, 0.13},
      {0.0, 0.22, -0.02},    {0.08, 0.11, -0.01},  {-0.08, 0.11, -0.01}, {0.0, 0.09, 0.05},
      {0.11, 0.03, 0.0},     {-0.11, 0.03, 0.0},   {0.26, 0.0, 0.0},     {-0.26, 0.0, 0.0},
      {0.25, 0.0, 0.0},      {-0.25, 0.0, 0.0}};
  return s;
}

Skeleton Skeleton::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing-file", path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad-skeleton", e.what());
  }
  Skeleton s;
  for (const auto& joint : doc.at("joints")) {
    s.names.push_back(joint.at("name").get<std::string>());
    s.parents.push_back(joint.at("parent").get<int>());
    const auto off = joint.at("offset").get<std::array<double, 3>>();
    s.rest_offsets.emplace_back(off[0], off[1], off[2]);
  }
  s.validate();
  return s;
}

void Skeleton::save(const std::filesystem::path& path) const {
  nlohmann::json doc;
  doc["units"] = "meters";
  auto& joints = doc["joints"];
  joints = nlohmann::json::array();
  for (int j = 0; j < joint_count(); ++j) {
    const auto& o = rest_offsets[j];
    joints.push_back({{"name", names.empty() ? "joint" + std::to_string(j) : names[j]},
                      {"parent", parents[j]},
                      {"offset", {o.x(), o.y(), o.z()}}});
  }
  std::ofstream out(path);
  if (!out) throw Error("io-error", path.string());
  out << doc.dump(2) << '\n';
}

JointPositions forward_kinematics(std::span<const Eigen::Matrix3d> local_rotations,
                                  const Eigen::Matrix3d& root_orientation,
                                  const Eigen::Vector3d& root_position,
                                  const Skeleton& skel) {
  std::array<Eigen::Matrix3d, kJointCount> global;
  JointPositions pos;
  global[0] = root_orientation;
  pos[0] = root_position;
  for (int j = 1; j < kJointCount; ++j) {
    const int p = skel.parents[j];
    pos[j] = pos[p] + global[p] * skel.rest_offsets[j];
    global[j] = global[p] * local_rotations[j - 1];
  }
  return pos;
}

}  // namespace duet
