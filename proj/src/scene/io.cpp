#include "scene/io.hpp"

#include <fstream>

#include "common/error.hpp"

namespace ds {

using nlohmann::json;

namespace {

// Field accessor that reports the full JSON path on failure.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  Reader at(const std::string& key) const {
    if (!j_.is_object()) throw ParseError(path_ + ": expected an object");
    auto it = j_.find(key);
    if (it == j_.end()) throw ParseError("missing field '" + child(key) + "'");
    return Reader(*it, child(key));
  }
  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  Reader at(std::size_t i) const { return Reader(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

  std::size_t array_size(std::size_t expected = 0) const {
    if (!j_.is_array()) throw ParseError("field '" + path_ + "' must be an array");
    if (expected != 0 && j_.size() != expected) {
      throw ParseError("field '" + path_ + "' must have " + std::to_string(expected) + " entries");
    }
    return j_.size();
  }
  double number() const {
    if (!j_.is_number()) throw ParseError("field '" + path_ + "' must be a number");
    return j_.get<double>();
  }
  int integer() const {
    if (!j_.is_number_integer()) throw ParseError("field '" + path_ + "' must be an integer");
    return j_.get<int>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) throw ParseError("field '" + path_ + "' must be a boolean");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) throw ParseError("field '" + path_ + "' must be a string");
    return j_.get<std::string>();
  }
  template <int N>
  Eigen::Matrix<double, N, 1> vec() const {
    array_size(N);
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v[i] = at(static_cast<std::size_t>(i)).number();
    return v;
  }
  const std::string& path() const { return path_; }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
};

json vec_json(const auto& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

std::string frame_file(ViewId v, std::size_t i) {
  return std::string(view_name(v)) + "_" + std::to_string(i) + ".png";
}

}  // namespace

json scene_to_json(const SceneTimeline& scene) {
  json j;
  j["version"] = kSceneFormatVersion;
  j["name"] = scene.name;
  j["cameras"] = json::array();
  for (const auto& c : scene.cameras) {
    json r = json::array();
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) r.push_back(c.rotation(row, col));
    }
    j["cameras"].push_back({{"view", view_name(c.view)},
                            {"fx", c.fx},
                            {"fy", c.fy},
                            {"cx", c.cx},
                            {"cy", c.cy},
                            {"rotation", r},
                            {"translation", vec_json(c.translation)},
                            {"width", c.width},
                            {"height", c.height}});
  }
  j["frame_timestamps"] = scene.frame_timestamps;
  j["ticks"] = json::array();
  for (const auto& t : scene.ticks) {
    json boxes = json::array();
    for (const auto& b : t.boxes) {
      boxes.push_back({{"center", vec_json(b.center)},
                       {"size", vec_json(b.size)},
                       {"yaw", b.yaw},
                       {"class_id", b.class_id},
                       {"track_id", b.track_id}});
    }
    json map = json::array();
    for (const auto& m : t.map) {
      json pts = json::array();
      for (const auto& p : m.polyline) pts.push_back({p.x(), p.y()});
      map.push_back({{"class_id", m.class_id}, {"closed", m.closed}, {"polyline", pts}});
    }
    j["ticks"].push_back({{"t", t.t}, {"ego", {{"v", t.ego.velocity}, {"phi", t.ego.direction_angle}}},
                          {"boxes", boxes}, {"map", map}});
  }
  return j;
}

SceneTimeline scene_from_json(const json& root) {
  const Reader r(root, "");
  const int version = r.at("version").integer();
  if (version != kSceneFormatVersion) {
    throw ParseError("field 'version': unsupported scene format version " + std::to_string(version));
  }
  SceneTimeline s;
  s.name = r.has("name") ? r.at("name").string() : "scene";
  const Reader cams = r.at("cameras");
  cams.array_size(kViewCount);
  for (std::size_t i = 0; i < kViewCount; ++i) {
    const Reader c = cams.at(i);
    CameraSpec cam;
    cam.view = parse_view(c.at("view").string());
    cam.fx = c.at("fx").number();
    cam.fy = c.at("fy").number();
    cam.cx = c.at("cx").number();
    cam.cy = c.at("cy").number();
    const Reader rot = c.at("rotation");
    rot.array_size(9);
    for (std::size_t k = 0; k < 9; ++k) {
      cam.rotation(static_cast<Eigen::Index>(k / 3), static_cast<Eigen::Index>(k % 3)) = rot.at(k).number();
    }
    cam.translation = c.at("translation").vec<3>();
    const int w = c.at("width").integer(), h = c.at("height").integer();
    if (w <= 0 || h <= 0) throw ParseError("field '" + c.path() + ".width/height' must be positive");
    cam.width = static_cast<std::size_t>(w);
    cam.height = static_cast<std::size_t>(h);
    s.cameras[i] = cam;
  }
  const Reader ts = r.at("frame_timestamps");
  for (std::size_t i = 0, n = ts.array_size(); i < n; ++i) s.frame_timestamps.push_back(ts.at(i).number());
  const Reader ticks = r.at("ticks");
  for (std::size_t k = 0, n = ticks.array_size(); k < n; ++k) {
    const Reader t = ticks.at(k);
    AnnotationTick tick;
    tick.t = t.at("t").number();
    tick.ego.velocity = t.at("ego").at("v").number();
    tick.ego.direction_angle = t.at("ego").at("phi").number();
    const Reader boxes = t.at("boxes");
    for (std::size_t b = 0, nb = boxes.array_size(); b < nb; ++b) {
      const Reader bj = boxes.at(b);
      Box3D box;
      box.center = bj.at("center").vec<3>();
      box.size = bj.at("size").vec<3>();
      box.yaw = bj.at("yaw").number();
      box.class_id = bj.at("class_id").integer();
      box.track_id = bj.at("track_id").integer();
      tick.boxes.push_back(box);
    }
    const Reader map = t.at("map");
    for (std::size_t m = 0, nm = map.array_size(); m < nm; ++m) {
      const Reader mj = map.at(m);
      MapElement el;
      el.class_id = mj.at("class_id").integer();
      el.closed = mj.at("closed").boolean();
      const Reader pts = mj.at("polyline");
      for (std::size_t p = 0, np = pts.array_size(); p < np; ++p) el.polyline.push_back(pts.at(p).vec<2>());
      tick.map.push_back(std::move(el));
    }
    s.ticks.push_back(std::move(tick));
  }
  s.validate();
  return s;
}

void save_scene(const SceneTimeline& scene, const std::filesystem::path& path) {
  scene.validate();
  json j = scene_to_json(scene);
  if (scene.has_frames()) {
    const std::string dir = path.stem().string() + "_frames";
    std::filesystem::create_directories(path.parent_path() / dir);
    json frames = json::object();
    for (ViewId v : kAllViews) {
      json list = json::array();
      for (std::size_t i = 0; i < scene.frame_count(); ++i) {
        const std::string rel = dir + "/" + frame_file(v, i);
        write_png(path.parent_path() / rel, scene.frames[view_index(v)][i]);
        list.push_back(rel);
      }
      frames[std::string(view_name(v))] = list;
    }
    j["frames"] = frames;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file " + path.string());
  out << j.dump(1) << "\n";
  if (!out) throw IoError("failed writing scene file " + path.string());
}

SceneTimeline load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  SceneTimeline s = scene_from_json(j);
  const Reader r(j, "");
  if (r.has("frames")) {
    const Reader frames = r.at("frames");
    for (ViewId v : kAllViews) {
      const Reader list = frames.at(std::string(view_name(v)));
      for (std::size_t i = 0, n = list.array_size(); i < n; ++i) {
        s.frames[view_index(v)].push_back(read_png(path.parent_path() / list.at(i).string()));
      }
    }
  }
  s.validate();
  return s;
}

}  // namespace ds
