#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <png.h>

#include "fusionvit/data.hpp"
#include "fusionvit/errors.hpp"

namespace fvit {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& tok, std::size_t line) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE) {
    throw ParseError("not a number: '" + tok + "'", line);
  }
  return v;
}

std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IngestError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw IngestError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<KittiLabel> read_kitti_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<KittiLabel> labels;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    const auto tok = split(text);
    if (tok.empty()) continue;
    // 15 fields, or 16 with a trailing detection score.
    if (tok.size() != 15 && tok.size() != 16) {
      throw ParseError("expected 15 fields, got " + std::to_string(tok.size()), line);
    }
    KittiLabel l;
    l.type = tok[0];
    l.truncation = parse_number(tok[1], line);
    const double occ = parse_number(tok[2], line);
    if (occ != std::floor(occ)) throw ParseError("occlusion must be an integer", line);
    l.occlusion = static_cast<int>(occ);
    l.alpha = parse_number(tok[3], line);
    for (int k = 0; k < 4; ++k) l.bbox[k] = parse_number(tok[4 + k], line);
    l.height = parse_number(tok[8], line);
    l.width = parse_number(tok[9], line);
    l.length = parse_number(tok[10], line);
    l.x = parse_number(tok[11], line);
    l.y = parse_number(tok[12], line);
    l.z = parse_number(tok[13], line);
    l.rotation_y = parse_number(tok[14], line);
    labels.push_back(l);
  }
  return labels;
}

void write_kitti_labels(const std::filesystem::path& path, const std::vector<KittiLabel>& labels) {
  auto out = open_out(path);
  for (const auto& l : labels) {
    out << l.type << ' ' << fmt(l.truncation) << ' ' << l.occlusion << ' ' << fmt(l.alpha);
    for (double b : l.bbox) out << ' ' << fmt(b);
    for (double v : {l.height, l.width, l.length, l.x, l.y, l.z, l.rotation_y}) out << ' ' << fmt(v);
    out << '\n';
  }
}

PointCloud read_velodyne(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw IngestError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16");
  }
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    float xyz[3];
    for (int k = 0; k < 3; ++k) {
      std::uint32_t raw;
      std::memcpy(&raw, bytes.data() + off + 4 * k, 4);
      if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap32(raw);
      xyz[k] = std::bit_cast<float>(raw);
    }
    cloud.points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  return cloud;
}

void write_velodyne(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path, std::ios::binary);
  for (const auto& p : cloud.points) {
    const float rec[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()), 0.0f};
    for (float f : rec) {
      std::uint32_t raw = std::bit_cast<std::uint32_t>(f);
      if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap32(raw);
      out.write(reinterpret_cast<const char*>(&raw), 4);
    }
  }
}

Calibration read_calibration(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::map<std::string, std::vector<double>> entries;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
      if (split(text).empty()) continue;
      throw ParseError("expected 'key: values'", line);
    }
    std::vector<double> values;
    for (const auto& tok : split(text.substr(colon + 1))) values.push_back(parse_number(tok, line));
    entries[text.substr(0, colon)] = std::move(values);
  }
  auto get = [&](std::initializer_list<const char*> keys, std::size_t n, bool required) -> const std::vector<double>* {
    for (const char* k : keys) {
      auto it = entries.find(k);
      if (it == entries.end()) continue;
      if (it->second.size() != n) {
        throw ParseError(std::string(k) + ": expected " + std::to_string(n) + " values", 0);
      }
      return &it->second;
    }
    if (required) throw ParseError(std::string("missing calibration entry ") + *keys.begin(), 0);
    return nullptr;
  };
  Calibration c;
  const auto* p2 = get({"P2"}, 12, true);
  const auto* tr = get({"Tr_velo_to_cam", "Tr_velo_cam"}, 12, true);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      c.p2(r, k) = (*p2)[r * 4 + k];
      c.velo_to_cam(r, k) = (*tr)[r * 4 + k];
    }
  }
  if (const auto* r0 = get({"R0_rect", "R_rect"}, 9, false)) {
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) c.r0_rect(r, k) = (*r0)[r * 3 + k];
    }
  }
  return c;
}

void write_calibration(const std::filesystem::path& path, const Calibration& calib) {
  auto out = open_out(path);
  auto row = [&](const char* key, const auto& m) {
    out << key << ':';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) out << ' ' << fmt(m(r, k));
    }
    out << '\n';
  };
  for (const char* key : {"P0", "P1", "P2", "P3"}) row(key, calib.p2);
  row("R0_rect", calib.r0_rect);
  row("Tr_velo_to_cam", calib.velo_to_cam);
  row("Tr_imu_to_velo", Eigen::Matrix<double, 3, 4>::Identity().eval());
}

Rgb8Image read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IngestError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Rgb8Image out{static_cast<int>(image.height), static_cast<int>(image.width),
                std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IngestError(path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IngestError(path.string() + ": " + image.message);
  }
}

// Assumes the usual lidar/camera axis convention (camera z forward = lidar x,
// camera y down = -lidar z), so yaw maps as theta = -ry - pi/2.
Box3D label_to_lidar_box(const KittiLabel& label, const Calibration& calib) {
  const Eigen::Vector3d centre = calib.rect_to_lidar({label.x, label.y - label.height / 2, label.z});
  return {centre.x(), centre.y(), centre.z(), label.length, label.width, label.height,
          wrap_angle(-label.rotation_y - kPi / 2)};
}

KittiLabel lidar_box_to_label(const Box3D& box, int label, const Box2D& box2d, const Calibration& calib) {
  KittiLabel l;
  l.type = class_name(label);
  const Eigen::Vector3d centre = calib.lidar_to_rect({box.cx, box.cy, box.cz});
  l.height = box.h;
  l.width = box.w;
  l.length = box.l;
  l.x = centre.x();
  l.y = centre.y() + box.h / 2;
  l.z = centre.z();
  l.rotation_y = wrap_angle(-box.theta - kPi / 2);
  l.alpha = wrap_angle(l.rotation_y - std::atan2(l.x, l.z));
  l.bbox = {box2d.cx - box2d.w / 2, box2d.cy - box2d.h / 2, box2d.cx + box2d.w / 2, box2d.cy + box2d.h / 2};
  return l;
}

SceneSample load_kitti(const std::filesystem::path& velodyne, const std::filesystem::path& label,
                       const std::filesystem::path& calib, const std::filesystem::path& image) {
  SceneSample s;
  s.scene_id = velodyne.stem().string();
  s.cloud = read_velodyne(velodyne);
  s.calib = read_calibration(calib);
  s.image = read_png(image);
  std::vector<Eigen::RowVectorXd> rows;
  for (const auto& l : read_kitti_labels(label)) {
    const auto cls = class_from_kitti(l.type);
    if (!cls) continue;
    const Box3D box = label_to_lidar_box(l, s.calib);
    if (!box.valid()) throw IngestError(label.string() + ": box with non-positive extent");
    rows.push_back(to_row(box));
    s.gt.labels.push_back(*cls);
    s.boxes_2d.push_back({(l.bbox[0] + l.bbox[2]) / 2, (l.bbox[1] + l.bbox[3]) / 2, l.bbox[2] - l.bbox[0],
                          l.bbox[3] - l.bbox[1]});
  }
  s.gt.mode = BoxMode::Spatial3D;
  s.gt.num_classes = kNumClasses;
  s.gt.boxes.resize(static_cast<Eigen::Index>(rows.size()), 7);
  for (std::size_t r = 0; r < rows.size(); ++r) s.gt.boxes.row(static_cast<Eigen::Index>(r)) = rows[r];
  s.point_counts = count_points_in_boxes(s.cloud, s.gt, 0.01);
  return s;
}

std::vector<std::string> KittiLayout::frame_ids() const {
  std::vector<std::string> ids;
  const auto dir = root / "velodyne";
  if (!std::filesystem::is_directory(dir)) throw IngestError("no velodyne directory under " + root.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".bin") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

SceneSample KittiLayout::load(const std::string& id) const {
  return load_kitti(velodyne(id), label(id), calib(id), image(id));
}

void KittiLayout::write(const SceneSample& s) const {
  write_velodyne(velodyne(s.scene_id), s.cloud);
  write_calibration(calib(s.scene_id), s.calib);
  write_png(image(s.scene_id), s.image);
  std::vector<KittiLabel> labels;
  for (Eigen::Index m = 0; m < s.gt.size(); ++m) {
    const Box2D b2 = static_cast<std::size_t>(m) < s.boxes_2d.size() ? s.boxes_2d[static_cast<std::size_t>(m)]
                                                                      : Box2D{0, 0, 0, 0};
    labels.push_back(lidar_box_to_label(to_box3d(s.gt.boxes.row(m)), s.gt.labels[static_cast<std::size_t>(m)], b2,
                                        s.calib));
  }
  write_kitti_labels(label(s.scene_id), labels);
}

}  // namespace fvit
