#include "udc/lidarsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "udc/errors.hpp"
#include "udc/pnm_io.hpp"
#include "udc/rng.hpp"

namespace udc {

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  double albedo = 0.0;
};

double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

// Lane markings make the road texture informative for the guide.
double ground_albedo(const GroundPlane& g, const Vec3& p) {
  for (double lane : {-1.8, 1.8}) {
    if (std::abs(p.x - lane) < 0.08 && std::fmod(p.z, 6.0) < 3.0) return 0.9;
  }
  return g.albedo;
}

std::optional<Hit> intersect(const GroundPlane& g, const Vec3& d) {
  if (d.y >= 0.0 || g.height >= 0.0) return std::nullopt;
  const double t = g.height / d.y;
  const Vec3 p{t * d.x, t * d.y, t * d.z};
  return Hit{t, {0.0, 1.0, 0.0}, ground_albedo(g, p)};
}

std::optional<Hit> intersect(const Box& b, const Vec3& d) {
  // Rotate the ray (origin at 0) into the box frame.
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec3 o{-b.center.x, -b.center.y, -b.center.z};
  const Vec3 ol{c * o.x - s * o.z, o.y, s * o.x + c * o.z};
  const Vec3 dl{c * d.x - s * d.z, d.y, s * d.x + c * d.z};
  const double orig[3] = {ol.x, ol.y, ol.z};
  const double dir[3] = {dl.x, dl.y, dl.z};
  const double half[3] = {b.half_size.x, b.half_size.y, b.half_size.z};
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  double axis_sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (std::abs(orig[a]) > half[a]) return std::nullopt;
      continue;
    }
    double t0 = (-half[a] - orig[a]) / dir[a];
    double t1 = (half[a] - orig[a]) / dir[a];
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
      axis_sign = sign;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis < 0 || t_near > t_far || t_near <= 0.0) return std::nullopt;
  Vec3 nl;
  (axis == 0 ? nl.x : axis == 1 ? nl.y : nl.z) = axis_sign;
  // Back to the camera frame.
  const Vec3 n{c * nl.x + s * nl.z, nl.y, -s * nl.x + c * nl.z};
  return Hit{t_near, n, b.albedo};
}

std::optional<Hit> intersect(const Pole& p, const Vec3& d) {
  const double a = d.x * d.x + d.z * d.z;
  const double b = -2.0 * (d.x * p.x + d.z * p.z);
  const double c = p.x * p.x + p.z * p.z - p.radius * p.radius;
  const double disc = b * b - 4.0 * a * c;
  if (a <= 0.0 || disc < 0.0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  if (t <= 0.0) return std::nullopt;
  const double y = t * d.y;
  if (y < p.bottom || y > p.top) return std::nullopt;
  const Vec3 n{(t * d.x - p.x) / p.radius, 0.0, (t * d.z - p.z) / p.radius};
  return Hit{t, n, p.albedo};
}

std::optional<Hit> cast(const Scene& scene, const Vec3& d) {
  std::optional<Hit> best;
  for (const Primitive& prim : scene.primitives) {
    const auto hit = std::visit([&d](const auto& p) { return intersect(p, d); }, prim);
    if (hit && (!best || hit->t < best->t)) best = hit;
  }
  // With a z-unit ray, t is the z depth.
  if (best && best->t >= kFarPlane) best.reset();
  return best;
}

constexpr double kSkyIntensity = 0.95;

double shade(const Hit& hit) {
  static const Vec3 light = [] {
    const Vec3 l{-0.4, 0.8, -0.45};
    const double n = std::sqrt(dot(l, l));
    return Vec3{l.x / n, l.y / n, l.z / n};
  }();
  const double lambert = std::max(0.0, dot(hit.normal, light));
  return std::clamp(hit.albedo * (0.3 + 0.7 * lambert), 0.0, 1.0);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

PinholeCamera PinholeCamera::for_size(int height, int width) {
  if (height <= 0 || width <= 0) {
    throw std::invalid_argument("camera dimensions must be positive");
  }
  PinholeCamera cam;
  cam.width = width;
  cam.height = height;
  cam.focal = 0.59375 * width;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  return cam;
}

Vec3 PinholeCamera::ray(int row, int col) const {
  return {(col + 0.5 - cx) / focal, -(row + 0.5 - cy) / focal, 1.0};
}

DepthGrid render_gt(const Scene& scene) {
  const PinholeCamera& cam = scene.camera;
  DepthGrid depth(cam.height, cam.width, kFarPlane);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      if (const auto hit = cast(scene, cam.ray(r, c))) depth.at(r, c) = hit->t;
    }
  }
  return depth;
}

GuideImage render_guide(const Scene& scene) {
  const PinholeCamera& cam = scene.camera;
  GuideImage guide(cam.height, cam.width, 1, kSkyIntensity);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      if (const auto hit = cast(scene, cam.ray(r, c))) {
        guide.at(0, r, c) = shade(*hit);
      }
    }
  }
  return guide;
}

void validate(const ScanConfig& cfg) {
  if (cfg.n_beams < 1) throw std::invalid_argument("n_beams must be >= 1");
  if (!(cfg.azimuth_step > 0.0)) {
    throw std::invalid_argument("azimuth_step must be > 0");
  }
  if (!(cfg.vertical_fov_max > cfg.vertical_fov_min)) {
    throw std::invalid_argument("vertical fov must have max > min");
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
    throw std::invalid_argument("dropout must be in [0, 1)");
  }
  if (!(cfg.mount_forward >= 0.0)) {
    throw std::invalid_argument("mount_forward must be >= 0");
  }
}

void validate(const CorruptionConfig& cfg) {
  if (!(cfg.outlier_rate >= 0.0 && cfg.outlier_rate < 1.0)) {
    throw std::invalid_argument("outlier_rate must be in [0, 1)");
  }
  if (!(cfg.gt_density > 0.0 && cfg.gt_density <= 1.0)) {
    throw std::invalid_argument("gt_density must be in (0, 1]");
  }
  if (cfg.outlier_shift < 1) {
    throw std::invalid_argument("outlier_shift must be >= 1");
  }
}

SparseDepthGrid simulate_scan(const DepthGrid& gt, const PinholeCamera& camera,
                              const ScanConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (!gt.same_shape(camera.height, camera.width)) {
    throw std::invalid_argument("simulate_scan: camera and depth sizes differ");
  }
  const double beam_step =
      (cfg.vertical_fov_max - cfg.vertical_fov_min) / cfg.n_beams;
  const int half_cells =
      static_cast<int>(std::ceil(0.5 * std::numbers::pi / cfg.azimuth_step)) + 1;
  const int az_cells = 2 * half_cells + 1;

  struct Candidate {
    double err = std::numeric_limits<double>::infinity();
    double range = 0.0;
    std::size_t pixel = 0;
  };
  std::vector<Candidate> cells(static_cast<std::size_t>(az_cells) * cfg.n_beams);

  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      const double z = gt.at(r, c);
      if (!(z > 0.0) || z >= kFarPlane) continue;
      const Vec3 ray = camera.ray(r, c);
      const Vec3 q{ray.x * z, ray.y * z, z - cfg.mount_forward};
      if (q.z <= 0.1) continue;
      const double horiz = std::hypot(q.x, q.z);
      const double azimuth = std::atan2(q.x, q.z);
      const double elevation = std::atan2(q.y, horiz);
      const int beam = static_cast<int>(
          std::floor((elevation - cfg.vertical_fov_min) / beam_step));
      if (beam < 0 || beam >= cfg.n_beams) continue;
      const int az = static_cast<int>(std::lround(azimuth / cfg.azimuth_step));
      const double beam_elev = cfg.vertical_fov_min + (beam + 0.5) * beam_step;
      const double d_az = (azimuth - az * cfg.azimuth_step) * std::cos(elevation);
      const double d_el = elevation - beam_elev;
      const double err = d_az * d_az + d_el * d_el;
      const double range = std::hypot(horiz, q.y);
      const std::size_t pixel = static_cast<std::size_t>(r) * gt.width() + c;
      Candidate& cell =
          cells[static_cast<std::size_t>(az + half_cells) * cfg.n_beams + beam];
      // Earlier pixels win exact ties (raster scan order).
      if (err < cell.err || (err == cell.err && range < cell.range)) {
        cell = {err, range, pixel};
      }
    }
  }

  std::vector<std::uint8_t> hit(gt.size(), 0);
  for (const Candidate& cell : cells) {
    if (std::isfinite(cell.err)) hit[cell.pixel] = 1;
  }
  const CounterRng rng(seed, 0, RngOp::kScan);
  SparseDepthGrid out(gt.height(), gt.width());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (hit[i] && rng.uniform_at(i) >= cfg.dropout) out.set(i, gt[i]);
  }
  return out;
}

std::vector<std::pair<int, int>> outlier_offsets(int shift) {
  std::vector<std::pair<int, int>> out;
  for (int dy = -shift; dy <= shift; ++dy) {
    for (int dx = -shift; dx <= shift; ++dx) {
      const int d2 = dx * dx + dy * dy;
      if (d2 > 0 && d2 <= shift * shift) out.emplace_back(dx, dy);
    }
  }
  return out;
}

SparseDepthGrid corrupt_gt(const DepthGrid& gt, const CorruptionConfig& cfg,
                           std::uint64_t seed) {
  validate(cfg);
  const auto offsets = outlier_offsets(cfg.outlier_shift);
  const CounterRng rng(seed, 0, RngOp::kCorrupt);
  SparseDepthGrid out(gt.height(), gt.width());
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * gt.width() + c;
      if (rng.uniform_at(3 * i) >= cfg.gt_density) continue;
      double depth = gt[i];
      if (rng.uniform_at(3 * i + 1) < cfg.outlier_rate) {
        const auto [dx, dy] = offsets[rng.bits_at(3 * i + 2) % offsets.size()];
        const int rr = std::clamp(r + dy, 0, gt.height() - 1);
        const int cc = std::clamp(c + dx, 0, gt.width() - 1);
        depth = gt.at(rr, cc);
      }
      out.set(i, depth);
    }
  }
  return out;
}

Scene random_scene(const DatasetConfig& cfg, std::uint64_t seed, int frame) {
  CounterRng rng(seed, static_cast<std::uint64_t>(frame), RngOp::kScene);
  Scene scene;
  scene.camera = PinholeCamera::for_size(cfg.height, cfg.width);
  const double ground = -rng.uniform(1.55, 1.75);
  scene.primitives.push_back(GroundPlane{ground, rng.uniform(0.25, 0.45)});

  // Back wall tall and wide enough to close every ray above the ground.
  const double wall_z = rng.uniform(40.0, 70.0);
  scene.primitives.push_back(Box{{rng.uniform(-5.0, 5.0), ground + 20.0, wall_z + 1.0},
                                 {90.0, 25.0, 1.0},
                                 0.0,
                                 rng.uniform(0.3, 0.8)});

  // Buildings along either side of the road.
  for (double side : {-1.0, 1.0}) {
    if (rng.uniform() < 0.6) {
      const double h = rng.uniform(4.0, 12.0);
      const double half_z = rng.uniform(3.0, 10.0);
      const double z = rng.uniform(12.0, std::max(13.0, wall_z - half_z - 2.0));
      scene.primitives.push_back(Box{{side * rng.uniform(8.0, 13.0), ground + 0.5 * h, z},
                                     {2.0, 0.5 * h, half_z},
                                     0.0,
                                     rng.uniform(0.2, 0.9)});
    }
  }

  const int cars = 2 + static_cast<int>(rng.below(4));
  for (int i = 0; i < cars; ++i) {
    const double h = rng.uniform(1.4, 1.8);
    scene.primitives.push_back(Box{{rng.uniform(-8.0, 8.0), ground + 0.5 * h,
                                    rng.uniform(7.0, 30.0)},
                                   {rng.uniform(0.8, 1.0), 0.5 * h, rng.uniform(1.8, 2.4)},
                                   rng.uniform(-0.3, 0.3),
                                   rng.uniform(0.2, 0.9)});
  }

  const int poles = 1 + static_cast<int>(rng.below(4));
  for (int i = 0; i < poles; ++i) {
    scene.primitives.push_back(Pole{rng.uniform(-9.0, 9.0), rng.uniform(7.0, 35.0),
                                    rng.uniform(0.1, 0.3), ground,
                                    ground + rng.uniform(3.0, 7.0),
                                    rng.uniform(0.4, 0.9)});
  }
  return scene;
}

Frame generate_frame(const DatasetConfig& cfg, std::uint64_t seed, int frame) {
  const Scene scene = random_scene(cfg, seed, frame);
  const DepthGrid clean = render_gt(scene);
  const std::uint64_t frame_key = stream_key(seed, static_cast<std::uint64_t>(frame), 0);
  Frame out;
  char name[32];
  std::snprintf(name, sizeof name, "frame_%04d", frame);
  out.name = name;
  out.guide = decode_guide(encode_guide(render_guide(scene)));
  out.sparse = quantize_depth(simulate_scan(clean, scene.camera, cfg.scan, frame_key));
  out.gt_semi = quantize_depth(corrupt_gt(clean, cfg.corruption, frame_key));
  out.gt_clean = quantize_depth(SparseDepthGrid(clean));
  return out;
}

Manifest gen_dataset(int n_frames, std::uint64_t seed,
                     const std::filesystem::path& out_dir,
                     const DatasetConfig& cfg) {
  if (n_frames < 1) throw std::invalid_argument("n_frames must be >= 1");
  validate(cfg.scan);
  validate(cfg.corruption);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest manifest;
  manifest.path = out_dir / "manifest.txt";
  for (int f = 0; f < n_frames; ++f) {
    const Frame frame = generate_frame(cfg, seed, f);
    const auto dir = out_dir / frame.name;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_guide(dir / "guide.pgm", frame.guide);
    write_depth_pgm(dir / "sparse.pgm", frame.sparse);
    write_depth_pgm(dir / "gt_semi.pgm", frame.gt_semi);
    write_depth_pgm(dir / "gt_clean.pgm", frame.gt_clean);
    manifest.frames.push_back(frame.name);
  }

  std::ofstream out(manifest.path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest.path.string());
  const PinholeCamera cam = PinholeCamera::for_size(cfg.height, cfg.width);
  out << "seed=" << seed << "\n"
      << "frames=" << n_frames << "\n"
      << "height=" << cfg.height << "\n"
      << "width=" << cfg.width << "\n"
      << "focal=" << fmt_double(cam.focal) << "\n"
      << "n_beams=" << cfg.scan.n_beams << "\n"
      << "azimuth_step=" << fmt_double(cfg.scan.azimuth_step) << "\n"
      << "vertical_fov_min=" << fmt_double(cfg.scan.vertical_fov_min) << "\n"
      << "vertical_fov_max=" << fmt_double(cfg.scan.vertical_fov_max) << "\n"
      << "dropout=" << fmt_double(cfg.scan.dropout) << "\n"
      << "mount_forward=" << fmt_double(cfg.scan.mount_forward) << "\n"
      << "outlier_rate=" << fmt_double(cfg.corruption.outlier_rate) << "\n"
      << "outlier_shift=" << cfg.corruption.outlier_shift << "\n"
      << "gt_density=" << fmt_double(cfg.corruption.gt_density) << "\n";
  for (const auto& name : manifest.frames) out << "frame=" << name << "\n";
  if (!out) throw IoError("write failed for " + manifest.path.string());
  return manifest;
}

Frame load_frame(const std::filesystem::path& frame_dir) {
  if (!std::filesystem::is_directory(frame_dir)) {
    throw IoError("missing frame directory " + frame_dir.string());
  }
  Frame f;
  f.name = frame_dir.filename().string();
  f.guide = read_guide(frame_dir / "guide.pgm");
  f.sparse = read_depth_pgm(frame_dir / "sparse.pgm");
  f.gt_semi = read_depth_pgm(frame_dir / "gt_semi.pgm");
  f.gt_clean = read_depth_pgm(frame_dir / "gt_clean.pgm");
  if (!f.guide.same_shape(f.sparse) || !f.sparse.depth().same_shape(f.gt_semi) ||
      !f.sparse.depth().same_shape(f.gt_clean)) {
    throw IoError("inconsistent image sizes in " + frame_dir.string());
  }
  return f;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("missing dataset directory " + dir.string());
  }
  std::vector<std::string> names;
  const auto manifest = dir / "manifest.txt";
  if (std::filesystem::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("frame=", 0) == 0) names.push_back(line.substr(6));
    }
  } else {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (entry.is_directory() && name.rfind("frame_", 0) == 0) names.push_back(name);
    }
    std::sort(names.begin(), names.end());
  }
  if (names.empty()) throw IoError("no frames in " + dir.string());
  Dataset data;
  data.reserve(names.size());
  for (const auto& name : names) data.push_back(load_frame(dir / name));
  return data;
}

}  // namespace udc
