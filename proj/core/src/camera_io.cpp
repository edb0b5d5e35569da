#include "mvsr/camera_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mvsr {

namespace {

std::string read_line(std::istream& in, const std::string& path, int line_no) {
  std::string line;
  if (!std::getline(in, line))
    fail(path + ":" + std::to_string(line_no) + ": unexpected end of file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

void parse_row(const std::string& line, const std::string& path, int line_no,
               double* out, int n) {
  std::istringstream ss(line);
  for (int i = 0; i < n; ++i) {
    if (!(ss >> out[i]))
      fail(path + ":" + std::to_string(line_no) + ": expected " +
           std::to_string(n) + " numbers");
  }
}

}  // namespace

CameraFile read_camera_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open camera file: " + path);

  int ln = 1;
  std::string header = read_line(in, path, ln);
  check(header == "extrinsic", path + ":1: expected 'extrinsic'");

  double m[4][4];
  for (int r = 0; r < 4; ++r) parse_row(read_line(in, path, ++ln), path, ln, m[r], 4);
  check(std::abs(m[3][0]) + std::abs(m[3][1]) + std::abs(m[3][2]) < 1e-9 &&
            std::abs(m[3][3] - 1.0) < 1e-9,
        path + ": extrinsic last row must be 0 0 0 1");

  read_line(in, path, ++ln);  // blank
  header = read_line(in, path, ++ln);
  check(header == "intrinsic", path + ":" + std::to_string(ln) + ": expected 'intrinsic'");

  double k[3][3];
  for (int r = 0; r < 3; ++r) parse_row(read_line(in, path, ++ln), path, ln, k[r], 3);
  check(std::abs(k[0][1]) < 1e-9, path + ": skewed intrinsics are not supported");

  read_line(in, path, ++ln);  // blank
  double range[2];
  parse_row(read_line(in, path, ++ln), path, ln, range, 2);
  check(range[0] > 0 && range[1] > range[0],
        path + ": depth range must satisfy 0 < dmin < dmax");

  CameraFile out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.extr.R(r, c) = m[r][c];
    out.extr.t(r) = m[r][3];
  }
  out.intr.fx = k[0][0];
  out.intr.fy = k[1][1];
  out.intr.cx = k[0][2];
  out.intr.cy = k[1][2];
  out.dmin = range[0];
  out.dmax = range[1];
  return out;
}

void write_camera_file(const std::string& path, const CameraFile& cam) {
  std::ofstream out(path);
  check(out.good(), "cannot write camera file: " + path);
  out.precision(17);
  out << "extrinsic\n";
  for (int r = 0; r < 3; ++r) {
    out << cam.extr.R(r, 0) << " " << cam.extr.R(r, 1) << " " << cam.extr.R(r, 2)
        << " " << cam.extr.t(r) << "\n";
  }
  out << "0 0 0 1\n\n";
  out << "intrinsic\n";
  out << cam.intr.fx << " 0 " << cam.intr.cx << "\n";
  out << "0 " << cam.intr.fy << " " << cam.intr.cy << "\n";
  out << "0 0 1\n\n";
  out << cam.dmin << " " << cam.dmax << "\n";
  check(out.good(), "short write: " + path);
}

Camera make_camera(const CameraFile& file, int width, int height) {
  Camera cam;
  cam.intr = file.intr;
  cam.extr = file.extr;
  cam.width = width;
  cam.height = height;
  validate_camera(cam);
  cam.extr.R = orthonormalize(cam.extr.R);
  return cam;
}

}  // namespace mvsr
