#include "nebula/scene/ply.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "nebula/core/binary_io.hpp"
#include "nebula/core/errors.hpp"

namespace nebula::scene {
namespace {

struct Property {
  std::string name;
  std::string type;
  std::size_t offset = 0;
};

std::size_t type_size(const std::string& t) {
  if (t == "float" || t == "float32" || t == "int" || t == "int32" || t == "uint" || t == "uint32") return 4;
  if (t == "double" || t == "float64") return 8;
  if (t == "uchar" || t == "uint8" || t == "char" || t == "int8") return 1;
  if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
  throw FormatError("PLY: unsupported property type '" + t + "'");
}

double read_as_double(const std::uint8_t* p, const std::string& t) {
  auto load = [p](auto v) {
    std::memcpy(&v, p, sizeof v);
    return static_cast<double>(v);
  };
  if (t == "float" || t == "float32") return load(float{});
  if (t == "double" || t == "float64") return load(double{});
  if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
  if (t == "char" || t == "int8") return load(std::int8_t{});
  if (t == "short" || t == "int16") return load(std::int16_t{});
  if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
  if (t == "int" || t == "int32") return load(std::int32_t{});
  return load(std::uint32_t{});
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<Gaussian> load_ply(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const std::size_t end = text.find("end_header\n");
  if (text.substr(0, 3) != "ply" || end == std::string_view::npos) throw FormatError("PLY: missing header in " + path);
  const std::size_t body = end + std::strlen("end_header\n");

  std::istringstream header{std::string(text.substr(0, end))};
  std::string line;
  std::vector<Property> props;
  std::size_t vertex_count = 0, stride = 0;
  bool in_vertex = false, seen_format = false;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt != "binary_little_endian") throw FormatError("PLY: only binary_little_endian is supported, got " + fmt);
      seen_format = true;
    } else if (kw == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = count;
    } else if (kw == "property" && in_vertex) {
      Property p;
      ls >> p.type;
      if (p.type == "list") throw FormatError("PLY: list properties are not supported on vertices");
      ls >> p.name;
      p.offset = stride;
      stride += type_size(p.type);
      props.push_back(p);
    }
  }
  if (!seen_format) throw FormatError("PLY: missing format line");

  std::map<std::string, const Property*> by_name;
  for (const auto& p : props) by_name[p.name] = &p;
  auto need = [&](const std::string& name) -> const Property& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("PLY: missing property '" + name + "'");
    return *it->second;
  };
  const char* required[] = {"x",       "y",       "z",       "opacity", "scale_0", "scale_1", "scale_2",
                            "rot_0",   "rot_1",   "rot_2",   "rot_3",   "f_dc_0",  "f_dc_1",  "f_dc_2"};
  for (const char* r : required) (void)need(r);

  std::size_t rest = 0;
  while (by_name.count("f_rest_" + std::to_string(rest))) ++rest;
  int degree = -1;
  for (int d = 0; d <= kMaxShDegree; ++d)
    if (rest == std::size_t(3 * (sh_coeff_count(d) - 1))) degree = d;
  if (degree < 0) throw FormatError("PLY: f_rest count " + std::to_string(rest) + " matches no SH degree");
  const std::size_t per_channel = sh_coeff_count(degree) - 1;

  if (bytes.size() - body < vertex_count * stride)
    throw FormatError("PLY: truncated vertex data in " + path);

  std::vector<Gaussian> out;
  out.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const std::uint8_t* rec = bytes.data() + body + i * stride;
    auto get = [&](const std::string& name) {
      const Property& p = need(name);
      const double v = read_as_double(rec + p.offset, p.type);
      if (std::isnan(v)) throw DataError("PLY: NaN in property '" + name + "' of record " + std::to_string(i));
      return v;
    };
    Gaussian g;
    g.id = static_cast<std::uint32_t>(i);
    g.position = Vec3(get("x"), get("y"), get("z"));
    g.scale = Vec3(std::exp(get("scale_0")), std::exp(get("scale_1")), std::exp(get("scale_2")));
    g.rotation = Quat(get("rot_0"), get("rot_1"), get("rot_2"), get("rot_3"));
    if (g.rotation.norm() == 0.0) throw DataError("PLY: zero quaternion in record " + std::to_string(i));
    g.rotation.normalize();
    g.opacity = sigmoid(get("opacity"));
    g.sh.assign(sh_coeff_count(degree), Vec3::Zero());
    g.sh[0] = Vec3(get("f_dc_0"), get("f_dc_1"), get("f_dc_2"));
    for (std::size_t k = 0; k < per_channel; ++k)
      for (int ch = 0; ch < 3; ++ch)
        g.sh[k + 1][ch] = get("f_rest_" + std::to_string(ch * per_channel + k));
    out.push_back(std::move(g));
  }
  return out;
}

void write_ply(const std::string& path, const std::vector<Gaussian>& gaussians) {
  const int degree = gaussians.empty() ? 0 : gaussians.front().sh_degree();
  const int per_channel = sh_coeff_count(degree) - 1;
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << gaussians.size() << "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"}) h << "property float " << p << "\n";
  for (int k = 0; k < 3 * per_channel; ++k) h << "property float f_rest_" << k << "\n";
  for (const char* p : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    h << "property float " << p << "\n";
  h << "end_header\n";

  ByteWriter w;
  w.tag(h.str());
  for (const Gaussian& g : gaussians) {
    NEBULA_EXPECT(g.sh_degree() == degree, "write_ply: mixed SH degrees");
    for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(g.position[k]));
    for (int k = 0; k < 3; ++k) w.f32(0.0f);
    for (int ch = 0; ch < 3; ++ch) w.f32(static_cast<float>(g.sh[0][ch]));
    for (int ch = 0; ch < 3; ++ch)
      for (int k = 0; k < per_channel; ++k) w.f32(static_cast<float>(g.sh[k + 1][ch]));
    const double o = std::clamp(g.opacity, 1e-7, 1.0 - 1e-7);
    w.f32(static_cast<float>(std::log(o / (1.0 - o))));
    for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(std::log(g.scale[k])));
    w.f32(static_cast<float>(g.rotation.w()));
    w.f32(static_cast<float>(g.rotation.x()));
    w.f32(static_cast<float>(g.rotation.y()));
    w.f32(static_cast<float>(g.rotation.z()));
  }
  write_file_bytes(path, w.data());
}

}  // namespace nebula::scene
