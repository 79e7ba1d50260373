#include "pivuq/flowdata.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

namespace pivuq {

namespace {

void require_finite(const Grid<double>& g, const char* what) {
  for (double x : g) {
    if (!std::isfinite(x)) throw ParameterError(std::string(what) + " contains a non-finite value");
  }
}

void require_same_shape(const Grid<double>& a, const Grid<double>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()));
  }
}

}  // namespace

FlowField::FlowField(Grid<double> u_, Grid<double> v_) : u(std::move(u_)), v(std::move(v_)) {
  validate();
}

void FlowField::validate() const {
  require_same_shape(u, v, "flow field");
  require_finite(u, "flow u");
  require_finite(v, "flow v");
}

UncertaintyField::UncertaintyField(Grid<double> su, Grid<double> sv)
    : sigma_u(std::move(su)), sigma_v(std::move(sv)) {
  validate();
}

UncertaintyField UncertaintyField::with_floor(Grid<double> su, Grid<double> sv, double floor) {
  for (double& s : su) s = std::max(s, floor);
  for (double& s : sv) s = std::max(s, floor);
  return UncertaintyField(std::move(su), std::move(sv));
}

void UncertaintyField::validate() const {
  require_same_shape(sigma_u, sigma_v, "uncertainty field");
  for (const auto* g : {&sigma_u, &sigma_v}) {
    for (double s : *g) {
      if (!std::isfinite(s) || s <= 0.0) {
        throw ParameterError("uncertainty must be finite and strictly positive");
      }
    }
  }
}

ImagePair::ImagePair(Image a, Image b) : frame_a(std::move(a)), frame_b(std::move(b)) {
  require_same_shape(frame_a, frame_b, "image pair");
  clamp_intensity(frame_a);
  clamp_intensity(frame_b);
}

void clamp_intensity(Image& img) {
  for (double& x : img) {
    if (std::isnan(x)) throw ParameterError("image contains NaN");
    x = std::clamp(x, 0.0, 255.0);
  }
}

ErrorField error_field(const FlowField& pred, const FlowField& gt) {
  require_same_shape(pred.u, gt.u, "error_field");
  Grid<double> eu(gt.width(), gt.height());
  Grid<double> ev(gt.width(), gt.height());
  for (std::size_t i = 0; i < eu.size(); ++i) {
    eu[i] = gt.u[i] - pred.u[i];
    ev[i] = gt.v[i] - pred.v[i];
  }
  return error_field_from_components(std::move(eu), std::move(ev));
}

ErrorField error_field_from_components(Grid<double> e_u, Grid<double> e_v) {
  require_same_shape(e_u, e_v, "error_field");
  Grid<double> epe(e_u.width(), e_u.height());
  for (std::size_t i = 0; i < epe.size(); ++i) epe[i] = std::hypot(e_u[i], e_v[i]);
  return ErrorField{std::move(e_u), std::move(e_v), std::move(epe)};
}

std::pair<double, double> rotate_vector(double u, double v, int quarter_turns) {
  switch (((quarter_turns % 4) + 4) % 4) {
    case 1: return {v, -u};
    case 2: return {-u, -v};
    case 3: return {-v, u};
    default: return {u, v};
  }
}

FlowField rotate_flow(const FlowField& flow, int quarter_turns) {
  FlowField out;
  out.u = rotate_quarter_turns(flow.u, quarter_turns);
  out.v = rotate_quarter_turns(flow.v, quarter_turns);
  for (std::size_t i = 0; i < out.u.size(); ++i) {
    std::tie(out.u[i], out.v[i]) = rotate_vector(out.u[i], out.v[i], quarter_turns);
  }
  return out;
}

UncertaintyField rotate_uncertainty(const UncertaintyField& unc, int quarter_turns) {
  UncertaintyField out;
  out.sigma_u = rotate_quarter_turns(unc.sigma_u, quarter_turns);
  out.sigma_v = rotate_quarter_turns(unc.sigma_v, quarter_turns);
  if (((quarter_turns % 2) + 2) % 2 == 1) std::swap(out.sigma_u, out.sigma_v);
  return out;
}

// ---- binary helpers --------------------------------------------------------

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint32_t load_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

void store_u32(std::vector<unsigned char>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(x >> (8 * i)));
}

float load_f32(const unsigned char* p) { return std::bit_cast<float>(load_u32(p)); }
void store_f32(std::vector<unsigned char>& out, float x) { store_u32(out, std::bit_cast<std::uint32_t>(x)); }

struct TwoBand {
  Grid<double> first;
  Grid<double> second;
};

TwoBand read_two_band(const std::filesystem::path& path, float magic, float other_magic,
                      const char* kind) {
  const auto bytes = slurp(path);
  if (bytes.size() < 4) throw FormatError(std::string(kind) + ": truncated tag", bytes.size());
  const float tag = load_f32(bytes.data());
  if (tag != magic) {
    if (tag == other_magic) {
      throw TypeConfusionError(std::string(kind) + ": file carries the tag of the other two-band format",
                               0);
    }
    throw FormatError(std::string(kind) + ": bad magic number", 0);
  }
  if (bytes.size() < 12) throw FormatError(std::string(kind) + ": truncated header", bytes.size());
  const auto width = static_cast<std::int32_t>(load_u32(bytes.data() + 4));
  const auto height = static_cast<std::int32_t>(load_u32(bytes.data() + 8));
  if (width <= 0) throw FormatError(std::string(kind) + ": nonpositive width", 4);
  if (height <= 0) throw FormatError(std::string(kind) + ": nonpositive height", 8);
  const std::uint64_t expected = 12 + std::uint64_t{8} * static_cast<std::uint64_t>(width) *
                                          static_cast<std::uint64_t>(height);
  if (bytes.size() < expected) throw FormatError(std::string(kind) + ": truncated payload", bytes.size());
  if (bytes.size() > expected) throw FormatError(std::string(kind) + ": trailing bytes", expected);

  TwoBand out{Grid<double>(width, height), Grid<double>(width, height)};
  const unsigned char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < out.first.size(); ++i, p += 8) {
    out.first[i] = load_f32(p);
    out.second[i] = load_f32(p + 4);
    if (!std::isfinite(out.first[i]) || !std::isfinite(out.second[i])) {
      const auto at = static_cast<std::size_t>(p - bytes.data()) + (std::isfinite(out.first[i]) ? 4 : 0);
      throw FormatError(std::string(kind) + ": non-finite value", at);
    }
  }
  return out;
}

void write_two_band(const Grid<double>& a, const Grid<double>& b, float magic,
                    const std::filesystem::path& path) {
  std::vector<unsigned char> out;
  out.reserve(12 + 8 * a.size());
  store_f32(out, magic);
  store_u32(out, static_cast<std::uint32_t>(a.width()));
  store_u32(out, static_cast<std::uint32_t>(a.height()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    store_f32(out, static_cast<float>(a[i]));
    store_f32(out, static_cast<float>(b[i]));
  }
  dump(path, out);
}

}  // namespace

FlowField read_flo(const std::filesystem::path& path) {
  auto bands = read_two_band(path, kFloMagic, kUncMagic, "flo");
  return FlowField(std::move(bands.first), std::move(bands.second));
}

void write_flo(const FlowField& field, const std::filesystem::path& path) {
  field.validate();
  write_two_band(field.u, field.v, kFloMagic, path);
}

UncertaintyField read_unc(const std::filesystem::path& path) {
  auto bands = read_two_band(path, kUncMagic, kFloMagic, "unc");
  for (const auto* g : {&bands.first, &bands.second}) {
    for (double s : *g) {
      if (s <= 0.0) throw FormatError("unc: nonpositive sigma", 12);
    }
  }
  return UncertaintyField(std::move(bands.first), std::move(bands.second));
}

void write_unc(const UncertaintyField& field, const std::filesystem::path& path) {
  field.validate();
  write_two_band(field.sigma_u, field.sigma_v, kUncMagic, path);
}

// ---- PGM -------------------------------------------------------------------

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok += static_cast<char>(bytes[pos++]);
  if (tok.empty()) throw FormatError("pgm: truncated header", pos);
  return tok;
}

int pgm_int(const std::vector<unsigned char>& bytes, std::size_t& pos, const char* what) {
  const std::size_t start = pos;
  const std::string tok = pgm_token(bytes, pos);
  if (tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
    throw FormatError(std::string("pgm: invalid ") + what, start);
  }
  return std::stoi(tok);
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("pgm: not a P5 file", 0);
  pos = 2;
  const int width = pgm_int(bytes, pos, "width");
  const int height = pgm_int(bytes, pos, "height");
  const std::size_t maxval_pos = pos;
  const int maxval = pgm_int(bytes, pos, "maxval");
  if (width <= 0 || height <= 0) throw FormatError("pgm: nonpositive dimensions", maxval_pos);
  if (maxval != 255) throw FormatError("pgm: maxval must be 255", maxval_pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pgm: missing header terminator", pos);
  ++pos;
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos < n) throw FormatError("pgm: truncated raster", bytes.size());
  if (bytes.size() - pos > n) throw FormatError("pgm: trailing bytes", pos + n);
  Image img(width, height);
  for (std::size_t i = 0; i < n; ++i) img[i] = bytes[pos + i];
  return img;
}

void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ostringstream header;
  header << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  const std::string h = header.str();
  std::vector<unsigned char> out(h.begin(), h.end());
  out.reserve(out.size() + img.size());
  for (double x : img) {
    const double clamped = std::clamp(std::isnan(x) ? 0.0 : x, 0.0, 255.0);
    out.push_back(static_cast<unsigned char>(std::lround(clamped)));
  }
  dump(path, out);
}

}  // namespace pivuq
