#include "nebula/codec/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "nebula/core/binary_io.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/core/parallel.hpp"

namespace nebula::codec {

// ---------------------------------------------------------------------------
// Codebook

Codebook::Codebook(int dim, std::vector<float> entries) : dim_(dim), entries_(std::move(entries)) {
  NEBULA_EXPECT(dim > 0 && dim % 3 == 0, "codebook: dimension must be a positive multiple of 3");
  NEBULA_EXPECT(!entries_.empty() && entries_.size() % dim == 0, "codebook: entry array does not match dimension");
  NEBULA_EXPECT(size() <= kMaxCodebookSize, "codebook: more than 65536 entries");
  for (float v : entries_) NEBULA_EXPECT(std::isfinite(v), "codebook: non-finite entry");
  (void)sh_degree();
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(dim_));
  for (float v : entries_) w.f32(v);
  const std::uint64_t h = fnv1a(w.data());
  version_ = static_cast<std::uint32_t>(h ^ (h >> 32));
}

int Codebook::sh_degree() const {
  for (int d = 0; d <= kMaxShDegree; ++d)
    if (3 * sh_coeff_count(d) == dim_) return d;
  throw ContractViolation("codebook: dimension " + std::to_string(dim_) + " matches no SH degree");
}

std::uint32_t Codebook::nearest(std::span<const double> v) const {
  NEBULA_EXPECT(static_cast<int>(v.size()) == dim_, "codebook: query dimension mismatch");
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < size(); ++k) {
    const float* e = entries_.data() + k * dim_;
    double d = 0.0;
    for (int j = 0; j < dim_; ++j) {
      const double diff = v[j] - e[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return best;
}

std::vector<double> flatten_sh(const Gaussian& g) {
  std::vector<double> out;
  out.reserve(3 * g.sh.size());
  for (const Vec3& c : g.sh) out.insert(out.end(), {c.x(), c.y(), c.z()});
  return out;
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double sq_dist(const double* a, const double* b, int dim) {
  double d = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double t = a[j] - b[j];
    d += t * t;
  }
  return d;
}

}  // namespace

Codebook train_codebook(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                        const TrainOptions& options, std::vector<double>* distortion) {
  NEBULA_EXPECT(!vectors.empty(), "train_codebook: empty input");
  NEBULA_EXPECT(k >= 1 && k <= kMaxCodebookSize, "train_codebook: K must be in [1, 65536]");
  const int dim = static_cast<int>(vectors.front().size());
  for (const auto& v : vectors) NEBULA_EXPECT(static_cast<int>(v.size()) == dim, "train_codebook: ragged input");

  std::mt19937_64 rng(seed);

  // Subsample, then flatten.
  std::vector<std::size_t> pick(vectors.size());
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  if (pick.size() > options.max_samples) {
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(options.max_samples);
    std::sort(pick.begin(), pick.end());
  }
  const std::size_t n = pick.size();
  std::vector<double> data(n * dim);
  for (std::size_t i = 0; i < n; ++i) std::copy(vectors[pick[i]].begin(), vectors[pick[i]].end(), data.begin() + i * dim);
  auto row = [&](std::size_t i) { return data.data() + i * dim; };

  // Distinct inputs, in first-seen order.
  std::map<std::vector<double>, std::size_t> seen;
  std::vector<std::size_t> distinct;
  for (std::size_t i = 0; i < n && distinct.size() <= k; ++i)
    if (seen.emplace(std::vector<double>(row(i), row(i) + dim), i).second) distinct.push_back(i);

  std::vector<double> centers(k * dim);
  auto center = [&](std::size_t c) { return centers.data() + c * dim; };

  if (distinct.size() <= k) {
    // Every distinct vector gets its own entry; the rest repeat them.
    for (std::size_t c = 0; c < k; ++c) std::copy(row(distinct[c % distinct.size()]), row(distinct[c % distinct.size()]) + dim, center(c));
    if (distortion) distortion->assign(1, 0.0);
  } else {
    // k-means++ seeding.
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::copy(row(first), row(first) + dim, center(0));
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], sq_dist(row(i), center(c - 1), dim));
        total += d2[i];
      }
      std::size_t chosen = n - 1;
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        if (u < d2[i]) {
          chosen = i;
          break;
        }
        u -= d2[i];
      }
      while (d2[chosen] <= 0.0) --chosen;  // rounding fell off the end
      std::copy(row(chosen), row(chosen) + dim, center(c));
    }

    std::vector<std::uint32_t> assign(n, 0);
    std::vector<double> err(n, 0.0);
    if (distortion) distortion->clear();
    for (int it = 0; it < options.max_iterations; ++it) {
      parallel_dispatch((n + 1023) / 1024, options.workers, [&](std::size_t b, int) {
        for (std::size_t i = b * 1024; i < std::min(n, b * 1024 + 1024); ++i) {
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t c = 0; c < k; ++c) {
            const double d = sq_dist(row(i), center(c), dim);
            if (d < best) {
              best = d;
              assign[i] = static_cast<std::uint32_t>(c);
            }
          }
          err[i] = best;
        }
      });
      std::vector<double> sums(k * dim, 0.0);
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        ++counts[assign[i]];
        for (int j = 0; j < dim; ++j) sums[assign[i] * dim + j] += row(i)[j];
      }
      double moved = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;  // empty cluster keeps its centroid
        double m = 0.0;
        for (int j = 0; j < dim; ++j) {
          const double v = sums[c * dim + j] / static_cast<double>(counts[c]);
          m += (v - center(c)[j]) * (v - center(c)[j]);
          center(c)[j] = v;
        }
        moved = std::max(moved, std::sqrt(m));
      }
      if (distortion) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += sq_dist(row(i), center(assign[i]), dim);
        distortion->push_back(total / static_cast<double>(n));
      }
      if (moved < options.tolerance) break;
    }
  }

  std::vector<float> entries(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) entries[i] = static_cast<float>(centers[i]);
  return Codebook(dim, std::move(entries));
}

std::vector<std::uint8_t> encode_codebook(const Codebook& book) {
  ByteWriter w;
  w.tag("NCBK");
  w.u32(kCodebookFormatVersion);
  w.u32(static_cast<std::uint32_t>(book.size()));
  w.u32(static_cast<std::uint32_t>(book.dim()));
  for (float v : book.entries()) w.f32(v);
  return std::move(w).take();
}

Codebook decode_codebook(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("NCBK");
  const std::uint32_t version = r.u32();
  if (version != kCodebookFormatVersion)
    throw ProtocolError("codebook: unsupported format version " + std::to_string(version), r.offset() - 4);
  const std::uint32_t k = r.u32();
  const std::uint32_t dim = r.u32();
  if (k == 0 || k > kMaxCodebookSize || dim == 0 || dim % 3 != 0 || dim > 3 * 16)
    throw ProtocolError("codebook: bad shape " + std::to_string(k) + "x" + std::to_string(dim), r.offset() - 8);
  std::vector<float> entries(std::size_t(k) * dim);
  for (float& v : entries) {
    v = r.f32();
    if (!std::isfinite(v)) throw ProtocolError("codebook: non-finite entry", r.offset() - 4);
  }
  if (r.remaining()) throw ProtocolError("codebook: trailing bytes", r.offset());
  return Codebook(static_cast<int>(dim), std::move(entries));
}

void save_codebook(const std::string& path, const Codebook& book) { write_file_bytes(path, encode_codebook(book)); }

Codebook load_codebook(const std::string& path) { return decode_codebook(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Fixed point

QuantParams QuantParams::fit(std::span<const Gaussian> gaussians) {
  QuantParams p;
  if (gaussians.empty()) return p;
  p.box_min = Vec3::Constant(std::numeric_limits<double>::infinity());
  p.box_max = -p.box_min;
  p.log_scale_min = std::numeric_limits<double>::infinity();
  p.log_scale_max = -p.log_scale_min;
  for (const Gaussian& g : gaussians) {
    p.box_min = p.box_min.cwiseMin(g.position);
    p.box_max = p.box_max.cwiseMax(g.position);
    for (int a = 0; a < 3; ++a) {
      p.log_scale_min = std::min(p.log_scale_min, std::log(g.scale[a]));
      p.log_scale_max = std::max(p.log_scale_max, std::log(g.scale[a]));
    }
  }
  for (int a = 0; a < 3; ++a)
    if (!(p.box_max[a] > p.box_min[a])) {
      p.box_min[a] -= 0.5;
      p.box_max[a] += 0.5;
    }
  if (!(p.log_scale_max > p.log_scale_min)) {
    p.log_scale_min -= 0.5;
    p.log_scale_max += 0.5;
  }
  return p;
}

void QuantParams::validate() const {
  for (int a = 0; a < 3; ++a) NEBULA_EXPECT(box_max[a] > box_min[a], "quant params: empty position range");
  NEBULA_EXPECT(log_scale_max > log_scale_min, "quant params: empty log-scale range");
}

std::uint16_t quantize_unit(double t) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
}

double dequantize(std::uint16_t q, double lo, double hi) {
  // lerp is exact at both ends.
  return std::lerp(lo, hi, static_cast<double>(q) / 65535.0);
}

namespace {

std::uint16_t encode_range(double v, double lo, double hi, EncodeStats* stats) {
  const double t = (v - lo) / (hi - lo);
  if (stats && (t < 0.0 || t > 1.0)) ++stats->clamped;
  return quantize_unit(t);
}

}  // namespace

EncodedGaussian encode_gaussian(const Gaussian& g, const QuantParams& params, const Codebook& book,
                                std::uint32_t parent, EncodeStats* stats) {
  EncodedGaussian e;
  e.id = g.id;
  e.parent = parent;
  for (int a = 0; a < 3; ++a) {
    e.position[a] = encode_range(g.position[a], params.box_min[a], params.box_max[a], stats);
    e.scale[a] = encode_range(std::log(g.scale[a]), params.log_scale_min, params.log_scale_max, stats);
  }
  // q and -q are the same rotation; keep w >= 0.
  Quat q = g.rotation.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double comps[4] = {q.w(), q.x(), q.y(), q.z()};
  for (int i = 0; i < 4; ++i) e.rotation[i] = quantize_unit(0.5 * (comps[i] + 1.0));
  e.opacity = encode_range(g.opacity, 0.0, 1.0, stats);
  NEBULA_EXPECT(3 * static_cast<int>(g.sh.size()) == book.dim(), "encode_gaussian: SH length does not match codebook");
  e.sh_index = static_cast<std::uint16_t>(book.nearest(flatten_sh(g)));
  return e;
}

Gaussian decode_gaussian(const EncodedGaussian& e, const QuantParams& params, const Codebook& book) {
  if (e.sh_index >= book.size())
    throw ProtocolError("decode: SH index " + std::to_string(e.sh_index) + " outside codebook of " +
                        std::to_string(book.size()));
  Gaussian g;
  g.id = e.id;
  for (int a = 0; a < 3; ++a) {
    g.position[a] = dequantize(e.position[a], params.box_min[a], params.box_max[a]);
    g.scale[a] = std::exp(dequantize(e.scale[a], params.log_scale_min, params.log_scale_max));
  }
  Quat q(dequantize(e.rotation[0], -1.0, 1.0), dequantize(e.rotation[1], -1.0, 1.0),
         dequantize(e.rotation[2], -1.0, 1.0), dequantize(e.rotation[3], -1.0, 1.0));
  g.rotation = q.norm() > 0.0 ? q.normalized() : Quat::Identity();
  g.opacity = dequantize(e.opacity, 0.0, 1.0);
  const auto entry = book.entry(e.sh_index);
  g.sh.assign(entry.size() / 3, Vec3::Zero());
  for (std::size_t k = 0; k < g.sh.size(); ++k) g.sh[k] = Vec3(entry[3 * k], entry[3 * k + 1], entry[3 * k + 2]);
  return g;
}

Gaussian quantize(const Gaussian& g, const QuantParams& params, const Codebook& book) {
  return decode_gaussian(encode_gaussian(g, params, book), params, book);
}

// ---------------------------------------------------------------------------
// Payload

std::size_t record_size(const Codebook& book) { return 4 + 4 + 6 + 6 + 8 + 2 + book.index_bytes(); }

std::vector<std::uint8_t> encode_payload(std::span<const Gaussian> gaussians, const QuantParams& params,
                                         const Codebook& book, std::span<const std::uint32_t> parents,
                                         EncodeStats* stats) {
  NEBULA_EXPECT(parents.empty() || parents.size() == gaussians.size(), "encode_payload: parents size mismatch");
  params.validate();
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(gaussians.size()));
  w.u32(book.version());
  w.u8(static_cast<std::uint8_t>(book.sh_degree()));
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const EncodedGaussian e =
        encode_gaussian(gaussians[i], params, book, parents.empty() ? kNoParent : parents[i], stats);
    w.u32(e.id);
    w.u32(e.parent);
    for (auto v : e.position) w.u16(v);
    for (auto v : e.scale) w.u16(v);
    for (auto v : e.rotation) w.u16(v);
    w.u16(e.opacity);
    if (book.index_bytes() == 1) {
      w.u8(static_cast<std::uint8_t>(e.sh_index));
    } else {
      w.u16(e.sh_index);
    }
  }
  return std::move(w).take();
}

Payload decode_payload(std::span<const std::uint8_t> bytes, const QuantParams& params, const Codebook& book) {
  ByteReader r(bytes);
  const std::uint32_t count = r.u32();
  const std::uint32_t version = r.u32();
  if (version != book.version())
    throw ProtocolError("payload: codebook version " + std::to_string(version) + " but local codebook is " +
                            std::to_string(book.version()),
                        4);
  const int degree = r.u8();
  if (degree != book.sh_degree())
    throw ProtocolError("payload: SH degree " + std::to_string(degree) + " does not match codebook", 8);
  const std::size_t width = record_size(book);
  if (r.remaining() != std::size_t(count) * width)
    throw ProtocolError("payload: expected " + std::to_string(std::size_t(count) * width) + " record bytes, have " +
                            std::to_string(r.remaining()),
                        r.offset() + std::min(r.remaining(), std::size_t(count) * width));

  Payload out;
  out.gaussians.reserve(count);
  out.parents.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EncodedGaussian e;
    e.id = r.u32();
    e.parent = r.u32();
    for (auto& v : e.position) v = r.u16();
    for (auto& v : e.scale) v = r.u16();
    for (auto& v : e.rotation) v = r.u16();
    e.opacity = r.u16();
    const std::size_t at = r.offset();
    e.sh_index = book.index_bytes() == 1 ? r.u8() : r.u16();
    if (e.sh_index >= book.size()) throw ProtocolError("payload: SH index out of range", at);
    out.gaussians.push_back(decode_gaussian(e, params, book));
    out.parents.push_back(e.parent);
  }
  return out;
}

}  // namespace nebula::codec
