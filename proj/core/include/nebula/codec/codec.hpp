#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nebula/core/types.hpp"

namespace nebula::codec {

// Vector-quantization codebook over flattened SH coefficients. An entry is
// laid out coefficient-major: [c0.r, c0.g, c0.b, c1.r, ...].
class Codebook {
 public:
  Codebook() = default;
  Codebook(int dim, std::vector<float> entries);

  int dim() const { return dim_; }
  std::size_t size() const { return dim_ ? entries_.size() / dim_ : 0; }
  int sh_degree() const;
  std::span<const float> entry(std::size_t k) const { return {entries_.data() + k * dim_, std::size_t(dim_)}; }
  std::span<const float> entries() const { return entries_; }
  // 32-bit content hash; payloads name the codebook they were encoded with.
  std::uint32_t version() const { return version_; }
  // 1 byte for up to 256 entries, 2 above.
  int index_bytes() const { return size() <= 256 ? 1 : 2; }

  // Nearest entry by Euclidean distance; ties go to the lowest index.
  std::uint32_t nearest(std::span<const double> v) const;

  bool operator==(const Codebook& o) const { return dim_ == o.dim_ && entries_ == o.entries_; }

 private:
  int dim_ = 0;
  std::vector<float> entries_;
  std::uint32_t version_ = 0;
};

inline constexpr std::size_t kMaxCodebookSize = 65536;

std::vector<double> flatten_sh(const Gaussian& g);

struct TrainOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;  // stop once no centroid moves farther than this
  std::size_t max_samples = 32768;  // random subsample for large scenes
  int workers = 1;
};

// k-means with k-means++ seeding. Deterministic for a given seed. When the
// input has fewer than K distinct vectors, the distinct ones are repeated to
// fill the book. If `distortion` is set it receives the mean squared
// quantization error after each Lloyd iteration.
Codebook train_codebook(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                        const TrainOptions& options = {}, std::vector<double>* distortion = nullptr);

// "NCBK" file: magic, u32 format version, u32 K, u32 dim, K*dim f32.
std::vector<std::uint8_t> encode_codebook(const Codebook& book);
Codebook decode_codebook(std::span<const std::uint8_t> bytes);
void save_codebook(const std::string& path, const Codebook& book);
Codebook load_codebook(const std::string& path);

inline constexpr std::uint32_t kCodebookFormatVersion = 1;

// Fixed-point ranges shared by encoder and decoder.
struct QuantParams {
  Vec3 box_min = Vec3::Zero();
  Vec3 box_max = Vec3::Ones();
  double log_scale_min = -10.0;
  double log_scale_max = 2.0;

  // Bounding box and log-scale range of a scene, padded so every range is
  // non-empty.
  static QuantParams fit(std::span<const Gaussian> gaussians);
  void validate() const;
  double position_step(int axis) const { return (box_max[axis] - box_min[axis]) / 65535.0; }
  bool operator==(const QuantParams&) const = default;
};

inline constexpr std::uint32_t kNoParent = 0xFFFFFFFFu;

struct EncodedGaussian {
  std::uint32_t id = 0;
  std::uint32_t parent = kNoParent;
  std::uint16_t position[3] = {};
  std::uint16_t scale[3] = {};
  std::uint16_t rotation[4] = {};  // w, x, y, z
  std::uint16_t opacity = 0;
  std::uint16_t sh_index = 0;

  bool operator==(const EncodedGaussian&) const = default;
};

struct EncodeStats {
  std::size_t clamped = 0;  // attribute values outside their range
};

std::uint16_t quantize_unit(double t);
double dequantize(std::uint16_t q, double lo, double hi);

EncodedGaussian encode_gaussian(const Gaussian& g, const QuantParams& params, const Codebook& book,
                                std::uint32_t parent = kNoParent, EncodeStats* stats = nullptr);
// Throws ProtocolError when the index is out of range for the codebook.
Gaussian decode_gaussian(const EncodedGaussian& e, const QuantParams& params, const Codebook& book);
// decode(encode(g)).
Gaussian quantize(const Gaussian& g, const QuantParams& params, const Codebook& book);

inline constexpr std::size_t kPayloadHeaderSize = 9;
std::size_t record_size(const Codebook& book);

struct Payload {
  std::vector<Gaussian> gaussians;
  std::vector<std::uint32_t> parents;
};

// Header: u32 count, u32 codebook version, u8 SH degree; then fixed-width
// records. `parents` is empty or parallel to `gaussians`.
std::vector<std::uint8_t> encode_payload(std::span<const Gaussian> gaussians, const QuantParams& params,
                                         const Codebook& book, std::span<const std::uint32_t> parents = {},
                                         EncodeStats* stats = nullptr);
// Throws ProtocolError on truncation, trailing bytes or a codebook mismatch.
Payload decode_payload(std::span<const std::uint8_t> bytes, const QuantParams& params, const Codebook& book);

}  // namespace nebula::codec
