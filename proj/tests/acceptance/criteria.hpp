#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "nebula/codec/codec.hpp"
#include "nebula/scene/lod_tree.hpp"

namespace nebula::acceptance {

struct Result {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

using Results = std::vector<Result>;

void cut_equivalence(Results& out);     // 1 and 2
void work_reduction(Results& out);      // 3
void client_consistency(Results& out);  // 4
void delta_efficiency(Results& out);    // 5
void stereo_lists(Results& out);        // 6
void mono_oracle(Results& out);         // 7
void stereo_saving(Results& out);       // 8
void codec_fidelity(Results& out);      // 9
void channel_accounting(Results& out);  // 10
void merge_fuzz(Results& out);          // 11

struct CodecSetup {
  codec::Codebook book;
  codec::QuantParams params;
};

// 256-entry codebook and quantization ranges fitted to every node of the tree.
CodecSetup fit_codec(const scene::LodTree& tree, std::uint64_t seed);

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  os.precision(4);
  (os << ... << args);
  return os.str();
}

}  // namespace nebula::acceptance
