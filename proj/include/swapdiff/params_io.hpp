#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "swapdiff/tensor.hpp"

namespace swapdiff {

// Flat binary parameter container:
//   magic "SWDF" | version u32 | section tag (4 bytes) | tensor count u32 |
//   per tensor: name length u32 | name bytes | rank u32 | dims u32[rank] |
//   payload f64[..] little-endian.
// Round trips are bit-exact.

inline constexpr uint32_t kParamsFormatVersion = 1;
inline constexpr char kSectionParams[5] = "PRMS";
inline constexpr char kSectionLora[5] = "LORA";

void save_params(const std::string& path, const std::string& section_tag,
                 const std::map<std::string, Tensor>& tensors);

// Returns the section tag through `section_tag_out` when non-null.
std::map<std::string, Tensor> load_params(const std::string& path,
                                          std::string* section_tag_out = nullptr);

// FNV-1a over the raw little-endian bytes of every tensor, in name order.
// Detects any bit-level change to a parameter set.
uint64_t params_checksum(const std::map<std::string, Tensor>& tensors);

}  // namespace swapdiff
