#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "factory/tensor.hpp"

namespace factory {

/// Single-file container for named parameter arrays plus integer/string
/// metadata. Little-endian, versioned; layout documented in
/// docs/checkpoint_format.md.
struct Checkpoint {
  std::map<std::string, Tensor> arrays;
  std::map<std::string, std::int64_t> meta_ints;
  std::map<std::string, std::string> meta_strings;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const Tensor& array(const std::string& name) const;
  std::int64_t meta_int(const std::string& name) const;
  bool has_array(const std::string& name) const { return arrays.count(name) > 0; }
};

}  // namespace factory
