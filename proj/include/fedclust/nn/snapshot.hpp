#pragma once

#include <string>
#include <vector>

#include "fedclust/nn/net.hpp"

namespace fedclust::nn {

struct Snapshot {
  ParamLayout layout;
  std::vector<double> params;
};

// Versioned little-endian binary container; round-trips bit-exactly.
void save_snapshot_binary(const std::string& path, const Snapshot& snap);
Snapshot load_snapshot_binary(const std::string& path);

// JSON form of the same container, for inspection and interop.
void save_snapshot_json(const std::string& path, const Snapshot& snap);
Snapshot load_snapshot_json(const std::string& path);

}  // namespace fedclust::nn
