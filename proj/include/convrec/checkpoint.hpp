#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

namespace convrec {

/// Named tensors plus free-form string metadata, as stored on disk.
struct ParamBundle {
  std::map<std::string, Eigen::MatrixXd> tensors;
  std::map<std::string, std::string> meta;
};

/// Writes a versioned text bundle. Tensor names and meta keys must be free
/// of whitespace; values round-trip bit-exactly.
void save_bundle(const std::string& path, const ParamBundle& bundle);

/// Reads a bundle written by save_bundle. Throws ParseError on malformed
/// input and IoError when the file cannot be opened.
ParamBundle load_bundle(const std::string& path);

}  // namespace convrec
