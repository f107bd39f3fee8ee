#include "convrec/checkpoint.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "convrec/error.hpp"

namespace convrec {

namespace {

constexpr const char* kMagic = "convrec-params v1";

void check_token(const std::string& token, const char* what) {
  if (token.empty()) throw ContractError(std::string(what) + " must be non-empty");
  for (char c : token) {
    if (std::isspace(static_cast<unsigned char>(c)))
      throw ContractError(std::string(what) + " must not contain whitespace: " + token);
  }
}

}  // namespace

void save_bundle(const std::string& path, const ParamBundle& bundle) {
  for (const auto& [key, value] : bundle.meta) {
    check_token(key, "meta key");
    (void)value;
  }
  for (const auto& [name, tensor] : bundle.tensors) {
    check_token(name, "tensor name");
    (void)tensor;
  }
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fprintf(f, "%s\n", kMagic);
  std::fprintf(f, "meta %zu\n", bundle.meta.size());
  for (const auto& [key, value] : bundle.meta)
    std::fprintf(f, "%s %s\n", key.c_str(), value.c_str());
  std::fprintf(f, "tensors %zu\n", bundle.tensors.size());
  for (const auto& [name, tensor] : bundle.tensors) {
    std::fprintf(f, "%s %d %d\n", name.c_str(),
                 static_cast<int>(tensor.rows()), static_cast<int>(tensor.cols()));
    for (Eigen::Index i = 0; i < tensor.rows(); ++i) {
      for (Eigen::Index j = 0; j < tensor.cols(); ++j) {
        std::fprintf(f, j == 0 ? "%.17g" : " %.17g", tensor(i, j));
      }
      std::fprintf(f, "\n");
    }
  }
  if (std::fclose(f) != 0) throw IoError("write failed: " + path);
}

ParamBundle load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  int line_no = 0;
  std::string line;
  const auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError(path, line_no + 1, "unexpected end of file");
    ++line_no;
  };

  next_line();
  if (line != kMagic) throw ParseError(path, line_no, "bad header: " + line);

  ParamBundle bundle;
  next_line();
  std::size_t meta_count = 0;
  {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag >> meta_count) || tag != "meta")
      throw ParseError(path, line_no, "expected meta count: " + line);
  }
  for (std::size_t i = 0; i < meta_count; ++i) {
    next_line();
    const std::size_t space = line.find(' ');
    const std::string key = line.substr(0, space);
    if (key.empty()) throw ParseError(path, line_no, "empty meta key");
    const std::string value =
        space == std::string::npos ? std::string() : line.substr(space + 1);
    if (!bundle.meta.emplace(key, value).second)
      throw ParseError(path, line_no, "duplicate meta key: " + key);
  }

  next_line();
  std::size_t tensor_count = 0;
  {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag >> tensor_count) || tag != "tensors")
      throw ParseError(path, line_no, "expected tensor count: " + line);
  }
  for (std::size_t t = 0; t < tensor_count; ++t) {
    next_line();
    std::istringstream head(line);
    std::string name;
    int rows = -1, cols = -1;
    if (!(head >> name >> rows >> cols) || rows < 0 || cols < 0)
      throw ParseError(path, line_no, "bad tensor header: " + line);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      next_line();
      std::istringstream row(line);
      for (int j = 0; j < cols; ++j) {
        if (!(row >> m(i, j)))
          throw ParseError(path, line_no, "bad value in tensor " + name);
      }
      double extra;
      if (row >> extra)
        throw ParseError(path, line_no, "excess values in tensor " + name);
    }
    if (!bundle.tensors.emplace(name, std::move(m)).second)
      throw ParseError(path, line_no, "duplicate tensor: " + name);
  }
  return bundle;
}

}  // namespace convrec
