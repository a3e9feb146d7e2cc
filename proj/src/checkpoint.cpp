#include "rtlab/checkpoint.hpp"

#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace rtlab::ckpt {

namespace {

constexpr const char* kMagic = "rtlab-ckpt v1";

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path + ": " + what);
}

std::string expect_line(std::istream& in, const std::string& path, const char* what) {
  std::string line;
  if (!std::getline(in, line)) fail(path, std::string("truncated before ") + what);
  return line;
}

}  // namespace

void save(const std::string& path, const std::string& kind,
          const util::KeyValue& config, const numkit::ParamStore& params) {
  std::string out;
  out += kMagic;
  out += "\nkind ";
  out += kind;
  out += '\n';
  const std::string cfg = config.serialize();
  std::size_t cfg_lines = 0;
  for (char c : cfg)
    if (c == '\n') ++cfg_lines;
  out += "config " + std::to_string(cfg_lines) + "\n";
  out += cfg;
  out += "params " + std::to_string(params.count()) + "\n";
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& t = params.at(i);
    out += params.name_at(i);
    out += ' ';
    out += std::to_string(t.rank());
    for (auto d : t.shape()) out += ' ' + std::to_string(d);
    for (double v : t.values()) out += ' ' + util::format_g17(v);
    out += '\n';
  }
  out += "end\n";
  util::write_file(path, out);
}

Header peek(const std::string& path) {
  std::istringstream in(util::read_file(path));
  if (expect_line(in, path, "magic") != kMagic) fail(path, "unrecognized header");
  const std::string kind_line = expect_line(in, path, "kind");
  if (kind_line.rfind("kind ", 0) != 0) fail(path, "missing kind");
  Header h;
  h.kind = kind_line.substr(5);
  const std::string cfg_line = expect_line(in, path, "config");
  if (cfg_line.rfind("config ", 0) != 0) fail(path, "missing config");
  const long n = std::strtol(cfg_line.c_str() + 7, nullptr, 10);
  std::string cfg_text;
  for (long i = 0; i < n; ++i) cfg_text += expect_line(in, path, "config entry") + '\n';
  h.config = util::KeyValue::parse(cfg_text);
  return h;
}

void load_into(const std::string& path, const std::string& expected_kind,
               numkit::ParamStore& params) {
  std::istringstream in(util::read_file(path));
  if (expect_line(in, path, "magic") != kMagic) fail(path, "unrecognized header");
  const std::string kind_line = expect_line(in, path, "kind");
  if (kind_line != "kind " + expected_kind)
    fail(path, "kind mismatch: have '" + kind_line.substr(5) + "', expected '" +
                   expected_kind + "'");
  const std::string cfg_line = expect_line(in, path, "config");
  if (cfg_line.rfind("config ", 0) != 0) fail(path, "missing config");
  const long cfg_n = std::strtol(cfg_line.c_str() + 7, nullptr, 10);
  for (long i = 0; i < cfg_n; ++i) expect_line(in, path, "config entry");

  const std::string count_line = expect_line(in, path, "params");
  if (count_line.rfind("params ", 0) != 0) fail(path, "missing params count");
  const std::size_t n =
      static_cast<std::size_t>(std::strtoll(count_line.c_str() + 7, nullptr, 10));
  if (n != params.count())
    fail(path, "parameter count mismatch: file has " + std::to_string(n) +
                   ", store expects " + std::to_string(params.count()));

  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream line(expect_line(in, path, "parameter line"));
    std::string name;
    std::size_t rank = 0;
    if (!(line >> name >> rank)) fail(path, "malformed parameter line " + std::to_string(i));
    if (name != params.name_at(i))
      fail(path, "parameter " + std::to_string(i) + " name mismatch: file has '" + name +
                     "', store expects '" + params.name_at(i) + "'");
    auto& t = params.at(i);
    if (rank != t.rank()) fail(path, "shape rank mismatch for " + name);
    std::size_t total = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      std::size_t dim = 0;
      if (!(line >> dim)) fail(path, "truncated shape for " + name);
      if (dim != t.shape()[d]) fail(path, "shape mismatch for " + name);
      total *= dim;
    }
    std::vector<double>& dst = t.mutable_values();
    if (dst.size() != total) fail(path, "value count mismatch for " + name);
    for (std::size_t k = 0; k < total; ++k)
      if (!(line >> dst[k])) fail(path, "truncated values for " + name);
    double extra;
    if (line >> extra) fail(path, "trailing values for " + name);
  }
  if (expect_line(in, path, "end") != "end") fail(path, "missing end marker");
}

}  // namespace rtlab::ckpt
