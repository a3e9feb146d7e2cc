#pragma once

#include <string>

#include "rtlab/adam.hpp"
#include "rtlab/util.hpp"

namespace rtlab::ckpt {

// Versioned text container: header line, kind, config echo, then one line
// per parameter tensor (name, shape, values at 17 significant digits).
void save(const std::string& path, const std::string& kind,
          const util::KeyValue& config, const numkit::ParamStore& params);

// Reads kind + config without touching parameter data.
struct Header {
  std::string kind;
  util::KeyValue config;
};
Header peek(const std::string& path);

// Fills an already-constructed store. Every name, shape, and the parameter
// order must match exactly; the kind must equal `expected_kind`.
void load_into(const std::string& path, const std::string& expected_kind,
               numkit::ParamStore& params);

}  // namespace rtlab::ckpt
