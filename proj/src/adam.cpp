#include "rtlab/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rtlab::numkit {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (!t.requires_grad())
    throw std::invalid_argument("ParamStore::add: parameter must require grad: " + name);
  if (has(name)) throw std::invalid_argument("ParamStore::add: duplicate name: " + name);
  names_.push_back(name);
  params_.push_back(t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return params_[i];
  throw std::out_of_range("ParamStore::get: unknown parameter: " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p.node()->grad.clear();
}

std::vector<double> ParamStore::flat_values() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& p : params_)
    flat.insert(flat.end(), p.values().begin(), p.values().end());
  return flat;
}

void ParamStore::set_flat_values(const std::vector<double>& flat) {
  if (flat.size() != total_size())
    throw std::invalid_argument("ParamStore::set_flat_values: size mismatch");
  std::size_t off = 0;
  for (auto& p : params_) {
    auto& v = p.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = flat[off + i];
    off += v.size();
  }
}

std::vector<double> ParamStore::flat_grads() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& p : params_) {
    if (p.has_grad()) {
      flat.insert(flat.end(), p.grad().begin(), p.grad().end());
    } else {
      flat.insert(flat.end(), p.size(), 0.0);
    }
  }
  return flat;
}

AdamState AdamState::init(const ParamStore& params) {
  AdamState st;
  st.m.resize(params.count());
  st.v.resize(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    st.m[i].assign(params.at(i).size(), 0.0);
    st.v[i].assign(params.at(i).size(), 0.0);
  }
  return st;
}

double clip_global_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Tensor& p = params.at(i);
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < params.count(); ++i) {
      Tensor& p = params.at(i);
      if (!p.has_grad()) continue;
      for (double& g : p.node()->grad) g *= s;
    }
  }
  return norm;
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.count())
    throw std::invalid_argument("adam_step: state does not match parameter count");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor& p = params.at(i);
    if (state.m[i].size() != p.size())
      throw std::invalid_argument("adam_step: state shape mismatch for " + params.name_at(i));
    if (!p.has_grad()) continue;  // untouched parameter this step
    auto& val = p.node()->value;
    const auto& g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                 params.name_at(i));
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace rtlab::numkit
