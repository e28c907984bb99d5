#include "hoi/optim.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace hoi::ad {

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({name, std::move(t)});
  return params_.back().tensor;
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) > 0; }

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].tensor;
}

std::vector<Parameter> ParameterStore::with_prefix_excluded(const std::string& prefix) const {
  std::vector<Parameter> out;
  for (const auto& p : params_) {
    if (p.name.rfind(prefix, 0) != 0) out.push_back(p);
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::int64_t ParameterStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

AdamW::AdamW(std::vector<Parameter> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

void AdamW::step() {
  ++step_count_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  const double decay = cfg_.lr * cfg_.weight_decay;

  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.tensor.has_grad()) {
      throw DomainError("adamw: missing gradient for parameter '" + p.name + "'");
    }
    const auto& g = p.tensor.grad();
    auto& w = p.tensor.values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      w[i] = w[i] - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps)) - decay * w[i];
    }
  }
}

void save_checkpoint(const std::string& path, const ParameterStore& params) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  out << "hoic-checkpoint v1\n";
  out << "nparams " << params.all().size() << "\n";
  for (const auto& p : params.all()) {
    out << "param " << p.name << " " << p.tensor.ndim();
    for (int d : p.tensor.shape()) out << " " << d;
    out << "\n";
    const auto& vals = p.tensor.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) out << " ";
      out << fmt_hex(vals[i]);
    }
    out << "\n";
  }
  if (!out) throw ConfigError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, ParameterStore& params) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "hoic-checkpoint v1") {
    throw ParseError("bad checkpoint header in " + path);
  }
  if (!std::getline(in, line)) throw ParseError("truncated checkpoint: " + path);
  std::istringstream hdr(line);
  std::string tok;
  std::size_t n = 0;
  hdr >> tok >> n;
  if (tok != "nparams") throw ParseError("bad checkpoint count line in " + path);

  for (std::size_t k = 0; k < n; ++k) {
    if (!std::getline(in, line)) throw ParseError("truncated checkpoint: " + path);
    std::istringstream ph(line);
    std::string name;
    int ndim = 0;
    ph >> tok >> name >> ndim;
    if (tok != "param" || ndim < 0) throw ParseError("bad param line in " + path);
    std::vector<int> shape(static_cast<std::size_t>(ndim));
    for (int& d : shape) ph >> d;

    Tensor& t = params.get(name);
    if (t.shape() != shape) {
      throw ConfigError("checkpoint shape mismatch for '" + name + "'");
    }
    if (!std::getline(in, line)) throw ParseError("truncated checkpoint values: " + path);
    std::istringstream vs(line);
    auto& vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!(vs >> tok)) throw ParseError("not enough values for '" + name + "'");
      vals[i] = parse_double(tok);
    }
    if (vs >> tok) throw ParseError("trailing values for '" + name + "'");
  }
}

}  // namespace hoi::ad
