#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "okdd/ops.hpp"
#include "okdd/rng.hpp"
#include "okdd/tensor.hpp"

namespace okdd {

enum class LayerKind { linear, relu, conv, pool, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int width = 0;  // output features (linear) or channels (conv)
};

// "linear:64,relu" / "conv:8,relu,pool,flatten" ...
inline std::vector<LayerSpec> parse_layer_specs(const std::string& text) {
  std::vector<LayerSpec> specs;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    // trim
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.erase(tok.begin());
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t')) tok.pop_back();
    if (tok.empty()) continue;
    const auto colon = tok.find(':');
    const std::string name = tok.substr(0, colon);
    LayerSpec s;
    if (name == "linear" || name == "conv") {
      s.kind = name == "linear" ? LayerKind::linear : LayerKind::conv;
      if (colon == std::string::npos)
        throw std::invalid_argument("layer '" + tok + "' needs a width, e.g. " + name + ":64");
      s.width = std::stoi(tok.substr(colon + 1));
      if (s.width <= 0) throw std::invalid_argument("layer '" + tok + "' has non-positive width");
    } else if (name == "relu") {
      s.kind = LayerKind::relu;
    } else if (name == "pool") {
      s.kind = LayerKind::pool;
    } else if (name == "flatten") {
      s.kind = LayerKind::flatten;
    } else {
      throw std::invalid_argument("unknown layer '" + tok + "'");
    }
    specs.push_back(s);
  }
  return specs;
}

inline std::string layer_specs_to_string(const std::vector<LayerSpec>& specs) {
  std::string out;
  for (const LayerSpec& s : specs) {
    if (!out.empty()) out += ",";
    switch (s.kind) {
      case LayerKind::linear: out += "linear:" + std::to_string(s.width); break;
      case LayerKind::conv: out += "conv:" + std::to_string(s.width); break;
      case LayerKind::relu: out += "relu"; break;
      case LayerKind::pool: out += "pool"; break;
      case LayerKind::flatten: out += "flatten"; break;
    }
  }
  return out;
}

namespace detail {

// weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases start at zero
inline Tensor init_weight(Shape shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::of(std::move(shape), std::move(v), true);
}

}  // namespace detail

struct BuiltLayer {
  LayerSpec spec;
  Tensor weight;  // defined for linear/conv only
  Tensor bias;
};

// A plain sequential stack. Input/output shapes exclude the batch dimension.
class Model {
 public:
  Model() = default;

  Model(const std::vector<LayerSpec>& specs, Shape input_shape, Rng& rng)
      : input_shape_(std::move(input_shape)) {
    Shape cur = input_shape_;
    int index = 0;
    for (const LayerSpec& s : specs) {
      BuiltLayer layer{s, {}, {}};
      switch (s.kind) {
        case LayerKind::linear: {
          if (cur.size() != 1)
            throw std::invalid_argument("layer " + std::to_string(index) + " (linear:" +
                                        std::to_string(s.width) + ") needs flat input, got " +
                                        shape_str(cur));
          layer.weight = detail::init_weight({cur[0], s.width}, cur[0], rng);
          layer.bias = Tensor::zeros({s.width}, true);
          cur = {s.width};
          break;
        }
        case LayerKind::conv: {
          if (cur.size() != 3)
            throw std::invalid_argument("layer " + std::to_string(index) + " (conv:" +
                                        std::to_string(s.width) +
                                        ") needs [channels, h, w] input, got " + shape_str(cur));
          layer.weight = detail::init_weight({s.width, cur[0], 3, 3}, cur[0] * 9, rng);
          layer.bias = Tensor::zeros({s.width}, true);
          cur = {s.width, cur[1], cur[2]};
          break;
        }
        case LayerKind::pool: {
          if (cur.size() != 3 || cur[1] % 2 != 0 || cur[2] % 2 != 0)
            throw std::invalid_argument("layer " + std::to_string(index) +
                                        " (pool) needs even spatial dims, got " + shape_str(cur));
          cur = {cur[0], cur[1] / 2, cur[2] / 2};
          break;
        }
        case LayerKind::flatten: {
          cur = {static_cast<int>(shape_numel(cur))};
          break;
        }
        case LayerKind::relu:
          break;
      }
      layers_.push_back(std::move(layer));
      ++index;
    }
    output_shape_ = cur;
  }

  bool empty() const { return layers_.empty(); }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const std::vector<BuiltLayer>& layers() const { return layers_; }

  Tensor forward(const Tensor& x) const {
    Tensor cur = x;
    for (const BuiltLayer& l : layers_) {
      switch (l.spec.kind) {
        case LayerKind::linear: cur = add_bias(matmul(cur, l.weight), l.bias); break;
        case LayerKind::conv: cur = conv2d(cur, l.weight, l.bias); break;
        case LayerKind::pool: cur = maxpool2(cur); break;
        case LayerKind::flatten: cur = flatten(cur); break;
        case LayerKind::relu: cur = relu(cur); break;
      }
    }
    return cur;
  }

  void collect_parameters(std::vector<Tensor>& out) const {
    for (const BuiltLayer& l : layers_)
      if (l.weight.defined()) {
        out.push_back(l.weight);
        out.push_back(l.bias);
      }
  }

  void collect_named(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor>>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].weight.defined()) {
        out.emplace_back(prefix + "." + std::to_string(i) + ".W", layers_[i].weight);
        out.emplace_back(prefix + "." + std::to_string(i) + ".b", layers_[i].bias);
      }
  }

 private:
  Shape input_shape_;
  Shape output_shape_;
  std::vector<BuiltLayer> layers_;
};

enum class GroupMode { branch_based, network_based };

inline std::string to_string(GroupMode m) {
  return m == GroupMode::branch_based ? "branch_based" : "network_based";
}

inline GroupMode group_mode_from_string(const std::string& s) {
  if (s == "branch_based") return GroupMode::branch_based;
  if (s == "network_based") return GroupMode::network_based;
  throw std::invalid_argument("unknown group mode '" + s + "'");
}

struct StudentGroupConfig {
  int m = 4;  // total students: m-1 auxiliary peers + 1 group leader
  GroupMode mode = GroupMode::branch_based;
  std::vector<LayerSpec> trunk_spec;
  std::vector<LayerSpec> branch_spec;
  int num_classes = 10;
  int feature_dim = 64;
  Shape input_shape;  // per-sample shape
  std::uint64_t seed = 1;
};

// One student: a feature extractor tail plus a single linear classifier head.
struct Student {
  Model features;
  Tensor head_weight;  // [feature_dim, num_classes]
  Tensor head_bias;

  Tensor features_of(const Tensor& x) const { return features.forward(x); }
  Tensor logits_of(const Tensor& x) const {
    return add_bias(matmul(features.forward(x), head_weight), head_bias);
  }
};

class StudentGroup {
 public:
  StudentGroupConfig config;
  Model trunk;  // empty in network_based mode
  std::vector<Student> students;
  Tensor attn_wl;  // [feature_dim, feature_dim], shared by all auxiliary peers
  Tensor attn_we;

  int m() const { return static_cast<int>(students.size()); }
  int peers() const { return m() - 1; }

  std::vector<Tensor> all_parameters() const {
    std::vector<Tensor> out;
    trunk.collect_parameters(out);
    for (const Student& s : students) {
      s.features.collect_parameters(out);
      out.push_back(s.head_weight);
      out.push_back(s.head_bias);
    }
    out.push_back(attn_wl);
    out.push_back(attn_we);
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    trunk.collect_named("trunk", out);
    for (std::size_t a = 0; a < students.size(); ++a) {
      const std::string p = "student" + std::to_string(a);
      students[a].features.collect_named(p + ".branch", out);
      out.emplace_back(p + ".head.W", students[a].head_weight);
      out.emplace_back(p + ".head.b", students[a].head_bias);
    }
    out.emplace_back("attn.W_L", attn_wl);
    out.emplace_back("attn.W_E", attn_we);
    return out;
  }
};

inline StudentGroup build_group(const StudentGroupConfig& cfg) {
  if (cfg.m < 2)
    throw std::invalid_argument("student group needs m >= 2, got m=" + std::to_string(cfg.m));
  if (cfg.num_classes < 2)
    throw std::invalid_argument("num_classes must be >= 2, got " +
                                std::to_string(cfg.num_classes));
  if (cfg.feature_dim < 1)
    throw std::invalid_argument("feature_dim must be >= 1, got " +
                                std::to_string(cfg.feature_dim));
  if (cfg.input_shape.empty()) throw std::invalid_argument("input_shape must be set");

  StudentGroup g;
  g.config = cfg;

  Shape branch_input = cfg.input_shape;
  if (cfg.mode == GroupMode::branch_based && !cfg.trunk_spec.empty()) {
    Rng trunk_rng(sub_seed(cfg.seed, 0));
    g.trunk = Model(cfg.trunk_spec, cfg.input_shape, trunk_rng);
    branch_input = g.trunk.output_shape();
  }

  // network_based: every student owns a full copy of trunk + branch layers
  std::vector<LayerSpec> per_student = cfg.branch_spec;
  if (cfg.mode == GroupMode::network_based) {
    per_student = cfg.trunk_spec;
    per_student.insert(per_student.end(), cfg.branch_spec.begin(), cfg.branch_spec.end());
    branch_input = cfg.input_shape;
  }

  for (int a = 0; a < cfg.m; ++a) {
    Rng rng(sub_seed(cfg.seed, 1 + static_cast<std::uint64_t>(a)));
    Student s;
    s.features = Model(per_student, branch_input, rng);
    if (s.features.output_shape() != Shape{cfg.feature_dim})
      throw std::invalid_argument("branch output shape " +
                                  shape_str(s.features.output_shape()) +
                                  " does not match feature_dim " +
                                  std::to_string(cfg.feature_dim));
    s.head_weight = detail::init_weight({cfg.feature_dim, cfg.num_classes}, cfg.feature_dim, rng);
    s.head_bias = Tensor::zeros({cfg.num_classes}, true);
    g.students.push_back(std::move(s));
  }

  Rng attn_rng(sub_seed(cfg.seed, 9001));
  g.attn_wl = detail::init_weight({cfg.feature_dim, cfg.feature_dim}, cfg.feature_dim, attn_rng);
  g.attn_we = detail::init_weight({cfg.feature_dim, cfg.feature_dim}, cfg.feature_dim, attn_rng);
  return g;
}

struct GroupForwardOutput {
  std::vector<Tensor> features;  // h_a            [batch, feature_dim]
  std::vector<Tensor> logits;    // g_a            [batch, classes]
  std::vector<Tensor> q;         // softmax(g, 1)
  std::vector<Tensor> q_prime;   // softmax(g, T)

  int m() const { return static_cast<int>(logits.size()); }
};

inline GroupForwardOutput forward_group(const StudentGroup& g, const Tensor& x,
                                        double temperature) {
  GroupForwardOutput out;
  const Tensor shared = g.trunk.empty() ? x : g.trunk.forward(x);
  for (const Student& s : g.students) {
    Tensor h = s.features_of(shared);
    Tensor logits = add_bias(matmul(h, s.head_weight), s.head_bias);
    out.features.push_back(h);
    out.q.push_back(softmax(logits, 1.0));
    out.q_prime.push_back(softmax(logits, temperature));
    out.logits.push_back(std::move(logits));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: versioned text map of config plus named parameter arrays.

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_checkpoint(const StudentGroup& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  const StudentGroupConfig& c = g.config;
  out << "okdd.ckpt.v1\n";
  out << "m " << c.m << "\n";
  out << "mode " << to_string(c.mode) << "\n";
  out << "trunk_spec " << (c.trunk_spec.empty() ? "-" : layer_specs_to_string(c.trunk_spec))
      << "\n";
  out << "branch_spec " << (c.branch_spec.empty() ? "-" : layer_specs_to_string(c.branch_spec))
      << "\n";
  out << "num_classes " << c.num_classes << "\n";
  out << "feature_dim " << c.feature_dim << "\n";
  out << "seed " << c.seed << "\n";
  out << "input_shape";
  for (int d : c.input_shape) out << " " << d;
  out << "\n";
  const auto named = g.named_parameters();
  out << "params " << named.size() << "\n";
  for (const auto& [name, t] : named) {
    out << "tensor " << name;
    for (int d : t.shape()) out << " " << d;
    out << "\n";
    const auto vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i)
      out << (i ? " " : "") << detail::fmt_double(vals[i]);
    out << "\n";
  }
  out << "end\n";
  if (!out) throw std::runtime_error("write failed for checkpoint: " + path);
}

inline StudentGroup load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "okdd.ckpt.v1")
    throw std::runtime_error("bad checkpoint header in " + path);

  StudentGroupConfig cfg;
  auto expect_key = [&](const std::string& key) -> std::string {
    if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint: " + path);
    if (line.rfind(key + " ", 0) != 0)
      throw std::runtime_error("checkpoint: expected '" + key + "', got '" + line + "'");
    return line.substr(key.size() + 1);
  };
  cfg.m = std::stoi(expect_key("m"));
  cfg.mode = group_mode_from_string(expect_key("mode"));
  const std::string trunk = expect_key("trunk_spec");
  cfg.trunk_spec = trunk == "-" ? std::vector<LayerSpec>{} : parse_layer_specs(trunk);
  const std::string branch = expect_key("branch_spec");
  cfg.branch_spec = branch == "-" ? std::vector<LayerSpec>{} : parse_layer_specs(branch);
  cfg.num_classes = std::stoi(expect_key("num_classes"));
  cfg.feature_dim = std::stoi(expect_key("feature_dim"));
  cfg.seed = std::stoull(expect_key("seed"));
  {
    std::stringstream ss(expect_key("input_shape"));
    int d;
    cfg.input_shape.clear();
    while (ss >> d) cfg.input_shape.push_back(d);
  }
  const std::size_t n_params = std::stoul(expect_key("params"));

  StudentGroup g = build_group(cfg);
  auto named = g.named_parameters();
  if (named.size() != n_params)
    throw std::runtime_error("checkpoint parameter count mismatch: file has " +
                             std::to_string(n_params) + ", model has " +
                             std::to_string(named.size()));
  for (std::size_t k = 0; k < n_params; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint: " + path);
    std::stringstream hdr(line);
    std::string tag, name;
    hdr >> tag >> name;
    if (tag != "tensor") throw std::runtime_error("checkpoint: expected tensor record, got '" + line + "'");
    Shape shape;
    int d;
    while (hdr >> d) shape.push_back(d);
    if (name != named[k].first || shape != named[k].second.shape())
      throw std::runtime_error("checkpoint: unexpected tensor '" + name + "' " + shape_str(shape) +
                               ", wanted '" + named[k].first + "' " +
                               shape_str(named[k].second.shape()));
    if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint: " + path);
    std::stringstream vs(line);
    auto vals = named[k].second.values();
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (!(vs >> vals[i]))
        throw std::runtime_error("checkpoint: short value row for tensor '" + name + "'");
  }
  if (!std::getline(in, line) || line != "end")
    throw std::runtime_error("checkpoint missing end marker: " + path);
  return g;
}

}  // namespace okdd
