#include "perffl/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace perffl {
namespace {

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (const auto v = node[key]; v && !v.IsNull()) {
    try {
      out = v.as<T>();
    } catch (const YAML::Exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

/// Scalar broadcast to dim, or explicit list.
Vector read_vector(const YAML::Node& v, std::size_t dim, const char* key) {
  try {
    if (v.IsScalar()) return Vector(dim, v.as<double>());
    return v.as<Vector>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

YAML::Node vector_node(const Vector& v) {
  bool uniform = !v.empty();
  for (double x : v) uniform = uniform && x == v.front();
  if (uniform) return YAML::Node(v.front());
  YAML::Node n(YAML::NodeType::Sequence);
  for (double x : v) n.push_back(x);
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

EnvironmentConfig parse_environment(const YAML::Node& node) {
  EnvironmentConfig env;
  if (!node || node.IsNull()) return env;
  check_keys(node,
             {"kind", "dim", "mu0_low", "mu0_high", "sigma", "gamma_low", "gamma_high", "group_means",
              "budget", "a1", "a2", "group_var", "class1_mean", "class0_mean", "class1_mean_alt",
              "heterogeneous_classes", "class_var", "gamma0_low", "gamma0_high", "x_mean", "x_var",
              "coef", "noise_var", "slope1", "slope2", "c", "data_path"},
             "environment");
  if (node["kind"]) env.kind = environment_kind_from_string(node["kind"].as<std::string>());
  read(node, "dim", env.dim);
  read(node, "mu0_low", env.mu0_low);
  read(node, "mu0_high", env.mu0_high);
  read(node, "sigma", env.sigma);
  read(node, "gamma_low", env.gamma_low);
  read(node, "gamma_high", env.gamma_high);
  read(node, "group_means", env.group_means);
  read(node, "budget", env.budget);
  read(node, "a1", env.a1);
  read(node, "a2", env.a2);
  read(node, "group_var", env.group_var);
  read(node, "class1_mean", env.class1_mean);
  read(node, "class0_mean", env.class0_mean);
  read(node, "class1_mean_alt", env.class1_mean_alt);
  read(node, "heterogeneous_classes", env.heterogeneous_classes);
  read(node, "class_var", env.class_var);
  read(node, "gamma0_low", env.gamma0_low);
  read(node, "gamma0_high", env.gamma0_high);
  read(node, "x_mean", env.x_mean);
  read(node, "x_var", env.x_var);
  read(node, "coef", env.coef);
  read(node, "noise_var", env.noise_var);
  read(node, "slope1", env.slope1);
  read(node, "slope2", env.slope2);
  read(node, "c", env.c);
  read(node, "data_path", env.data_path);
  return env;
}

ExperimentConfig from_node(const YAML::Node& root) {
  if (!root.IsMap()) throw ConfigError("config root must be a mapping");
  check_keys(root,
             {"algorithm", "eta", "H", "R", "T", "num_clients", "enrollment_fraction", "alpha", "seed",
              "sample_size", "robust_filter", "server_jacobian", "box", "ridge", "theta0", "n_eval",
              "rank_tol", "environment", "contamination"},
             "config");
  ExperimentConfig cfg;
  if (root["algorithm"]) cfg.algorithm = algorithm_from_string(root["algorithm"].as<std::string>());
  read(root, "eta", cfg.eta);
  read(root, "H", cfg.H);
  read(root, "R", cfg.R);
  read(root, "T", cfg.T);
  read(root, "num_clients", cfg.num_clients);
  read(root, "enrollment_fraction", cfg.enrollment_fraction);
  read(root, "alpha", cfg.alpha);
  read(root, "seed", cfg.seed);
  read(root, "ridge", cfg.ridge);
  read(root, "n_eval", cfg.n_eval);
  read(root, "rank_tol", cfg.rank_tol);
  cfg.environment = parse_environment(root["environment"]);
  const std::size_t d = cfg.environment.dim;

  if (const auto ss = root["sample_size"]; ss && !ss.IsNull()) {
    if (ss.IsScalar()) {
      cfg.sample_size = FixedSampleSize{ss.as<std::size_t>()};
    } else {
      check_keys(ss, {"mode", "n", "Phi", "phi", "n_min", "n_max"}, "sample_size");
      const auto mode = ss["mode"] ? ss["mode"].as<std::string>() : std::string("fixed");
      if (mode == "fixed") {
        FixedSampleSize f;
        read(ss, "n", f.n);
        cfg.sample_size = f;
      } else if (mode == "adaptive") {
        AdaptiveSampleSize a;
        read(ss, "Phi", a.Phi);
        read(ss, "phi", a.phi);
        read(ss, "n_min", a.n_min);
        read(ss, "n_max", a.n_max);
        cfg.sample_size = a;
      } else {
        throw ConfigError("sample_size.mode must be 'fixed' or 'adaptive'");
      }
    }
  }
  if (const auto rf = root["robust_filter"]; rf && !rf.IsNull()) {
    if (rf.IsScalar() && !rf.as<bool>()) {
      cfg.robust_filter.reset();
    } else {
      RobustFilterConfig r;
      if (rf.IsMap()) {
        check_keys(rf, {"C", "J", "B"}, "robust_filter");
        read(rf, "C", r.C);
        read(rf, "J", r.J);
        read(rf, "B", r.B);
      }
      cfg.robust_filter = r;
    }
  }
  if (const auto sj = root["server_jacobian"]; sj && !sj.IsNull()) {
    if (sj.IsScalar()) {
      const auto mode = sj.as<std::string>();
      if (mode == "single" || mode == "true")
        cfg.server_jacobian = std::vector<std::size_t>(cfg.num_clients, 0);
      else if (mode != "local" && mode != "false")
        throw ConfigError("server_jacobian must be a cluster list, 'single' or 'local'");
    } else {
      cfg.server_jacobian = sj.as<std::vector<std::size_t>>();
    }
  }
  if (const auto box = root["box"]; box && !box.IsNull()) {
    check_keys(box, {"lower", "upper"}, "box");
    cfg.projection.lower = box["lower"] ? read_vector(box["lower"], d, "box.lower") : Vector(d, -1e6);
    cfg.projection.upper = box["upper"] ? read_vector(box["upper"], d, "box.upper") : Vector(d, 1e6);
  } else {
    cfg.projection = ParameterBox{Vector(d, -1e6), Vector(d, 1e6)};
  }
  if (const auto th = root["theta0"]; th && !th.IsNull()) cfg.theta0 = read_vector(th, d, "theta0");
  if (const auto c = root["contamination"]; c && !c.IsNull()) {
    check_keys(c, {"epsilon", "mean", "std"}, "contamination");
    read(c, "epsilon", cfg.contamination.epsilon);
    read(c, "mean", cfg.contamination.mean);
    read(c, "std", cfg.contamination.std);
  }
  return cfg;
}

YAML::Node to_node(const ExperimentConfig& cfg) {
  YAML::Node root;
  root["algorithm"] = to_string(cfg.algorithm);
  root["eta"] = cfg.eta;
  root["H"] = cfg.H;
  root["R"] = cfg.R;
  root["T"] = cfg.T;
  root["num_clients"] = cfg.num_clients;
  root["enrollment_fraction"] = cfg.enrollment_fraction;
  if (!cfg.alpha.empty()) {
    root["alpha"] = cfg.alpha;
    root["alpha"].SetStyle(YAML::EmitterStyle::Flow);
  }
  root["seed"] = cfg.seed;
  if (const auto* f = std::get_if<FixedSampleSize>(&cfg.sample_size)) {
    root["sample_size"]["mode"] = "fixed";
    root["sample_size"]["n"] = f->n;
  } else {
    const auto& a = std::get<AdaptiveSampleSize>(cfg.sample_size);
    root["sample_size"]["mode"] = "adaptive";
    root["sample_size"]["Phi"] = a.Phi;
    root["sample_size"]["phi"] = a.phi;
    root["sample_size"]["n_min"] = a.n_min;
    root["sample_size"]["n_max"] = a.n_max;
  }
  if (cfg.robust_filter) {
    root["robust_filter"]["C"] = cfg.robust_filter->C;
    root["robust_filter"]["J"] = cfg.robust_filter->J;
    root["robust_filter"]["B"] = cfg.robust_filter->B;
  }
  if (cfg.server_jacobian) {
    root["server_jacobian"] = *cfg.server_jacobian;
    root["server_jacobian"].SetStyle(YAML::EmitterStyle::Flow);
  }
  root["box"]["lower"] = vector_node(cfg.projection.lower);
  root["box"]["upper"] = vector_node(cfg.projection.upper);
  root["ridge"] = cfg.ridge;
  if (!cfg.theta0.empty()) root["theta0"] = vector_node(cfg.theta0);
  root["n_eval"] = cfg.n_eval;
  root["rank_tol"] = cfg.rank_tol;

  const auto& e = cfg.environment;
  YAML::Node env;
  env["kind"] = to_string(e.kind);
  env["dim"] = e.dim;
  env["mu0_low"] = e.mu0_low;
  env["mu0_high"] = e.mu0_high;
  env["sigma"] = e.sigma;
  env["gamma_low"] = e.gamma_low;
  env["gamma_high"] = e.gamma_high;
  env["group_means"] = e.group_means;
  env["group_means"].SetStyle(YAML::EmitterStyle::Flow);
  env["budget"] = e.budget;
  env["a1"] = e.a1;
  env["a2"] = e.a2;
  env["group_var"] = e.group_var;
  env["class1_mean"] = e.class1_mean;
  env["class0_mean"] = e.class0_mean;
  env["class1_mean_alt"] = e.class1_mean_alt;
  env["heterogeneous_classes"] = e.heterogeneous_classes;
  env["class_var"] = e.class_var;
  env["gamma0_low"] = e.gamma0_low;
  env["gamma0_high"] = e.gamma0_high;
  env["x_mean"] = e.x_mean;
  env["x_var"] = e.x_var;
  env["coef"] = e.coef;
  env["noise_var"] = e.noise_var;
  env["slope1"] = e.slope1;
  env["slope2"] = e.slope2;
  env["c"] = e.c;
  if (!e.data_path.empty()) env["data_path"] = e.data_path;
  root["environment"] = env;

  root["contamination"]["epsilon"] = cfg.contamination.epsilon;
  root["contamination"]["mean"] = cfg.contamination.mean;
  root["contamination"]["std"] = cfg.contamination.std;
  return root;
}

}  // namespace

ExperimentConfig parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_node(root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  YAML::Emitter out;
  out << to_node(cfg);
  return out.c_str();
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like key=value: '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));

  YAML::Node root = to_node(cfg);
  YAML::Node parsed;
  try {
    parsed = YAML::Load(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError("bad override value for '" + key + "': " + e.what());
  }
  // Walk the dotted path, creating maps as needed.
  std::vector<std::string> parts;
  std::stringstream ks(key);
  for (std::string p; std::getline(ks, p, '.');) parts.push_back(p);
  if (parts.size() == 1 && parts[0] == "n") parts = {"sample_size", "n"};
  if (parts.size() == 1 && parts[0] == "epsilon") parts = {"contamination", "epsilon"};

  // yaml-cpp node assignment aliases; rebuild the chain explicitly.
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    YAML::Node child = chain.back()[parts[i]];
    if (!child || !child.IsMap()) child = YAML::Node(YAML::NodeType::Map);
    chain.push_back(child);
  }
  chain.back()[parts.back()] = parsed;
  for (std::size_t i = chain.size() - 1; i > 0; --i) chain[i - 1][parts[i - 1]] = chain[i];
  cfg = from_node(root);
}

}  // namespace perffl
