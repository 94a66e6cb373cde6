#include "pasyn/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "pasyn/error.hpp"
#include "pasyn/rng.hpp"

namespace pasyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json range(UniformRange r) { return {r.lo, r.hi}; }

UniformRange range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json scalar_from_yaml(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s.empty() || s == "~" || s == "null") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  return s;
}

json node_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Scalar: return scalar_from_yaml(n);
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(node_to_json(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = node_to_json(kv.second);
      return o;
    }
  }
  return nullptr;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void overlay(json& base, const json& over, const std::string& path) {
  require(over.is_object(), ErrorCode::kInvalidConfig,
          "config: '" + (path.empty() ? std::string("<root>") : path) + "' must be a mapping");
  for (const auto& [key, value] : over.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    require(base.contains(key), ErrorCode::kInvalidConfig, "config: unknown key '" + where + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, where);
    } else {
      require(same_kind(slot, value), ErrorCode::kInvalidConfig,
              "config: key '" + where + "' expects " + std::string(slot.type_name()) + ", got " + value.type_name());
      slot = value;
    }
  }
}

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidConfig, "config: key '" + key + "': " + e.what());
  }
}

}  // namespace

json forearm_params_to_json(const ForearmModelParams& p) {
  return {{"image_shape", {p.image_shape.x, p.image_shape.z}},
          {"spacing_mm", p.spacing_mm},
          {"water_thickness_mm", range(p.water_thickness_mm)},
          {"membrane_thickness_mm", p.membrane_thickness_mm},
          {"gel_thickness_mm", range(p.gel_thickness_mm)},
          {"surface_curvature_mm", range(p.surface_curvature_mm)},
          {"skin_thickness_mm", range(p.skin_thickness_mm)},
          {"vessel_count", {p.vessel_count.lo, p.vessel_count.hi}},
          {"artery_fraction", p.artery_fraction},
          {"vessel_radius_mm", range(p.vessel_radius_mm)},
          {"vessel_depth_mm", range(p.vessel_depth_mm)},
          {"vessel_aspect", range(p.vessel_aspect)}};
}

ForearmModelParams forearm_params_from_json(const json& j) {
  ForearmModelParams p;
  try {
    p.image_shape = {j.at("image_shape").at(0).get<int>(), j.at("image_shape").at(1).get<int>()};
    p.spacing_mm = j.at("spacing_mm");
    p.water_thickness_mm = range_from(j.at("water_thickness_mm"));
    p.membrane_thickness_mm = j.at("membrane_thickness_mm");
    p.gel_thickness_mm = range_from(j.at("gel_thickness_mm"));
    p.surface_curvature_mm = range_from(j.at("surface_curvature_mm"));
    p.skin_thickness_mm = range_from(j.at("skin_thickness_mm"));
    p.vessel_count = {j.at("vessel_count").at(0).get<int>(), j.at("vessel_count").at(1).get<int>()};
    p.artery_fraction = j.at("artery_fraction");
    p.vessel_radius_mm = range_from(j.at("vessel_radius_mm"));
    p.vessel_depth_mm = range_from(j.at("vessel_depth_mm"));
    p.vessel_aspect = range_from(j.at("vessel_aspect"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidConfig, std::string("geometry config: ") + e.what());
  }
  p.validate();
  return p;
}

json yaml_to_json(const std::string& text) {
  try {
    return node_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::kInvalidConfig, std::string("config: ") + e.what());
  }
}

json RunConfig::defaults() {
  ForearmModelParams anno;
  // Stand-in prior for the annotated masks: fewer, mid-depth vessels of
  // moderate size under a thicker gel layer.
  anno.gel_thickness_mm = {1.5, 3.0};
  anno.surface_curvature_mm = {0.3, 1.2};
  anno.skin_thickness_mm = {0.6, 1.0};
  anno.vessel_count = {2, 4};
  anno.vessel_radius_mm = {0.8, 2.2};
  anno.vessel_depth_mm = {2.0, 8.0};

  GanHyperparams gan;
  gan.batch_size = 8;
  gan.lr_generator = 5e-4;
  gan.lr_discriminator = 5e-4;
  gan.gen_base_channels = 16;
  gan.disc_base_channels = 16;

  json wavelengths = json::array();
  for (double nm : WavelengthGrid::paper_default().nm) wavelengths.push_back(nm);
  const TransportOptions transport;

  return {
      {"seed", 1},
      {"workers", 0},
      {"paper_scale", false},
      {"geometry", forearm_params_to_json(ForearmModelParams{})},
      {"annotation_geometry", forearm_params_to_json(anno)},
      {"annotation_dir", ""},
      {"optics", {{"spec", ""}}},
      {"simulation",
       {{"photons", 20000},
        {"y_extent", 32},
        {"water_offset_mm", 3.0},
        {"noise_sigma", 0.5},
        {"wavelengths_nm", wavelengths},
        {"roulette_threshold", transport.roulette_threshold},
        {"roulette_survival", transport.roulette_survival}}},
      {"gan", {{"hyperparams", gan.to_json()}, {"max_steps", 300}, {"checkpoint_every", 50}}},
      {"unet",
       {{"depth", 4},
        {"base_channels", 16},
        {"batch_norm", true},
        {"epochs", 30},
        {"batch_size", 4},
        {"lr", 1e-3},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"val_every", 1},
        {"stop_val_mse", 0.0},
        {"max_steps", -1}}},
      {"dataset", {{"config", "lit"}, {"scale", 0.1}, {"pools", {{"anno", 96}, {"gan", 500}, {"lit", 500}}}}},
      {"experiment",
       {{"variants", {"anno", "lit"}}, {"metric", "AE"}, {"classes", {0}}, {"n_boot", 1000}}},
  };
}

RunConfig::RunConfig() : tree_(defaults()) {}

void RunConfig::merge_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const json j = yaml_to_json(ss.str());
  if (!j.is_null()) merge(j);
}

void RunConfig::merge(const json& over) { overlay(tree_, over, ""); }

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kInvalidConfig,
          "--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  json value = yaml_to_json(assignment.substr(eq + 1));
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) value = json{{*it, value}};
  merge(value);
}

bool RunConfig::apply_paper_scale() {
  if (!tree_.at("paper_scale").get<bool>()) return false;
  for (const char* g : {"geometry", "annotation_geometry"}) {
    tree_[g]["image_shape"] = {256, 128};
    tree_[g]["spacing_mm"] = 0.16;
  }
  tree_["simulation"]["water_offset_mm"] = 43.2;
  tree_["dataset"]["scale"] = 1.0;
  tree_["gan"]["max_steps"] = -1;
  return true;
}

const json& RunConfig::at(const std::string& dotted) const {
  const json* node = &tree_;
  std::stringstream ss(dotted);
  for (std::string p; std::getline(ss, p, '.');) {
    require(node->is_object() && node->contains(p), ErrorCode::kInvalidConfig, "config: no key '" + dotted + "'");
    node = &(*node)[p];
  }
  return *node;
}

std::string RunConfig::hash() const {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(tree_.dump())));
  return buf;
}

std::uint64_t RunConfig::seed() const { return get<std::uint64_t>(tree_, "seed"); }

int RunConfig::workers() const {
  const int w = get<int>(tree_, "workers");
  require(w >= 0, ErrorCode::kInvalidConfig, "config: workers must be >= 0");
  return w > 0 ? w : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

ForearmModelParams RunConfig::geometry() const { return forearm_params_from_json(tree_.at("geometry")); }

ForearmModelParams RunConfig::annotation_geometry() const {
  return forearm_params_from_json(tree_.at("annotation_geometry"));
}

fs::path RunConfig::annotation_dir() const { return get<std::string>(tree_, "annotation_dir"); }

TissueOpticalSpec RunConfig::optics() const {
  const auto path = get<std::string>(tree_.at("optics"), "spec");
  return path.empty() ? default_tissue_spec() : TissueOpticalSpec::load(path);
}

SynthesisSettings RunConfig::synthesis(const ChromophoreSpectra& spectra) const {
  const json& s = tree_.at("simulation");
  SynthesisSettings out;
  out.optics = optics();
  out.spectra = &spectra;
  out.grid.nm = get<std::vector<double>>(s, "wavelengths_nm");
  out.grid.validate();
  out.simulation.y_extent = get<int>(s, "y_extent");
  out.simulation.water_offset_mm = get<double>(s, "water_offset_mm");
  out.simulation.source.photon_count = get<std::uint64_t>(s, "photons");
  out.simulation.transport.roulette_threshold = get<double>(s, "roulette_threshold");
  out.simulation.transport.roulette_survival = get<double>(s, "roulette_survival");
  out.simulation.workers = workers();
  out.noise_sigma = get<double>(s, "noise_sigma");
  require(out.simulation.source.photon_count > 0 && out.simulation.y_extent > 0 && out.noise_sigma >= 0.0,
          ErrorCode::kInvalidConfig, "config: invalid simulation settings");
  return out;
}

GanHyperparams RunConfig::gan() const {
  GanHyperparams hp;
  try {
    hp = GanHyperparams::from_json(tree_.at("gan").at("hyperparams"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidConfig, std::string("gan config: ") + e.what());
  }
  hp.validate();
  return hp;
}

GanTrainOptions RunConfig::gan_training() const {
  GanTrainOptions o;
  o.max_steps = get<long>(tree_.at("gan"), "max_steps");
  o.checkpoint_every = get<int>(tree_.at("gan"), "checkpoint_every");
  return o;
}

UnetSpec RunConfig::unet() const {
  const json& u = tree_.at("unet");
  UnetSpec s;
  s.channels = static_cast<int>(tree_.at("simulation").at("wavelengths_nm").size());
  s.image = geometry().image_shape;
  s.depth = get<int>(u, "depth");
  s.base_channels = get<int>(u, "base_channels");
  s.batch_norm = get<bool>(u, "batch_norm");
  s.validate();
  return s;
}

UnetTrainOptions RunConfig::unet_training() const {
  const json& u = tree_.at("unet");
  UnetTrainOptions o;
  o.epochs = get<int>(u, "epochs");
  o.batch_size = get<int>(u, "batch_size");
  o.lr = get<double>(u, "lr");
  o.beta1 = get<double>(u, "beta1");
  o.beta2 = get<double>(u, "beta2");
  o.val_every = get<int>(u, "val_every");
  o.stop_val_mse = get<double>(u, "stop_val_mse");
  o.max_steps = get<long>(u, "max_steps");
  return o;
}

DatasetConfig RunConfig::dataset_config() const {
  return dataset_config_from_string(get<std::string>(tree_.at("dataset"), "config"));
}

double RunConfig::dataset_scale() const {
  const double s = get<double>(tree_.at("dataset"), "scale");
  require(s > 0.0 && s <= 1.0, ErrorCode::kInvalidConfig, "config: dataset.scale must lie in (0, 1]");
  return s;
}

MaskPools RunConfig::pools() const {
  const json& p = tree_.at("dataset").at("pools");
  return {get<std::size_t>(p, "anno"), get<std::size_t>(p, "gan"), get<std::size_t>(p, "lit")};
}

std::vector<std::string> RunConfig::variants() const {
  auto v = get<std::vector<std::string>>(tree_.at("experiment"), "variants");
  require(!v.empty(), ErrorCode::kInvalidConfig, "config: experiment.variants is empty");
  for (const auto& name : v) dataset_config_from_string(name);
  return v;
}

std::vector<RankingRequest> RunConfig::rankings() const {
  const json& e = tree_.at("experiment");
  const Metric metric = metric_from_string(get<std::string>(e, "metric"));
  std::vector<RankingRequest> out;
  for (int c : get<std::vector<int>>(e, "classes")) {
    require(c == kOverallClass || is_valid_class_id(c), ErrorCode::kInvalidConfig,
            "config: invalid ranking class " + std::to_string(c));
    out.push_back({metric, c});
  }
  require(!out.empty(), ErrorCode::kInvalidConfig, "config: experiment.classes is empty");
  return out;
}

int RunConfig::n_boot() const {
  const int n = get<int>(tree_.at("experiment"), "n_boot");
  require(n >= 1, ErrorCode::kInvalidConfig, "config: experiment.n_boot must be >= 1");
  return n;
}

std::uint64_t stage_seed(std::uint64_t run_seed, const std::string& stage) {
  return derive_seed(run_seed, fnv1a64(stage));
}

}  // namespace pasyn
