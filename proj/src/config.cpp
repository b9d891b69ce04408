#include "vlo/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vlo {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::runtime_error("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace

void PipelineConfig::validate() const {
  if (levels != 4) throw std::runtime_error("config: levels must be 4");
  if (static_cast<int>(image_channels.size()) != levels ||
      static_cast<int>(point_channels.size()) != levels)
    throw std::runtime_error("config: channel profiles must list one entry per level");
  if (pseudo_height < 1 || pseudo_width < 1)
    throw std::runtime_error("config: pseudo image dims must be positive");
  if (max_elevation_deg <= min_elevation_deg)
    throw std::runtime_error("config: elevation range empty");
  const int max_stride = 1 << levels;
  if (pad_height % max_stride != 0 || pad_width % max_stride != 0)
    throw std::runtime_error("config: pad size must be divisible by " +
                             std::to_string(max_stride));
  for (int l = 0; l < levels; ++l) {
    const int h = pad_height / stride_at(l);
    const int w = pad_width / stride_at(l);
    if (h % region_rows != 0 || w % region_cols != 0)
      throw std::runtime_error("config: region tiles must divide every feature-map level");
  }
  if (cost_volume_k < 1) throw std::runtime_error("config: cost_volume_k must be >= 1");
  if (loss.alpha.size() != 4) throw std::runtime_error("config: loss alpha needs 4 entries");
  for (double a : loss.alpha)
    if (!(a >= 0.0)) throw std::runtime_error("config: loss alpha must be >= 0");
}

PipelineConfig PipelineConfig::micro() {
  PipelineConfig c;
  c.pseudo_height = 32;
  c.pseudo_width = 192;
  c.min_elevation_deg = -30.0;
  c.max_elevation_deg = 30.0;
  c.pad_height = 64;
  c.pad_width = 96;
  c.image_channels = {4, 8, 16, 32};
  c.point_channels = {8, 16, 32, 64};
  c.region_rows = 2;
  c.region_cols = 3;
  c.cost_volume_k = 4;
  return c;
}

std::string PipelineConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["levels"] = levels;
  j["cylindrical"] = {{"height", pseudo_height},
                      {"width", pseudo_width},
                      {"min_elevation_deg", min_elevation_deg},
                      {"max_elevation_deg", max_elevation_deg}};
  j["image"] = {{"pad_height", pad_height}, {"pad_width", pad_width}};
  j["image_channels"] = image_channels;
  j["point_channels"] = point_channels;
  j["point_input_scale"] = point_input_scale;
  j["region"] = {{"rows", region_rows}, {"cols", region_cols}};
  j["similarity_on_value"] = similarity_on_value;
  j["cost_volume_k"] = cost_volume_k;
  j["z_min"] = z_min;
  j["loss"] = {{"alpha", loss.alpha}, {"k_x_init", loss.k_x_init}, {"k_q_init", loss.k_q_init}};
  j["train"] = {{"learning_rate", learning_rate},
                {"beta1", adam_beta1},
                {"beta2", adam_beta2}};
  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config: parse error: ") + e.what());
  }
  reject_unknown(j,
                 {"seed", "levels", "cylindrical", "image", "image_channels", "point_channels",
                  "region", "similarity_on_value", "cost_volume_k", "z_min", "loss", "train",
                  "point_input_scale"},
                 "top level");
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.levels = j.value("levels", c.levels);
  if (j.contains("cylindrical")) {
    const json& cj = j["cylindrical"];
    reject_unknown(cj, {"height", "width", "min_elevation_deg", "max_elevation_deg"},
                   "cylindrical");
    c.pseudo_height = cj.value("height", c.pseudo_height);
    c.pseudo_width = cj.value("width", c.pseudo_width);
    c.min_elevation_deg = cj.value("min_elevation_deg", c.min_elevation_deg);
    c.max_elevation_deg = cj.value("max_elevation_deg", c.max_elevation_deg);
  }
  if (j.contains("image")) {
    const json& ij = j["image"];
    reject_unknown(ij, {"pad_height", "pad_width"}, "image");
    c.pad_height = ij.value("pad_height", c.pad_height);
    c.pad_width = ij.value("pad_width", c.pad_width);
  }
  if (j.contains("image_channels")) c.image_channels = j["image_channels"].get<std::vector<int>>();
  if (j.contains("point_channels")) c.point_channels = j["point_channels"].get<std::vector<int>>();
  if (j.contains("region")) {
    const json& rj = j["region"];
    reject_unknown(rj, {"rows", "cols"}, "region");
    c.region_rows = rj.value("rows", c.region_rows);
    c.region_cols = rj.value("cols", c.region_cols);
  }
  c.point_input_scale = j.value("point_input_scale", c.point_input_scale);
  c.similarity_on_value = j.value("similarity_on_value", c.similarity_on_value);
  c.cost_volume_k = j.value("cost_volume_k", c.cost_volume_k);
  c.z_min = j.value("z_min", c.z_min);
  if (j.contains("loss")) {
    const json& lj = j["loss"];
    reject_unknown(lj, {"alpha", "k_x_init", "k_q_init"}, "loss");
    if (lj.contains("alpha")) {
      auto a = lj["alpha"].get<std::vector<double>>();
      if (a.size() != 4) throw std::runtime_error("config: loss alpha needs 4 entries");
      std::copy(a.begin(), a.end(), c.loss.alpha.begin());
    }
    c.loss.k_x_init = lj.value("k_x_init", c.loss.k_x_init);
    c.loss.k_q_init = lj.value("k_q_init", c.loss.k_q_init);
  }
  if (j.contains("train")) {
    const json& tj = j["train"];
    reject_unknown(tj, {"learning_rate", "beta1", "beta2"}, "train");
    c.learning_rate = tj.value("learning_rate", c.learning_rate);
    c.adam_beta1 = tj.value("beta1", c.adam_beta1);
    c.adam_beta2 = tj.value("beta2", c.adam_beta2);
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

void PipelineConfig::save_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot write " + path);
  f << to_json_text();
}

}  // namespace vlo
