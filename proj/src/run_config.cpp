#include "ssmpose/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ssmpose {

using json = nlohmann::ordered_json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }

  template <typename U>
  void get(const std::string& key, U& dst) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      dst = j_[key].template get<U>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + where(key) + "' has the wrong type");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(j_[key], where(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown config key '" + where(item.key()) + "'");
    }
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_ssm(Section s, SsmConfig& c) {
  s.get("state_size", c.state_size);
  s.get("expand", c.expand);
  s.get("dt_rank", c.dt_rank);
  s.get("dt_min", c.dt_min);
  s.get("dt_max", c.dt_max);
  s.get("chunk", c.chunk);
  std::string merge = c.merge == MergeRule::kSum ? "sum" : "mean";
  s.get("merge", merge);
  if (merge != "sum" && merge != "mean") throw ConfigError("model.ssm.merge must be sum or mean");
  c.merge = merge == "sum" ? MergeRule::kSum : MergeRule::kMean;
  s.finish();
}

void read_model(Section s, VariantConfig& m) {
  std::string name = m.name;
  s.get("name", name);
  if (name != "custom") {
    // A preset fills every architectural field; explicit keys still override.
    const VariantConfig p = VariantConfig::preset(name);
    m.has_stem = p.has_stem;
    m.blocks = p.blocks;
    m.dims = p.dims;
  }
  m.name = name;
  s.get("has_stem", m.has_stem);
  s.get("blocks", m.blocks);
  s.get("dims", m.dims);
  s.get("stem_dim", m.stem_dim);
  s.get("num_keypoints", m.num_keypoints);
  s.get("input_height", m.input_height);
  s.get("input_width", m.input_width);
  s.get("decoder_dim", m.decoder_dim);
  s.get("norm_per_block", m.norm_per_block);
  if (s.has("ssm")) read_ssm(s.sub("ssm"), m.ssm);
  s.finish();
}

void read_augment(Section s, AugmentPolicy& a) {
  s.get("flip_prob", a.flip_prob);
  s.get("scale_min", a.scale_min);
  s.get("scale_max", a.scale_max);
  s.get("rotation_deg", a.rotation_deg);
  s.get("translate_frac", a.translate_frac);
  s.finish();
}

json ssm_json(const SsmConfig& c) {
  return {{"state_size", c.state_size}, {"expand", c.expand},  {"dt_rank", c.dt_rank},
          {"dt_min", c.dt_min},         {"dt_max", c.dt_max},  {"chunk", c.chunk},
          {"merge", c.merge == MergeRule::kSum ? "sum" : "mean"}};
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (dataset.kind != "synthetic" && dataset.kind != "coco") {
    throw ConfigError("dataset.kind must be synthetic or coco, got '" + dataset.kind + "'");
  }
  if (dataset.kind == "coco" && dataset.annotations.empty()) {
    throw ConfigError("dataset.annotations is required for a coco dataset");
  }
  if (dataset.synthetic_count < 1) throw ConfigError("dataset.synthetic_count must be >= 1");
  if (!(dataset.crop_margin > 0)) throw ConfigError("dataset.crop_margin must be positive");
  if (train.steps < 1 || train.batch < 1) throw ConfigError("train.steps and train.batch must be >= 1");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be positive");
  for (double m : train.milestones) {
    if (!(m > 0 && m <= 1)) throw ConfigError("train.milestones must be fractions in (0, 1]");
  }
  const auto& a = train.augment_policy;
  if (a.flip_prob < 0 || a.flip_prob > 1 || !(a.scale_min > 0) || a.scale_max < a.scale_min ||
      a.rotation_deg < 0 || a.translate_frac < 0) {
    throw ConfigError("train.augment_policy has out-of-range values");
  }
  if (eval.batch < 1 || !(eval.pck_fraction > 0)) throw ConfigError("eval.batch and eval.pck_fraction must be positive");
  if (bench.batch < 1 || bench.iters < 1 || bench.warmup < 0) {
    throw ConfigError("bench.batch and bench.iters must be >= 1, bench.warmup >= 0");
  }
  if (bench.precision != "fp32" && bench.precision != "fp64") {
    throw ConfigError("bench.precision must be fp32 or fp64");
  }
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section s(root, "");
  s.get("seed", cfg.seed);
  s.get("out", cfg.out);
  s.get("weights", cfg.weights);
  if (s.has("model")) read_model(s.sub("model"), cfg.model);
  if (s.has("dataset")) {
    Section d = s.sub("dataset");
    d.get("kind", cfg.dataset.kind);
    d.get("annotations", cfg.dataset.annotations);
    d.get("image_root", cfg.dataset.image_root);
    d.get("synthetic_count", cfg.dataset.synthetic_count);
    d.get("synthetic_seed", cfg.dataset.synthetic_seed);
    d.get("crop_margin", cfg.dataset.crop_margin);
    d.finish();
  }
  if (s.has("train")) {
    Section t = s.sub("train");
    t.get("steps", cfg.train.steps);
    t.get("batch", cfg.train.batch);
    t.get("lr", cfg.train.lr);
    t.get("milestones", cfg.train.milestones);
    t.get("gamma", cfg.train.gamma);
    t.get("augment", cfg.train.augment);
    if (t.has("augment_policy")) read_augment(t.sub("augment_policy"), cfg.train.augment_policy);
    t.get("checkpoint_every", cfg.train.checkpoint_every);
    t.get("stop_after", cfg.train.stop_after);
    t.get("resume", cfg.train.resume);
    t.finish();
  }
  if (s.has("eval")) {
    Section e = s.sub("eval");
    e.get("batch", cfg.eval.batch);
    e.get("pck_fraction", cfg.eval.pck_fraction);
    e.get("oracle", cfg.eval.oracle);
    e.get("dump_heatmaps", cfg.eval.dump_heatmaps);
    e.finish();
  }
  if (s.has("bench")) {
    Section b = s.sub("bench");
    b.get("batch", cfg.bench.batch);
    b.get("iters", cfg.bench.iters);
    b.get("warmup", cfg.bench.warmup);
    b.get("precision", cfg.bench.precision);
    b.get("include_decode", cfg.bench.include_decode);
    b.finish();
  }
  if (s.has("inspect")) {
    Section i = s.sub("inspect");
    i.get("dump_features", cfg.inspect.dump_features);
    i.get("image", cfg.inspect.image);
    i.finish();
  }
  s.finish();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& c) {
  const auto& m = c.model;
  const auto& a = c.train.augment_policy;
  json j = {
      {"seed", c.seed},
      {"out", c.out},
      {"weights", c.weights},
      {"model",
       {{"name", m.name}, {"has_stem", m.has_stem}, {"blocks", m.blocks}, {"dims", m.dims},
        {"stem_dim", m.stem_dim}, {"num_keypoints", m.num_keypoints}, {"input_height", m.input_height},
        {"input_width", m.input_width}, {"decoder_dim", m.decoder_dim}, {"norm_per_block", m.norm_per_block},
        {"ssm", ssm_json(m.ssm)}}},
      {"dataset",
       {{"kind", c.dataset.kind}, {"annotations", c.dataset.annotations}, {"image_root", c.dataset.image_root},
        {"synthetic_count", c.dataset.synthetic_count}, {"synthetic_seed", c.dataset.synthetic_seed},
        {"crop_margin", c.dataset.crop_margin}}},
      {"train",
       {{"steps", c.train.steps}, {"batch", c.train.batch}, {"lr", c.train.lr},
        {"milestones", c.train.milestones}, {"gamma", c.train.gamma}, {"augment", c.train.augment},
        {"augment_policy",
         {{"flip_prob", a.flip_prob}, {"scale_min", a.scale_min}, {"scale_max", a.scale_max},
          {"rotation_deg", a.rotation_deg}, {"translate_frac", a.translate_frac}}},
        {"checkpoint_every", c.train.checkpoint_every}, {"stop_after", c.train.stop_after},
        {"resume", c.train.resume}}},
      {"eval",
       {{"batch", c.eval.batch}, {"pck_fraction", c.eval.pck_fraction}, {"oracle", c.eval.oracle},
        {"dump_heatmaps", c.eval.dump_heatmaps}}},
      {"bench",
       {{"batch", c.bench.batch}, {"iters", c.bench.iters}, {"warmup", c.bench.warmup},
        {"precision", c.bench.precision}, {"include_decode", c.bench.include_decode}}},
      {"inspect", {{"dump_features", c.inspect.dump_features}, {"image", c.inspect.image}}}};
  return j.dump(2) + "\n";
}

void apply_variant(RunConfig& cfg, const std::string& variant) {
  if (variant == "custom") {
    cfg.model.name = "custom";
    return;
  }
  VariantConfig p = VariantConfig::preset(variant);
  p.num_keypoints = cfg.model.num_keypoints;
  p.input_height = cfg.model.input_height;
  p.input_width = cfg.model.input_width;
  p.decoder_dim = cfg.model.decoder_dim;
  p.ssm = cfg.model.ssm;
  p.norm_per_block = cfg.model.norm_per_block;
  cfg.model = p;
}

}  // namespace ssmpose
