#include "ssmpose/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ssmpose/heatmap.hpp"
#include "ssmpose/ops.hpp"
#include "ssmpose/synth.hpp"

namespace ssmpose {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string out_path(const RunConfig& cfg, const std::string& file) { return (fs::path(cfg.out) / file).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

double sigma_for(const VariantConfig& m) { return default_sigma(m.heatmap_height()); }

}  // namespace

void write_manifest(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  write_text(out_path(cfg, "config.json"), serialize_run_config(cfg));
}

std::string host_fingerprint() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  std::ostringstream os;
  os << cpu << "; logical cpus " << std::thread::hardware_concurrency() << "; compiler " << __VERSION__;
  return os.str();
}

// --------------------------------------------------------------- datasets

PreparedSet prepare_dataset(const RunConfig& cfg) {
  const auto& m = cfg.model;
  PreparedSet set;
  if (cfg.dataset.kind == "synthetic") {
    set.category = synth_category(m.num_keypoints);
    auto synth = synth_dataset(cfg.dataset.synthetic_count, m.num_keypoints, m.input_height, m.input_width,
                               cfg.dataset.synthetic_seed);
    for (size_t i = 0; i < synth.size(); ++i) {
      const BBox box = figure_bbox(synth[i].figure);
      KeypointSet gt = synth[i].sample.keypoints;
      gt.frame = Frame::kOriginalPixels;
      set.original_gt.push_back(gt);
      set.areas.push_back(box.w * box.h);
      set.crops.push_back(CropTransform{});
      set.ids.push_back(static_cast<int64_t>(i) + 1);
      set.samples.push_back(std::move(synth[i].sample));
    }
    return set;
  }
  const Dataset ds = load_annotations(cfg.dataset.annotations);
  set.category = ds.category;
  if (ds.category.num_keypoints() != m.num_keypoints) {
    throw ConfigError("dataset has " + std::to_string(ds.category.num_keypoints()) +
                      " keypoints but model.num_keypoints is " + std::to_string(m.num_keypoints));
  }
  const fs::path root = cfg.dataset.image_root.empty() ? fs::path(cfg.dataset.annotations).parent_path()
                                                        : fs::path(cfg.dataset.image_root);
  std::map<std::string, Image> cache;
  for (const auto& r : ds.records) {
    auto it = cache.find(r.file_name);
    if (it == cache.end()) it = cache.emplace(r.file_name, read_ppm((root / r.file_name).string())).first;
    Crop crop = crop_instance(it->second, r.bbox, m.input_height, m.input_width, cfg.dataset.crop_margin);
    Sample s;
    s.keypoints = transform_keypoints(r.keypoints, crop.transform, m.input_width, m.input_height);
    s.keypoints.frame = Frame::kInputPixels;
    s.image = std::move(crop.input);
    set.samples.push_back(std::move(s));
    set.crops.push_back(crop.transform);
    set.original_gt.push_back(r.keypoints);
    set.areas.push_back(r.area);
    set.ids.push_back(r.id);
  }
  if (set.samples.empty()) throw ConfigError("dataset " + cfg.dataset.annotations + " has no usable annotations");
  return set;
}

// ----------------------------------------------------------------- train

namespace {

std::vector<Parameter<float>> moment_entries(const std::vector<Parameter<float>>& params,
                                             const OptimizerState<float>& state) {
  std::vector<Parameter<float>> out;
  for (size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i].tensor.shape();
    out.push_back({"adam.m." + params[i].name, Tensor<float>::from(s, state.first_moment[i])});
    out.push_back({"adam.v." + params[i].name, Tensor<float>::from(s, state.second_moment[i])});
  }
  return out;
}

void save_checkpoint(const RunConfig& cfg, const Model<float>& model, const OptimizerState<float>& state,
                     const std::vector<double>& losses) {
  save_weights(model, out_path(cfg, "checkpoint.weights"));
  write_file_bytes(out_path(cfg, "checkpoint.optim"),
                   encode_archive<float>(model.config().fingerprint(), moment_entries(model.parameters(), state)));
  json st = {{"step", state.step}, {"fingerprint", model.config().fingerprint()}, {"losses", losses}};
  write_text(out_path(cfg, "train_state.json"), st.dump() + "\n");
}

int64_t load_checkpoint(const RunConfig& cfg, Model<float>& model, OptimizerState<float>& state,
                        std::vector<double>& losses) {
  load_weights(model, out_path(cfg, "checkpoint.weights"));
  auto moments = moment_entries(model.parameters(), state);
  assign_archive<float>(moments, decode_archive(read_file_bytes(out_path(cfg, "checkpoint.optim"))),
                        out_path(cfg, "checkpoint.optim"), model.config().fingerprint());
  for (size_t i = 0; i < state.first_moment.size(); ++i) {
    const auto m = moments[2 * i].tensor.data();
    const auto v = moments[2 * i + 1].tensor.data();
    state.first_moment[i].assign(m.begin(), m.end());
    state.second_moment[i].assign(v.begin(), v.end());
  }
  const json st = json::parse(read_text(out_path(cfg, "train_state.json")));
  state.step = st.at("step").get<int64_t>();
  losses = st.at("losses").get<std::vector<double>>();
  if (static_cast<int64_t>(losses.size()) != state.step) throw FormatError("train_state.json: loss history length");
  return state.step;
}

}  // namespace

TrainSummary run_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_manifest(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const PreparedSet data = prepare_dataset(cfg);
  const auto flip_perm = data.category.flip_permutation();
  const int64_t n = static_cast<int64_t>(data.samples.size());
  const int64_t batch = std::min(cfg.train.batch, n);
  const int64_t steps_per_epoch = n / batch;
  const double sigma = sigma_for(cfg.model);

  Model<float> model(cfg.model, cfg.seed);
  auto& params = model.parameters();
  OptimizerState<float> state = make_optimizer_state(params);
  std::vector<double> losses;
  TrainSummary summary;
  if (cfg.train.resume) {
    summary.first_step = load_checkpoint(cfg, model, state, losses);
    log << "resumed at step " << summary.first_step << "\n";
  }

  const int64_t total = cfg.train.steps;
  const int64_t end = cfg.train.stop_after > 0 ? std::min(total, cfg.train.stop_after) : total;
  const int64_t report_every = std::max<int64_t>(1, total / 20);
  int64_t cached_epoch = -1;
  std::vector<int64_t> order;
  for (int64_t step = summary.first_step; step < end; ++step) {
    const int64_t epoch = step / steps_per_epoch;
    if (epoch != cached_epoch) {
      order = shuffled_indices(n, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    std::vector<Sample> picked;
    const int64_t pos = (step % steps_per_epoch) * batch;
    for (int64_t i = 0; i < batch; ++i) {
      const int64_t idx = order[pos + i];
      if (cfg.train.augment) {
        std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(epoch), static_cast<uint32_t>(idx)};
        Rng rng(seq);
        picked.push_back(augment(data.samples[idx], rng, cfg.train.augment_policy, flip_perm));
      } else {
        picked.push_back(data.samples[idx]);
      }
    }
    const Batch b = make_batch(picked, sigma);
    zero_grad(params);
    Tensor<float> loss = mse_loss(model.forward(b.images), b.targets, b.weights);
    const double value = loss.item();
    loss.backward();
    AdamOptions opts;
    opts.lr = step_schedule_lr(cfg.train.lr, static_cast<double>(step) / total, cfg.train.milestones,
                               cfg.train.gamma);
    adam_step(params, state, opts);
    losses.push_back(value);
    if ((step + 1) % report_every == 0 || step + 1 == end) {
      log << "step " << step + 1 << "/" << total << " loss " << fmt(value) << " lr " << fmt(opts.lr) << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && (step + 1) % cfg.train.checkpoint_every == 0) {
      save_checkpoint(cfg, model, state, losses);
    }
  }
  save_checkpoint(cfg, model, state, losses);
  save_weights(model, out_path(cfg, "model.weights"));

  std::ostringstream step_csv, epoch_csv;
  step_csv << "step,epoch,lr,loss\n";
  epoch_csv << "epoch,mean_loss\n";
  double epoch_sum = 0;
  for (size_t s = 0; s < losses.size(); ++s) {
    const int64_t epoch = static_cast<int64_t>(s) / steps_per_epoch;
    const double lr = step_schedule_lr(cfg.train.lr, static_cast<double>(s) / total, cfg.train.milestones,
                                       cfg.train.gamma);
    step_csv << s << "," << epoch << "," << fmt(lr) << "," << fmt(losses[s]) << "\n";
    epoch_sum += losses[s];
    if ((static_cast<int64_t>(s) + 1) % steps_per_epoch == 0) {
      summary.epoch_losses.push_back(epoch_sum / steps_per_epoch);
      epoch_csv << epoch << "," << fmt(summary.epoch_losses.back()) << "\n";
      epoch_sum = 0;
    }
  }
  write_text(out_path(cfg, "loss.csv"), step_csv.str());
  write_text(out_path(cfg, "epoch_loss.csv"), epoch_csv.str());
  summary.last_step = static_cast<int64_t>(losses.size());
  summary.step_losses = std::move(losses);
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log << "trained " << summary.last_step - summary.first_step << " steps in " << fmt(summary.seconds) << " s\n";
  return summary;
}

// ------------------------------------------------------------------ eval

EvalResult run_eval(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_manifest(cfg);
  const PreparedSet data = prepare_dataset(cfg);
  const auto& m = cfg.model;
  const int64_t k = m.num_keypoints, hh = m.heatmap_height(), hw = m.heatmap_width();
  const int64_t n = static_cast<int64_t>(data.samples.size());

  std::optional<Model<float>> model;
  if (!cfg.eval.oracle) {
    model.emplace(m, cfg.seed);
    const std::string weights = cfg.weights.empty() ? out_path(cfg, "model.weights") : cfg.weights;
    load_weights(*model, weights);
    log << "loaded " << weights << "\n";
  }

  std::vector<float> heatmaps;
  heatmaps.reserve(static_cast<size_t>(n * k * hh * hw));
  for (int64_t start = 0; start < n; start += cfg.eval.batch) {
    const int64_t stop = std::min(n, start + cfg.eval.batch);
    if (cfg.eval.oracle) {
      for (int64_t i = start; i < stop; ++i) {
        const HeatmapSet hm = encode_targets(data.samples[i].keypoints, hh, hw, sigma_for(m));
        heatmaps.insert(heatmaps.end(), hm.maps.data().begin(), hm.maps.data().end());
      }
      continue;
    }
    std::vector<float> images;
    for (int64_t i = start; i < stop; ++i) {
      images.insert(images.end(), data.samples[i].image.data.begin(), data.samples[i].image.data.end());
    }
    NoGradGuard no_grad;
    const Tensor<float> out =
        model->forward(Tensor<float>::from({stop - start, 3, m.input_height, m.input_width}, std::move(images)));
    heatmaps.insert(heatmaps.end(), out.data().begin(), out.data().end());
  }

  EvalResult result;
  result.pck_fraction = cfg.eval.pck_fraction;
  std::vector<InstanceMatch> matches;
  json predictions = json::array();
  const int64_t plane = k * hh * hw;
  for (int64_t i = 0; i < n; ++i) {
    const KeypointSet decoded =
        decode_heatmaps(std::span<const float>(heatmaps.data() + i * plane, static_cast<size_t>(plane)), k, hh, hw);
    const KeypointSet pred = transform_back(decoded, data.crops[i]);
    const KeypointSet& gt = data.original_gt[i];
    const double score = std::accumulate(pred.scores.begin(), pred.scores.end(), 0.0) / k;
    const auto o = oks(pred, gt, data.areas[i], data.category.oks_sigmas);
    if (o) {
      matches.push_back({data.ids[i], data.areas[i], true, score, *o});
      result.instance_oks.push_back(*o);
    }
    const double norm = keypoint_extent(gt);
    if (norm > 0) result.pck.add(pred, gt, cfg.eval.pck_fraction, norm);
    std::vector<double> flat;
    for (const auto& p : pred.points) flat.insert(flat.end(), {p.x, p.y});
    predictions.push_back({{"id", data.ids[i]}, {"score", score}, {"keypoints", flat}});
  }
  if (result.pck.correct.empty()) {
    result.pck.correct.assign(static_cast<size_t>(k), 0);
    result.pck.labeled.assign(static_cast<size_t>(k), 0);
  }
  result.ap = average_precision(matches);

  write_text(out_path(cfg, "metrics.json"), result.to_json());
  write_text(out_path(cfg, "metrics.csv"), result.to_csv());
  write_text(out_path(cfg, "predictions.json"), predictions.dump(1) + "\n");
  if (cfg.eval.dump_heatmaps) {
    std::vector<Parameter<float>> entry{{"heatmaps", Tensor<float>::from({n, k, hh, hw}, heatmaps)}};
    write_file_bytes(out_path(cfg, "heatmaps.bin"), encode_archive<float>(m.fingerprint(), entry));
  }
  log << "instances " << n << " AP " << fmt(100 * result.ap.ap) << " PCK@" << cfg.eval.pck_fraction << " "
      << fmt(100 * result.pck.mean()) << "\n";
  return result;
}

// ----------------------------------------------------------------- bench

namespace {

template <typename T>
std::vector<double> time_forward(const RunConfig& cfg) {
  const auto& m = cfg.model;
  const Model<T> model(m, cfg.seed);
  Rng rng(cfg.seed);
  const auto pixels = uniform(rng, cfg.bench.batch * 3 * m.input_height * m.input_width, 0.0, 1.0);
  const Tensor<T> input = Tensor<T>::from({cfg.bench.batch, 3, m.input_height, m.input_width},
                                          std::vector<T>(pixels.begin(), pixels.end()));
  NoGradGuard no_grad;
  auto once = [&] {
    const Tensor<T> out = model.forward(input);
    if (cfg.bench.include_decode) {
      const auto f = out.template cast<float>();
      const int64_t plane = m.num_keypoints * m.heatmap_height() * m.heatmap_width();
      for (int64_t b = 0; b < cfg.bench.batch; ++b) {
        decode_heatmaps(f.data().subspan(static_cast<size_t>(b * plane), static_cast<size_t>(plane)),
                        m.num_keypoints, m.heatmap_height(), m.heatmap_width());
      }
    }
  };
  for (int64_t i = 0; i < cfg.bench.warmup; ++i) once();
  std::vector<double> ms;
  for (int64_t i = 0; i < cfg.bench.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    once();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return ms;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

std::string BenchReport::to_json() const {
  json j = {{"variant", variant},
            {"batch", batch},
            {"iters", iters},
            {"warmup", warmup},
            {"precision", precision},
            {"include_decode", include_decode},
            {"threads", 1},
            {"mean_ms", mean_ms},
            {"median_ms", median_ms},
            {"p95_ms", p95_ms},
            {"fps", fps},
            {"samples_ms", samples_ms},
            {"host", host},
            {"note", "single-threaded CPU measurement; not comparable to published GPU throughput"}};
  return j.dump(2) + "\n";
}

BenchReport run_bench(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_manifest(cfg);
  const auto ms = cfg.bench.precision == "fp64" ? time_forward<double>(cfg) : time_forward<float>(cfg);
  BenchReport r;
  r.variant = cfg.model.name;
  r.batch = cfg.bench.batch;
  r.iters = cfg.bench.iters;
  r.warmup = cfg.bench.warmup;
  r.precision = cfg.bench.precision;
  r.include_decode = cfg.bench.include_decode;
  r.samples_ms = ms;
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
  r.median_ms = quantile(ms, 0.5);
  r.p95_ms = quantile(ms, 0.95);
  r.fps = 1000.0 * r.batch / r.median_ms;
  r.host = host_fingerprint();
  write_text(out_path(cfg, "bench.json"), r.to_json());
  log << "variant " << r.variant << " batch " << r.batch << " warmup " << r.warmup << " iters " << r.iters
      << " precision " << r.precision << (r.include_decode ? " +decode" : "") << "\n"
      << "latency ms: mean " << fmt(r.mean_ms) << " median " << fmt(r.median_ms) << " p95 " << fmt(r.p95_ms)
      << "\nfps " << fmt(r.fps) << " (CPU, 1 thread; not comparable to GPU figures)\n"
      << "host " << r.host << "\n";
  return r;
}

// --------------------------------------------------------------- inspect

InspectReport run_inspect(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_manifest(cfg);
  const auto& m = cfg.model;
  const Model<float> model(m, cfg.seed);
  Image image;
  if (!cfg.inspect.image.empty()) {
    image = read_ppm(cfg.inspect.image);
    if (image.width != m.input_width || image.height != m.input_height) {
      throw ConfigError("inspect.image must be " + std::to_string(m.input_width) + "x" +
                        std::to_string(m.input_height));
    }
  } else {
    image = synth_dataset(1, m.num_keypoints, m.input_height, m.input_width, cfg.dataset.synthetic_seed)[0].sample.image;
  }
  ForwardTrace<float> trace;
  Tensor<float> out;
  {
    NoGradGuard no_grad;
    out = model.forward(image_to_tensor(image), &trace);
  }
  InspectReport r;
  std::vector<const Tensor<float>*> maps;
  if (trace.stem) {
    r.stage_names.push_back("stem");
    maps.push_back(&*trace.stem);
  }
  for (size_t i = 0; i < trace.stages.size(); ++i) {
    r.stage_names.push_back("stage" + std::to_string(i + 1));
    maps.push_back(&trace.stages[i]);
  }
  for (const auto* t : maps) r.stage_shapes.push_back(t->shape());
  r.output_shape = out.shape();
  r.params = model.count_params();
  r.macs = model.macs();

  log << "variant " << m.name << " input 3x" << m.input_height << "x" << m.input_width << "\n";
  json shapes = json::array();
  for (size_t i = 0; i < maps.size(); ++i) {
    const Shape& s = r.stage_shapes[i];
    log << "  " << r.stage_names[i] << " " << shape_str(s) << " stride " << m.input_height / s[s.size() - 2] << "\n";
    shapes.push_back({{"name", r.stage_names[i]}, {"shape", s}, {"stride", m.input_height / s[s.size() - 2]}});
  }
  log << "  heatmaps " << shape_str(r.output_shape) << "\n";
  log << "params " << r.params << "\n";
  json breakdown = json::object();
  for (const auto& p : model.param_breakdown()) {
    log << "  " << p.module << " " << p.params << "\n";
    breakdown[p.module] = p.params;
  }
  log << "macs " << r.macs << " (" << fmt(r.macs / 1e9) << " G)\n";

  if (cfg.inspect.dump_features) {
    for (size_t i = 0; i < maps.size(); ++i) {
      const Tensor<float>& t = *maps[i];  // [1,C,H,W] or [C,H,W]
      const Shape& s = t.shape();
      const int64_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
      std::vector<float> plane(static_cast<size_t>(h * w), 0.0f);
      const auto d = t.data();
      for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t j = 0; j < h * w; ++j) plane[j] += d[ch * h * w + j] / c;
      }
      const std::string file = out_path(cfg, "features_" + r.stage_names[i] + ".pgm");
      write_pgm(file, plane, w, h);
      r.dumped_files.push_back(file);
      log << "wrote " << file << "\n";
    }
  }
  json j = {{"variant", m.name}, {"stages", shapes}, {"heatmaps", r.output_shape},
            {"params", r.params}, {"param_breakdown", breakdown}, {"macs", r.macs}};
  write_text(out_path(cfg, "inspect.json"), j.dump(2) + "\n");
  return r;
}

// ----------------------------------------------------------------- synth

void run_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_manifest(cfg);
  const auto& m = cfg.model;
  const auto samples =
      synth_dataset(cfg.dataset.synthetic_count, m.num_keypoints, m.input_height, m.input_width, cfg.dataset.synthetic_seed);
  write_synth_dataset(samples, synth_category(m.num_keypoints), cfg.out);
  log << "wrote " << samples.size() << " samples to " << cfg.out << "\n";
}

}  // namespace ssmpose
