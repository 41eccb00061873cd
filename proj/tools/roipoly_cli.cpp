// roipoly command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "roipoly/decoder.hpp"
#include "roipoly/encoding.hpp"
#include "roipoly/io.hpp"
#include "roipoly/metrics.hpp"
#include "roipoly/pyramid.hpp"
#include "roipoly/training.hpp"

namespace fs = std::filesystem;
using namespace roipoly;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

io::RunConfig base_config(const std::string& path) {
  return path.empty() ? io::default_config() : io::load_config(path);
}

Model load_model(const std::string& path) {
  Model m = model_from_checkpoint(load_checkpoint(path));
  for (const auto& [name, t] : m.params) {
    for (double v : t.data) {
      if (!std::isfinite(v)) throw NumericalFailure("checkpoint parameter '" + name + "' is not finite");
    }
  }
  return m;
}

std::string parent_dir(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  return p.empty() ? std::string(".") : p.string();
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  std::string coco, out, mode = "index", config;
  int m = 0;
  double spacing = 0.0;
  bool cyclic = false;
};

int run_encode(const EncodeArgs& a) {
  io::RunConfig cfg = base_config(a.config);
  const int m = a.m > 0 ? a.m : cfg.decoder.M;
  EncodingOptions enc = cfg.encoding;
  if (a.spacing > 0.0) enc.spacing = a.spacing;
  if (a.cyclic) enc.cyclic_index = true;
  const CostMode mode = cost_mode_from_string(a.mode);
  const io::CocoDataset ds = io::read_coco(a.coco);
  if (ds.holes_ignored) std::cerr << "roipoly: warning: ignored " << ds.holes_ignored << " inner ring(s)\n";
  std::vector<io::TargetRecord> recs;
  std::size_t ordered = 0;
  for (const io::CocoAnnotation& an : ds.annotations) {
    const Polygon ring = canonical_ring(an.polygon);
    VertexTargetSet t;
    try {
      t = build_target(ring, m, mode, enc, std::to_string(an.id));
    } catch (const InvalidInput& e) {
      throw InvalidInput("annotation " + std::to_string(an.id) + ": " + e.what());
    }
    ordered += preserves_cyclic_order(t, ring) ? 1 : 0;
    recs.push_back({an.id, an.image_id, std::move(t)});
  }
  io::write_text(a.out, io::targets_to_json(recs, mode, m, enc.spacing, enc.cyclic_index).dump(1) + "\n");
  std::cout << "encoded " << recs.size() << " polygons (mode=" << to_string(mode) << ", M=" << m
            << "); cyclic order preserved in " << ordered << "/" << recs.size() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, image_dir, out, loss_csv, resume, save_config;
  std::optional<int> epochs, samples;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  io::RunConfig cfg = base_config(a.config);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.samples) cfg.samples = *a.samples;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  std::vector<TrainSample> data;
  if (a.data.empty()) {
    data = gen_synthetic(cfg.data_seed, cfg.samples, cfg.grid, cfg.synth_options());
  } else {
    const io::CocoDataset ds = io::read_coco(a.data);
    data = io::samples_from_coco(ds, a.image_dir.empty() ? parent_dir(a.data) : a.image_dir, cfg.decoder.M,
                                 cfg.in_channels, cfg.cost_mode, cfg.encoding);
  }
  std::optional<Model> start;
  if (!a.resume.empty()) {
    start = model_from_checkpoint(load_checkpoint(a.resume));
    if (!(start->decoder == cfg.decoder)) throw InvalidInput("resumed checkpoint architecture differs from the config");
  }
  const TrainResult res = train_toy(
      cfg.train_config(), data,
      [&](const EpochLoss& e) {
        if (!a.quiet && (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == cfg.epochs)) {
          std::cout << "epoch " << e.epoch << "  l_cor " << e.l_cor << "  l_cls " << e.l_cls << "  total " << e.total
                    << "\n";
        }
      },
      start);
  save_checkpoint(to_checkpoint(res.model), a.out);
  io::write_loss_csv(res.curve, a.loss_csv);
  if (!a.save_config.empty()) io::save_config(cfg, a.save_config);
  std::cout << "trained " << cfg.epochs << " epochs on " << data.size() << " images; checkpoint " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, boxes, data, image_dir, features, image, out, dump, config;
  std::optional<int> image_id;
  std::optional<double> tau;
};

void check_finite(const InferenceResult& r) {
  for (const GroupOutput& g : r.raw) {
    for (std::size_t k = 0; k < g.scores.size(); ++k) {
      if (!std::isfinite(g.scores[k]) || !std::isfinite(g.vertices[k].x) || !std::isfinite(g.vertices[k].y)) {
        throw NumericalFailure("decoder produced a non-finite output");
      }
    }
  }
}

int run_infer(const InferArgs& a) {
  const io::RunConfig cfg = base_config(a.config);
  const double tau = a.tau.value_or(cfg.tau);
  if (!(tau >= 0.0 && tau < 1.0)) throw UsageError("--tau must lie in [0, 1)");
  const int sources = !a.data.empty() + !a.features.empty() + !a.image.empty();
  if (sources != 1) throw UsageError("give exactly one of --data, --features, --image");
  if (a.data.empty() && !a.image_id) throw UsageError("--features and --image need --image-id");
  const Model model = load_model(a.checkpoint);
  const io::BoxesByImage boxes = io::read_boxes(a.boxes);
  auto boxes_of = [&](int id) {
    auto it = boxes.find(id);
    return it == boxes.end() ? std::vector<BBox>{} : it->second;
  };
  auto load_image = [&](const std::string& path, int width, int height) {
    const ImageRaster raw = io::read_pnm(path);
    if (width > 0 && (raw.width != width || raw.height != height)) {
      throw InvalidInput("'" + path + "': size differs from the annotation");
    }
    const int c = model.pyramid.in_channels;
    if (raw.channels < c) throw InvalidInput("'" + path + "' has fewer than " + std::to_string(c) + " channels");
    ImageRaster img(raw.width, raw.height, c);
    std::copy(raw.data.begin(), raw.data.begin() + static_cast<std::ptrdiff_t>(img.data.size()), img.data.begin());
    return img;
  };

  std::vector<std::pair<int, InferenceResult>> results;
  if (!a.data.empty()) {
    const io::CocoDataset ds = io::read_coco(a.data);
    const std::string dir = a.image_dir.empty() ? parent_dir(a.data) : a.image_dir;
    for (const io::CocoImage& im : ds.images) {
      const ImageRaster img = load_image((fs::path(dir) / im.file_name).string(), im.width, im.height);
      results.emplace_back(im.id, infer(img, boxes_of(im.id), model, tau));
    }
  } else if (!a.features.empty()) {
    results.emplace_back(*a.image_id, infer(read_fpyr(a.features), boxes_of(*a.image_id), model, tau));
  } else {
    results.emplace_back(*a.image_id, infer(load_image(a.image, 0, 0), boxes_of(*a.image_id), model, tau));
  }

  std::vector<Detection> dets;
  io::json dump = {{"tau", tau}, {"images", io::json::array()}};
  for (const auto& [id, r] : results) {
    check_finite(r);
    for (const Detection& d : io::detections_from(id, r)) dets.push_back(d);
    io::json groups = io::json::array();
    for (const GroupOutput& g : r.raw) groups.push_back(io::raw_group_json(g));
    dump["images"].push_back({{"image_id", id}, {"groups", groups}});
  }
  io::write_results(dets, a.out);
  if (!a.dump.empty()) io::write_text(a.dump, dump.dump() + "\n");
  std::cout << "inferred " << dets.size() << " polygons on " << results.size() << " image(s) at tau " << tau << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string results, gt, json_out, config;
  bool floorplan = false;
  bool no_boundary = false;
};

int run_eval(const EvalArgs& a) {
  io::RunConfig cfg = base_config(a.config);
  if (a.floorplan) cfg.metrics.floorplan = true;
  if (a.no_boundary) cfg.metrics.boundary_ap = false;
  const io::CocoDataset gt = io::read_coco(a.gt);
  if (gt.holes_ignored) std::cerr << "roipoly: warning: ignored " << gt.holes_ignored << " inner ring(s)\n";
  const std::vector<Detection> dets = io::read_results(a.results);
  const MetricReport r = evaluate(dets, io::eval_images(gt), cfg.metrics);
  std::cout << format_report_table(r);
  if (r.n_ratio_deviation) {
    std::cout << "N-ratio deviation " << std::showpos << std::fixed << std::setprecision(2) << *r.n_ratio_deviation
              << std::noshowpos << "\n";
  }
  if (!a.json_out.empty()) io::write_text(a.json_out, io::report_to_json(r).dump(1) + "\n");
  return kOk;
}

// ---------------------------------------------------------------------------

struct CostArgs {
  std::string config, preset, image;
  std::optional<double> n_e;
};

int run_cost(const CostArgs& a) {
  io::RunConfig cfg = a.config.empty() ? io::default_config(io::Preset::full_small) : io::load_config(a.config);
  if (!a.preset.empty()) io::detail::apply_preset(cfg, io::preset_from_string(a.preset));
  if (a.n_e && !a.image.empty()) throw UsageError("give at most one of --n-e and --image");
  double n_e = 8500.0;  // levels 2..5 of a 320 x 320 image
  if (a.n_e) {
    if (!(*a.n_e > 0.0)) throw UsageError("--n-e must be positive");
    n_e = *a.n_e;
  } else if (!a.image.empty()) {
    int w = 0, h = 0;
    char x = 0;
    std::istringstream is(a.image);
    if (!(is >> w >> x >> h) || x != 'x' || w <= 0 || h <= 0) throw UsageError("--image expects WxH, e.g. 320x320");
    n_e = pyramid_token_count(h, w);
  }
  const DecoderConfig& d = cfg.decoder;
  const AttentionCostReport r = attention_cost_estimate(d, n_e);
  std::cout << "preset " << io::to_string(cfg.preset) << ": M=" << d.M << " N=" << d.N << " C=" << d.C << " K=" << d.K
            << " H_r=" << d.Hr << " W_r=" << d.Wr << "\n";
  std::cout << std::left << std::setw(8) << "mode" << std::right << std::setw(16) << "encoder_tokens" << std::setw(18)
            << "encoder_ops" << std::setw(18) << "decoder_ops" << "\n";
  std::cout << std::setprecision(0) << std::fixed;
  for (auto [name, c] : {std::pair{"global", &r.global}, std::pair{"roi", &r.roi}}) {
    std::cout << std::left << std::setw(8) << name << std::right << std::setw(16) << c->encoder_tokens << std::setw(18)
              << c->encoder_ops << std::setw(18) << c->decoder_ops << "\n";
  }
  std::cout << "N*H_r*W_r = " << r.roi.encoder_tokens << " vs N_e = " << r.global.encoder_tokens << "\n";
  std::cout << std::setprecision(6) << std::defaultfloat;
  std::cout << "decoder ratio global/roi = " << r.global.decoder_ops / r.roi.decoder_ops << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> count, grid;
  bool rect_only = false;
};

int run_gen(const GenArgs& a) {
  io::RunConfig cfg = base_config(a.config);
  if (a.seed) cfg.data_seed = *a.seed;
  if (a.count) cfg.samples = *a.count;
  if (a.grid) cfg.grid = *a.grid;
  if (a.rect_only) {
    cfg.synth.rotated = false;
    cfg.synth.l_shapes = false;
    cfg.synth.rectangles = true;
  }
  cfg.validate();
  const std::vector<TrainSample> data = gen_synthetic(cfg.data_seed, cfg.samples, cfg.grid, cfg.synth_options());
  fs::create_directories(a.out);
  const io::CocoDataset ds = io::coco_from_samples(data);
  io::BoxesByImage boxes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    io::write_pnm(data[i].image, (fs::path(a.out) / ds.images[i].file_name).string());
    boxes[data[i].image_id] = data[i].boxes;
  }
  io::write_coco(ds, (fs::path(a.out) / "annotations.json").string());
  io::write_boxes(boxes, (fs::path(a.out) / "boxes.json").string());
  std::cout << "wrote " << data.size() << " images, " << ds.annotations.size() << " polygons to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct VizArgs {
  std::string input, gt, out;
  int image_id = 0;
  int width = 0, height = 0;
};

int run_viz(const VizArgs& a) {
  const std::string text = io::read_text(a.input);
  const io::json root = io::parse_json(text, "'" + a.input + "'");
  std::vector<io::SvgPolygon> items;
  int w = a.width, h = a.height;
  std::optional<io::CocoDataset> gt;
  if (!a.gt.empty()) gt = io::read_coco(a.gt);
  const io::SvgStyle gt_style{"#2ca02c", "none", 0.5, 0.6};
  if (gt) {
    for (const Polygon& p : gt->polygons_of(a.image_id)) items.push_back({p, gt_style});
  }
  if (root.is_array()) {
    for (const Detection& d : io::parse_results(text, "'" + a.input + "'")) {
      if (d.image_id == a.image_id) items.push_back({d.polygon, {}});
    }
  } else {
    const io::CocoDataset ds = io::parse_coco(text, "'" + a.input + "'");
    const io::CocoImage& im = ds.image(a.image_id);
    if (w == 0) w = im.width;
    if (h == 0) h = im.height;
    for (const Polygon& p : ds.polygons_of(a.image_id)) items.push_back({p, gt ? io::SvgStyle{} : gt_style});
  }
  if (gt && (w == 0 || h == 0)) {
    const io::CocoImage& im = gt->image(a.image_id);
    if (w == 0) w = im.width;
    if (h == 0) h = im.height;
  }
  if (w <= 0 || h <= 0) throw UsageError("image size unknown: pass --width/--height or --gt");
  io::write_svg(w, h, items, a.out);
  std::cout << "wrote " << items.size() << " polygons to " << a.out << "\n";
  return kOk;
}

int fail(int code, const std::string& msg) {
  std::cerr << "roipoly: " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ordered-vertex polygon decoding: encode targets, train, infer, evaluate."};
  app.require_subcommand(1);

  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "COCO annotations -> ordered vertex targets (JSON)");
  encode->add_option("--coco", enc.coco, "COCO annotation file")->required();
  encode->add_option("--out", enc.out, "output JSON")->required();
  encode->add_option("--mode", enc.mode, "cost mode")->check(CLI::IsMember({"index", "euclidean"}));
  encode->add_option("--M", enc.m, "vertex queries per polygon (default: config)")->check(CLI::Range(3, 100000));
  encode->add_option("--spacing", enc.spacing, "contour sampling spacing in px (default: config)")
      ->check(CLI::PositiveNumber);
  encode->add_flag("--cyclic", enc.cyclic, "cyclic index distance");
  encode->add_option("--config", enc.config, "run config file");

  TrainArgs tr;
  auto* train = app.add_subcommand("train-toy", "train on synthetic scenes or a COCO dataset");
  train->add_option("--config", tr.config, "run config file");
  train->add_option("--data", tr.data, "COCO annotations (default: generate from the config)");
  train->add_option("--image-dir", tr.image_dir, "image directory (default: next to --data)");
  train->add_option("--out", tr.out, "checkpoint path (RPCK)")->required();
  train->add_option("--loss-csv", tr.loss_csv, "loss curve CSV")->required();
  train->add_option("--epochs", tr.epochs, "override epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--samples", tr.samples, "override synthetic sample count")->check(CLI::PositiveNumber);
  train->add_option("--seed", tr.seed, "override training seed");
  train->add_option("--resume", tr.resume, "start from this checkpoint");
  train->add_option("--save-config", tr.save_config, "write the resolved config here");
  train->add_flag("--quiet", tr.quiet, "no per-epoch output");

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "checkpoint + boxes + images/features -> COCO results");
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "RPCK checkpoint")->required();
  infer_cmd->add_option("--boxes", inf.boxes, "boxes JSON")->required();
  infer_cmd->add_option("--data", inf.data, "COCO file listing the images");
  infer_cmd->add_option("--image-dir", inf.image_dir, "image directory (default: next to --data)");
  infer_cmd->add_option("--features", inf.features, "FPYR feature pyramid of one image");
  infer_cmd->add_option("--image", inf.image, "PGM/PPM of one image");
  infer_cmd->add_option("--image-id", inf.image_id, "image id for --features/--image");
  infer_cmd->add_option("--tau", inf.tau, "vertex score threshold (default: config)")->check(CLI::Range(0.0, 1.0));
  infer_cmd->add_option("--out", inf.out, "results JSON")->required();
  infer_cmd->add_option("--dump", inf.dump, "raw decoder output JSON");
  infer_cmd->add_option("--config", inf.config, "run config file");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "results + ground truth -> metric report");
  eval->add_option("--results", ev.results, "COCO results JSON")->required();
  eval->add_option("--gt", ev.gt, "COCO annotations")->required();
  eval->add_option("--json", ev.json_out, "write the report as JSON");
  eval->add_option("--config", ev.config, "run config file");
  eval->add_flag("--floorplan", ev.floorplan, "also report room/corner/angle scores");
  eval->add_flag("--no-boundary", ev.no_boundary, "skip boundary AP");

  CostArgs co;
  auto* cost = app.add_subcommand("estimate-cost", "attention cost, global vs. RoI encoder");
  cost->add_option("--config", co.config, "run config file (default: full_small preset)");
  cost->add_option("--preset", co.preset, "architecture preset")
      ->check(CLI::IsMember({"desk", "full_small", "full_large"}));
  cost->add_option("--n-e", co.n_e, "global encoder token count (default 8500)");
  cost->add_option("--image", co.image, "derive N_e from an image size WxH");

  GenArgs ge;
  auto* gen = app.add_subcommand("gen-data", "synthetic COCO dataset with images and boxes");
  gen->add_option("--out", ge.out, "output directory")->required();
  gen->add_option("--seed", ge.seed, "data seed (default: config)");
  gen->add_option("--count", ge.count, "number of images (default: config)")->check(CLI::PositiveNumber);
  gen->add_option("--grid", ge.grid, "image size in px (default: config)")->check(CLI::Range(64, 4096));
  gen->add_flag("--rect-only", ge.rect_only, "axis-aligned rectangles only");
  gen->add_option("--config", ge.config, "run config file");

  VizArgs vz;
  auto* viz = app.add_subcommand("viz", "polygons of one image -> SVG");
  viz->add_option("--input", vz.input, "COCO annotations or results JSON")->required();
  viz->add_option("--image-id", vz.image_id, "image to draw")->required();
  viz->add_option("--gt", vz.gt, "ground-truth COCO file drawn underneath");
  viz->add_option("--width", vz.width, "canvas width");
  viz->add_option("--height", vz.height, "canvas height");
  viz->add_option("--out", vz.out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = "invalid arguments";
    return fail(kUsage, msg + " (see --help)");
  }

  try {
    if (*encode) return run_encode(enc);
    if (*train) return run_train(tr);
    if (*infer_cmd) return run_infer(inf);
    if (*eval) return run_eval(ev);
    if (*cost) return run_cost(co);
    if (*gen) return run_gen(ge);
    if (*viz) return run_viz(vz);
  } catch (const UsageError& e) {
    return fail(kUsage, e.what());
  } catch (const NumericalFailure& e) {
    return fail(kNumeric, std::string("numerical failure: ") + e.what());
  } catch (const Error& e) {
    return fail(kData, e.what());
  } catch (const std::exception& e) {
    return fail(kData, e.what());
  }
  return fail(kUsage, "no subcommand");
}
