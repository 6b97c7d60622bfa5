#include "mvss/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "mvss/checkpoint.hpp"
#include "mvss/config.hpp"
#include "mvss/error.hpp"
#include "mvss/image_io.hpp"
#include "mvss/metrics.hpp"
#include "mvss/network.hpp"
#include "mvss/ops.hpp"
#include "mvss/supervision.hpp"
#include "mvss/synthdata.hpp"

namespace fs = std::filesystem;

namespace mvss::cli {

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

// "a/b/c/d" -> four non-negative weights normalized to sum 1
void apply_mix(synth::GenConfig& cfg, const std::string& mix) {
  std::vector<double> parts;
  std::stringstream ss(mix);
  std::string tok;
  while (std::getline(ss, tok, '/')) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw ConfigError("mix component '" + tok + "' is not a number");
    }
    if (pos != tok.size()) throw ConfigError("mix component '" + tok + "' is not a number");
    parts.push_back(v);
  }
  if (parts.size() != 4) {
    throw ConfigError("mix must be four '/'-separated weights (splice/copymove/inpaint/authentic)");
  }
  double sum = 0.0;
  for (double v : parts) {
    if (v < 0.0) throw ConfigError("mix weights must be non-negative");
    sum += v;
  }
  if (sum <= 0.0) throw ConfigError("mix weights must not all be zero");
  cfg.mix_splice = parts[0] / sum;
  cfg.mix_copymove = parts[1] / sum;
  cfg.mix_inpaint = parts[2] / sum;
  cfg.mix_authentic = parts[3] / sum;
}

std::vector<OptionSpec> gen_schema() {
  return {
      {"out", OptType::Str, "", true, "output dataset directory"},
      {"seed", OptType::Uint, "1", false, "generator seed"},
      {"count", OptType::Int, "128", false, "number of samples"},
      {"size", OptType::Int, "64", false, "image height and width"},
      {"mix", OptType::Str, "1/1/1/1", false,
       "class weights splice/copymove/inpaint/authentic"},
      {"region-min", OptType::Real, "0.08", false, "min tampered-area fraction"},
      {"region-max", OptType::Real, "0.35", false, "max tampered-area fraction"},
      {"noise-sigma", OptType::Real, "0.03", false, "sensor noise level"},
      {"splice-noise-factor", OptType::Real, "3.0", false,
       "donor noise multiple for splices"},
  };
}

int cmd_gen(const std::vector<std::string>& args, std::ostream& out) {
  ParsedOptions opt = parse_options(gen_schema(), args);

  synth::GenConfig cfg;
  cfg.h = opt.get_int("size");
  cfg.w = opt.get_int("size");
  cfg.seed = opt.get_uint("seed");
  cfg.region_min = opt.get_real("region-min");
  cfg.region_max = opt.get_real("region-max");
  cfg.noise_sigma = opt.get_real("noise-sigma");
  cfg.splice_noise_factor = opt.get_real("splice-noise-factor");
  apply_mix(cfg, opt.get_str("mix"));
  cfg.validate();

  const int count = opt.get_int("count");
  if (count <= 0) throw ConfigError("count must be positive");
  const std::string dir = opt.get_str("out");

  synth::write_dataset(dir, cfg, count);

  std::map<synth::Kind, int> counts;
  for (synth::Kind kind : synth::plan_kinds(cfg, count)) ++counts[kind];
  for (synth::Kind kind : {synth::Kind::Splice, synth::Kind::CopyMove,
                           synth::Kind::Inpaint, synth::Kind::Authentic}) {
    out << synth::kind_to_string(kind) << " " << counts[kind] << "\n";
  }
  out << "total " << count << "\n";
  out << "wrote " << dir << "\n";
  return 0;
}

std::vector<OptionSpec> train_schema() {
  return {
      {"data", OptType::Str, "", true, "dataset directory (from gen)"},
      {"out", OptType::Str, "", true, "output directory for checkpoint and report"},
      {"head", OptType::Str, "convgem", false, "classification head: gmp|gem|convgem"},
      {"alpha", OptType::Real, "0.16", false, "segmentation loss weight"},
      {"beta", OptType::Real, "0.04", false, "classification loss weight"},
      {"epochs", OptType::Int, "60", false, "training epochs"},
      {"batch", OptType::Int, "8", false, "batch size (half manipulated, half authentic)"},
      {"lr", OptType::Real, "0.05", false, "learning rate"},
      {"momentum", OptType::Real, "0.9", false, "SGD momentum"},
      {"lambda0", OptType::Real, "0.99", false, "initial ConvGeM skip weight"},
      {"gamma", OptType::Real, "2.0", false, "ConvGeM decay exponent"},
      {"k", OptType::Int, "64", false, "backbone width"},
      {"edge-channels", OptType::Int, "16", false, "edge pathway width"},
      {"seed", OptType::Uint, "1", false, "initialization and shuffling seed"},
  };
}

int cmd_train(const std::vector<std::string>& args, std::ostream& out) {
  ParsedOptions opt = parse_options(train_schema(), args);

  net::ModelConfig mc;
  mc.k = opt.get_int("k");
  mc.edge_channels = opt.get_int("edge-channels");
  mc.head = net::head_kind_from_string(opt.get_str("head"));
  mc.schedule.lambda0 = opt.get_real("lambda0");
  mc.schedule.gamma = opt.get_real("gamma");
  mc.schedule.total_epochs = opt.get_int("epochs");
  mc.seed = opt.get_uint("seed");

  sup::TrainConfig tc;
  tc.weights.alpha = opt.get_real("alpha");
  tc.weights.beta = opt.get_real("beta");
  tc.epochs = opt.get_int("epochs");
  tc.batch = opt.get_int("batch");
  tc.lr = opt.get_real("lr");
  tc.momentum = opt.get_real("momentum");
  tc.seed = opt.get_uint("seed");
  tc.validate();

  synth::Dataset ds = synth::read_dataset(opt.get_str("data"));

  net::MvssModel model(mc);
  sup::TrainReport report = sup::train(model, ds.samples, tc);

  const std::string dir = opt.get_str("out");
  fs::create_directories(dir);
  net::save_checkpoint(dir + "/checkpoint.bin", model, tc.epochs);
  write_text_file(dir + "/train_report.txt", report.to_table());

  out << report.to_table();
  out << "wrote " << dir << "/checkpoint.bin\n";
  return 0;
}

struct EvalResult {
  metrics::MetricReport report;
};

EvalResult evaluate(net::MvssModel& model, const synth::Dataset& ds, double threshold) {
  Tape::NoGradGuard guard;
  std::vector<Tensor> seg_preds;
  std::vector<Tensor> masks;
  std::vector<double> scores;
  std::vector<int> labels;
  seg_preds.reserve(ds.samples.size());
  for (const synth::Sample& sample : ds.samples) {
    net::Prediction pred = model.predict(sample.image, 0, ops::Mode::Eval);
    seg_preds.push_back(pred.seg);
    masks.push_back(sample.pixel_mask);
    scores.push_back(pred.score.item());
    labels.push_back(sample.label);
  }
  return {metrics::compute_metrics(seg_preds, masks, scores, labels, threshold)};
}

std::vector<OptionSpec> eval_schema() {
  return {
      {"data", OptType::Str, "", true, "dataset directory"},
      {"checkpoint", OptType::Str, "", true, "checkpoint file (from train)"},
      {"out", OptType::Str, "", false, "optional directory for metrics.txt"},
      {"threshold", OptType::Real, "0.5", false, "mask binarization threshold"},
  };
}

int cmd_eval(const std::vector<std::string>& args, std::ostream& out) {
  ParsedOptions opt = parse_options(eval_schema(), args);

  const double threshold = opt.get_real("threshold");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must be in (0,1)");
  }

  net::LoadedModel loaded = net::load_checkpoint(opt.get_str("checkpoint"));
  synth::Dataset ds = synth::read_dataset(opt.get_str("data"));

  EvalResult result = evaluate(*loaded.model, ds, threshold);
  const std::string text = result.report.to_text();
  out << text;

  const std::string dir = opt.get_str("out");
  if (!dir.empty()) {
    fs::create_directories(dir);
    write_text_file(dir + "/metrics.txt", text);
  }
  return 0;
}

std::vector<OptionSpec> infer_schema() {
  return {
      {"checkpoint", OptType::Str, "", true, "checkpoint file (from train)"},
      {"image", OptType::Str, "", true, "input image (binary PPM, P6)"},
      {"out", OptType::Str, ".", false, "output directory"},
      {"threshold", OptType::Real, "0.5", false, "mask binarization threshold"},
  };
}

int cmd_infer(const std::vector<std::string>& args, std::ostream& out) {
  ParsedOptions opt = parse_options(infer_schema(), args);

  const double threshold = opt.get_real("threshold");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must be in (0,1)");
  }

  net::LoadedModel loaded = net::load_checkpoint(opt.get_str("checkpoint"));
  const std::string image_path = opt.get_str("image");
  Tensor image = img::read_ppm(image_path);
  const Shape s = image.shape();
  if (s.h % 16 != 0 || s.w % 16 != 0) {
    const int sh = std::max(16, (s.h / 16) * 16);
    const int sw = std::max(16, (s.w / 16) * 16);
    throw DimensionError("image is " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         "; height and width must be multiples of 16 (e.g. crop to " +
                         std::to_string(sh) + "x" + std::to_string(sw) + ")");
  }

  Tape::NoGradGuard guard;
  net::Prediction pred = loaded.model->predict(image, 0, ops::Mode::Eval);

  Tensor mask = Tensor::zeros({1, 1, s.h, s.w});
  for (int i = 0; i < mask.numel(); ++i) {
    mask.data()[i] = pred.seg.data()[i] >= threshold ? 1.0 : 0.0;
  }
  Tensor edge_full = ops::bilinear_resize(pred.edge, s.h, s.w);

  const std::string dir = opt.get_str("out");
  fs::create_directories(dir);
  const std::string stem = fs::path(image_path).stem().string();
  const std::string base = (fs::path(dir) / stem).string();
  img::write_pgm(base + "_mask.pgm", mask);
  img::write_pgm(base + "_prob.pgm", pred.seg);
  img::write_pgm(base + "_edge.pgm", edge_full);

  out << "score " << std::fixed << std::setprecision(6) << pred.score.item() << "\n";
  out << "wrote " << base << "_mask.pgm, " << base << "_prob.pgm, " << base << "_edge.pgm\n";
  return 0;
}

}  // namespace

std::string usage_text() {
  std::ostringstream os;
  os << "usage: mvss <command> [--config PATH] [--key value ...]\n"
     << "\n"
     << "commands:\n"
     << "  gen    generate a synthetic tampered-image dataset\n"
     << "  train  train a detector on a generated dataset\n"
     << "  eval   compute pixel and image metrics on a dataset\n"
     << "  infer  run one image through a trained model\n"
     << "\n"
     << "Options may come from a key=value config file (--config) and from\n"
     << "flags; flags win. Run 'mvss <command> --help' for the option list.\n";
  return os.str();
}

namespace {

std::string command_help(const std::string& cmd) {
  std::vector<OptionSpec> schema;
  if (cmd == "gen") schema = gen_schema();
  if (cmd == "train") schema = train_schema();
  if (cmd == "eval") schema = eval_schema();
  if (cmd == "infer") schema = infer_schema();
  std::ostringstream os;
  os << "usage: mvss " << cmd << " [options]\noptions:\n" << describe_options(schema);
  return os.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.empty() || args[0] == "help" || args[0] == "--help" || args[0] == "-h") {
      out << usage_text();
      return args.empty() ? 2 : 0;
    }
    const std::string cmd = args[0];
    std::vector<std::string> rest(args.begin() + 1, args.end());
    const bool want_help =
        !rest.empty() && (rest[0] == "--help" || rest[0] == "-h");
    if (cmd == "gen") {
      if (want_help) { out << command_help(cmd); return 0; }
      return cmd_gen(rest, out);
    }
    if (cmd == "train") {
      if (want_help) { out << command_help(cmd); return 0; }
      return cmd_train(rest, out);
    }
    if (cmd == "eval") {
      if (want_help) { out << command_help(cmd); return 0; }
      return cmd_eval(rest, out);
    }
    if (cmd == "infer") {
      if (want_help) { out << command_help(cmd); return 0; }
      return cmd_infer(rest, out);
    }
    throw ConfigError("unknown command '" + cmd + "' (expected gen|train|eval|infer)");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace mvss::cli
