#include "optb/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "optb/runner.hpp"

namespace optb::cli {

namespace {

codec::CodecMode parse_mode(const std::string& name) {
  if (name == "exact64") return codec::CodecMode::ExactInt64;
  if (name == "exact128") return codec::CodecMode::ExactInt128;
  if (name == "f64") return codec::CodecMode::Float64Faithful;
  if (name == "lossless64") return codec::CodecMode::LosslessOffset64;
  if (name == "lossless128") return codec::CodecMode::LosslessOffset128;
  throw CLI::ValidationError("--mode",
                             "expected exact64|exact128|f64|lossless64|lossless128, got " + name);
}

std::vector<double> parse_weights(const std::string& csv) {
  std::vector<double> weights;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) weights.push_back(std::stod(item));
  return weights;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_to(const std::string& path, const std::function<void(std::ostream&)>& writer) {
  if (path.empty() || path == "-") {
    writer(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open output file " + path);
  writer(out);
  if (!out) throw FormatError("failed writing " + path);
}

struct EncodeArgs {
  std::string mode = "exact64";
  std::uint32_t height = 0, width = 0, channels = 1;
  std::string out;
  std::vector<std::string> files;
};

int cmd_encode(const EncodeArgs& args) {
  const codec::CodecMode mode = parse_mode(args.mode);
  const codec::ImageShape shape{args.height, args.width, args.channels};
  std::vector<codec::Image> images;
  for (const std::string& file : args.files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open image file " + file);
    codec::Image img;
    img.shape = shape;
    img.pixels.resize(shape.pixel_count());
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size() || in.peek() != EOF) {
      throw FormatError("image file " + file + " is not exactly " +
                        std::to_string(img.pixels.size()) + " bytes");
    }
    images.push_back(std::move(img));
  }
  codec::write_optb_file(args.out, codec::encode(images, mode));
  std::cout << "wrote " << args.out << " (" << images.size() << " images, "
            << codec::mode_name(mode) << ")\n";
  return kExitOk;
}

struct DecodeArgs {
  std::string input;
  std::string out_dir = ".";
};

int cmd_decode(const DecodeArgs& args) {
  const codec::EncodedBatch enc = codec::read_optb_file(args.input);
  const std::vector<codec::Image> images = codec::decode(enc);
  std::filesystem::create_directories(args.out_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::filesystem::path path =
        std::filesystem::path(args.out_dir) / ("img_" + std::to_string(i) + ".raw");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open output file " + path.string());
    out.write(reinterpret_cast<const char*>(images[i].pixels.data()),
              static_cast<std::streamsize>(images[i].pixels.size()));
  }
  std::cout << "decoded " << images.size() << " images from " << args.input << "\n";
  return kExitOk;
}

struct TrainArgs {
  RunConfig config;
  std::string mode;
  std::string records;
  std::string weights_csv;
  std::string activation = "relu";
  std::string loss = "mse";
  std::string out;
  std::string ledger_csv;
  std::string timing_csv;
  bool flag_ed = false;
  bool flag_mp = false;
  bool flag_baseline = false;
  std::string flag_sc;
};

void add_common_flags(CLI::App* cmd, TrainArgs& args) {
  RunConfig& cfg = args.config;
  cmd->add_option("--records", args.records, "raw binary record file (label byte + C*H*W pixels)");
  cmd->add_option("--height", cfg.shape.height, "image height")->capture_default_str();
  cmd->add_option("--width", cfg.shape.width, "image width")->capture_default_str();
  cmd->add_option("--channels", cfg.shape.channels, "image channels")->capture_default_str();
  cmd->add_option("--classes", cfg.num_classes, "class count")->capture_default_str();
  cmd->add_option("--examples", cfg.blob_examples, "synthetic dataset size")
      ->capture_default_str();
  cmd->add_option("--blob-spread", cfg.blob_spread, "blob center spread")->capture_default_str();
  cmd->add_option("--blob-sigma", cfg.blob_sigma, "per-pixel noise sigma")->capture_default_str();
  cmd->add_option("--data-seed", cfg.data_seed, "dataset seed")->capture_default_str();
  cmd->add_option("--layers", cfg.hidden_layers, "hidden dense+activation pairs")
      ->capture_default_str();
  cmd->add_option("--hidden-width", cfg.hidden_width, "hidden layer width")
      ->capture_default_str();
  cmd->add_option("--act", args.activation, "relu|sigmoid")->capture_default_str();
  cmd->add_option("--loss", args.loss, "crossentropy|mse")->capture_default_str();
  cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--batch", cfg.batch, "batch size")->capture_default_str();
  cmd->add_option("--lr", cfg.learning_rate, "learning rate")->capture_default_str();
  cmd->add_option("--loss-scale", cfg.loss_scale, "static loss scale")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "run seed (OPTB_SEED overrides)")->capture_default_str();
  cmd->add_option("--class-weights", args.weights_csv, "comma-separated class weights");
  cmd->add_option("--prep-cost-ms", cfg.prep_cost_ms, "injected per-epoch preparation cost")
      ->capture_default_str();
  cmd->add_flag("--no-timings", cfg.suppress_timings,
                "zero wall-clock columns so the CSV is bit-reproducible");
}

void finalize_config(TrainArgs& args, bool pipelines_from_bench) {
  RunConfig& cfg = args.config;
  if (!args.records.empty()) {
    cfg.source = RunConfig::Source::Records;
    cfg.records_path = args.records;
  }
  if (args.activation == "relu") {
    cfg.activation = nn::ActivationKind::ReLU;
  } else if (args.activation == "sigmoid") {
    cfg.activation = nn::ActivationKind::Sigmoid;
  } else {
    throw CLI::ValidationError("--act", "expected relu|sigmoid");
  }
  if (args.loss == "crossentropy" || args.loss == "ce") {
    cfg.loss_kind = nn::LossKind::CrossEntropy;
  } else if (args.loss == "mse") {
    cfg.loss_kind = nn::LossKind::MSE;
  } else {
    throw CLI::ValidationError("--loss", "expected crossentropy|mse");
  }
  if (!args.weights_csv.empty()) cfg.class_weights = parse_weights(args.weights_csv);

  if (!pipelines_from_bench) {
    if (args.flag_ed && args.mode.empty()) {
      throw CLI::ValidationError("--ed", "requires an encode mode via --mode");
    }
    if (args.flag_baseline && (args.flag_ed || args.flag_mp || !args.flag_sc.empty())) {
      throw CLI::ValidationError("--baseline",
                                 "cannot be combined with --ed, --mp or --sc");
    }
    cfg.encoded_batches = args.flag_ed;
    cfg.mixed_precision = args.flag_mp;
    if (!args.flag_sc.empty()) cfg.checkpoint_plan = args.flag_sc;
  }
  if (!args.mode.empty()) cfg.mode = parse_mode(args.mode);

  if (const char* env = std::getenv("OPTB_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
  }
}

int cmd_train(TrainArgs& args) {
  finalize_config(args, false);
  metering::MemoryLedger ledger;
  const RunResult result = train_run(args.config, &ledger);
  write_to(args.out, [&](std::ostream& out) { write_train_csv(out, args.config, result); });
  if (!args.ledger_csv.empty()) {
    write_to(args.ledger_csv, [&](std::ostream& out) {
      ledger.write_event_csv(out);
      out << "\n";
      ledger.write_summary_csv(out);
    });
  }
  if (!args.timing_csv.empty()) {
    write_to(args.timing_csv,
             [&](std::ostream& out) { result.pipeline_report.write_csv(out); });
  }
  return kExitOk;
}

int cmd_bench(TrainArgs& args, const std::string& pipelines_csv) {
  finalize_config(args, true);
  if (!args.flag_sc.empty()) args.config.checkpoint_plan = args.flag_sc;
  const std::vector<std::string> pipelines = split_list(pipelines_csv);
  if (pipelines.empty()) throw CLI::ValidationError("--pipelines", "no pipelines given");
  const std::vector<BenchRow> rows = bench_run(args.config, pipelines);
  write_to(args.out, [&](std::ostream& out) { write_bench_csv(out, args.config, rows); });
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"training data-flow and gradient-flow optimization toolkit"};
  app.require_subcommand(1);

  EncodeArgs encode_args;
  CLI::App* encode = app.add_subcommand("encode", "pack raw 8-bit images into one OPTB batch");
  encode->add_option("--mode", encode_args.mode, "exact64|exact128|f64|lossless64|lossless128")
      ->capture_default_str();
  encode->add_option("--height", encode_args.height, "image height")->required();
  encode->add_option("--width", encode_args.width, "image width")->required();
  encode->add_option("--channels", encode_args.channels, "image channels")
      ->capture_default_str();
  encode->add_option("--out", encode_args.out, "output .optb path")->required();
  encode->add_option("files", encode_args.files, "raw image files (H*W*C bytes each)")
      ->required();

  DecodeArgs decode_args;
  CLI::App* decode = app.add_subcommand("decode", "unpack an OPTB batch into raw images");
  decode->add_option("input", decode_args.input, "input .optb file")->required();
  decode->add_option("--out-dir", decode_args.out_dir, "output directory")
      ->capture_default_str();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train the reference MLP under a pipeline");
  add_common_flags(train, train_args);
  train->add_flag("--baseline", train_args.flag_baseline, "standard pipeline (default)");
  train->add_flag("--ed", train_args.flag_ed, "encoded batches + decode layer + parallel prepare");
  train->add_flag("--mp", train_args.flag_mp, "half-precision storage with single masters");
  train->add_option("--sc", train_args.flag_sc,
                    "checkpoint plan: comma indices, sqrt or auto:<budget>");
  train->add_option("--mode", train_args.mode, "encode mode (required with --ed)");
  train->add_flag("--serialize-ed", train_args.config.ed_serialize,
                  "disable producer overlap (measurement aid)");
  train->add_option("--dump-dir", train_args.config.dump_dir, "directory for encoded batches");
  train->add_flag("--dump", train_args.config.dump_to_disk, "dump encoded batches to --dump-dir");
  train->add_flag("--warm-start", train_args.config.warm_start,
                  "train from batches already dumped in --dump-dir");
  train->add_option("--out", train_args.out, "metrics CSV path (default stdout)");
  train->add_option("--ledger-csv", train_args.ledger_csv, "memory ledger CSV path");
  train->add_option("--timing-csv", train_args.timing_csv, "pipeline timing CSV path");

  TrainArgs bench_args;
  std::string pipelines_csv = "B,E-D,M-P,S-C,E-D+S-C,S-C+M-P,E-D+S-C+M-P";
  CLI::App* bench = app.add_subcommand("bench", "compare pipelines on one task");
  add_common_flags(bench, bench_args);
  bench->add_option("--pipelines", pipelines_csv, "comma list of B,E-D,M-P,S-C and + combos")
      ->capture_default_str();
  bench->add_option("--sc", bench_args.flag_sc, "checkpoint plan for S-C rows")
      ->capture_default_str();
  bench->add_option("--mode", bench_args.mode, "encode mode for E-D rows");
  bench->add_option("--out", bench_args.out, "comparison CSV path (default stdout)");

  try {
    app.parse(argc, argv);
    if (encode->parsed()) return cmd_encode(encode_args);
    if (decode->parsed()) return cmd_decode(decode_args);
    if (train->parsed()) return cmd_train(train_args);
    if (bench->parsed()) return cmd_bench(bench_args, pipelines_csv);
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace optb::cli
