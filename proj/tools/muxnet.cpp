// SPDX-License-Identifier: Apache-2.0
//
// muxnet command-line tool.
//
// Exit codes: 0 success, 1 verification failure, 2 input error, 3 config error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "muxnet/muxnet.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitInputError = 2;
constexpr int kExitConfigError = 3;

int exit_code_for(muxnet::Errc code) {
  using muxnet::Errc;
  switch (code) {
    case Errc::LoopConfigError:
    case Errc::InvalidArgument:
    case Errc::EnumerationTooLarge:
    case Errc::OddSplitUnsupported:
      return kExitConfigError;
    default:
      return kExitInputError;
  }
}

std::set<int> parse_class_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item.substr(first), &used);
    } catch (const std::exception&) {
      muxnet::fail(muxnet::Errc::LoopConfigError, "bad class id '" + item + "'");
    }
    if (v < 0 || v >= muxnet::kMaxClasses) muxnet::fail(muxnet::Errc::LoopConfigError, "class id outside 0-9");
    out.insert(v);
  }
  return out;
}

std::vector<int> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) muxnet::fail(muxnet::Errc::IoError, "cannot open " + path);
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      labels.push_back(std::stoi(line.substr(first)));
    } catch (const std::exception&) {
      muxnet::fail(muxnet::Errc::CorruptArtifact, "bad label line '" + line + "'");
    }
  }
  return labels;
}

muxnet::CompiledModel load_compiled(const std::string& path) {
  const auto bytes = muxnet::read_file(path);
  return muxnet::deserialize(bytes);
}

struct Options {
  std::string model;
  std::string out;
  std::string signal;
  std::string labels;
  std::string trace;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> synthetic;
  bool report = false;
  int fixture_class = -1;

  // verify
  std::uint64_t cases = 100'000;
  std::uint64_t segments = 100;
  bool perturb_table = false;

  // loop / eval
  std::string trigger_classes = "2,3";
  std::string trigger_classes_ch1;
  double pwm_freq_hz = 10.0;
  double duty = 0.1;
  double stim_duration_s = 1.0;
  int cic_order = 3;
  int cic_decimation = 8;
  int cic_delay = 1;
  int input_bits = 16;
  int input_shift = -1;
  double raw_rate_hz = 800.0;
  std::vector<int> thresholds;
  std::size_t epochs = 20;
  double nrem_bias = 0.7;

  // cost
  std::vector<int> sweep_n = {2};
  std::vector<int> sweep_m = {0};
  std::uint64_t gating_segments = 4;
  std::uint64_t gating_capacity = 0;

  // dump-table
  int table_n = 2;
  int table_m = 3;
};

muxnet::LoopConfig loop_config(const Options& o) {
  muxnet::LoopConfig cfg;
  cfg.cic = {o.cic_order, o.cic_decimation, o.cic_delay, o.input_bits};
  cfg.raw_rate_hz = o.raw_rate_hz;
  cfg.input_shift = o.input_shift;
  cfg.thresholds = o.thresholds;
  cfg.channels = {
      muxnet::StimChannelConfig{0, parse_class_list(o.trigger_classes), o.pwm_freq_hz, o.duty, o.stim_duration_s},
      muxnet::StimChannelConfig{1, parse_class_list(o.trigger_classes_ch1), o.pwm_freq_hz, o.duty,
                                o.stim_duration_s},
  };
  return cfg;
}

std::unique_ptr<std::ofstream> open_trace(const Options& o, muxnet::MpuEngine& engine) {
  if (o.trace.empty()) return nullptr;
  auto os = std::make_unique<std::ofstream>(o.trace, std::ios::trunc);
  if (!*os) muxnet::fail(muxnet::Errc::IoError, "cannot write " + o.trace);
  *os << "cycle,group,bitplane,key,selected_entry,accumulator\n";
  engine.set_trace(os.get());
  return os;
}

/// Raw single-channel source: a signal file, or a seeded synthetic run.
std::pair<muxnet::SignalFile, std::vector<int>> load_source(const Options& o, const muxnet::ModelHeader& h) {
  if (o.synthetic) {
    const auto stages = muxnet::synthetic_stages(*o.synthetic, o.epochs, o.nrem_bias);
    auto s = muxnet::synthesize_signal(*o.synthetic, stages, h.segment_seconds * h.votes_per_epoch, o.raw_rate_hz,
                                       o.input_bits);
    return {std::move(s), stages};
  }
  if (o.signal.empty()) muxnet::fail(muxnet::Errc::LoopConfigError, "need --signal or --synthetic");
  auto s = muxnet::deserialize_signal(muxnet::read_file(o.signal));
  if (s.sample_rate_hz != o.raw_rate_hz) {
    muxnet::fail(muxnet::Errc::LoopConfigError, "signal rate differs from --raw-rate");
  }
  if (s.bits > o.input_bits) muxnet::fail(muxnet::Errc::LoopConfigError, "signal wider than --input-bits");
  return {std::move(s), {}};
}

int cmd_init_model(const Options& o) {
  const auto model = o.fixture_class >= 0 ? muxnet::make_constant_model(o.fixture_class)
                                          : muxnet::make_default_float_model(o.seed);
  muxnet::write_file(o.out, muxnet::serialize(model));
  std::cout << "wrote " << o.out << " (" << model.layers.size() << " layers)\n";
  return kExitOk;
}

int cmd_compile(const Options& o) {
  const auto bytes = muxnet::read_file(o.model);
  const auto model = muxnet::compile(muxnet::deserialize_float(bytes));
  muxnet::write_file(o.out, muxnet::serialize(model));
  std::cout << "wrote " << o.out << "\n";
  std::cout << "weight_memory_bits=" << model.weight_memory_bits() << "\n";
  if (o.report) {
    std::uint64_t lut_total = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const auto& l = model.layers[i];
      const auto chunks = static_cast<std::uint64_t>(l.weights.rows * l.weights.chunks);
      const auto cost = muxnet::memory_cost(l.spec.n, l.spec.mode_m, chunks);
      lut_total += cost.lut_bits;
      std::cout << "layer " << i << ": m=" << l.spec.mode_m << " n=" << l.spec.n << " chunks=" << chunks
                << " muxnet_bits=" << cost.muxnet_bits << " lut_bits=" << cost.lut_bits << "\n";
    }
    std::cout << "lut_memory_bits=" << lut_total << "\n";
  }
  return kExitOk;
}

int cmd_verify(const Options& o) {
  muxnet::VerifyOptions vo;
  vo.seed = o.seed;
  vo.random_cases = o.cases;
  vo.model_segments = o.segments;
  vo.perturb_table = o.perturb_table;
  std::vector<muxnet::SuiteResult> results;
  results.push_back(muxnet::verify_exhaustive_small(vo));
  results.push_back(muxnet::verify_random_mode(5, vo));
  results.push_back(muxnet::verify_random_mode(10, vo));
  results.push_back(muxnet::verify_decomposition(vo));
  results.push_back(muxnet::verify_cic(vo));
  if (!o.model.empty()) results.push_back(muxnet::verify_model(load_compiled(o.model), vo));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << ": " << r.cases << " cases, " << r.mismatches
              << " mismatches\n";
    if (!r.passed()) {
      std::cout << "  first counterexample: " << r.counterexample << "\n";
      ok = false;
    }
  }
  return ok ? kExitOk : kExitVerifyFailed;
}

int cmd_loop(const Options& o) {
  const auto model = load_compiled(o.model);
  const auto cfg = loop_config(o);
  auto [signal, stages] = load_source(o, model.header);
  muxnet::MuxInference inference(model);
  auto trace = open_trace(o, inference.engine());
  const auto log = muxnet::run_closed_loop(signal.channel(0), inference, cfg);
  std::ofstream out(o.out, std::ios::trunc);
  if (!out) muxnet::fail(muxnet::Errc::IoError, "cannot write " + o.out);
  muxnet::write_run_log(out, log);
  std::size_t used = 0;
  for (const auto& e : log.epochs) used += static_cast<std::size_t>(e.classifications_used);
  std::cout << "epochs=" << log.epochs.size() << " pulses=" << log.pulses.size() << " classifications=" << used
            << " of " << log.epochs.size() * static_cast<std::size_t>(model.header.votes_per_epoch) << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const auto model = load_compiled(o.model);
  auto [signal, stages] = load_source(o, model.header);
  const auto labels = o.labels.empty() ? stages : read_labels(o.labels);
  muxnet::MuxInference inference(model);
  auto trace = open_trace(o, inference.engine());
  const auto result = muxnet::evaluate(signal.channel(0), labels, inference, loop_config(o));
  if (!o.out.empty()) {
    std::ofstream out(o.out, std::ios::trunc);
    if (!out) muxnet::fail(muxnet::Errc::IoError, "cannot write " + o.out);
    muxnet::write_evaluation_csv(out, result.epochs, model.header.votes_per_epoch);
  } else {
    muxnet::write_evaluation_csv(std::cout, result.epochs, model.header.votes_per_epoch);
  }
  std::cerr << "epochs=" << result.epochs.size() << " labeled=" << result.labeled << " accuracy=" << result.accuracy()
            << " mean_classifications=" << result.mean_classifications() << "\n";
  return kExitOk;
}

int cmd_synth(const Options& o) {
  const muxnet::ModelHeader h;
  const auto stages = muxnet::synthetic_stages(o.seed, o.epochs, o.nrem_bias);
  const auto signal =
      muxnet::synthesize_signal(o.seed, stages, h.segment_seconds * h.votes_per_epoch, o.raw_rate_hz, o.input_bits);
  muxnet::write_file(o.out, muxnet::serialize_signal(signal));
  if (!o.labels.empty()) {
    std::ofstream lab(o.labels, std::ios::trunc);
    if (!lab) muxnet::fail(muxnet::Errc::IoError, "cannot write " + o.labels);
    for (int s : stages) lab << s << "\n";
  }
  std::cout << "wrote " << o.out << " (" << signal.samples.size() << " samples, " << stages.size() << " epochs)\n";
  return kExitOk;
}

int cmd_cost(const Options& o) {
  muxnet::ModelHeader header;
  std::vector<muxnet::LayerSpec> specs;
  std::optional<muxnet::CompiledModel> compiled;
  if (o.model.empty()) {
    for (const auto& l : muxnet::make_default_float_model(o.seed).layers) specs.push_back(l.spec);
  } else {
    const auto bytes = muxnet::read_file(o.model);
    try {
      compiled = muxnet::deserialize(bytes);
      header = compiled->header;
      for (const auto& l : compiled->layers) specs.push_back(l.spec);
    } catch (const muxnet::Error& e) {
      if (e.code() != muxnet::Errc::BadArtifact) throw;
      const auto fm = muxnet::deserialize_float(bytes);
      header = fm.header;
      for (const auto& l : fm.layers) specs.push_back(l.spec);
    }
  }

  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::trunc);
    if (!file) muxnet::fail(muxnet::Errc::IoError, "cannot write " + o.out);
  }
  std::ostream& csv = o.out.empty() ? std::cout : file;
  std::ostream& info = o.out.empty() ? std::cerr : std::cout;
  muxnet::write_cost_csv_header(csv);
  for (int n : o.sweep_n) {
    for (int m : o.sweep_m) {
      auto layer_specs = specs;
      for (const auto& sp : layer_specs) {
        const int mode = m > 0 ? m : sp.mode_m;
        if (n < 1 || mode < 2 || n * mode > muxnet::kMaxTableIndexBits) {
          muxnet::fail(muxnet::Errc::InvalidArgument, "sweep point n=" + std::to_string(n) + " m=" +
                                                          std::to_string(mode) + " exceeds the table index budget");
        }
      }
      header.n = n;
      for (auto& s : layer_specs) {
        s.n = n;
        if (m > 0) s.mode_m = m;
      }
      for (const auto& row : muxnet::layer_cost_rows(header, layer_specs, n, m)) muxnet::write_cost_csv_row(csv, row);
    }
  }

  // Simulated run of the compiled model for weight-memory block gating.
  if (o.gating_segments > 0) {
    const auto model = compiled ? *compiled : muxnet::compile(muxnet::make_default_float_model(o.seed));
    muxnet::MuxInference inference(model);
    const std::uint64_t capacity = o.gating_capacity ? o.gating_capacity : inference.total_weight_chunks();
    muxnet::GatingTracker gating(capacity);
    inference.engine().set_batch_observer(gating.observer());
    std::mt19937_64 rng(o.seed);
    const int bits = model.header.activation_bits;
    std::uniform_int_distribution<std::int64_t> dist(muxnet::signed_min(bits), muxnet::signed_max(bits));
    std::vector<std::int64_t> seg(static_cast<std::size_t>(model.header.input_channels * model.header.input_length));
    for (std::uint64_t s = 0; s < o.gating_segments; ++s) {
      for (auto& v : seg) v = dist(rng);
      (void)inference.logits(seg);
    }
    const auto& c = inference.engine().counters();
    info << "simulated_segments=" << o.gating_segments << " cycles=" << c.cycles << " mux_selects=" << c.mux_selects
         << " memory_bits_read=" << c.memory_bits_read << " adder_ops=" << c.adder_ops << "\n";
    info << "gating_blocks=6 capacity_chunks=" << capacity << " active_block_cycles=";
    for (std::size_t b = 0; b < gating.active_cycles().size(); ++b) info << (b ? ";" : "") << gating.active_cycles()[b];
    info << " saved_fraction=" << gating.saved_fraction() << "\n";
  }
  return kExitOk;
}

int cmd_dump_table(const Options& o) {
  muxnet::dump_table(muxnet::build_static_table(o.table_n, o.table_m), std::cout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MUX-based multiplier-free NN compiler, simulator and closed-loop pipeline"};
  app.set_config("--config", "", "Read options from an INI/TOML file");
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "Print the effective configuration and exit");
  app.require_subcommand(1);
  Options o;

  auto* init = app.add_subcommand("init-model", "Write a desk-scale float model (.muxf)");
  init->add_option("--out", o.out, "Output .muxf path")->required();
  init->add_option("--seed", o.seed, "Weight seed");
  init->add_option("--fixture-class", o.fixture_class, "Zero-weight model that always predicts this class");

  auto* compile = app.add_subcommand("compile", "Compile a float model into a .muxn artifact");
  compile->add_option("--model", o.model, "Input .muxf")->required();
  compile->add_option("--out", o.out, "Output .muxn")->required();
  compile->add_flag("--report", o.report, "Print per-layer memory accounting");

  auto* verify = app.add_subcommand("verify", "Run the bit-exact oracle suites");
  verify->add_option("--model", o.model, "Also check this .muxn against the integer reference");
  verify->add_option("--seed", o.seed, "Random seed");
  verify->add_option("--cases", o.cases, "Random inner products per mode");
  verify->add_option("--segments", o.segments, "Random segments for --model");
  verify->add_flag("--perturb-table", o.perturb_table, "Corrupt one table entry (fault injection)")->group("");

  auto add_loop_options = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "Compiled .muxn")->required();
    sub->add_option("--signal", o.signal, "Raw .muxs signal");
    sub->add_option("--synthetic", o.synthetic, "Use a seeded synthetic source");
    sub->add_option("--epochs", o.epochs, "Synthetic epochs");
    sub->add_option("--nrem-bias", o.nrem_bias, "Synthetic probability of an N2/N3 epoch");
    sub->add_option("--trace", o.trace, "Write the per-select engine trace (CSV)");
    sub->add_option("--trigger-classes", o.trigger_classes, "Classes that trigger channel 0 (comma list)");
    sub->add_option("--trigger-classes-ch1", o.trigger_classes_ch1, "Classes that trigger channel 1");
    sub->add_option("--pwm-freq", o.pwm_freq_hz, "PWM frequency (Hz)");
    sub->add_option("--duty", o.duty, "PWM duty cycle (0, 1]");
    sub->add_option("--stim-duration", o.stim_duration_s, "Seconds of stimulation per trigger");
    sub->add_option("--cic-order", o.cic_order, "CIC order N");
    sub->add_option("--cic-decimation", o.cic_decimation, "CIC decimation R");
    sub->add_option("--cic-delay", o.cic_delay, "CIC differential delay M");
    sub->add_option("--input-bits", o.input_bits, "Raw sample width");
    sub->add_option("--input-shift", o.input_shift, "Right shift after the CIC (-1: derive)");
    sub->add_option("--raw-rate", o.raw_rate_hz, "Raw sample rate (Hz)");
    sub->add_option("--thresholds", o.thresholds, "Per-class early-stop thresholds")->delimiter(',');
  };
  auto* loop = app.add_subcommand("loop", "Run the closed loop and write a JSON-lines log");
  add_loop_options(loop);
  loop->add_option("--out", o.out, "Run log path")->required();

  auto* eval = app.add_subcommand("eval", "Score epoch decisions against labels (CSV report)");
  add_loop_options(eval);
  eval->add_option("--labels", o.labels, "One stage id per epoch");
  eval->add_option("--out", o.out, "CSV report path (default stdout)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic .muxs signal and its labels");
  synth->add_option("--out", o.out, "Output .muxs")->required();
  synth->add_option("--labels", o.labels, "Output label file");
  synth->add_option("--seed", o.seed, "Seed");
  synth->add_option("--epochs", o.epochs, "Epochs");
  synth->add_option("--nrem-bias", o.nrem_bias, "Probability of an N2/N3 epoch");
  synth->add_option("--raw-rate", o.raw_rate_hz, "Sample rate (Hz)");
  synth->add_option("--input-bits", o.input_bits, "Sample width");

  auto* cost = app.add_subcommand("cost", "Memory/MUX/cycle cost sweep (CSV)");
  cost->add_option("--model", o.model, "Layer shapes from a .muxf/.muxn (default: desk model)");
  cost->add_option("--out", o.out, "CSV path (default stdout)");
  cost->add_option("--n", o.sweep_n, "Vector lengths to sweep")->delimiter(',');
  cost->add_option("--m", o.sweep_m, "Weight widths to sweep (0: per-layer modes)")->delimiter(',');
  cost->add_option("--seed", o.seed, "Seed for the default model and simulated inputs");
  cost->add_option("--gating-segments", o.gating_segments, "Segments simulated for block gating (0: skip)");
  cost->add_option("--gating-capacity", o.gating_capacity, "Weight-memory capacity in chunks (0: model size)");

  auto* dump = app.add_subcommand("dump-table", "Print a static table");
  dump->add_option("--n", o.table_n, "Vector length");
  dump->add_option("--m", o.table_m, "Code width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (dump_config) {
      std::cout << app.config_to_str(true, true);
      return kExitOk;
    }
    app.exit(e);
    return kExitConfigError;
  }
  if (dump_config) {
    std::cout << app.config_to_str(true, true);
    return kExitOk;
  }

  try {
    if (init->parsed()) return cmd_init_model(o);
    if (compile->parsed()) return cmd_compile(o);
    if (verify->parsed()) return cmd_verify(o);
    if (loop->parsed()) return cmd_loop(o);
    if (eval->parsed()) return cmd_eval(o);
    if (synth->parsed()) return cmd_synth(o);
    if (cost->parsed()) return cmd_cost(o);
    if (dump->parsed()) return cmd_dump_table(o);
  } catch (const muxnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  return kExitConfigError;
}
