// evlign: command-line front end for the event alignment toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 validation or numeric error.
// Diagnostics go to stderr; data goes to files or stdout.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evlign/attention.hpp"
#include "evlign/dataset_tools.hpp"
#include "evlign/error.hpp"
#include "evlign/event_core.hpp"
#include "evlign/metrics.hpp"
#include "evlign/representations.hpp"
#include "evlign/selfcheck.hpp"
#include "evlign/simulator.hpp"
#include "evlign/ssmer.hpp"
#include "evlign/tensor_io.hpp"
#include "evlign/version.hpp"

namespace {

using namespace evlign;

constexpr int kUsageError = 1;
constexpr int kRunError = 2;

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << text;
}

/// One line that reproduces the run: version, subcommand and every option value.
void echo_config(const CLI::App& sub) {
  std::string line = std::string("# evlign ") + kVersion + " " + sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      if (opt->get_expected_max() == 0) value = "true";
    } else {
      value = opt->get_default_str();
      if (opt->get_expected_max() == 0) value = "false";
    }
    line += " " + opt->get_name() + "=" + (value.empty() ? "<unset>" : value);
  }
  std::cerr << line << "\n";
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Points at the closest known flag for every unknown one on the command line.
void suggest_flags(const CLI::App& app, int argc, char** argv) {
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : app.get_subcommands({})) {
    if (argc > 1 && s->get_name() == argv[1]) sub = s;
  }
  if (sub == nullptr) return;
  std::vector<std::string> known;
  for (const CLI::Option* opt : sub->get_options()) {
    for (const auto& n : opt->get_lnames()) known.push_back("--" + n);
  }
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) continue;
    arg = arg.substr(0, arg.find('='));
    if (std::find(known.begin(), known.end(), arg) != known.end()) continue;
    const auto best = std::min_element(known.begin(), known.end(), [&](const auto& a, const auto& b) {
      return edit_distance(arg, a) < edit_distance(arg, b);
    });
    if (best != known.end() && edit_distance(arg, *best) <= 3) {
      std::cerr << "unknown flag " << arg << "; did you mean " << *best << "?\n";
    } else {
      std::cerr << "unknown flag " << arg << "; see '" << sub->get_name() << " --help'\n";
    }
  }
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string frames;
  double fps = 25.0;
  double threshold = 0.2;
  double log_eps = 1e-3;
  int interpolate = 1;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  const FrameSequence seq = read_frame_directory(a.frames, a.fps);
  SimulatorConfig cfg;
  cfg.threshold = a.threshold;
  cfg.log_eps = a.log_eps;
  cfg.interpolation_factor = a.interpolate;
  const EventStream events = frames_to_events(seq, cfg);
  save_events(a.out, events, format_for(a.out));
  std::cout << "frames " << seq.frames.size() << " events " << events.size() << "\n";
  return 0;
}

struct RepresentArgs {
  std::string events;
  std::string kind = "frame";
  std::size_t bins = kDefaultVoxelBins;
  std::uint64_t t0 = 0;
  std::uint64_t dt = 40'000;
  std::optional<double> tau;
  bool normalize = false;
  std::uint32_t width = 346;
  std::uint32_t height = 260;
  std::string out;
};

int run_represent(const RepresentArgs& a) {
  const EventStream stream = load_events(a.events, format_for(a.events), {a.width, a.height});
  const EventStream window = slice_window(stream, a.t0, a.dt);
  const Window span{a.t0, a.dt};
  Tensor t;
  if (a.kind == "frame") {
    const FrameRep rep = build_frame(window, span);
    t = a.normalize ? to_tensor(normalize(to_double(rep.grid))) : to_tensor(rep);
  } else if (a.kind == "voxel") {
    const VoxelRep rep = build_voxel(window, a.bins, span);
    t = a.normalize ? to_tensor(normalize(rep.grid)) : to_tensor(rep);
  } else if (a.kind == "timesurface") {
    const TimeSurfaceRep rep = build_timesurface(window, a.t0 + a.dt, a.tau, span);
    t = a.normalize ? to_tensor(normalize(rep.grid)) : to_tensor(rep);
  } else {
    throw ParameterError("unknown representation kind '" + a.kind + "'");
  }
  write_tensor(a.out, t);
  std::cout << a.kind << " events " << window.size() << " shape";
  for (auto d : t.shape) std::cout << " " << d;
  std::cout << "\n";
  return 0;
}

struct SelectArgs {
  std::string events;
  double fps = 25.0;
  std::size_t top_k = 1;
  std::string protocol = "segments";
  std::uint32_t width = 346;
  std::uint32_t height = 260;
  std::string out;
};

int run_select(const SelectArgs& a) {
  const EventStream stream = load_events(a.events, format_for(a.events), {a.width, a.height});
  WindowIndex index;
  std::vector<std::size_t> ids;
  if (a.protocol == "segments") {
    index = segment_stream(stream, a.fps);
    if (index.empty()) throw ValidationError("no events to segment in " + a.events);
    ids = select_top_k_segments(index, a.top_k);
  } else if (a.protocol == "esie") {
    for (const Window& w : esie_windows(stream)) {
      index.windows.push_back(w);
      index.counts.push_back(count_events(slice_window(stream, w.t0, w.dt)));
      ids.push_back(ids.size());
    }
  } else {
    throw ParameterError("unknown protocol '" + a.protocol + "' (segments | esie)");
  }
  const Manifest m = make_manifest(index, ids, a.events, a.fps);
  write_manifest(a.out, m);
  for (const auto& w : m.windows) std::cout << w.id << " " << w.window.t0 << " " << w.window.dt << " " << w.count << "\n";
  return 0;
}

struct AttnArgs {
  std::string config;
  std::string inputs;
  bool check_grad = false;
  std::uint64_t seed = 7;
  std::string out;
};

int run_attn(const AttnArgs& a) {
  std::size_t n = 5, m = 64, c = 64, heads = 4, layers = 1;
  double init_scale = 1.0;
  ValueSource vs = ValueSource::rgb_features;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ParseError("cannot open " + a.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      n = j.value("tokens", n);
      m = j.value("patches", m);
      c = j.value("channels", c);
      heads = j.value("heads", heads);
      layers = j.value("layers", layers);
      init_scale = j.value("init_scale", init_scale);
      vs = value_source_from_string(j.value("value_source", to_string(vs)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("layer config: " + std::string(e.what()));
    }
  }
  AttentionParams params = AttentionParams::random(c, heads, a.seed, init_scale);
  params.value_source = vs;
  Embeddings emb;
  if (a.inputs.empty()) {
    emb = Embeddings::random(n, m, c, a.seed + 1);
  } else {
    const Matrix all = to_matrix(read_tensor(a.inputs));
    if (all.rows() != 2 * n + 4 * m || all.cols() != c) {
      throw ShapeError("inputs must be (2N + 4M) x C = " + std::to_string(2 * n + 4 * m) + " x " + std::to_string(c));
    }
    std::size_t row = 0;
    auto take = [&](std::size_t rows) {
      Matrix out(rows, c);
      for (std::size_t r = 0; r < rows; ++r, ++row) {
        for (std::size_t j = 0; j < c; ++j) out(r, j) = all(row, j);
      }
      return out;
    };
    emb.tokens = take(n);
    emb.query = take(n);
    emb.rgb_features = take(m);
    emb.rgb_structure = take(m);
    emb.event_features = take(m);
    emb.event_structure = take(m);
  }

  Matrix t = emb.tokens;
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerOutput out = layer_forward(t, emb, params);
    auto report = [&](const char* block, const std::vector<Matrix>& maps) {
      for (std::size_t h = 0; h < maps.size(); ++h) {
        double lo = 1e300, hi = -1e300, checksum = 0.0;
        for (std::size_t r = 0; r < maps[h].rows(); ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j < maps[h].cols(); ++j) {
            s += maps[h](r, j);
            checksum += maps[h](r, j) * static_cast<double>(j + 1);
          }
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
        std::cout << "layer " << l << " " << block << " head " << h << " row_sum_min " << g17(lo) << " row_sum_max "
                  << g17(hi) << " checksum " << g17(checksum) << "\n";
      }
    };
    report("cmfa", out.cmfa_maps);
    report("msa", out.msa_maps);
    report("mca", out.mca_maps);
    t = out.output;
  }
  double total = 0.0;
  for (double v : t.data()) total += v;
  std::cout << "output_sum " << g17(total) << "\n";
  if (!a.out.empty()) write_tensor(a.out, to_tensor(t));

  if (a.check_grad) {
    GradCheckConfig gc;
    gc.seed = a.seed;
    gc.value_source = vs;
    for (auto target : {GradCheckTarget::cmfa_block, GradCheckTarget::layer_forward}) {
      const GradCheckReport r = grad_check(target, gc);
      std::cout << "grad_check " << to_string(target) << " N=" << gc.tokens << " M=" << gc.patches
                << " C=" << gc.channels << " H=" << gc.heads << " max_rel_error " << g17(r.max_relative_error)
                << " checked " << r.checked << "\n";
      if (!(r.max_relative_error < 1e-4)) throw NumericError("gradient check failed at " + r.worst);
    }
  }
  return 0;
}

struct SsmerArgs {
  std::string data;
  std::size_t synthetic = 64;
  std::uint32_t size = 16;
  std::size_t bins = kDefaultVoxelBins;
  TrainConfig train;
  bool no_stop_gradient = false;
  bool no_predictor = false;
  bool per_rep_encoder = false;
  std::string out;
};

int run_ssmer(SsmerArgs a) {
  std::vector<EventStream> windows;
  if (!a.data.empty()) {
    const Manifest m = read_manifest(a.data);
    std::filesystem::path events_path = m.events_path;
    if (events_path.is_relative() && !std::filesystem::exists(events_path)) {
      events_path = std::filesystem::path(a.data).parent_path() / events_path;
    }
    const EventStream stream = load_events(events_path, format_for(events_path));
    for (const auto& w : m.windows) windows.push_back(slice_window(stream, w.window.t0, w.window.dt));
  } else {
    windows = make_synthetic_windows(a.synthetic, {a.size, a.size}, a.train.seed);
  }
  a.train.stop_gradient = !a.no_stop_gradient;
  a.train.use_predictor = !a.no_predictor;
  a.train.shared_trunk = !a.per_rep_encoder;
  const auto triples = build_triples(windows, a.bins);
  const TrainResult r = train_toy(triples, a.train);

  std::string csv = "epoch,L_MR,L_frame_voxel,L_voxel_timesurface,L_timesurface_frame,embedding_spread\n";
  for (const auto& e : r.trajectory) {
    csv += std::to_string(e.epoch) + "," + g17(e.loss) + "," + g17(e.pair_losses[0]) + "," + g17(e.pair_losses[1]) +
           "," + g17(e.pair_losses[2]) + "," + g17(e.spread) + "\n";
  }
  if (!a.out.empty()) write_text(a.out, csv);
  const auto& first = r.trajectory.front();
  const auto& last = r.trajectory.back();
  std::cout << "windows " << windows.size() << " initial_L_MR " << g17(first.loss) << " final_L_MR " << g17(last.loss)
            << " final_spread " << g17(last.spread) << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string norm = "inter_pupil";
  double threshold = kDefaultThreshold;
  std::string report;
  std::string ced;
};

int run_eval(const EvalArgs& a) {
  const MetricReport r = evaluate(a.pred, a.gt, normalization_from_string(a.norm), a.threshold);
  if (!a.report.empty()) write_text(a.report, report_to_json(r));
  if (!a.ced.empty()) write_text(a.ced, ced_to_csv(ced_curve(r.fractions(), a.threshold)));
  std::cout << "images " << r.per_image.size() << " NME " << g17(r.nme_percent) << " FR " << g17(r.fr10_percent)
            << " AUC " << g17(r.auc10) << "\n";
  return 0;
}

int run_selfcheck_cmd(std::uint64_t seed) {
  const auto results = run_selfcheck(seed);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.passed) std::cout << " -- " << r.detail;
    std::cout << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all checks passed" : "some checks failed") << "\n";
  return ok ? 0 : kRunError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evlign: event representations, simulation, attention and landmark evaluation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Convert luminance frames (.tns) into events");
  simulate->add_option("--frames", sim.frames, "Directory of H x W .tns frames, read in filename order")->required();
  simulate->add_option("--fps", sim.fps, "Frame rate of the input")->capture_default_str();
  simulate->add_option("--threshold", sim.threshold, "Log-intensity contrast threshold C")->capture_default_str();
  simulate->add_option("--log-eps", sim.log_eps, "Offset in L = ln(I + eps)")->capture_default_str();
  simulate->add_option("--interpolate", sim.interpolate, "Linear frame interpolation factor")->capture_default_str();
  simulate->add_option("--out", sim.out, "Output events (.bin or .csv)")->required();

  RepresentArgs rep;
  auto* represent = app.add_subcommand("represent", "Build a frame, voxel or time-surface tensor from a window");
  represent->add_option("--events", rep.events, "Input events (.bin or .csv)")->required();
  represent->add_option("--kind", rep.kind, "frame | voxel | timesurface")
      ->check(CLI::IsMember({"frame", "voxel", "timesurface"}))
      ->capture_default_str();
  represent->add_option("--bins", rep.bins, "Voxel bins")->capture_default_str();
  represent->add_option("--t0", rep.t0, "Window start (us)")->capture_default_str();
  represent->add_option("--dt", rep.dt, "Window length (us)")->capture_default_str();
  represent->add_option("--tau", rep.tau, "Time-surface decay (us); default dt/3");
  represent->add_flag("--normalize", rep.normalize, "Divide by the largest absolute value");
  represent->add_option("--width", rep.width, "Sensor width for CSV input")->capture_default_str();
  represent->add_option("--height", rep.height, "Sensor height for CSV input")->capture_default_str();
  represent->add_option("--out", rep.out, "Output tensor (.tns)")->required();

  SelectArgs sel;
  auto* select = app.add_subcommand("select", "Segment a stream and pick the busiest windows");
  select->add_option("--events", sel.events, "Input events (.bin or .csv)")->required();
  select->add_option("--fps", sel.fps, "Segment rate")->capture_default_str();
  select->add_option("--top-k", sel.top_k, "Windows to keep")->capture_default_str();
  select->add_option("--protocol", sel.protocol, "segments | esie")
      ->check(CLI::IsMember({"segments", "esie"}))
      ->capture_default_str();
  select->add_option("--width", sel.width, "Sensor width for CSV input")->capture_default_str();
  select->add_option("--height", sel.height, "Sensor height for CSV input")->capture_default_str();
  select->add_option("--out", sel.out, "Output manifest (.json)")->required();

  AttnArgs att;
  auto* attn = app.add_subcommand("attn", "Run the CMFA/MSA/MCA layer on seeded or supplied embeddings");
  attn->add_option("--config", att.config, "Layer JSON: tokens, patches, channels, heads, layers, value_source, init_scale");
  attn->add_option("--inputs", att.inputs, "(2N+4M) x C tensor: T, Q, F_rgb, P_rgb, F_evt, P_evt");
  attn->add_flag("--check-grad", att.check_grad, "Finite-difference check of the backward passes");
  attn->add_option("--seed", att.seed, "Parameter / embedding seed")->capture_default_str();
  attn->add_option("--out", att.out, "Write the layer output tensor");

  SsmerArgs ss;
  auto* ssmer = app.add_subcommand("ssmer", "Train the toy multi-representation self-supervised model");
  ssmer->add_option("--data", ss.data, "Window manifest written by 'select'");
  ssmer->add_option("--synthetic", ss.synthetic, "Synthetic windows when --data is absent")->capture_default_str();
  ssmer->add_option("--size", ss.size, "Synthetic sensor side (pixels)")->capture_default_str();
  ssmer->add_option("--bins", ss.bins, "Voxel bins")->capture_default_str();
  ssmer->add_option("--epochs", ss.train.epochs, "Epochs")->capture_default_str();
  ssmer->add_option("--lr", ss.train.lr, "Learning rate")->capture_default_str();
  ssmer->add_option("--momentum", ss.train.momentum, "SGD momentum")->capture_default_str();
  ssmer->add_option("--weight-decay", ss.train.weight_decay, "L2 weight decay")->capture_default_str();
  ssmer->add_option("--batch", ss.train.batch, "Batch size")->capture_default_str();
  ssmer->add_option("--seed", ss.train.seed, "Seed for data, init and augmentation")->capture_default_str();
  ssmer->add_option("--embed-dim", ss.train.embed_dim, "Projector output dimension D")->capture_default_str();
  ssmer->add_option("--hidden", ss.train.hidden, "Encoder / projector width")->capture_default_str();
  ssmer->add_flag("--no-stop-gradient", ss.no_stop_gradient, "Let gradients flow into the z branches");
  ssmer->add_flag("--no-predictor", ss.no_predictor, "Use p = z (symmetric heads)");
  ssmer->add_flag("--per-rep-encoder", ss.per_rep_encoder, "Separate trunk per representation");
  ssmer->add_option("--out", ss.out, "Trace CSV");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "NME / FR / AUC of predicted landmarks");
  eval->add_option("--pred", ev.pred, "Predictions JSON")->required();
  eval->add_option("--gt", ev.gt, "Ground truth JSON")->required();
  eval->add_option("--norm", ev.norm, "inter_pupil | inter_ocular")
      ->check(CLI::IsMember({"inter_pupil", "inter_ocular"}))
      ->capture_default_str();
  eval->add_option("--threshold", ev.threshold, "FR / AUC threshold")->capture_default_str();
  eval->add_option("--report", ev.report, "Report JSON");
  eval->add_option("--ced", ev.ced, "CED curve CSV");

  std::uint64_t check_seed = 0;
  auto* selfcheck = app.add_subcommand("selfcheck", "Run the invariant suite");
  selfcheck->add_option("--seed", check_seed, "Seed for randomized checks")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ExtrasError& e) {
    std::cerr << e.what() << "\n";
    suggest_flags(app, argc, argv);
    return kUsageError;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    for (const CLI::App* sub : app.get_subcommands()) echo_config(*sub);
    if (simulate->parsed()) return run_simulate(sim);
    if (represent->parsed()) return run_represent(rep);
    if (select->parsed()) return run_select(sel);
    if (attn->parsed()) return run_attn(att);
    if (ssmer->parsed()) return run_ssmer(ss);
    if (eval->parsed()) return run_eval(ev);
    if (selfcheck->parsed()) return run_selfcheck_cmd(check_seed);
  } catch (const evlign::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunError;
  }
  return kUsageError;
}
