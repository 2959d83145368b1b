// Command-line front end: validate, synthesize, attribute, analyze, report, run.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxattr/harness.hpp"

namespace {

using namespace ctxattr;
using namespace ctxattr::harness;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

struct Flags {
  std::string config;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variants;
  std::optional<int> severity;
  std::string method;
  std::optional<std::size_t> target_layer;
  std::optional<double> context_threshold;
  std::string external_preds;
  std::string external_maps;
  std::optional<std::size_t> jobs;
  std::string network;
  std::string model_id;
  std::optional<int> class_count;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON configuration file; flags override its values");
  cmd->add_option("--manifest", f.manifest, "JSONL manifest of samples");
  cmd->add_option("--seed", f.seed, "global seed (default 0)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--variants", f.variants, "comma-separated variant names (default: all)");
  cmd->add_option("--severity", f.severity, "corruption severity 1..5 (default 3)");
  cmd->add_option("--method", f.method, "gradcam, gradcam++, guided_backprop, fullgrad or scorecam");
  cmd->add_option("--target-layer", f.target_layer, "CAM target layer index (default: last spatial layer)");
  cmd->add_option("--context-threshold", f.context_threshold, "keep samples whose context fraction exceeds this");
  cmd->add_option("--external-preds", f.external_preds, "predictions JSONL from an external runner");
  cmd->add_option("--external-maps", f.external_maps, "directory of <variant>/<sample_id>.attr maps");
  cmd->add_option("--jobs", f.jobs, "worker threads (default: hardware concurrency)");
  cmd->add_option("--network", f.network, "builtin network JSON");
  cmd->add_option("--model-id", f.model_id, "model id recorded for builtin predictions");
  cmd->add_option("--class-count", f.class_count, "number of classes when no network is given");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

RunConfig make_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (!f.manifest.empty()) c.manifest = f.manifest;
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (!f.variants.empty()) c.variants = split_list(f.variants);
  if (f.severity) c.severity = *f.severity;
  if (!f.method.empty()) c.method.kind = attr::parse_method(f.method);
  if (f.target_layer) c.method.target_layer = *f.target_layer;
  if (f.context_threshold) c.context_threshold = *f.context_threshold;
  if (!f.external_preds.empty()) c.external_preds = f.external_preds;
  if (!f.external_maps.empty()) c.external_maps = f.external_maps;
  if (f.jobs) c.jobs = *f.jobs;
  if (!f.network.empty()) c.network = f.network;
  if (!f.model_id.empty()) c.model_id = f.model_id;
  if (f.class_count) c.class_count = *f.class_count;
  return c;
}

void require_out(const RunConfig& c) {
  if (c.out.empty()) throw ParamError("--out is required");
}

void require_network(const RunConfig& c) {
  if (c.network.empty()) throw ParamError("--network is required for the builtin model");
}

int cmd_validate(const RunConfig& c) {
  if (c.manifest.empty()) throw ParamError("--manifest is required");
  std::optional<int> classes = c.class_count;
  if (!classes && !c.network.empty()) classes = nn::Network::load(c.network).class_count();
  const auto report = validate_manifest(c.manifest, classes);
  if (!report.ok()) {
    for (const auto& d : report.diagnostics) std::cerr << c.manifest.string() << ": " << d.to_string() << '\n';
    std::cerr << report.diagnostics.size() << " problem(s) found\n";
    return kExitValidation;
  }
  std::cout << "ok: " << report.manifest.samples.size() << " records, " << report.manifest.class_count
            << " classes\n";
  return kExitOk;
}

// Runs `body` inside an INCOMPLETE-marker guard on c.out.
template <typename Body>
int guarded(const RunConfig& c, Body&& body) {
  require_out(c);
  c.validate();
  OutputGuard guard(c.out);
  try {
    body();
  } catch (const StageError& e) {
    guard.fail(e);
    throw;
  }
  guard.succeed();
  return kExitOk;
}

void print_summary(const ReportBundle& b) {
  const auto& t = b.accuracy;
  std::printf("original accuracy %.1f%%\n", t.orig);
  if (t.mean_cc) std::printf("mean CC %.1f%% (decline %.1f)\n", *t.mean_cc, *t.decline_cc);
  if (t.mean_cp) std::printf("mean CP %.1f%% (decline %.1f)\n", *t.mean_cp, *t.decline_cp);
  for (const auto& s : b.accounting) {
    std::printf("%-10s in %zu, filtered %zu, reported %zu\n", s.stage.c_str(), s.in, s.filtered_out, s.reported);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context attribution toolkit"};
  app.require_subcommand(1);
  Flags flags;
  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"validate", "check a manifest and report every problem"},
      {"synthesize", "write context variants of the filtered samples"},
      {"attribute", "classify and attribute variants with the builtin network"},
      {"analyze", "join predictions with maps and score them"},
      {"report", "write CSV/JSON reports and provenance from analysis.json"},
      {"run", "all stages"},
  };
  for (const auto& cmd : commands) add_flags(app.add_subcommand(cmd.name, cmd.help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const RunConfig config = make_config(flags);
    if (name == "validate") return cmd_validate(config);
    if (name == "run") {
      require_out(config);
      print_summary(run_pipeline(config));
      return kExitOk;
    }
    if (name == "synthesize") {
      return guarded(config, [&] {
        const auto data = load_and_filter(config);
        const auto set = stage_synthesize(config, data);
        std::printf("wrote %zu images for %zu samples\n", set.images.size(), set.samples.size());
      });
    }
    if (name == "attribute") {
      require_network(config);
      return guarded(config, [&] {
        const auto data = load_and_filter(config);
        const auto preds = stage_builtin(config, data);
        std::printf("wrote %zu predictions and maps\n", preds.size());
      });
    }
    if (name == "analyze") {
      return guarded(config, [&] {
        const auto data = load_and_filter(config);
        const auto a = stage_analyze(config, data);
        std::printf("scored %zu records (%zu without attribution mass)\n", a.records.size(), a.zero_mass.size());
      });
    }
    if (name == "report") {
      return guarded(config, [&] {
        const auto analysis = run_stage("report", [&] { return load_analysis(config.out / "analysis.json"); });
        print_summary(stage_report(config, analysis));
      });
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParamError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitOk;
}
