// netnn: plan, run, verify and report on in-network DNN inference over a
// simulated Clos fabric.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "netnn/app.hpp"

namespace {

struct Flags {
  std::string backend = "tcam";
  std::string routing;
  bool lenient = false;
};

void add_fabric_flags(CLI::App* cmd, netnn::RunConfig& cfg, Flags& flags) {
  cmd->add_option("--tiers", cfg.fabric.tiers, "Clos tiers")->capture_default_str();
  cmd->add_option("--switches", cfg.fabric.switches_per_tier, "switches per tier")->capture_default_str();
  cmd->add_option("--pipelines", cfg.fabric.pipelines_per_switch, "pipelines per switch")->capture_default_str();
  cmd->add_option("--backend", flags.backend, "multiply backend: tcam | shift-add")->capture_default_str();
  cmd->add_option("--routing", flags.routing, "routing mode: 2-tier | 3-tier (default by tier count)");
  cmd->add_option("--stage-budget", cfg.stage_budget, "max dependent stages per packet")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"netnn: quantized DNN inference across a simulated switch fabric"};
  app.require_subcommand(1);
  netnn::RunConfig cfg;
  Flags flags;

  auto* plan = app.add_subcommand("plan", "map a model onto the fabric and print its resource table");
  plan->add_option("--model", cfg.model_path, "model file (or NETNN_MODEL)");
  plan->add_option("-o,--output", cfg.output_path, "plan document path (or NETNN_OUTPUT)");
  add_fabric_flags(plan, cfg, flags);

  auto* run = app.add_subcommand("run", "stream a trace through the feature extractor and the fabric");
  run->add_option("--model", cfg.model_path, "model file (or NETNN_MODEL)");
  run->add_option("--trace", cfg.trace_path, "trace file (or NETNN_TRACE)");
  run->add_option("--trace-format", cfg.trace_format, "auto | csv-jsonl | pcap")->capture_default_str();
  run->add_option("--max-inference-point", cfg.max_inference_point, "largest power-of-two inference point")
      ->capture_default_str();
  run->add_flag("--lenient", flags.lenient, "clamp non-monotonic timestamps instead of failing");
  run->add_option("--seed", cfg.seed, "seed (recorded; runs are deterministic)")->capture_default_str();
  run->add_option("-o,--output", cfg.output_path, "report path (or NETNN_OUTPUT)");
  run->add_option("--trace-out", cfg.trace_out_path, "write the fabric trace as JSON lines");
  run->add_flag("--trace-events", cfg.trace_events, "include one record per processed packet in the trace");
  run->add_option("--batch", cfg.batch, "inferences simulated together")->capture_default_str();
  run->add_option("--malicious-class", cfg.malicious_class, "class that wins vote ties")->capture_default_str();
  run->add_flag("--parallel", cfg.parallel, "advance switches concurrently within a time step");
  add_fabric_flags(run, cfg, flags);

  auto* verify = app.add_subcommand("verify", "differential check: fabric vs reference, tcam vs shift-add");
  std::string fixture_kind;
  verify->add_option("--model", cfg.model_path, "model file (or NETNN_MODEL)");
  verify->add_option("--fixture", fixture_kind, "use a built-in model instead: canonical | separability");
  verify->add_option("-n,--inputs", cfg.inputs, "number of seeded random inputs")->capture_default_str();
  verify->add_option("--seed", cfg.seed, "first input seed")->capture_default_str();
  verify->add_flag("--corrupt-weight", cfg.corrupt_weight, "flip one installed weight (fault injection)");
  verify->add_option("-o,--output", cfg.output_path, "report path (or NETNN_OUTPUT)");
  add_fabric_flags(verify, cfg, flags);

  auto* report = app.add_subcommand("report", "summarise a trace written by run --trace-out");
  std::string report_path;
  report->add_option("trace", report_path, "trace JSON lines")->required();

  auto* fixture = app.add_subcommand("fixture", "write a built-in model");
  std::string kind = "canonical";
  std::uint64_t fixture_seed = 0;
  std::string fixture_out;
  fixture->add_option("--kind", kind, "canonical | random | separability")->capture_default_str();
  fixture->add_option("--seed", fixture_seed, "weight seed")->capture_default_str();
  fixture->add_option("-o,--output", fixture_out, "model path")->required();

  auto* synth = app.add_subcommand("synth-trace", "write the labelled synthetic trace");
  netnn::SyntheticOptions synth_opt;
  std::string synth_out;
  synth->add_option("--flows", synth_opt.flows, "number of flows")->capture_default_str();
  synth->add_option("--packets", synth_opt.packets_per_flow, "packets per flow")->capture_default_str();
  synth->add_option("--seed", synth_opt.seed, "seed")->capture_default_str();
  synth->add_option("-o,--output", synth_out, "trace path")->required();

  auto* conformance = app.add_subcommand("conformance", "check input assembly against a vector file");
  std::string vectors;
  conformance->add_option("vectors", vectors, "conformance vector JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    netnn::apply_env_overrides(cfg);
    cfg.backend = netnn::parse_backend(flags.backend);
    if (!flags.routing.empty()) cfg.routing = netnn::parse_routing(flags.routing);
    cfg.strict_timestamps = !flags.lenient;

    netnn::CommandResult result;
    if (*plan) result = netnn::cmd_plan(cfg, std::cout);
    else if (*run) result = netnn::cmd_run(cfg, std::cout);
    else if (*verify) {
      if (!fixture_kind.empty()) {
        netnn::QuantizedModel m;
        if (fixture_kind == "canonical") m = netnn::canonical_fixture(0);
        else if (fixture_kind == "separability") m = netnn::separability_model();
        else throw std::invalid_argument("unknown fixture '" + fixture_kind + "'");
        result = netnn::cmd_verify(cfg, m, std::cout);
      } else {
        result = netnn::cmd_verify(cfg, std::cout);
      }
    } else if (*report) result = netnn::cmd_report(report_path, std::cout);
    else if (*fixture) result = netnn::cmd_fixture(kind, fixture_seed, fixture_out, std::cout);
    else if (*synth) result = netnn::cmd_synth_trace(synth_opt, synth_out, std::cout);
    else if (*conformance) result = netnn::cmd_conformance(vectors, std::cout);
    return result.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "netnn: " << e.what() << '\n';
    return 2;
  }
}
