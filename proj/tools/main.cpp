#include <CLI11.hpp>

#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "factrfm/error.hpp"
#include "factrfm/hash.hpp"
#include "runners.hpp"
#include "schema_check.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using factrfm::Error;
using factrfm::ErrorCode;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitRuntime = 1;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::ParseError:
    case ErrorCode::FormatError:
      return kExitConfig;
    case ErrorCode::Diverged:
      return kExitDiverged;
    default:
      return kExitRuntime;
  }
}

void merge_into(json& base, const json& overlay) {
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge_into(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

json load_config_file(const std::string& path, const std::string& command,
                      json& input_hashes) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::InvalidConfig, "cannot open config file " + path);
  }
  json file;
  try {
    file = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError,
                std::string("config file is not valid JSON: ") + e.what());
  }
  input_hashes[path] = factrfm::git_blob_sha1_file(path);
  // a manifest from a previous run is accepted directly; the resolved config
  // lives under its "config" key
  if (file.contains("command") && file.contains("config")) {
    if (file["command"] != command) {
      throw Error(ErrorCode::InvalidConfig,
                  "manifest is for command '" +
                      file["command"].get<std::string>() + "'");
    }
    return file["config"];
  }
  return file;
}

struct CommandContext {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_path;
  std::string out_dir;
  int threads = 0;
  std::function<void(json&)> apply_flags;
};

void write_json(const fs::path& path, const json& value) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << value.dump(2) << '\n';
}

int run_context(const CommandContext& ctx) {
  json input_hashes = json::object();
  json cfg = factrfm_cli::default_config(ctx.name);
  fs::path out;
  try {
    if (!ctx.config_path.empty()) {
      merge_into(cfg, load_config_file(ctx.config_path, ctx.name, input_hashes));
    }
    ctx.apply_flags(cfg);

    // threads: flag > config > FACTRFM_THREADS > 1
    int threads = ctx.threads;
    if (threads <= 0) threads = cfg.value("threads", 0);
    if (threads <= 0) {
      if (const char* env = std::getenv("FACTRFM_THREADS")) threads = std::atoi(env);
    }
    if (threads <= 0) threads = 1;
    cfg["threads"] = threads;
    Eigen::setNbThreads(threads);

    out = ctx.out_dir.empty()
              ? (cfg.contains("out") ? fs::path(cfg["out"].get<std::string>())
                                     : fs::path("runs") / ctx.name)
              : fs::path(ctx.out_dir);
    cfg.erase("out");

    factrfm_cli::validate_config(cfg, ctx.name);
    fs::create_directories(out);

    json metrics = factrfm_cli::run_command(ctx.name, cfg, out, input_hashes);

    json results;
    results["command"] = ctx.name;
    results["ok"] = true;
    results["metrics"] = std::move(metrics);
    write_json(out / "results.json", results);

    json manifest;
    manifest["schemaVersion"] = 1;
    manifest["command"] = ctx.name;
    manifest["config"] = cfg;
    manifest["inputs"] = input_hashes;
    manifest["outputs"] = json::array({"results.json", "trace.csv", "matrices/"});
    write_json(out / "manifest.json", manifest);
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (!out.empty()) {
      json results;
      results["command"] = ctx.name;
      results["ok"] = false;
      results["error"] = {{"code", factrfm::error_code_name(e.code())},
                          {"message", e.what()}};
      try {
        write_json(out / "results.json", results);
      } catch (...) {
      }
    }
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

/// Registers an option that only lands in the config when explicitly given.
template <typename T>
void config_option(CLI::App* app, CommandContext& ctx, const std::string& flag,
                   const std::string& key, const std::string& help) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(flag, *value, help);
  auto prev = ctx.apply_flags;
  ctx.apply_flags = [prev, opt, value, key](json& cfg) {
    if (prev) prev(cfg);
    if (opt->count() > 0) {
      // nested keys use a dot: kernel.bandwidth
      const auto dot = key.find('.');
      if (dot == std::string::npos) {
        cfg[key] = *value;
      } else {
        cfg[key.substr(0, dot)][key.substr(dot + 1)] = *value;
      }
    }
  };
}

void config_flag(CLI::App* app, CommandContext& ctx, const std::string& flag,
                 const std::string& key, const std::string& help) {
  auto value = std::make_shared<bool>(false);
  CLI::Option* opt = app->add_flag(flag, *value, help);
  auto prev = ctx.apply_flags;
  ctx.apply_flags = [prev, opt, value, key](json& cfg) {
    if (prev) prev(cfg);
    if (opt->count() > 0) cfg[key] = *value;
  };
}

void add_common(CLI::App* app, CommandContext& ctx) {
  app->add_option("--config", ctx.config_path,
                  "JSON config file or a manifest.json from a previous run");
  app->add_option("--out", ctx.out_dir, "output directory");
  app->add_option("--threads", ctx.threads,
                  "cap on internal linear-algebra parallelism");
  config_option<std::uint64_t>(app, ctx, "--seed", "seed", "RNG seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "factrfm: recursive feature machines driven by the FACT and NFA "
      "feature-matrix updates, plus an instrumented MLP trainer for the "
      "feature identities behind them"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::vector<std::shared_ptr<CommandContext>> contexts;
  auto make = [&](const std::string& name, const std::string& help) {
    auto ctx = std::make_shared<CommandContext>();
    ctx->name = name;
    ctx->app = app.add_subcommand(name, help);
    add_common(ctx->app, *ctx);
    contexts.push_back(ctx);
    return ctx;
  };

  {
    auto ctx = make("rfm", "kernel ridge regression with FACT/NFA feature updates");
    CLI::App* sub = ctx->app;
    config_option<std::string>(sub, *ctx, "--task", "task", "parity | modadd | csv");
    config_option<int>(sub, *ctx, "--d", "d", "parity input dimension");
    config_option<int>(sub, *ctx, "--k", "k", "parity support size");
    config_option<int>(sub, *ctx, "--n", "n", "parity training samples");
    config_option<int>(sub, *ctx, "--test-n", "testN", "parity held-out samples");
    config_option<std::string>(sub, *ctx, "--labels", "labels", "zero-one | pm-one");
    config_option<int>(sub, *ctx, "--modulus", "modulus", "modular addition modulus");
    config_option<double>(sub, *ctx, "--train-fraction", "trainFraction",
                          "modular addition train split");
    config_option<std::string>(sub, *ctx, "--csv", "csv", "tabular CSV path");
    config_option<std::string>(sub, *ctx, "--label-col", "labelColumn",
                               "CSV label column name");
    config_option<std::string>(sub, *ctx, "--normalize", "normalize", "zscore | none");
    config_option<double>(sub, *ctx, "--test-fraction", "testFraction",
                          "CSV held-out fraction");
    config_option<std::string>(sub, *ctx, "--rule", "rule",
                               "nfa | fact-plain | fact-geom");
    config_option<std::string>(sub, *ctx, "--kernel", "kernel.family",
                               "gaussian | laplace | inner-product");
    config_option<double>(sub, *ctx, "--bandwidth", "kernel.bandwidth",
                          "kernel bandwidth");
    config_option<std::string>(sub, *ctx, "--scalar-fn", "kernel.scalarFn",
                               "exp | square | identity");
    config_option<int>(sub, *ctx, "--iters", "iters", "feature-update iterations T");
    config_option<double>(sub, *ctx, "--ridge", "ridge", "ridge lambda");
    config_option<double>(sub, *ctx, "--nfa-power", "nfaPower", "NFA exponent s");
    config_option<double>(sub, *ctx, "--early-stop-acc", "earlyStopAcc",
                          "stop once test accuracy reaches this");
    config_flag(sub, *ctx, "--store-matrices", "storeMatrices",
                "write M_t for every iteration");
    config_flag(sub, *ctx, "--dump-data", "dumpData",
                "export the generated dataset with its metadata sidecar");
  }
  {
    auto ctx = make("nn-fact",
                    "train an MLP and compare FACT/AGOP/eNFA to its feature matrices");
    CLI::App* sub = ctx->app;
    config_option<std::string>(sub, *ctx, "--data", "data", "synthetic | mnist | csv");
    config_option<std::string>(sub, *ctx, "--mnist-dir", "mnistDir",
                               "directory with IDX files");
    config_option<int>(sub, *ctx, "--limit", "limit", "cap on loaded examples");
    config_option<std::string>(sub, *ctx, "--csv", "csv", "tabular CSV path");
    config_option<std::string>(sub, *ctx, "--label-col", "labelColumn",
                               "CSV label column name");
    config_option<int>(sub, *ctx, "--n", "n", "synthetic sample count");
    config_option<int>(sub, *ctx, "--d", "d", "synthetic input dimension");
    config_option<int>(sub, *ctx, "--classes", "classes", "synthetic class count");
    config_option<int>(sub, *ctx, "--depth", "depth", "hidden layer count");
    config_option<int>(sub, *ctx, "--width", "width", "hidden width");
    config_option<std::string>(sub, *ctx, "--activation", "activation",
                               "relu | quadratic | identity");
    config_option<std::string>(sub, *ctx, "--optimizer", "optimizer", "sgd | adam");
    config_option<double>(sub, *ctx, "--lr", "lr", "learning rate");
    config_option<double>(sub, *ctx, "--momentum", "momentum", "SGD momentum");
    config_option<double>(sub, *ctx, "--wd", "wd", "weight decay lambda");
    config_option<std::string>(sub, *ctx, "--schedule", "schedule",
                               "constant | cosine");
    config_option<int>(sub, *ctx, "--batch-size", "batchSize", "minibatch size");
    config_option<int>(sub, *ctx, "--epochs", "epochs", "training epochs");
    config_option<double>(sub, *ctx, "--loss-target", "lossTarget",
                          "stop at this batch train loss");
    config_option<double>(sub, *ctx, "--grad-target", "gradTarget",
                          "stop at this gradient norm");
    config_option<int>(sub, *ctx, "--layer", "layer", "layer for the estimates");
  }
  {
    auto ctx = make("separation",
                    "two-layer quadratic net where FACT tracks W^T W and AGOP does not");
    CLI::App* sub = ctx->app;
    config_option<double>(sub, *ctx, "--tau", "tau", "signal scale");
    config_option<double>(sub, *ctx, "--p", "p", "uniform mixture weight");
    config_option<double>(sub, *ctx, "--lambda", "lambda", "weight decay");
    config_option<double>(sub, *ctx, "--epsilon", "epsilon",
                          "asymptotic preset: tau=e^3, p=e^8, lambda=e^32 p");
    config_option<int>(sub, *ctx, "--width", "width", "hidden width (>= 7)");
    config_option<double>(sub, *ctx, "--lr", "lr", "Adam learning rate");
    config_option<int>(sub, *ctx, "--steps", "steps", "full-batch steps");
    config_option<std::string>(sub, *ctx, "--schedule", "schedule",
                               "constant | cosine");
    config_option<int>(sub, *ctx, "--probe-every", "probeEvery",
                       "steps between similarity probes");
  }
  {
    auto ctx = make("deep-linear",
                    "depth sweep comparing FACT with depth-corrected AGOP powers");
    CLI::App* sub = ctx->app;
    config_option<std::vector<int>>(sub, *ctx, "--depths", "depths",
                                    "network depths, e.g. --depths 2 3 4");
    config_option<int>(sub, *ctx, "--d", "d", "input dimension");
    config_option<int>(sub, *ctx, "--c", "c", "output dimension");
    config_option<int>(sub, *ctx, "--h", "h", "hidden width");
    config_option<int>(sub, *ctx, "--n", "n", "training samples");
    config_option<double>(sub, *ctx, "--wd", "wd", "weight decay");
    config_option<double>(sub, *ctx, "--lr", "lr", "learning rate");
    config_option<double>(sub, *ctx, "--momentum", "momentum", "SGD momentum");
    config_option<int>(sub, *ctx, "--batch-size", "batchSize", "minibatch size");
    config_option<int>(sub, *ctx, "--epochs", "epochs", "training epochs");
    config_option<std::string>(sub, *ctx, "--schedule", "schedule",
                               "constant | cosine");
  }
  {
    auto ctx = make("tau-kprime",
                    "pair the NFA and FACT similarity factors of a converged run");
    CLI::App* sub = ctx->app;
    config_option<int>(sub, *ctx, "--modulus", "modulus", "modular addition modulus");
    config_option<double>(sub, *ctx, "--train-fraction", "trainFraction",
                          "train split");
    config_option<std::string>(sub, *ctx, "--scalar-fn", "scalarFn",
                               "inner-product scalar function");
    config_option<double>(sub, *ctx, "--ridge", "ridge", "ridge lambda");
    config_option<int>(sub, *ctx, "--iters", "iters", "RFM iterations");
    config_option<int>(sub, *ctx, "--subsample", "subsample",
                       "pairs to export (0 = all)");
  }
  {
    auto ctx = make("diagnose", "structure scores and comparisons for saved matrices");
    CLI::App* sub = ctx->app;
    config_option<std::string>(sub, *ctx, "--matrix", "matrix",
                               "matrix CSV/JSON to analyze");
    config_option<std::string>(sub, *ctx, "--ref", "ref",
                               "reference matrix for cosine/pearson");
    config_option<std::vector<int>>(sub, *ctx, "--support", "support",
                                    "indices for the concentration score");
    config_option<int>(sub, *ctx, "--block-size", "blockSize",
                       "block size for the circulant score");
    config_option<double>(sub, *ctx, "--power", "power",
                          "export the matrix raised to this spectral power");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  for (const auto& ctx : contexts) {
    if (ctx->app->parsed()) {
      return run_context(*ctx);
    }
  }
  std::cerr << "error: no subcommand selected\n";
  return kExitConfig;
}
