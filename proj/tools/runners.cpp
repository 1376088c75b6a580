#include "runners.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include "factrfm/datasets.hpp"
#include "factrfm/diagnostics.hpp"
#include "factrfm/hash.hpp"
#include "factrfm/nn.hpp"
#include "factrfm/rfm.hpp"

namespace factrfm_cli {

using namespace factrfm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::FormatError, "cannot write " + path.string());
  }
  out << text;
}

void write_matrix(const fs::path& dir, const std::string& name, const Matrix& m) {
  fs::create_directories(dir);
  save_matrix_csv(m, (dir / (name + ".csv")).string());
}

KernelSpec kernel_from_config(const json& cfg) {
  return kernel_spec_from_json(cfg.at("kernel").dump());
}

ScalarFn scalar_fn_from_name(const std::string& name) {
  if (name == "exp") return ScalarFn::Exp;
  if (name == "square") return ScalarFn::Square;
  if (name == "identity") return ScalarFn::Identity;
  throw Error(ErrorCode::InvalidConfig, "unknown scalarFn '" + name + "'");
}

TrainConfig train_config_from(const json& cfg) {
  TrainConfig tc;
  const std::string opt = cfg.value("optimizer", "sgd");
  tc.optimizer = opt == "adam" ? Optimizer::Adam : Optimizer::SgdMomentum;
  tc.learning_rate = cfg.value("lr", tc.learning_rate);
  tc.momentum = cfg.value("momentum", tc.momentum);
  tc.weight_decay = cfg.value("wd", tc.weight_decay);
  tc.schedule = cfg.value("schedule", "cosine") == "constant"
                    ? LrSchedule::Constant
                    : LrSchedule::Cosine;
  tc.batch_size = cfg.value("batchSize", tc.batch_size);
  tc.epochs = cfg.value("epochs", tc.epochs);
  tc.loss_target = cfg.value("lossTarget", 0.0);
  tc.grad_target = cfg.value("gradTarget", 0.0);
  tc.seed = cfg.value("seed", 0);
  return tc;
}

/// Deterministic row split for CSV tasks: shuffled by seed, test tail.
TrainTest split_dataset(const Dataset& full, double test_fraction,
                        std::uint64_t seed) {
  const Eigen::Index n = full.n();
  const auto test_n = static_cast<Eigen::Index>(
      std::floor(test_fraction * static_cast<double>(n)));
  if (test_n < 1 || test_n >= n) {
    throw Error(ErrorCode::InvalidConfig, "degenerate test split");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  TrainTest tt;
  std::vector<int> train_rows(order.begin(), order.end() - test_n);
  std::vector<int> test_rows(order.end() - test_n, order.end());
  tt.train.X = full.X(train_rows, Eigen::all);
  tt.train.Y = full.Y(train_rows, Eigen::all);
  tt.train.meta = full.meta;
  tt.test.X = full.X(test_rows, Eigen::all);
  tt.test.Y = full.Y(test_rows, Eigen::all);
  tt.test.meta = full.meta;
  return tt;
}

// ---- rfm ---------------------------------------------------------------------

TrainTest rfm_dataset(const json& cfg, json& input_hashes) {
  const std::string task = cfg.at("task");
  const std::uint64_t seed = cfg.value("seed", 0);
  if (task == "parity") {
    return gen_sparse_parity(cfg.at("n"), cfg.at("d"), cfg.at("k"), seed,
                             cfg.value("labels", "zero-one") == "zero-one",
                             cfg.value("testN", 1000));
  }
  if (task == "modadd") {
    return gen_modular_addition(cfg.at("modulus"), cfg.at("trainFraction"), seed);
  }
  if (task == "csv") {
    if (!cfg.contains("csv") || !cfg.contains("labelColumn")) {
      throw Error(ErrorCode::InvalidConfig, "csv task needs csv + labelColumn");
    }
    const std::string path = cfg.at("csv");
    input_hashes[path] = git_blob_sha1_file(path);
    Dataset full = load_csv_tabular(path, cfg.at("labelColumn"),
                                    cfg.value("normalize", "zscore") == "zscore"
                                        ? Normalization::ZScore
                                        : Normalization::None);
    return split_dataset(full, cfg.value("testFraction", 0.2), seed);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown task '" + task + "'");
}

json run_rfm(const json& cfg, const fs::path& out, json& input_hashes) {
  TrainTest tt = rfm_dataset(cfg, input_hashes);

  RfmConfig config;
  config.kernel = kernel_from_config(cfg);
  config.rule = update_rule_from_name(cfg.at("rule"));
  config.iterations = cfg.at("iters");
  config.ridge = cfg.at("ridge");
  config.nfa_power = cfg.value("nfaPower", 0.5);
  if (cfg.contains("earlyStopAcc")) {
    config.early_stop_test_acc = cfg["earlyStopAcc"].get<double>();
  }
  config.store_feature_matrices = cfg.value("storeMatrices", false);

  if (cfg.value("dumpData", false)) {
    save_dataset(tt.train, (out / "data").string(), "train");
    save_dataset(tt.test, (out / "data").string(), "test");
  }

  RfmResult result = [&] {
    try {
      return rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
    } catch (const RfmDivergedError& e) {
      write_text(out / "trace.csv", e.trace().to_csv());
      throw;
    }
  }();

  write_text(out / "trace.csv", result.trace.to_csv());
  write_matrix(out / "matrices", "M_final", result.feature_matrix.mat());
  if (config.store_feature_matrices) {
    for (const auto& rec : result.trace.records) {
      if (rec.feature_matrix) {
        char name[32];
        std::snprintf(name, sizeof name, "M_%03d", rec.iteration);
        write_matrix(out / "matrices", name, *rec.feature_matrix);
      }
    }
  }

  const auto& last = result.trace.records.back();
  json metrics;
  metrics["iterationsRun"] = last.iteration;
  metrics["trainLoss"] = last.train_loss;
  metrics["testLoss"] = last.test_loss;
  metrics["trainAccuracy"] = last.train_acc;
  metrics["testAccuracy"] = last.test_acc;
  metrics["featureMatrixFrobenius"] = last.m_frobenius;
  if (!tt.train.meta.support.empty()) {
    metrics["supportConcentration"] =
        support_concentration(result.feature_matrix, tt.train.meta.support);
  }
  if (tt.train.meta.modulus > 1) {
    metrics["circulantScore"] =
        circulant_score(result.feature_matrix, tt.train.meta.modulus);
  }
  return metrics;
}

// ---- nn-fact -----------------------------------------------------------------

TrainTest nn_dataset(const json& cfg, json& input_hashes) {
  const std::string data = cfg.at("data");
  const std::uint64_t seed = cfg.value("seed", 0);
  if (data == "synthetic") {
    return gen_teacher_classification(cfg.at("n"), cfg.at("d"), cfg.at("classes"),
                                      cfg.value("teacherHidden", 32), seed);
  }
  if (data == "mnist") {
    fs::path dir = cfg.value("mnistDir", "");
    if (dir.empty()) {
      if (const char* env = std::getenv("FACTRFM_MNIST_DIR")) dir = env;
    }
    const fs::path images = dir / "train-images-idx3-ubyte";
    const fs::path labels = dir / "train-labels-idx1-ubyte";
    if (!fs::exists(images) || !fs::exists(labels)) {
      throw Error(ErrorCode::InvalidConfig,
                  "IDX files not found under '" + dir.string() + "'");
    }
    input_hashes[images.string()] = git_blob_sha1_file(images.string());
    input_hashes[labels.string()] = git_blob_sha1_file(labels.string());
    Dataset full = load_idx_images(images.string(), labels.string(),
                                   cfg.value("limit", 1000));
    return split_dataset(full, 0.2, seed);
  }
  if (data == "csv") {
    const std::string path = cfg.at("csv");
    input_hashes[path] = git_blob_sha1_file(path);
    Dataset full = load_csv_tabular(path, cfg.at("labelColumn"),
                                    Normalization::ZScore);
    return split_dataset(full, 0.2, seed);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown data source '" + data + "'");
}

json correlation_rows_to_json(const std::vector<CorrelationRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    json r;
    r["kind"] = estimate_kind_name(row.kind);
    r["layer"] = row.layer;
    auto put = [&r](const char* key, double v) {
      if (std::isfinite(v)) r[key] = v; else r[key] = nullptr;
    };
    put("pearsonRaw", row.pearson_raw);
    put("cosineRaw", row.cosine_raw);
    put("pearsonSqrt", row.pearson_sqrt);
    put("cosineSqrt", row.cosine_sqrt);
    out.push_back(std::move(r));
  }
  return out;
}

json run_nn_fact(const json& cfg, const fs::path& out, json& input_hashes) {
  TrainTest tt = nn_dataset(cfg, input_hashes);
  const int depth = cfg.at("depth");
  const int width = cfg.at("width");

  std::vector<int> dims;
  dims.push_back(static_cast<int>(tt.train.input_dim()));
  for (int l = 0; l < depth; ++l) dims.push_back(width);
  dims.push_back(static_cast<int>(tt.train.output_dim()));
  std::vector<Activation> acts(
      static_cast<std::size_t>(depth),
      activation_from_name(cfg.value("activation", "relu")));

  TrainConfig tc = train_config_from(cfg);
  MlpModel model = MlpModel::init(dims, acts, tc.seed);
  TrainResult trained = [&] {
    try {
      return train(std::move(model), tt.train.X, tt.train.Y, tc);
    } catch (const TrainDivergedError& e) {
      std::ostringstream curve;
      curve << "epoch,dataLoss,learningRate\n";
      for (const auto& p : e.curve())
        curve << p.epoch << ',' << p.data_loss << ',' << p.learning_rate << '\n';
      write_text(out / "curve.csv", curve.str());
      throw;
    }
  }();

  const int layer = cfg.value("layer", 1);
  auto estimates = feature_estimates(trained.model, tt.train.X, tt.train.Y,
                                     tc.weight_decay, layer);
  auto rows = correlation_report(trained.model, estimates);

  write_text(out / "curve.csv", trained.curve_to_csv());
  write_text(out / "correlations.csv", correlation_report_to_csv(rows));
  write_text(out / "model.json", model_to_json(trained.model));
  const Matrix& w = trained.model.weights[static_cast<std::size_t>(layer - 1)];
  write_matrix(out / "matrices", "NFM_L" + std::to_string(layer),
               Matrix(w.transpose() * w));
  write_matrix(out / "matrices", "NFM_out_L" + std::to_string(layer),
               Matrix(w * w.transpose()));
  for (const auto& est : estimates) {
    write_matrix(out / "matrices",
                 std::string(estimate_kind_name(est.kind)) + "_L" +
                     std::to_string(est.layer),
                 est.matrix);
  }

  Matrix test_pred = trained.model.forward(tt.test.X);
  json metrics;
  metrics["finalTrainLoss"] = trained.final_data_loss;
  metrics["finalGradNorm"] = trained.final_grad_norm;
  metrics["epochsRun"] = trained.epochs_run;
  metrics["testAccuracy"] =
      classification_accuracy(test_pred, tt.test.Y, ClassifyRule::Auto);
  metrics["layer"] = layer;
  metrics["correlations"] = correlation_rows_to_json(rows);
  return metrics;
}

// ---- separation ----------------------------------------------------------------

json run_separation(const json& cfg, const fs::path& out, json&) {
  SeparationConfig sep;
  if (cfg.contains("epsilon")) {
    // asymptotic schedule preset: tau = eps^3, p = eps^8, lambda = eps^32 p
    const double eps = cfg["epsilon"].get<double>();
    sep.signal_scale = std::pow(eps, 3);
    sep.mixture_weight = std::pow(eps, 8);
    sep.weight_decay = std::pow(eps, 32) * sep.mixture_weight;
  } else {
    sep.signal_scale = cfg.at("tau");
    sep.mixture_weight = cfg.at("p");
    sep.weight_decay = cfg.at("lambda");
  }

  TrainConfig tc;
  tc.optimizer = Optimizer::Adam;
  tc.learning_rate = cfg.at("lr");
  tc.schedule = cfg.value("schedule", "constant") == "cosine"
                    ? LrSchedule::Cosine
                    : LrSchedule::Constant;
  tc.epochs = cfg.at("steps");
  tc.seed = cfg.value("seed", 0);

  SeparationReport report = run_separation_experiment(
      sep, cfg.at("width"), tc, cfg.value("probeEvery", 10000));

  std::ostringstream curve;
  curve << "step,dataLoss,learningRate\n";
  for (const auto& p : report.curve)
    curve << p.epoch << ',' << p.data_loss << ',' << p.learning_rate << '\n';
  write_text(out / "curve.csv", curve.str());
  write_text(out / "model.json", model_to_json(report.model));
  const Matrix& w1 = report.model.weights.front();
  write_matrix(out / "matrices", "NFM_L1", Matrix(w1.transpose() * w1));

  json metrics;
  metrics["tau"] = sep.signal_scale;
  metrics["p"] = sep.mixture_weight;
  metrics["lambda"] = sep.weight_decay;
  metrics["degenerate"] = report.degenerate;
  auto put = [&metrics](const char* key, double v) {
    if (std::isfinite(v)) metrics[key] = v; else metrics[key] = nullptr;
  };
  put("cosFactFinal", report.cos_fact_final);
  put("cosFactBest", report.cos_fact_best);
  put("cosAgopFinal", report.cos_agop_final);
  put("cosAgopBest", report.cos_agop_best);
  put("cosAgopSqrtFinal", report.cos_agop_sqrt_final);
  metrics["finalLoss"] = report.final_loss;
  metrics["regularizedLoss"] = report.regularized_loss;
  metrics["weightNormSq"] = report.weight_norm_sq;
  metrics["existenceBound"] = 169.0 * sep.weight_decay;
  metrics["existenceBoundSatisfied"] =
      report.regularized_loss <= 169.0 * sep.weight_decay;
  return metrics;
}

// ---- deep-linear ----------------------------------------------------------------

json run_deep_linear(const json& cfg, const fs::path& out, json&) {
  DeepLinearGeometry geometry;
  geometry.input_dim = cfg.at("d");
  geometry.output_dim = cfg.at("c");
  geometry.hidden = cfg.at("h");
  geometry.samples = cfg.at("n");

  TrainConfig tc = train_config_from(cfg);
  std::vector<int> depths;
  for (const auto& v : cfg.at("depths")) depths.push_back(v.get<int>());

  auto rows = run_deep_linear_sweep(depths, geometry, tc, tc.seed + 1000);

  std::ostringstream csv;
  csv.precision(17);
  csv << "depth,cosFact,cosAgopInvDepth,cosAgopSqrt,balancedness,finalLoss,gradNorm\n";
  json row_json = json::array();
  for (const auto& row : rows) {
    csv << row.depth << ',' << row.cos_fact << ',' << row.cos_agop_inv_depth
        << ',' << row.cos_agop_sqrt << ',' << row.balancedness << ','
        << row.final_loss << ',' << row.grad_norm << '\n';
    row_json.push_back({{"depth", row.depth},
                        {"cosFact", row.cos_fact},
                        {"cosAgopInvDepth", row.cos_agop_inv_depth},
                        {"cosAgopSqrt", row.cos_agop_sqrt},
                        {"balancedness", row.balancedness},
                        {"finalLoss", row.final_loss},
                        {"gradNorm", row.grad_norm}});
  }
  write_text(out / "sweep.csv", csv.str());

  json metrics;
  metrics["rows"] = std::move(row_json);
  return metrics;
}

// ---- tau-kprime -----------------------------------------------------------------

json run_tau_kprime(const json& cfg, const fs::path& out, json&) {
  TrainTest tt = gen_modular_addition(cfg.at("modulus"), cfg.at("trainFraction"),
                                      cfg.value("seed", 0));
  RfmConfig config;
  config.kernel = KernelSpec::inner_product(
      scalar_fn_from_name(cfg.value("scalarFn", "exp")));
  config.rule = UpdateRule::FactGeom;
  config.iterations = cfg.at("iters");
  config.ridge = cfg.at("ridge");
  config.early_stop_test_acc = 1.0;

  RfmResult result = rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
  write_text(out / "trace.csv", result.trace.to_csv());

  TauKprimeResult pairs =
      tau_vs_kprime(tt.train.X, result.feature_matrix, result.dual.alpha,
                    config.kernel, cfg.value("subsample", 1000),
                    cfg.value("seed", 0));
  std::ostringstream csv;
  csv.precision(17);
  csv << "kprime,tau\n";
  for (const auto& pair : pairs.pairs) csv << pair[0] << ',' << pair[1] << '\n';
  write_text(out / "pairs.csv", csv.str());

  json metrics;
  metrics["slope"] = pairs.slope;
  if (std::isfinite(pairs.r_squared)) {
    metrics["rSquared"] = pairs.r_squared;
  } else {
    metrics["rSquared"] = nullptr;
  }
  metrics["constantTau"] = pairs.constant_tau;
  metrics["pairCount"] = pairs.pairs.size();
  metrics["testAccuracy"] = result.trace.records.back().test_acc;
  metrics["iterationsRun"] = result.trace.records.back().iteration;
  return metrics;
}

// ---- diagnose -------------------------------------------------------------------

Matrix load_any_matrix(const std::string& path, json& input_hashes) {
  input_hashes[path] = git_blob_sha1_file(path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    std::ifstream in(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return matrix_from_json(buf.str());
  }
  return load_matrix_csv(path);
}

json run_diagnose(const json& cfg, const fs::path& out, json& input_hashes) {
  Matrix m = load_any_matrix(cfg.at("matrix"), input_hashes);
  json metrics;
  metrics["rows"] = m.rows();
  metrics["cols"] = m.cols();
  metrics["frobenius"] = m.norm();

  const bool square_symmetric =
      m.rows() == m.cols() &&
      (m - m.transpose()).cwiseAbs().maxCoeff() <=
          1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff());
  if (square_symmetric) {
    EigenDecomposition dec = sym_eig(SymMatrix::from_symmetric_part(m));
    metrics["minEig"] = dec.eigenvalues(dec.eigenvalues.size() - 1);
    metrics["maxEig"] = dec.eigenvalues(0);
  }

  if (cfg.contains("ref")) {
    Matrix ref = load_any_matrix(cfg.at("ref"), input_hashes);
    metrics["cosine"] = cosine_sim(m, ref);
    metrics["pearson"] = pearson_corr(m, ref);
  }
  if (cfg.contains("support")) {
    std::vector<int> support;
    for (const auto& v : cfg["support"]) support.push_back(v.get<int>());
    metrics["supportConcentration"] = support_concentration(
        FeatureMatrix{SymMatrix::from_symmetric_part(m)}, support);
  }
  if (cfg.contains("blockSize")) {
    const int p = cfg["blockSize"].get<int>();
    metrics["circulantScore"] = circulant_score(m, p);
    std::mt19937_64 rng(cfg.value("seed", 0));
    std::normal_distribution<double> gauss;
    Matrix noise(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) noise(i, j) = gauss(rng);
    metrics["circulantScoreRandomBaseline"] = circulant_score(noise, p);
  }
  if (cfg.contains("power") && square_symmetric) {
    Matrix powered =
        psd_power(SymMatrix::from_symmetric_part(m), cfg["power"].get<double>(),
                  1e-6).mat();
    write_matrix(out / "matrices", "matrix_pow", powered);
    metrics["poweredFrobenius"] = powered.norm();
  }
  return metrics;
}

}  // namespace

json default_config(const std::string& command) {
  if (command == "rfm") {
    return {
        {"task", "parity"}, {"d", 50}, {"k", 2}, {"n", 500}, {"testN", 1000},
        {"labels", "zero-one"}, {"modulus", 61}, {"trainFraction", 0.5},
        {"normalize", "zscore"}, {"testFraction", 0.2},
        {"rule", "fact-geom"},
        {"kernel", {{"family", "gaussian"}, {"bandwidth", 5.0}}},
        {"iters", 5}, {"ridge", 1e-3}, {"nfaPower", 0.5},
        {"storeMatrices", false}, {"dumpData", false}, {"seed", 0},
    };
  }
  if (command == "nn-fact") {
    return {
        {"data", "synthetic"}, {"limit", 1000}, {"n", 1000}, {"d", 50},
        {"classes", 10}, {"teacherHidden", 32}, {"depth", 3}, {"width", 256},
        {"activation", "relu"}, {"optimizer", "sgd"}, {"lr", 0.1},
        {"momentum", 0.9}, {"wd", 1e-4}, {"schedule", "cosine"},
        {"batchSize", 64}, {"epochs", 200}, {"lossTarget", 0.0},
        {"gradTarget", 0.0}, {"layer", 1}, {"seed", 0},
    };
  }
  if (command == "separation") {
    return {
        {"tau", 0.02}, {"p", 1e-5}, {"lambda", 1e-5}, {"width", 10},
        {"lr", 0.01}, {"steps", 1000000}, {"schedule", "constant"},
        {"probeEvery", 10000}, {"seed", 0},
    };
  }
  if (command == "deep-linear") {
    return {
        {"depths", {2, 3, 4}}, {"d", 10}, {"c", 5}, {"h", 64}, {"n", 2000},
        {"wd", 1e-2}, {"lr", 5e-3}, {"momentum", 0.9}, {"batchSize", 128},
        {"epochs", 5000}, {"schedule", "cosine"}, {"optimizer", "sgd"},
        {"seed", 0},
    };
  }
  if (command == "tau-kprime") {
    return {
        {"modulus", 61}, {"trainFraction", 0.5}, {"scalarFn", "exp"},
        {"ridge", 1e-4}, {"iters", 75}, {"subsample", 1000}, {"seed", 0},
    };
  }
  if (command == "diagnose") {
    return {{"seed", 0}};
  }
  throw Error(ErrorCode::InvalidConfig, "unknown command '" + command + "'");
}

json run_command(const std::string& command, const json& cfg,
                 const fs::path& out, json& input_hashes) {
  if (command == "rfm") return run_rfm(cfg, out, input_hashes);
  if (command == "nn-fact") return run_nn_fact(cfg, out, input_hashes);
  if (command == "separation") return run_separation(cfg, out, input_hashes);
  if (command == "deep-linear") return run_deep_linear(cfg, out, input_hashes);
  if (command == "tau-kprime") return run_tau_kprime(cfg, out, input_hashes);
  if (command == "diagnose") return run_diagnose(cfg, out, input_hashes);
  throw Error(ErrorCode::InvalidConfig, "unknown command '" + command + "'");
}

}  // namespace factrfm_cli
