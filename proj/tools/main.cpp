#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "litens/errors.hpp"
#include "litens/experiments.hpp"

namespace {

// Config-file keys mirror the long flag names (flat key=value, one per line).
// Precedence: explicit flags, then config file, then built-in defaults.
void add_experiment_options(CLI::App* sub, litens::ExperimentConfig& cfg,
                            std::string& config_path) {
  sub->add_option("--config", config_path,
                  "flat key=value config file; explicit flags win");
  sub->add_option("--experiment", cfg.experiment, "case1 | case2 | case3 | toy8d | csv")
      ->capture_default_str();
  sub->add_option("--n", cfg.n, "points to keep (0 = per-experiment default)");
  sub->add_option("--seed", cfg.seed, "base seed; all streams derive from it")
      ->capture_default_str();
  sub->add_option("--csv", cfg.csv_path, "dataset CSV path (experiment csv)");
  sub->add_flag("--baseline", cfg.baseline, "normal training: force M=1, lambda=0");
  sub->add_option("--M", cfg.M, "ensemble size (0 = per-experiment default)");
  sub->add_option("--lambda", cfg.lambda, "diversity weight (negative = default 0.1)");
  sub->add_option("--eps-stab", cfg.eps_stab, "cos^2 denominator stabilizer")
      ->capture_default_str();
  sub->add_option("--accuracy-epsilon", cfg.accuracy_epsilon,
                  "oversize diagnostic accuracy slack")
      ->capture_default_str();
  sub->add_option("--lr", cfg.learning_rate, "Adam step size (0 = per-experiment default)");
  sub->add_option("--beta1", cfg.adam_beta1, "Adam first-moment decay")
      ->capture_default_str();
  sub->add_option("--beta2", cfg.adam_beta2, "Adam second-moment decay")
      ->capture_default_str();
  sub->add_option("--adam-eps", cfg.adam_eps, "Adam denominator epsilon")
      ->capture_default_str();
  sub->add_option("--batch-size", cfg.batch_size, "minibatch size (0 = default 128)");
  sub->add_option("--epochs", cfg.epochs, "training epochs (0 = per-experiment default)");
  sub->add_option("--hidden", cfg.hidden, "hidden layer widths (empty = 256,256)")
      ->delimiter(',');
  sub->add_option("--activation", cfg.activation, "softplus | relu | auto")
      ->capture_default_str();
  sub->add_option("--n-eval", cfg.n_eval, "evaluation sample count")->capture_default_str();
  sub->add_option("--grid-resolution", cfg.grid_resolution, "contour grid points per axis")
      ->capture_default_str();
  sub->add_option("--projection-samples", cfg.projection_samples,
                  "samples per cell for >2D grids")
      ->capture_default_str();
  sub->add_option("--models", cfg.models_dir, "directory holding model_<m>.json");
  sub->add_option("--out", cfg.out_dir, "output root (default $LITENS_OUT_DIR, else ./litens-out)");
}

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Fills every field whose flag was not given on the command line.
void apply_config_file(const CLI::App& sub, litens::ExperimentConfig& cfg,
                       const std::string& path) {
  std::ifstream in(path);
  if (!in) throw litens::UsageError("cannot open config file '" + path + "'");

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trimmed(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw litens::UsageError("config line " + std::to_string(line_no) +
                               ": expected key=value");
    }
    const std::string key = trimmed(text.substr(0, eq));
    const std::string value = trimmed(text.substr(eq + 1));
    if (sub.count("--" + key) > 0) continue;  // flag beats config

    try {
      if (key == "experiment") {
        cfg.experiment = value;
      } else if (key == "n") {
        cfg.n = std::stoi(value);
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else if (key == "csv") {
        cfg.csv_path = value;
      } else if (key == "baseline") {
        cfg.baseline = value == "1" || value == "true";
      } else if (key == "M") {
        cfg.M = std::stoi(value);
      } else if (key == "lambda") {
        cfg.lambda = std::stod(value);
      } else if (key == "eps-stab") {
        cfg.eps_stab = std::stod(value);
      } else if (key == "accuracy-epsilon") {
        cfg.accuracy_epsilon = std::stod(value);
      } else if (key == "lr") {
        cfg.learning_rate = std::stod(value);
      } else if (key == "beta1") {
        cfg.adam_beta1 = std::stod(value);
      } else if (key == "beta2") {
        cfg.adam_beta2 = std::stod(value);
      } else if (key == "adam-eps") {
        cfg.adam_eps = std::stod(value);
      } else if (key == "batch-size") {
        cfg.batch_size = std::stoi(value);
      } else if (key == "epochs") {
        cfg.epochs = std::stoi(value);
      } else if (key == "hidden") {
        cfg.hidden.clear();
        std::stringstream widths(value);
        std::string w;
        while (std::getline(widths, w, ',')) cfg.hidden.push_back(std::stoi(trimmed(w)));
      } else if (key == "activation") {
        cfg.activation = value;
      } else if (key == "n-eval") {
        cfg.n_eval = std::stoi(value);
      } else if (key == "grid-resolution") {
        cfg.grid_resolution = std::stoi(value);
      } else if (key == "projection-samples") {
        cfg.projection_samples = std::stoi(value);
      } else if (key == "models") {
        cfg.models_dir = value;
      } else if (key == "out") {
        cfg.out_dir = value;
      } else {
        throw litens::UsageError("config line " + std::to_string(line_no) +
                                 ": unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw litens::UsageError("config line " + std::to_string(line_no) +
                               ": bad value '" + value + "' for " + key);
    } catch (const std::out_of_range&) {
      throw litens::UsageError("config line " + std::to_string(line_no) +
                               ": bad value '" + value + "' for " + key);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diverse ensembles via input-gradient orthogonality"};
  app.require_subcommand(1);

  litens::ExperimentConfig cfg;
  std::string config_path;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a confounded dataset");
  add_experiment_options(gen, cfg, config_path);
  CLI::App* train = app.add_subcommand("train", "train an ensemble");
  add_experiment_options(train, cfg, config_path);
  CLI::App* eval = app.add_subcommand("eval", "evaluate trained models");
  add_experiment_options(eval, cfg, config_path);

  litens::ReproduceOptions rep;
  std::string target;
  CLI::App* repro = app.add_subcommand("reproduce", "rerun a shipped experiment");
  repro->add_option("target", target, "fig3 | fig5 | table1")->required();
  repro->add_option("--profile", rep.profile, "full | ci")->capture_default_str();
  repro->add_option("--out", rep.out_root, "output root");

  try {
    app.parse(argc, argv);
    CLI::App* parsed = gen->parsed() ? gen : train->parsed() ? train
                       : eval->parsed()                      ? eval
                                                             : nullptr;
    if (parsed != nullptr) {
      if (!config_path.empty()) apply_config_file(*parsed, cfg, config_path);
      litens::apply_experiment_defaults(cfg);
      if (parsed == gen) {
        litens::cmd_gen_data(cfg, std::cout);
      } else if (parsed == train) {
        litens::cmd_train(cfg, std::cout);
      } else {
        litens::cmd_eval(cfg, std::cout);
      }
    } else if (repro->parsed()) {
      litens::cmd_reproduce(target, rep, std::cout);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const litens::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const litens::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const litens::ShapeError& e) {
    std::cerr << "shape mismatch: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
