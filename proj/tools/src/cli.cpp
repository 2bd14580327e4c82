#include "emapg/cli/cli.hpp"

#include <Eigen/Core>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "emapg/audit.hpp"
#include "emapg/bench.hpp"
#include "emapg/cli/config.hpp"
#include "emapg/errors.hpp"
#include "emapg/estimators.hpp"
#include "emapg/rng.hpp"
#include "emapg/trainer.hpp"

#ifndef EMAPG_VERSION
#define EMAPG_VERSION "unknown"
#endif

namespace emapg::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
  const Config& config;
  fs::path out_dir;
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> outputs;

  std::ofstream open(const std::string& name) {
    std::ofstream f(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw UsageError("cannot write '" + (out_dir / name).string() + "'");
    outputs.push_back(name);
    return f;
  }
};

using Runner = std::function<int(Context&)>;

// Shortest text that reads back to the same double.
std::string shortest(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct Subcommand {
  std::string name;
  std::string description;
  std::vector<KeySpec> keys;
  Runner runner;
};

std::vector<KeySpec> with_common(std::vector<KeySpec> keys) {
  keys.insert(keys.begin(), {{"seed", "0", "64-bit seed for all random streams"},
                             {"out", "results", "output directory"}});
  return keys;
}

int report_audit(Context& ctx, const AuditReport& report, const std::string& file) {
  {
    auto f = ctx.open(file);
    report.write_csv(f);
  }
  std::size_t failed = 0;
  for (const auto& row : report.rows()) {
    if (row.pass()) continue;
    ++failed;
    ctx.err << "FAIL " << row.section << "/" << row.item << ": " << row.check
            << " (error " << row.error << ", tolerance " << row.tolerance << ")\n";
  }
  ctx.out << "wrote " << (ctx.out_dir / file).string() << ": " << report.rows().size() << " checks, "
          << failed << " failed\n";
  return failed == 0 ? kExitOk : kExitAuditFailure;
}

int run_audit_estimators(Context& ctx) {
  const Config& c = ctx.config;
  EstimatorAuditConfig cfg;
  cfg.pairs = c.get_size("pairs");
  cfg.vocab = c.get_size("vocab");
  cfg.logit_scale = c.get_double("logit_scale");
  cfg.random_sets = c.get_size("random_sets");
  cfg.seed = c.get_u64("seed");
  cfg.value_tol = c.get_double("value_tol");
  cfg.grad_tol = c.get_double("grad_tol");
  cfg.witness_min = c.get_double("witness_min");
  return report_audit(ctx, audit_estimators(cfg), "audit_estimators.csv");
}

int run_audit_fdiv(Context& ctx) {
  const Config& c = ctx.config;
  FdivAuditConfig cfg;
  cfg.pairs = c.get_size("pairs");
  cfg.vocab = c.get_size("vocab");
  cfg.logit_scale = c.get_double("logit_scale");
  cfg.alpha = c.get_double("alpha");
  cfg.random_sets = c.get_size("random_sets");
  cfg.instances = c.get_size("instances");
  cfg.transform_vocab = c.get_size("transform_vocab");
  cfg.beta = c.get_double("beta");
  cfg.pg_vocab = c.get_size("pg_vocab");
  cfg.pg_group = c.get_size("pg_group");
  cfg.seed = c.get_u64("seed");
  cfg.value_tol = c.get_double("value_tol");
  cfg.grad_tol = c.get_double("grad_tol");
  return report_audit(ctx, audit_fdiv(cfg), "audit_fdiv.csv");
}

int run_bench(Context& ctx) {
  const Config& c = ctx.config;
  SynthTaskSpec spec;
  spec.vocab = c.get_size("vocab");
  spec.target_mass = c.get_double("mass");
  spec.k_list = c.get_size_list("k_list");
  spec.b_list = c.get_size_list("b_list");
  spec.trials = c.get_size("trials");
  spec.baseline_arm = c.get_bool("baseline_arm");
  spec.seed = c.get_u64("seed");
  const auto records = run_sweep(spec);
  {
    auto f = ctx.open("bench.csv");
    write_csv(f, records);
  }
  ctx.out << "wrote " << (ctx.out_dir / "bench.csv").string() << ": " << records.size() << " rows\n";
  for (std::size_t k : spec.k_list) {
    const auto b_star = critical_sample_size(records, k, spec.target_mass);
    ctx.out << "critical sample size K=" << k << ": " << (b_star ? std::to_string(*b_star) : "none")
            << "\n";
  }
  return kExitOk;
}

int run_dynamics(Context& ctx) {
  const Config& c = ctx.config;
  DynamicsAuditConfig cfg;
  cfg.closed_form_instances = c.get_size("closed_form_instances");
  cfg.max_dim = c.get_size("max_dim");
  cfg.max_steps = c.get_size("max_steps");
  cfg.etas = c.get_double_list("etas");
  cfg.alpha_beta_lambdas = c.get_double_list("alpha_beta_lambdas");
  cfg.regime_dim = c.get_size("regime_dim");
  cfg.regime_steps = c.get_size("regime_steps");
  cfg.steady_instances = c.get_size("steady_instances");
  cfg.steady_max_dim = c.get_size("steady_max_dim");
  cfg.seed = c.get_u64("seed");
  if (cfg.max_dim == 0 || cfg.regime_dim == 0 || cfg.steady_max_dim == 0 || cfg.max_steps == 0) {
    throw UsageError("dimensions and max_steps must be positive");
  }
  const DynamicsAudit audit = audit_dynamics(cfg);
  {
    auto f = ctx.open("dynamics_regimes.csv");
    f << "eta,alpha_beta_lambda,predicted,observed,match\n";
    for (const auto& p : audit.probes) {
      f << shortest(p.eta) << "," << shortest(p.alpha_beta_lambda) << "," << p.predicted << "," << p.observed << ","
        << (p.predicted == p.observed ? "true" : "false") << "\n";
    }
  }
  return report_audit(ctx, audit.report, "dynamics_audit.csv");
}

EstimatorVariant parse_variant(const std::string& name) {
  try {
    return parse_estimator(name);
  } catch (const std::exception&) {
    throw UsageError("key 'estimator': unknown estimator '" + name + "'");
  }
}

int run_train(Context& ctx) {
  const Config& c = ctx.config;
  const TaskSpec task = target_token_task(c.get_size("vocab"), c.get_size("length"), c.get_size("target"));
  TrainConfig cfg;
  cfg.group_size = c.get_size("group_size");
  cfg.steps = c.get_size("steps");
  cfg.inner_epochs = c.get_size("inner_epochs");
  cfg.lr = c.get_double("lr");
  const std::string opt = c.get_string("optimizer");
  if (opt == "adam") {
    cfg.optimizer = OptimizerKind::kAdam;
  } else if (opt == "sgd") {
    cfg.optimizer = OptimizerKind::kSgd;
  } else {
    throw UsageError("key 'optimizer': expected adam or sgd, got '" + opt + "'");
  }
  cfg.adam_beta1 = c.get_double("adam_beta1");
  cfg.adam_beta2 = c.get_double("adam_beta2");
  cfg.adam_eps = c.get_double("adam_eps");
  cfg.kl_coef = c.get_double("kl_coef");
  cfg.ema_eta = c.get_double("ema_eta");
  cfg.ema_interval = c.get_size("ema_interval");
  cfg.eps_high = c.get_double("eps_high");
  cfg.eps_low = c.get_double("eps_low");
  cfg.kl.variant = parse_variant(c.get_string("estimator"));
  cfg.kl.k = c.get_size("k");
  const bool forward = cfg.kl.variant == EstimatorVariant::kTopkForward ||
                       cfg.kl.variant == EstimatorVariant::kK5;
  const ClipRange clip = forward ? ClipRange::forward_default() : ClipRange::reverse_default();
  cfg.kl.clip.s_min = c.raw("s_min") == "auto" ? clip.s_min : c.get_double("s_min");
  cfg.kl.clip.s_max = c.raw("s_max") == "auto" ? clip.s_max : c.get_double("s_max");
  try {
    cfg.kl.tail = parse_tail(c.get_string("tail"));
  } catch (const std::exception&) {
    throw UsageError("key 'tail': expected canonical or baseline, got '" + c.get_string("tail") + "'");
  }
  cfg.markov = c.get_bool("markov");
  cfg.init_scale = c.get_double("init_scale");
  cfg.seed = c.get_u64("seed");

  const auto metrics = train(task, cfg);
  {
    auto f = ctx.open("train_metrics.csv");
    write_metrics_csv(f, metrics);
  }
  ctx.out << "wrote " << (ctx.out_dir / "train_metrics.csv").string() << ": " << metrics.size()
          << " steps";
  if (!metrics.empty()) ctx.out << ", final mean reward " << metrics.back().mean_reward;
  ctx.out << "\n";
  return kExitOk;
}

const std::vector<Subcommand>& registry() {
  static const std::vector<Subcommand> commands = {
      {"audit-estimators",
       "Exhaustive audit of the sampled, off-policy, Top-k and sequence KL estimators",
       with_common({
           {"pairs", "100", "random policy pairs"},
           {"vocab", "8", "vocabulary size"},
           {"logit_scale", "1", "standard deviation of the random logits"},
           {"random_sets", "20", "arbitrary index sets per pair for Top-k"},
           {"value_tol", "1e-9", "tolerance on expected values"},
           {"grad_tol", "1e-8", "tolerance on expected gradients"},
           {"witness_min", "1e-3", "minimum bias on the clipped witness pair"},
       }),
       run_audit_estimators},
      {"audit-fdiv", "Audit of the f-divergence estimators, optimal policy and policy-gradient losses",
       with_common({
           {"pairs", "100", "random policy pairs"},
           {"vocab", "8", "vocabulary size"},
           {"logit_scale", "1", "standard deviation of the random logits"},
           {"alpha", "3", "alpha of the alpha-divergence generator"},
           {"random_sets", "20", "arbitrary index sets per pair for Top-k"},
           {"instances", "20", "random optimal-policy instances per generator"},
           {"transform_vocab", "5", "vocabulary of the reward-transform check"},
           {"beta", "1", "regularization strength"},
           {"pg_vocab", "4", "vocabulary of the policy-gradient loss check"},
           {"pg_group", "2", "group size of the policy-gradient loss check"},
           {"value_tol", "1e-9", "tolerance on expected values"},
           {"grad_tol", "1e-8", "tolerance on expected gradients"},
       }),
       run_audit_fdiv},
      {"bench", "Relative RMSE sweep of gradient estimators on a synthetic softmax slot",
       with_common({
           {"vocab", "2000", "vocabulary size"},
           {"mass", "0.8", "calibrated top-32 mass of the policy"},
           {"k_list", "4,8,16,32,64", "Top-k sizes"},
           {"b_list", "1,2,4,8,16,32,64,128,256,512,1024,2048,4096,8192", "sample counts"},
           {"trials", "200", "independent trials per configuration"},
           {"baseline_arm", "true", "also run the Top-k arm with the K4 tail"},
       }),
       run_bench},
      {"dynamics", "Closed form, regime grid and steady state of the linearized EMA dynamics",
       with_common({
           {"closed_form_instances", "50", "random instances for the closed-form check"},
           {"max_dim", "64", "largest dimension of the closed-form instances"},
           {"max_steps", "1000", "largest step count of the closed-form check"},
           {"etas", "0,0.5,0.9,0.95,0.99", "EMA rates of the regime grid"},
           {"alpha_beta_lambdas", "0.001,0.5,1.2,1.9,4", "alpha*beta*lambda_max of the regime grid"},
           {"regime_dim", "4", "dimension of the regime probes"},
           {"regime_steps", "10000", "simulated steps per regime probe"},
           {"steady_instances", "1000", "random stable instances for the steady-state check"},
           {"steady_max_dim", "16", "largest dimension of the steady-state instances"},
       }),
       run_dynamics},
      {"train", "EMA policy-gradient training on the target-token task",
       with_common({
           {"vocab", "16", "vocabulary size"},
           {"length", "8", "sequence length"},
           {"target", "0", "rewarded token"},
           {"group_size", "64", "rollouts per step"},
           {"steps", "500", "training steps"},
           {"inner_epochs", "2", "gradient steps per batch"},
           {"lr", "0.05", "learning rate"},
           {"optimizer", "adam", "adam or sgd"},
           {"adam_beta1", "0.9", "Adam first-moment decay"},
           {"adam_beta2", "0.999", "Adam second-moment decay"},
           {"adam_eps", "1e-8", "Adam epsilon"},
           {"kl_coef", "0.001", "KL penalty coefficient"},
           {"ema_eta", "0.9", "EMA rate of the anchor (1 freezes it)"},
           {"ema_interval", "10", "steps between anchor updates"},
           {"eps_high", "0.28", "upper clip range"},
           {"eps_low", "0.2", "lower clip range"},
           {"estimator", "topk_reverse", "k1 k2 k3 k3pp k4 k5 topk_reverse topk_forward"},
           {"k", "8", "Top-k size"},
           {"s_min", "auto", "lower importance-weight clip (auto: 0)"},
           {"s_max", "auto", "upper importance-weight clip (auto: 10 reverse, 2.5 forward)"},
           {"tail", "canonical", "Top-k tail: canonical or baseline"},
           {"markov", "false", "condition each position on the previous token"},
           {"init_scale", "0", "standard deviation of the initial logits"},
       }),
       run_train},
  };
  return commands;
}

const Subcommand& find_subcommand(const std::string& name) {
  for (const auto& sc : registry()) {
    if (sc.name == name) return sc;
  }
  throw UsageError("unknown subcommand '" + name + "'");
}

// `--key value` and `--key=value` pairs left over after the fixed flags.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2) throw UsageError("unexpected argument '" + tok + "'");
    std::string key = tok.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for '--" + key + "'");
      value = extras[++i];
    }
    std::replace(key.begin(), key.end(), '-', '_');
    out.emplace_back(key, value);
  }
  return out;
}

void write_manifest(Context& ctx, const Subcommand& sc) {
  std::ofstream f(ctx.out_dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot write manifest in '" + ctx.out_dir.string() + "'");
  f << "tool = emapg " << EMAPG_VERSION << "\n";
  f << "subcommand = " << sc.name << "\n";
  f << "rng = " << kRngAlgorithm << "\n";
  f << "compiler = " << __VERSION__ << "\n";
  f << "eigen = " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION
    << "\n";
  f << "outputs =";
  for (std::size_t i = 0; i < ctx.outputs.size(); ++i) f << (i == 0 ? " " : ",") << ctx.outputs[i];
  f << "\n\n# effective config\n";
  ctx.config.echo(f);
}

}  // namespace

std::vector<std::string> subcommands() {
  std::vector<std::string> names;
  for (const auto& sc : registry()) names.push_back(sc.name);
  return names;
}

std::string describe_keys(const std::string& subcommand) {
  std::ostringstream os;
  for (const auto& k : find_subcommand(subcommand).keys) {
    os << "  " << k.key << " = " << k.default_value << "  # " << k.help << "\n";
  }
  return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Estimators, dynamics and training for EMA-anchored KL-regularized policy gradients",
               "emapg"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string("emapg ") + EMAPG_VERSION);

  std::string config_path;
  std::string seed_text;
  std::string out_text;
  std::vector<CLI::App*> subs;
  for (const auto& sc : registry()) {
    CLI::App* sub = app.add_subcommand(sc.name, sc.description);
    sub->allow_extras();
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--seed", seed_text, "seed (overrides the config)");
    sub->add_option("--out", out_text, "output directory (overrides the config)");
    sub->footer("Config keys (override with --key value):\n" + describe_keys(sc.name));
    subs.push_back(sub);
  }

  std::vector<const char*> argv{"emapg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const CLI::App* chosen = app.get_subcommands().front();
    const Subcommand& sc = find_subcommand(chosen->get_name());
    Config config(sc.keys);
    if (!config_path.empty()) config.load_file(config_path);
    for (const auto& [key, value] : parse_overrides(chosen->remaining())) config.set(key, value);
    if (chosen->count("--seed") > 0) config.set("seed", seed_text);
    if (chosen->count("--out") > 0) config.set("out", out_text);
    config.get_u64("seed");

    const fs::path out_dir = config.get_string("out");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw UsageError("cannot create output directory '" + out_dir.string() + "': " + ec.message());

    Context ctx{config, out_dir, out, err, {}};
    const int status = sc.runner(ctx);
    write_manifest(ctx, sc);
    return status;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::logic_error& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitAuditFailure;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace emapg::cli
