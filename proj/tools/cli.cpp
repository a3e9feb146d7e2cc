#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtlab/checkpoint.hpp"
#include "rtlab/grid_env.hpp"
#include "rtlab/learners.hpp"
#include "rtlab/pipeline.hpp"
#include "rtlab/reliability.hpp"
#include "rtlab/render.hpp"
#include "rtlab/rng.hpp"
#include "rtlab/rtmodel.hpp"
#include "rtlab/trajdata.hpp"
#include "rtlab/util.hpp"

namespace rtlab::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kUsage =
    "usage: rtlab <command> [--config FILE] --seed N --out DIR [command flags]\n"
    "commands: collect train-rt train-vae augment train-policy evaluate render repro\n";

[[noreturn]] void usage_error(const std::string& msg) { throw std::invalid_argument(msg); }

struct Args {
  std::string command;
  util::KeyValue cfg;  // config file first, flags override
};

std::string flag_to_key(const std::string& flag) {
  std::string key = flag.substr(2);
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

const std::set<std::string>& allowed_keys(const std::string& command) {
  static const std::set<std::string> kGlobal = {"config", "seed", "out"};
  static const std::map<std::string, std::set<std::string>> kPerCommand = {
      {"collect", {"env", "quality", "n", "discount", "rtg_bins"}},
      {"train-rt",
       {"data", "epochs", "learning_rate", "clip_norm", "val_fraction", "layers", "heads",
        "model_dim", "context_steps", "dropout", "direction", "high_reward_quantile",
        "guidance_strength", "temperature"}},
      {"train-vae",
       {"data", "epochs", "batch_size", "learning_rate", "clip_norm", "hidden", "latent",
        "percentile"}},
      {"augment",
       {"data", "model", "vae", "generations", "max_steps", "gamma_mode", "beta",
        "fixed_length", "direction", "discount"}},
      {"train-policy",
       {"data", "learner", "hidden", "epochs", "batch_size", "learning_rate", "clip_norm",
        "steps", "discount", "target_sync", "filter_tau"}},
      {"evaluate", {"policy", "episodes", "run_id", "dataset_id", "results"}},
      {"render", {"data", "file", "limit"}},
      {"repro", {}},
  };
  static const std::map<std::string, std::set<std::string>> kMerged = [] {
    std::map<std::string, std::set<std::string>> m;
    for (const auto& [cmd, keys] : kPerCommand) {
      std::set<std::string> all = kGlobal;
      all.insert(keys.begin(), keys.end());
      m[cmd] = std::move(all);
    }
    return m;
  }();
  auto it = kMerged.find(command);
  if (it == kMerged.end()) usage_error("unknown command '" + command + "'\n" + kUsage);
  return it->second;
}

Args parse_args(const std::vector<std::string>& argv) {
  if (argv.empty()) usage_error(std::string("no command given\n") + kUsage);
  Args args;
  args.command = argv[0];
  const std::set<std::string>& allowed = allowed_keys(args.command);

  std::vector<std::pair<std::string, std::string>> flags;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    const std::string& flag = argv[i];
    if (flag.rfind("--", 0) != 0) usage_error("expected a flag, got '" + flag + "'");
    if (i + 1 >= argv.size()) usage_error("flag '" + flag + "' is missing its value");
    const std::string key = flag_to_key(flag);
    if (allowed.find(key) == allowed.end())
      usage_error("unknown flag '" + flag + "' for command '" + args.command + "'");
    flags.emplace_back(key, argv[++i]);
  }

  for (const auto& [key, value] : flags)
    if (key == "config") {
      if (!util::file_exists(value)) usage_error("missing config file at " + value);
      args.cfg = util::KeyValue::load(value);
    }
  for (const auto& [key, value] : flags)
    if (key != "config") args.cfg.set(key, value);
  return args;
}

std::uint64_t require_seed(const Args& args) {
  if (!args.cfg.has("seed")) usage_error("--seed is required (no wall-clock default)");
  const long long s = args.cfg.get_int("seed");
  if (s < 0) usage_error("--seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

std::string require_out(const Args& args) {
  if (!args.cfg.has("out")) usage_error("--out is required");
  const std::string dir = args.cfg.get("out");
  fs::create_directories(dir);
  return dir;
}

std::string require_input_dir(const Args& args, const std::string& key) {
  if (!args.cfg.has(key)) usage_error("--" + key + " is required");
  const std::string dir = args.cfg.get(key);
  if (!util::file_exists(dir + "/manifest.txt"))
    usage_error("missing run directory (no manifest) at " + dir);
  return dir;
}

std::string require_file(const std::string& path, const char* what) {
  if (!util::file_exists(path)) usage_error("missing " + std::string(what) + " at " + path);
  return path;
}

envs::GridEnv env_by_name(const std::string& name) {
  if (name == "boxball") return envs::boxball();
  if (name == "four_rooms") return envs::four_rooms();
  usage_error("unknown env '" + name + "' (expected boxball or four_rooms)");
}

util::KeyValue load_manifest(const std::string& dir) {
  return util::KeyValue::load(dir + "/manifest.txt");
}

void write_manifest(const std::string& dir, util::KeyValue kv) {
  util::write_file(dir + "/manifest.txt", kv.serialize());
}

std::string basename_of(const std::string& path) {
  return fs::path(path).filename().string();
}

std::vector<envs::Transition> dataset_transitions(const envs::GridEnv& env,
                                                  const std::vector<trajdata::Trajectory>& ds) {
  std::vector<envs::Transition> out;
  for (const auto& traj : ds) {
    auto trs = envs::extract_transitions(env, traj);
    out.insert(out.end(), trs.begin(), trs.end());
  }
  return out;
}

double episode_return(const trajdata::Trajectory& t) {
  double sum = 0.0;
  for (double r : t.rewards) sum += r;
  return sum;
}

// ---------------------------------------------------------------------------

void cmd_collect(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  if (!args.cfg.has("env")) usage_error("--env is required");
  const envs::GridEnv env = env_by_name(args.cfg.get("env"));
  const std::string quality_name = args.cfg.get_or("quality", "medium");
  envs::PolicyQuality quality;
  if (quality_name == "random")
    quality = envs::PolicyQuality::random;
  else if (quality_name == "medium")
    quality = envs::PolicyQuality::medium;
  else if (quality_name == "expert")
    quality = envs::PolicyQuality::expert;
  else
    usage_error("unknown quality '" + quality_name + "'");
  const long long n = args.cfg.get_int_or("n", 500);
  if (n < 1) usage_error("--n must be positive");
  const double discount = args.cfg.get_double_or("discount", 0.99);
  const long long rtg_bins = args.cfg.get_int_or("rtg_bins", 32);

  numkit::Rng rng(seed);
  auto ds = envs::collect_dataset(env, quality, static_cast<std::size_t>(n), rng, discount);
  auto vocab = trajdata::build_vocab(env.cell_count(), envs::kActionCount, ds,
                                     static_cast<int>(rtg_bins));
  trajdata::save_dataset(ds, dir + "/dataset.txt");
  trajdata::save_vocab(vocab, dir + "/vocab.txt");

  std::size_t transitions = 0;
  double mean_ret = 0.0, min_ret = 0.0, max_ret = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    transitions += ds[i].length();
    const double r = episode_return(ds[i]);
    mean_ret += r;
    min_ret = i == 0 ? r : std::min(min_ret, r);
    max_ret = i == 0 ? r : std::max(max_ret, r);
  }
  mean_ret /= static_cast<double>(ds.size());

  util::KeyValue m;
  m.set("command", "collect");
  m.set_int("seed", static_cast<long long>(seed));
  m.set("env", env.name);
  m.set("quality", quality_name);
  m.set_int("n", n);
  m.set_double("discount", discount);
  m.set_int("rtg_bins", rtg_bins);
  m.set_int("trajectories", static_cast<long long>(ds.size()));
  m.set_int("transitions", static_cast<long long>(transitions));
  m.set_double("goal_fraction", envs::goal_fraction(ds));
  m.set_double("mean_return", mean_ret);
  m.set_double("min_return", min_ret);
  m.set_double("max_return", max_ret);
  m.set("dataset_digest", util::hex64(util::file_digest(dir + "/dataset.txt")));
  m.set("vocab_digest", util::hex64(trajdata::vocab_digest(vocab)));
  write_manifest(dir, m);

  out << "collect: " << ds.size() << " trajectories, " << transitions << " transitions\n";
  out << "collect: returns mean " << util::format_g17(mean_ret) << " min "
      << util::format_g17(min_ret) << " max " << util::format_g17(max_ret)
      << ", goal fraction " << util::format_g17(envs::goal_fraction(ds)) << "\n";
}

void cmd_train_rt(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  const std::string data = require_input_dir(args, "data");
  require_file(data + "/dataset.txt", "dataset");
  require_file(data + "/vocab.txt", "vocabulary");
  auto ds = trajdata::load_dataset(data + "/dataset.txt");
  auto vocab = trajdata::load_vocab(data + "/vocab.txt");

  rtmodel::RtConfig cfg;
  cfg.layers = static_cast<int>(args.cfg.get_int_or("layers", cfg.layers));
  cfg.heads = static_cast<int>(args.cfg.get_int_or("heads", cfg.heads));
  cfg.model_dim = static_cast<int>(args.cfg.get_int_or("model_dim", cfg.model_dim));
  cfg.context_steps = static_cast<int>(args.cfg.get_int_or("context_steps", cfg.context_steps));
  cfg.dropout = args.cfg.get_double_or("dropout", cfg.dropout);
  cfg.direction = trajdata::direction_from_name(args.cfg.get_or("direction", "backward"));
  cfg.high_reward_quantile =
      args.cfg.get_double_or("high_reward_quantile", cfg.high_reward_quantile);
  cfg.guidance_strength = args.cfg.get_double_or("guidance_strength", cfg.guidance_strength);
  cfg.temperature = args.cfg.get_double_or("temperature", cfg.temperature);

  rtmodel::TrainConfig tcfg;
  tcfg.epochs = static_cast<int>(args.cfg.get_int_or("epochs", tcfg.epochs));
  tcfg.learning_rate = args.cfg.get_double_or("learning_rate", tcfg.learning_rate);
  tcfg.clip_norm = args.cfg.get_double_or("clip_norm", tcfg.clip_norm);
  tcfg.val_fraction = args.cfg.get_double_or("val_fraction", tcfg.val_fraction);

  numkit::Rng base(seed);
  numkit::Rng init_rng = base.derive(0);
  numkit::Rng train_rng = base.derive(1);
  rtmodel::RtModel model(cfg, vocab, init_rng);
  rtmodel::TrainReport report = model.train(ds, tcfg, train_rng);
  model.save(dir + "/model.ckpt");

  std::string csv = "epoch,core_loss,total_loss\n";
  for (std::size_t e = 0; e < report.loss_curve.size(); ++e)
    csv += std::to_string(e + 1) + "," + util::format_g17(report.loss_curve[e]) + "," +
           util::format_g17(report.total_loss_curve[e]) + "\n";
  util::write_file(dir + "/loss.csv", csv);

  util::KeyValue m = cfg.to_key_value();
  m.set("command", "train-rt");
  m.set_int("seed", static_cast<long long>(seed));
  m.set("data", data);
  m.set("data_digest", util::hex64(util::file_digest(data + "/dataset.txt")));
  m.set_int("epochs", tcfg.epochs);
  m.set_double("learning_rate", tcfg.learning_rate);
  m.set_double("clip_norm", tcfg.clip_norm);
  m.set_double("val_fraction", tcfg.val_fraction);
  m.set_int("train_count", static_cast<long long>(report.train_count));
  m.set_int("val_count", static_cast<long long>(report.val_count));
  m.set_double("val_action_accuracy", report.val_action_accuracy);
  m.set_double("val_state_accuracy", report.val_slot_accuracy[trajdata::kSlotState]);
  m.set_double("val_reward_accuracy", report.val_slot_accuracy[trajdata::kSlotReward]);
  m.set_double("val_rtg_accuracy", report.val_slot_accuracy[trajdata::kSlotRtg]);
  m.set_int("rtg_clamp_warnings", static_cast<long long>(report.rtg_clamp_warnings));
  m.set("checkpoint_digest", util::hex64(util::file_digest(dir + "/model.ckpt")));
  write_manifest(dir, m);

  out << "train-rt: " << report.train_count << " train / " << report.val_count
      << " val sequences, " << tcfg.epochs << " epochs\n";
  out << "train-rt: core loss " << util::format_g17(report.loss_curve.front()) << " -> "
      << util::format_g17(report.loss_curve.back()) << ", val action accuracy "
      << util::format_g17(report.val_action_accuracy) << "\n";
}

void cmd_train_vae(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  const std::string data = require_input_dir(args, "data");
  require_file(data + "/dataset.txt", "dataset");
  auto ds = trajdata::load_dataset(data + "/dataset.txt");
  const envs::GridEnv env = env_by_name(load_manifest(data).get("env"));
  auto transitions = dataset_transitions(env, ds);

  reliability::VaeConfig cfg;
  cfg.state_count = env.cell_count();
  cfg.action_count = envs::kActionCount;
  cfg.hidden = static_cast<int>(args.cfg.get_int_or("hidden", cfg.hidden));
  cfg.latent = static_cast<int>(args.cfg.get_int_or("latent", cfg.latent));

  reliability::VaeTrainConfig tcfg;
  tcfg.epochs = static_cast<int>(args.cfg.get_int_or("epochs", tcfg.epochs));
  tcfg.batch_size = static_cast<int>(args.cfg.get_int_or("batch_size", tcfg.batch_size));
  tcfg.learning_rate = args.cfg.get_double_or("learning_rate", tcfg.learning_rate);
  tcfg.clip_norm = args.cfg.get_double_or("clip_norm", tcfg.clip_norm);
  const double percentile = args.cfg.get_double_or("percentile", 100.0);

  numkit::Rng base(seed);
  numkit::Rng init_rng = base.derive(0);
  numkit::Rng train_rng = base.derive(1);
  reliability::Vae vae(cfg, init_rng);
  reliability::VaeTrainReport report = vae.train(transitions, tcfg, train_rng);
  reliability::Threshold threshold = reliability::calibrate_alpha(vae, transitions, percentile);
  vae.save(dir + "/vae.ckpt");
  reliability::save_threshold(threshold, dir + "/threshold.txt");

  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < report.loss_curve.size(); ++e)
    csv += std::to_string(e + 1) + "," + util::format_g17(report.loss_curve[e]) + "\n";
  util::write_file(dir + "/loss.csv", csv);

  util::KeyValue m = cfg.to_key_value();
  m.set("command", "train-vae");
  m.set_int("seed", static_cast<long long>(seed));
  m.set("data", data);
  m.set("data_digest", util::hex64(util::file_digest(data + "/dataset.txt")));
  m.set("env", env.name);
  m.set_int("epochs", tcfg.epochs);
  m.set_int("batch_size", tcfg.batch_size);
  m.set_double("learning_rate", tcfg.learning_rate);
  m.set_double("clip_norm", tcfg.clip_norm);
  m.set_double("percentile", percentile);
  m.set_double("alpha", threshold.alpha);
  m.set_int("transitions", static_cast<long long>(transitions.size()));
  m.set("checkpoint_digest", util::hex64(util::file_digest(dir + "/vae.ckpt")));
  write_manifest(dir, m);

  out << "train-vae: " << transitions.size() << " transitions, " << tcfg.epochs
      << " epochs, loss " << util::format_g17(report.loss_curve.front()) << " -> "
      << util::format_g17(report.loss_curve.back()) << "\n";
  out << "train-vae: alpha " << util::format_g17(threshold.alpha) << " at percentile "
      << util::format_g17(percentile) << "\n";
}

void cmd_augment(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  const std::string data = require_input_dir(args, "data");
  const std::string model_dir = require_input_dir(args, "model");
  const std::string vae_dir = require_input_dir(args, "vae");
  require_file(data + "/dataset.txt", "dataset");
  require_file(data + "/vocab.txt", "vocabulary");
  require_file(model_dir + "/model.ckpt", "checkpoint");
  require_file(vae_dir + "/vae.ckpt", "checkpoint");
  require_file(vae_dir + "/threshold.txt", "threshold record");

  auto ds = trajdata::load_dataset(data + "/dataset.txt");
  auto vocab = trajdata::load_vocab(data + "/vocab.txt");
  {
    ckpt::Header header = ckpt::peek(model_dir + "/model.ckpt");
    const std::string want = util::hex64(trajdata::vocab_digest(vocab));
    const std::string have = header.config.get_or("vocab_digest", "");
    if (have != want)
      usage_error("model at " + model_dir + " was trained against a different vocabulary (" +
                  have + ") than the dataset at " + data + " (" + want + ")");
  }
  auto model = rtmodel::RtModel::load(model_dir + "/model.ckpt", vocab);
  auto vae = reliability::Vae::load(vae_dir + "/vae.ckpt");
  auto threshold = reliability::load_threshold(vae_dir + "/threshold.txt");
  const envs::GridEnv env = env_by_name(load_manifest(data).get("env"));

  pipeline::AugmentConfig acfg;
  acfg.generations = static_cast<std::size_t>(args.cfg.get_int_or("generations", 500));
  acfg.max_steps = static_cast<std::size_t>(args.cfg.get_int_or("max_steps", 0));
  acfg.gamma_mode =
      reliability::gamma_mode_from_name(args.cfg.get_or("gamma_mode", "weighted"));
  acfg.beta = args.cfg.get_double_or("beta", acfg.beta);
  acfg.fixed_length = static_cast<std::size_t>(args.cfg.get_int_or("fixed_length", 0));
  acfg.direction = trajdata::direction_from_name(
      args.cfg.get_or("direction", trajdata::direction_name(model.config().direction)));
  acfg.discount = args.cfg.get_double_or("discount", acfg.discount);

  numkit::Rng rng(seed);
  pipeline::AugmentedDataset result =
      pipeline::run_rt(model, vae, threshold, ds, env, acfg, rng);

  trajdata::save_dataset(result.combined(), dir + "/dataset.txt");
  trajdata::save_dataset(result.model_trajectories, dir + "/generated.txt");
  util::write_file(dir + "/vocab.txt", util::read_file(data + "/vocab.txt"));

  const bool backward = acfg.direction == trajdata::Direction::backward;
  std::string analysis = "generation,splice_index,generated_length,truncated,gamma_stop,impossible\n";
  for (const auto& r : result.records) {
    const std::size_t splice = backward ? r.kept_length : r.boundary;
    analysis += std::to_string(r.index) + "," + std::to_string(splice) + "," +
                std::to_string(r.kept_length) + "," + (r.truncated ? "1" : "0") + "," +
                util::format_g17(r.gamma_stop) + "," + std::to_string(r.impossible) + "\n";
  }
  util::write_file(dir + "/analysis.csv", analysis);

  std::string records =
      "generation,source,boundary,raw_length,kept_length,truncated,hit_context,degenerate,"
      "gamma_stop,impossible,trace_digest\n";
  for (const auto& r : result.records)
    records += std::to_string(r.index) + "," + std::to_string(r.source) + "," +
               std::to_string(r.boundary) + "," + std::to_string(r.raw_length) + "," +
               std::to_string(r.kept_length) + "," + (r.truncated ? "1" : "0") + "," +
               (r.hit_context ? "1" : "0") + "," + (r.degenerate ? "1" : "0") + "," +
               util::format_g17(r.gamma_stop) + "," + std::to_string(r.impossible) + "," +
               util::hex64(r.trace_digest) + "\n";
  util::write_file(dir + "/records.csv", records);

  std::string trace_csv = "generation,step,e,d,gamma,u,raw_reward\n";
  for (std::size_t i = 0; i < result.traces.size(); ++i) {
    const auto& trace = result.traces[i];
    for (std::size_t t = 0; t < trace.length(); ++t)
      trace_csv += std::to_string(i) + "," + std::to_string(t) + "," +
                   util::format_g17(trace.e[t]) + "," + util::format_g17(trace.d[t]) + "," +
                   util::format_g17(trace.gamma[t]) + "," + std::to_string(trace.u[t]) + "," +
                   util::format_g17(result.raw_rewards[i][t]) + "\n";
  }
  util::write_file(dir + "/trace.csv", trace_csv);

  util::KeyValue m = result.config_echo;
  m.set("command", "augment");
  m.set_int("seed", static_cast<long long>(seed));
  m.set("env", env.name);
  m.set("data", data);
  m.set("model", model_dir);
  m.set("vae", vae_dir);
  m.set("data_digest", util::hex64(util::file_digest(data + "/dataset.txt")));
  m.set("model_digest", util::hex64(util::file_digest(model_dir + "/model.ckpt")));
  m.set("vae_digest", util::hex64(util::file_digest(vae_dir + "/vae.ckpt")));
  const auto& st = result.stats;
  m.set_int("kept", static_cast<long long>(st.kept));
  m.set_int("degenerate", static_cast<long long>(st.degenerate));
  m.set_int("truncated", static_cast<long long>(st.truncated));
  m.set_int("context_hits", static_cast<long long>(st.context_hits));
  m.set_int("generated_steps", static_cast<long long>(st.generated_steps));
  m.set_int("impossible_steps", static_cast<long long>(st.impossible_steps));
  m.set_double("mean_generated_length", st.mean_generated_length);
  m.set_double("truncation_rate", st.truncation_rate);
  m.set_double("impossible_rate", st.impossible_rate);
  m.set_int("guidance_fallbacks", static_cast<long long>(st.guidance_fallbacks));
  m.set_int("rtg_clamps", static_cast<long long>(st.rtg_clamps));
  m.set("combined_digest", util::hex64(util::file_digest(dir + "/dataset.txt")));
  m.set("generated_digest", util::hex64(util::file_digest(dir + "/generated.txt")));
  write_manifest(dir, m);

  out << "augment: " << st.kept << "/" << st.generations << " kept, " << st.truncated
      << " truncated, " << st.degenerate << " degenerate, " << st.context_hits
      << " context hits\n";
  out << "augment: " << st.generated_steps << " generated steps, mean length "
      << util::format_g17(st.mean_generated_length) << ", impossible rate "
      << util::format_g17(st.impossible_rate) << "\n";
}

void cmd_train_policy(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  const std::string data = require_input_dir(args, "data");
  require_file(data + "/dataset.txt", "dataset");
  auto ds = trajdata::load_dataset(data + "/dataset.txt");
  const envs::GridEnv env = env_by_name(load_manifest(data).get("env"));
  const std::string learner = args.cfg.get_or("learner", "bc");
  if (learner != "bc" && learner != "bcq")
    usage_error("unknown learner '" + learner + "' (expected bc or bcq)");

  learners::MlpConfig mlp;
  mlp.state_count = env.cell_count();
  mlp.action_count = envs::kActionCount;
  mlp.hidden = static_cast<int>(args.cfg.get_int_or("hidden", mlp.hidden));

  numkit::Rng base(seed);
  numkit::Rng init_rng = base.derive(0);
  numkit::Rng train_rng = base.derive(1);

  util::KeyValue m;
  m.set("command", "train-policy");
  m.set_int("seed", static_cast<long long>(seed));
  m.set("data", data);
  m.set("data_id", basename_of(data));
  m.set("data_digest", util::hex64(util::file_digest(data + "/dataset.txt")));
  m.set("env", env.name);
  m.set("learner", learner);
  m.set_int("hidden", mlp.hidden);

  std::string csv;
  if (learner == "bc") {
    learners::BcTrainConfig tcfg;
    tcfg.epochs = static_cast<int>(args.cfg.get_int_or("epochs", tcfg.epochs));
    tcfg.batch_size = static_cast<int>(args.cfg.get_int_or("batch_size", tcfg.batch_size));
    tcfg.learning_rate = args.cfg.get_double_or("learning_rate", tcfg.learning_rate);
    tcfg.clip_norm = args.cfg.get_double_or("clip_norm", tcfg.clip_norm);
    learners::BcPolicy policy(mlp, init_rng);
    learners::BcTrainReport report = policy.train(ds, tcfg, train_rng);
    policy.save(dir + "/policy.ckpt");
    csv = "epoch,loss\n";
    for (std::size_t e = 0; e < report.loss_curve.size(); ++e)
      csv += std::to_string(e + 1) + "," + util::format_g17(report.loss_curve[e]) + "\n";
    m.set_int("epochs", tcfg.epochs);
    m.set_int("batch_size", tcfg.batch_size);
    m.set_double("learning_rate", tcfg.learning_rate);
    m.set_double("clip_norm", tcfg.clip_norm);
    m.set_int("pairs", static_cast<long long>(report.pairs));
    out << "train-policy: bc on " << report.pairs << " pairs, loss "
        << util::format_g17(report.loss_curve.front()) << " -> "
        << util::format_g17(report.loss_curve.back()) << "\n";
  } else {
    learners::BcqTrainConfig tcfg;
    tcfg.steps = static_cast<int>(args.cfg.get_int_or("steps", tcfg.steps));
    tcfg.batch_size = static_cast<int>(args.cfg.get_int_or("batch_size", tcfg.batch_size));
    tcfg.learning_rate = args.cfg.get_double_or("learning_rate", tcfg.learning_rate);
    tcfg.clip_norm = args.cfg.get_double_or("clip_norm", tcfg.clip_norm);
    tcfg.discount = args.cfg.get_double_or("discount", tcfg.discount);
    tcfg.target_sync = static_cast<int>(args.cfg.get_int_or("target_sync", tcfg.target_sync));
    const double filter_tau = args.cfg.get_double_or("filter_tau", 0.3);
    learners::BcqPolicy policy(mlp, filter_tau, init_rng);
    learners::BcqTrainReport report = policy.train(env, ds, tcfg, train_rng);
    policy.save(dir + "/policy.ckpt");
    csv = "window,loss\n";
    for (std::size_t w = 0; w < report.loss_curve.size(); ++w)
      csv += std::to_string(w + 1) + "," + util::format_g17(report.loss_curve[w]) + "\n";
    m.set_int("steps", tcfg.steps);
    m.set_int("batch_size", tcfg.batch_size);
    m.set_double("learning_rate", tcfg.learning_rate);
    m.set_double("clip_norm", tcfg.clip_norm);
    m.set_double("discount", tcfg.discount);
    m.set_int("target_sync", tcfg.target_sync);
    m.set_double("filter_tau", filter_tau);
    m.set_int("transitions", static_cast<long long>(report.transitions));
    out << "train-policy: bcq on " << report.transitions << " transitions, loss "
        << util::format_g17(report.loss_curve.front()) << " -> "
        << util::format_g17(report.loss_curve.back()) << "\n";
  }
  util::write_file(dir + "/loss.csv", csv);
  m.set("checkpoint_digest", util::hex64(util::file_digest(dir + "/policy.ckpt")));
  write_manifest(dir, m);
}

void cmd_evaluate(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  const std::string policy_dir = require_input_dir(args, "policy");
  const std::string ckpt = require_file(policy_dir + "/policy.ckpt", "checkpoint");
  util::KeyValue pm = load_manifest(policy_dir);
  const envs::GridEnv env = env_by_name(pm.get("env"));
  const std::string learner = pm.get("learner");
  const long long episodes = args.cfg.get_int_or("episodes", 100);
  if (episodes < 1) usage_error("--episodes must be positive");

  learners::Policy act;
  learners::BcPolicy bc_holder = [&] {
    numkit::Rng dummy(0);
    return learners::BcPolicy(learners::MlpConfig{1, 1, 1}, dummy);
  }();
  learners::BcqPolicy bcq_holder = [&] {
    numkit::Rng dummy(0);
    return learners::BcqPolicy(learners::MlpConfig{1, 1, 1}, 0.3, dummy);
  }();
  if (learner == "bc") {
    bc_holder = learners::BcPolicy::load(ckpt);
    act = [&bc_holder](int s, numkit::Rng&) { return bc_holder.act(s); };
  } else {
    bcq_holder = learners::BcqPolicy::load(ckpt);
    act = [&bcq_holder](int s, numkit::Rng&) { return bcq_holder.act(s); };
  }

  numkit::Rng rng(seed);
  learners::EvalReport report =
      learners::evaluate(env, act, static_cast<std::size_t>(episodes), rng);

  const std::string run_id =
      args.cfg.get_or("run_id", learner + "-s" + std::to_string(seed));
  const std::string dataset_id = args.cfg.get_or("dataset_id", pm.get_or("data_id", "unknown"));
  const std::string results = args.cfg.get_or("results", dir + "/results.csv");
  std::string row = run_id + "," + dataset_id + "," + learner + "," + std::to_string(seed) +
                    "," + util::format_g17(report.mean_return) + "," +
                    util::format_g17(report.success_rate) + "," +
                    util::format_g17(report.mean_length) + "\n";
  if (!util::file_exists(results))
    util::write_file(results,
                     "run_id,dataset_id,learner,seed,mean_return,success_rate,mean_length\n");
  util::write_file(results, util::read_file(results) + row);

  util::KeyValue m;
  m.set("command", "evaluate");
  m.set_int("seed", static_cast<long long>(seed));
  m.set("policy", policy_dir);
  m.set("run_id", run_id);
  m.set("dataset_id", dataset_id);
  m.set("learner", learner);
  m.set_int("episodes", episodes);
  m.set_double("mean_return", report.mean_return);
  m.set_double("success_rate", report.success_rate);
  m.set_double("mean_length", report.mean_length);
  write_manifest(dir, m);

  out << "evaluate: " << run_id << " on " << dataset_id << ": success "
      << util::format_g17(report.success_rate) << ", return "
      << util::format_g17(report.mean_return) << ", length "
      << util::format_g17(report.mean_length) << " over " << episodes << " episodes\n";
}

void cmd_render(const Args& args, std::ostream& out) {
  require_seed(args);
  const std::string dir = require_out(args);
  const std::string data = require_input_dir(args, "data");
  const std::string file = args.cfg.get_or("file", "dataset.txt");
  require_file(data + "/" + file, "dataset");
  auto ds = trajdata::load_dataset(data + "/" + file);
  const envs::GridEnv env = env_by_name(load_manifest(data).get("env"));
  const long long limit = args.cfg.get_int_or("limit", 0);
  if (limit < 0) usage_error("--limit must be non-negative");

  render::RenderStats stats;
  util::write_file(dir + "/summary.svg", render::render_svg(env, ds, &stats));
  const std::size_t files =
      limit == 0 ? ds.size() : std::min(ds.size(), static_cast<std::size_t>(limit));
  for (std::size_t i = 0; i < files; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%04zu.svg", i);
    util::write_file(dir + "/" + name, render::render_svg(env, {ds[i]}, nullptr));
  }

  out << "render: " << stats.trajectories << " trajectories, " << stats.segments
      << " segments, " << stats.impossible_segments << " impossible, " << files
      << " per-trajectory files\n";
}

// The BoxBall study end to end: offline data, backward and forward sequence
// models, the plausibility scorer, gated and ungated augmentation, renders,
// and a 10-seed BC/BCQ comparison on raw vs augmented data.
void cmd_repro(const Args& args, std::ostream& out) {
  const std::uint64_t seed = require_seed(args);
  const std::string dir = require_out(args);
  const std::string S = std::to_string(seed);

  std::string timings;
  auto timed = [&](const std::string& name, const std::vector<std::string>& sub) {
    const auto t0 = std::chrono::steady_clock::now();
    dispatch(sub, out);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timings += name + " " + util::format_g17(secs) + "\n";
    out << "repro: " << name << " took " << util::format_g17(secs) << " s\n";
  };

  timed("collect", {"collect", "--env", "boxball", "--quality", "medium", "--n", "500",
                    "--seed", S, "--out", dir + "/data"});
  timed("train-rt", {"train-rt", "--data", dir + "/data", "--seed", S, "--out", dir + "/rt"});
  timed("train-ft", {"train-rt", "--data", dir + "/data", "--direction", "forward", "--seed",
                     S, "--out", dir + "/ft"});
  timed("train-vae",
        {"train-vae", "--data", dir + "/data", "--seed", S, "--out", dir + "/vae"});
  timed("augment-rt",
        {"augment", "--data", dir + "/data", "--model", dir + "/rt", "--vae", dir + "/vae",
         "--generations", "500", "--max-steps", "12", "--seed", S, "--out", dir + "/aug_rt"});
  timed("augment-ft",
        {"augment", "--data", dir + "/data", "--model", dir + "/ft", "--vae", dir + "/vae",
         "--generations", "500", "--max-steps", "12", "--seed", S, "--out", dir + "/aug_ft"});
  timed("render-rt", {"render", "--data", dir + "/aug_rt", "--file", "generated.txt",
                      "--limit", "50", "--seed", S, "--out", dir + "/render_rt"});
  timed("render-ft", {"render", "--data", dir + "/aug_ft", "--file", "generated.txt",
                      "--limit", "50", "--seed", S, "--out", dir + "/render_ft"});

  const auto t0 = std::chrono::steady_clock::now();
  for (const std::string& learner : {"bc", "bcq"}) {
    for (const auto& [tag, data] :
         std::vector<std::pair<std::string, std::string>>{{"raw", dir + "/data"},
                                                          {"aug", dir + "/aug_rt"}}) {
      for (int k = 1; k <= 10; ++k) {
        const std::string pol = dir + "/pol_" + learner + "_" + tag + "_" + std::to_string(k);
        std::vector<std::string> train = {"train-policy", "--data", data,     "--learner",
                                          learner,        "--seed", std::to_string(k),
                                          "--out",        pol};
        if (learner == "bcq") {
          train.push_back("--steps");
          train.push_back("6000");
        }
        dispatch(train, out);
        dispatch({"evaluate", "--policy", pol, "--episodes", "100", "--seed",
                  std::to_string(1000 + k), "--run-id",
                  learner + "-" + tag + "-s" + std::to_string(k), "--dataset-id", tag,
                  "--results", dir + "/results.csv", "--out", pol + "_eval"},
                 out);
      }
    }
  }
  const double pol_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  timings += "policies " + util::format_g17(pol_secs) + "\n";
  out << "repro: policies took " << util::format_g17(pol_secs) << " s\n";

  util::write_file(dir + "/timings.txt", timings);

  // Per-arm mean success over the 10 seeds, straight from the results file.
  std::istringstream results(util::read_file(dir + "/results.csv"));
  std::map<std::string, std::pair<double, int>> means;
  std::string line;
  std::getline(results, line);
  while (std::getline(results, line)) {
    std::istringstream row(line);
    std::string run_id, dataset_id, learner, seed_s, ret, succ;
    std::getline(row, run_id, ',');
    std::getline(row, dataset_id, ',');
    std::getline(row, learner, ',');
    std::getline(row, seed_s, ',');
    std::getline(row, ret, ',');
    std::getline(row, succ, ',');
    auto& acc = means[learner + " on " + dataset_id];
    acc.first += std::stod(succ);
    acc.second += 1;
  }
  for (const auto& [arm, acc] : means)
    out << "repro: mean success " << arm << " = "
        << util::format_g17(acc.first / acc.second) << " over " << acc.second << " seeds\n";
}

}  // namespace

void dispatch(const std::vector<std::string>& argv, std::ostream& out) {
  Args args = parse_args(argv);
  if (args.command == "collect")
    cmd_collect(args, out);
  else if (args.command == "train-rt")
    cmd_train_rt(args, out);
  else if (args.command == "train-vae")
    cmd_train_vae(args, out);
  else if (args.command == "augment")
    cmd_augment(args, out);
  else if (args.command == "train-policy")
    cmd_train_policy(args, out);
  else if (args.command == "evaluate")
    cmd_evaluate(args, out);
  else if (args.command == "render")
    cmd_render(args, out);
  else if (args.command == "repro")
    cmd_repro(args, out);
  else
    usage_error("unknown command '" + args.command + "'\n" + kUsage);
}

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  try {
    dispatch(argv, out);
    return 0;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace rtlab::cli
