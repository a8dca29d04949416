#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "chandiff/chandiff.hpp"

namespace fs = std::filesystem;
using namespace chandiff;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  std::map<std::string, std::string> flags;  // config key -> raw value from a dedicated flag
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "JSON config file (may include others)");
  app->add_option("--set", c.sets, "override a config key, e.g. --set trainer.epochs=20");
  app->add_option("--out-dir", c.out_dir, "output root (default: config output_dir, then $CHANDIFF_OUT)");
}

/// A flag that writes straight through to a config key.
void flag(CLI::App* app, Common& c, const std::string& name, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(name, [&c, key](const std::string& v) { c.flags[key] = v; }, help + " [" + key + "]");
}

json resolve(const Common& c) {
  auto cfg = config::defaults();
  if (!c.config_file.empty()) {
    auto file = config::load_file(c.config_file);
    // Reject unknown keys before merging so typos do not pass silently.
    for (const auto& item : file.flatten().items()) {
      const json::json_pointer p(item.key());
      if (!cfg.contains(p) && !cfg.contains(p.parent_pointer()))
        throw ConfigError("unknown config key '" + item.key() + "' in " + c.config_file);
    }
    cfg.merge_patch(file);
  }
  for (const auto& s : c.sets) config::apply_override(cfg, s);
  for (const auto& [k, v] : c.flags) config::apply_override(cfg, k + "=" + v);
  if (!c.out_dir.empty()) cfg["output_dir"] = c.out_dir;
  return cfg;
}

fs::path root(const json& cfg) {
  const auto r = config::output_root(cfg);
  fs::create_directories(r);
  return r;
}

std::vector<chansim::ChannelSequence> sequences(const json& cfg, const std::string& file, int count, std::uint64_t seed) {
  if (!file.empty()) return io::load_dataset(file).sequences;
  auto sc = config::simulator(cfg);
  sc.num_sequences = count;
  return chansim::generate_dataset(sc, seed);
}

std::uint64_t seed_of(const json& cfg, const char* key) { return config::get<std::uint64_t>(cfg, "seeds", key); }

json seeds_meta(const json& cfg) { return cfg.at("seeds"); }

bench::EvalOptions eval_options(const json& cfg) {
  bench::EvalOptions o;
  o.snr_grid_db = config::get<std::vector<double>>(cfg, "eval", "snr_grid_db");
  o.bootstrap = config::get<int>(cfg, "eval", "bootstrap");
  o.level = config::get<double>(cfg, "eval", "level");
  o.min_snapshots = config::get<std::size_t>(cfg, "eval", "min_snapshots");
  o.plateau_tol_db = config::get<double>(cfg, "eval", "plateau_tol_db");
  o.seed = seed_of(cfg, "eval");
  o.sampler = config::sampling(cfg);
  return o;
}

void note(const std::string& s) { std::cerr << s << std::endl; }

// ------------------------------------------------------------------ commands

struct SimulateArgs {
  std::optional<double> snr_db;
  std::string out;
};

int cmd_simulate(const Common& c, const SimulateArgs& a) {
  const auto cfg = resolve(c);
  const auto sc = config::simulator(cfg);
  io::Dataset d;
  d.sequences = chansim::generate_dataset(sc, seed_of(cfg, "data"));
  d.meta["config_fingerprint"] = io::fingerprint(cfg);
  d.meta["seed"] = seed_of(cfg, "data");
  if (a.snr_db) {
    std::vector<double> lv(d.sequences.size(), *a.snr_db);
    d.observations = trainer::observe(d.sequences, lv, derive_seed(seed_of(cfg, "data"), 0xD0));
    d.meta["snr_db"] = *a.snr_db;
  }
  const fs::path out = a.out.empty() ? root(cfg) / "dataset.chd" : fs::path(a.out);
  io::save_dataset(out, d);
  note("wrote " + std::to_string(d.sequences.size()) + " sequences to " + out.string());
  return 0;
}

struct TrainArgs {
  std::string data, val_data, checkpoint, log;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  const auto cfg = resolve(c);
  const auto tc = config::training(cfg);
  const auto mc = config::model(cfg);
  const auto train_set = sequences(cfg, a.data, config::simulator(cfg).num_sequences, seed_of(cfg, "data"));
  const auto val_set = sequences(cfg, a.val_data, config::get<int>(cfg, "trainer", "val_sequences"),
                                 derive_seed(seed_of(cfg, "data"), 0x5A));
  Model<float> model(mc, seed_of(cfg, "train"));
  const fs::path ckpt = a.checkpoint.empty() ? root(cfg) / "model.ckpt" : fs::path(a.checkpoint);
  const fs::path logp = a.log.empty() ? root(cfg) / "train_log.jsonl" : fs::path(a.log);
  if (logp.has_parent_path()) fs::create_directories(logp.parent_path());
  std::ofstream log(logp);
  if (!log) throw IoError("cannot open '" + logp.string() + "' for writing");
  note("training " + std::to_string(model.parameter_count()) + " parameters on " + std::to_string(train_set.size()) +
       " sequences");
  json record{{"config", cfg}, {"config_fingerprint", io::fingerprint(cfg)}};
  const auto res = trainer::train(model, train_set, val_set, tc, [&](const trainer::EpochRecord& r, bool improved) {
    const json line{{"epoch", r.epoch},           {"loss", r.loss},         {"noise_loss", r.noise_loss},
                    {"smooth_loss", r.smooth_loss}, {"val_nmse_db", r.val_nmse_db}, {"p_tf", r.p_tf},
                    {"grad_norm", r.grad_norm},   {"seconds", r.seconds},   {"best", improved}};
    log << line.dump() << "\n" << std::flush;
    note(line.dump());
    if (improved) {
      record["best_epoch"] = r.epoch;
      record["best_val_nmse_db"] = r.val_nmse_db;
      checkpoint::save(ckpt, model, record);
    }
  });
  note("best epoch " + std::to_string(res.best_epoch) + ", checkpoint " + ckpt.string());
  return 0;
}

struct EstimateArgs {
  std::string checkpoint, data, snr = "known", out;
};

int cmd_estimate(const Common& c, const EstimateArgs& a) {
  const auto cfg = resolve(c);
  auto sc = config::sampling(cfg);
  auto model = checkpoint::load(a.checkpoint);
  auto d = io::load_dataset(a.data);
  if (a.snr == "auto") {
    sc.estimate_snr = true;
  } else if (a.snr != "known") {
    double db = 0.0;
    try {
      std::size_t used = 0;
      db = std::stod(a.snr, &used);
      if (used != a.snr.size()) throw std::invalid_argument(a.snr);
    } catch (const std::exception&) {
      throw ConfigError("--snr must be a number in dB, 'known' or 'auto'");
    }
    // A fixed SNR on a clean dataset draws the observations here.
    if (d.observations.empty()) {
      std::vector<double> lv(d.sequences.size(), db);
      d.observations = trainer::observe(d.sequences, lv, derive_seed(seed_of(cfg, "eval"), 0xD1));
    } else {
      for (auto& o : d.observations) std::fill(o.snr.begin(), o.snr.end(), std::pow(10.0, db / 10.0));
    }
  }
  if (d.observations.empty())
    throw ConfigError("dataset '" + a.data + "' has no observations; pass --snr <dB> to draw them");
  const auto est = sampler::denoise_sequences(model, d.observations, sc);

  io::Dataset outd;
  outd.sequences = d.sequences;
  for (std::size_t s = 0; s < est.size(); ++s) outd.sequences[s].snapshots = est[s].estimates;
  outd.meta = {{"content", "estimates"}, {"ratio", sc.ratio}, {"mode", sampler::to_string(sc.mode)},
               {"snr", a.snr}, {"checkpoint", a.checkpoint}};
  const fs::path out = a.out.empty() ? root(cfg) / "estimates.chd" : fs::path(a.out);
  io::save_dataset(out, outd);

  std::ostringstream steps;
  steps << "sequence,slot,snr_db,steps,nmse_db\n";
  for (std::size_t s = 0; s < est.size(); ++s)
    for (int k = 0; k < est[s].size(); ++k)
      steps << s << ',' << k << ',' << 10.0 * std::log10(est[s].snr[k]) << ',' << est[s].steps[k] << ','
            << metrics::to_db(metrics::nmse_ratio(est[s].estimates[k], d.sequences[s].snapshots[k])) << "\n";
  io::write_text(out.string() + ".steps.csv", steps.str());
  note("wrote " + out.string() + " and " + out.string() + ".steps.csv");
  return 0;
}

struct SweepArgs {
  std::string checkpoint, test_data, train_data, stem;
};

bench::EvalReport stamp(bench::EvalReport rep, const json& cfg, const std::string& ckpt) {
  rep.meta["fingerprint"] = io::fingerprint(cfg);
  rep.meta["seeds"] = seeds_meta(cfg);
  rep.meta["checkpoint"] = ckpt;
  rep.meta["config"] = cfg;
  return rep;
}

int cmd_sweep_snr(const Common& c, const SweepArgs& a) {
  const auto cfg = resolve(c);
  auto model = checkpoint::load(a.checkpoint);
  const auto test = sequences(cfg, a.test_data, config::get<int>(cfg, "eval", "test_sequences"), seed_of(cfg, "test"));
  const auto fit = sequences(cfg, a.train_data, config::simulator(cfg).num_sequences, seed_of(cfg, "data"));
  const auto cov = baselines::fit_covariance(std::span<const chansim::ChannelSequence>(fit),
                                             config::get<double>(cfg, "eval", "lmmse_loading"));
  const auto rep = stamp(bench::run_snr_sweep(model, cov, test.front().shape, test, eval_options(cfg)), cfg, a.checkpoint);
  for (const auto& f : bench::emit_report(rep, root(cfg), a.stem.empty() ? "snr" : a.stem)) note("wrote " + f.string());
  std::cout << bench::summary(rep);
  return 0;
}

int cmd_sweep_steps(const Common& c, const SweepArgs& a) {
  const auto cfg = resolve(c);
  auto model = checkpoint::load(a.checkpoint);
  const auto test = sequences(cfg, a.test_data, config::get<int>(cfg, "eval", "test_sequences"), seed_of(cfg, "test"));
  auto o = eval_options(cfg);
  o.max_budget = config::get<int>(cfg, "eval", "step_budgets");
  const auto rep = stamp(bench::run_step_sweep(model, test.front().shape, test, o), cfg, a.checkpoint);
  for (const auto& f : bench::emit_report(rep, root(cfg), a.stem.empty() ? "steps" : a.stem)) note("wrote " + f.string());
  std::cout << bench::summary(rep);
  return 0;
}

int cmd_fig2a(const Common& c) {
  const auto cfg = resolve(c);
  bench::Fig2aOptions o;
  const auto& f = cfg.at("fig2a");
  try {
    o.slow_mph = f.at("slow_mph");
    o.fast_mph = f.at("fast_mph");
    o.accel_start_mph = f.at("accel_start_mph");
    o.accel_end_mph = f.at("accel_end_mph");
    o.accel_t_s = f.at("accel_t_s");
    o.num_slots = f.at("num_slots");
    o.max_lag = f.at("max_lag");
    o.ensemble = f.at("ensemble");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fig2a config: ") + e.what());
  }
  o.slot_duration = config::get<double>(cfg, "simulator", "slot_duration");
  o.carrier_hz = config::get<double>(cfg, "simulator", "carrier_hz");
  o.num_paths = config::get<int>(cfg, "simulator", "num_paths");
  o.seed = seed_of(cfg, "data");
  const auto d = bench::reproduce_fig2a(o);
  const auto dir = root(cfg);
  io::write_text(dir / "fig2a.csv", bench::fig2a_csv(d));
  io::write_text(dir / "fig2a_speed.svg", bench::fig2a_speed_plot(d));
  io::write_text(dir / "fig2a_corr.svg", bench::fig2a_corr_plot(d));
  std::cout << "lag  slow   J0slow  fast   J0fast  accel_early accel_late\n";
  for (std::size_t i = 0; i < d.lags.size(); i += 5)
    std::printf("%3d %6.3f %7.3f %6.3f %7.3f %8.3f %10.3f\n", d.lags[i], d.corr_slow[i], d.j0_slow[i], d.corr_fast[i],
                d.j0_fast[i], d.corr_accel_early[i], d.corr_accel_late[i]);
  note("wrote fig2a.csv, fig2a_speed.svg, fig2a_corr.svg to " + dir.string());
  return 0;
}

struct ReportArgs {
  std::string dir;
  std::vector<std::string> inputs{"snr", "steps"};
  std::string stem = "report";
};

int cmd_report(const Common& c, const ReportArgs& a) {
  const auto cfg = resolve(c);
  const fs::path dir = a.dir.empty() ? root(cfg) : fs::path(a.dir);
  bench::EvalReport merged;
  int found = 0;
  for (const auto& in : a.inputs) {
    if (!fs::exists(dir / (in + ".csv"))) continue;
    auto r = bench::load_report(dir, in);
    merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
    merged.step_stats.insert(merged.step_stats.end(), r.step_stats.begin(), r.step_stats.end());
    for (const auto& [k, v] : r.meta.items())
      if (!merged.meta.contains(k)) merged.meta[k] = v;
    ++found;
  }
  if (found == 0) throw IoError("no sweep tables found in '" + dir.string() + "'");
  for (const auto& f : bench::emit_report(merged, dir, a.stem)) note("wrote " + f.string());
  std::cout << bench::summary(merged);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based channel estimation for time-varying MIMO-OFDM"};
  app.require_subcommand(1);
  Common common;

  auto* sim = app.add_subcommand("simulate", "generate a channel dataset");
  SimulateArgs sa;
  add_common(sim, common);
  flag(sim, common, "--sequences", "simulator.num_sequences", "number of sequences");
  flag(sim, common, "--slots", "simulator.num_slots", "slots per sequence");
  flag(sim, common, "--model", "simulator.model", "sum_of_sinusoids or gauss_markov");
  flag(sim, common, "--seed", "seeds.data", "data seed");
  sim->add_option("--snr", sa.snr_db, "also store noisy observations at this SNR (dB)");
  sim->add_option("--out", sa.out, "output file");

  auto* tr = app.add_subcommand("train", "train the conditional denoiser");
  TrainArgs ta;
  add_common(tr, common);
  flag(tr, common, "--epochs", "trainer.epochs", "epochs");
  flag(tr, common, "--batch", "trainer.batch", "sequences per batch");
  flag(tr, common, "--lr", "trainer.lr", "Adam learning rate");
  flag(tr, common, "--lambda", "trainer.lambda", "temporal smoothness weight");
  flag(tr, common, "--p-tf", "trainer.p_tf", "initial teacher-forcing probability");
  flag(tr, common, "--seed", "seeds.train", "training seed");
  tr->add_option("--data", ta.data, "training dataset (default: simulate from config)");
  tr->add_option("--val-data", ta.val_data, "validation dataset (default: simulate from config)");
  tr->add_option("--checkpoint", ta.checkpoint, "checkpoint path");
  tr->add_option("--log", ta.log, "per-epoch metrics log (JSON lines)");

  auto* es = app.add_subcommand("estimate", "denoise a dataset with a trained model");
  EstimateArgs ea;
  add_common(es, common);
  es->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  es->add_option("--data", ea.data, "dataset")->required();
  es->add_option("--snr", ea.snr, "SNR in dB, 'known' (stored) or 'auto' (estimated)");
  flag(es, common, "--ratio", "sampler.ratio", "geometric ladder ratio");
  flag(es, common, "--mode", "sampler.mode", "deterministic or ancestral");
  es->add_option("--out", ea.out, "estimates file");

  SweepArgs wa;
  auto* ss = app.add_subcommand("sweep-snr", "NMSE vs SNR for all estimators");
  add_common(ss, common);
  ss->add_option("--checkpoint", wa.checkpoint, "model checkpoint")->required();
  ss->add_option("--test-data", wa.test_data, "test dataset (default: simulate from config)");
  ss->add_option("--train-data", wa.train_data, "data for the LMMSE covariance fit (default: simulate)");
  ss->add_option("--stem", wa.stem, "output file stem");
  flag(ss, common, "--grid", "eval.snr_grid_db", "SNR grid as a JSON list");
  flag(ss, common, "--ratio", "sampler.ratio", "geometric ladder ratio");
  flag(ss, common, "--mode", "sampler.mode", "deterministic or ancestral");
  flag(ss, common, "--snr-mode", "sampler.snr", "known or auto");

  auto* st = app.add_subcommand("sweep-steps", "NMSE vs network calls");
  add_common(st, common);
  st->add_option("--checkpoint", wa.checkpoint, "model checkpoint")->required();
  st->add_option("--test-data", wa.test_data, "test dataset (default: simulate from config)");
  st->add_option("--stem", wa.stem, "output file stem");
  flag(st, common, "--grid", "eval.snr_grid_db", "SNR grid as a JSON list");
  flag(st, common, "--budget", "eval.step_budgets", "largest step budget");
  flag(st, common, "--ratio", "sampler.ratio", "geometric ladder ratio");
  flag(st, common, "--mode", "sampler.mode", "deterministic or ancestral");

  auto* fa = app.add_subcommand("fig2a", "speed profiles and temporal correlation");
  add_common(fa, common);
  flag(fa, common, "--ensemble", "fig2a.ensemble", "realizations per profile");
  flag(fa, common, "--slots", "fig2a.num_slots", "slots in the accelerating window");
  flag(fa, common, "--max-lag", "fig2a.max_lag", "largest lag");

  auto* rp = app.add_subcommand("report", "merge sweep tables into plots and a summary");
  ReportArgs ra;
  add_common(rp, common);
  rp->add_option("--dir", ra.dir, "directory holding the sweep tables");
  rp->add_option("--inputs", ra.inputs, "table stems to merge");
  rp->add_option("--stem", ra.stem, "output stem");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*sim) return cmd_simulate(common, sa);
    if (*tr) return cmd_train(common, ta);
    if (*es) return cmd_estimate(common, ea);
    if (*ss) return cmd_sweep_snr(common, wa);
    if (*st) return cmd_sweep_steps(common, wa);
    if (*fa) return cmd_fig2a(common);
    if (*rp) return cmd_report(common, ra);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
