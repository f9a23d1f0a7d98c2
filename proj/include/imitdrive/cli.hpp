#pragma once

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "expert.hpp"
#include "gp.hpp"
#include "io.hpp"
#include "nn.hpp"
#include "ppo.hpp"
#include "server.hpp"
#include "session.hpp"
#include "track.hpp"

namespace imitdrive {

// ---------------------------------------------------------------------------
// Pipeline stages behind the subcommands. Each is a pure function of its
// inputs and seed; outputs are written atomically.
// ---------------------------------------------------------------------------

inline GpModelFile fit_gp_stage(const DemoLog& log, const Track& track, Variable variable, const FitOptions& opt) {
  require_rounds(log, 2);
  const Series s = demo_series(log, variable);
  GpModelFile f;
  f.variable = to_string(variable);
  f.track_id = track.id();
  f.lap_length = track.total_length();
  f.model = fit_with_tuned_noise(s.sigma, s.value, opt);
  return f;
}

inline GpModelFile load_gp_model(const std::string& path, const std::string& expected_variable) {
  GpModelFile f = gp_model_from_json(read_file(path));
  if (f.variable != expected_variable)
    throw ValidationError(path + " holds a '" + f.variable + "' model, expected '" + expected_variable + "'");
  return f;
}

struct TrainInputs {
  GpModelFile trackpos;
  GpModelFile speed;
  std::vector<TrajectorySample> trackpos_samples;  // empty: drawn from the model
  std::vector<TrajectorySample> speed_samples;
};

/// Expert profile for training: GP means on the grid plus the sample banks.
inline ExpertProfile training_profile(const Config& cfg, const Track& track, const TrainInputs& in,
                                      std::uint64_t seed) {
  for (const GpModelFile* f : {&in.trackpos, &in.speed})
    if (f->track_id != track.id())
      throw ValidationError("GP model fitted on track '" + f->track_id + "', training on '" + track.id() + "'");
  const auto grid = arc_grid(track.total_length(), cfg.grid_spacing);
  std::mt19937_64 rng(seed ^ 0x6a09e667f3bcc909ULL);
  auto sd = in.trackpos_samples.empty()
                ? sample_trajectories(in.trackpos.model, grid, cfg.samples, rng, cfg.sampling)
                : in.trackpos_samples;
  auto sv = in.speed_samples.empty() ? sample_trajectories(in.speed.model, grid, cfg.samples, rng, cfg.sampling)
                                     : in.speed_samples;
  if (sd.size() != sv.size()) throw ValidationError("track-position and speed sample banks differ in size");
  ExpertProfile p = make_profile(track.total_length(), in.trackpos.model, in.speed.model, sd.front().grid, sd, sv);
  return p;
}

struct TrainOutputs {
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Trains from scratch, writing metrics and the checkpoint into `out_dir`
/// every `cfg.checkpoint_every` updates and at the end.
inline TrainResult train_stage(const Config& cfg, const Track& track, const ExpertProfile& profile,
                               std::uint64_t seed, const std::string& out_dir, std::ostream* progress = nullptr) {
  std::filesystem::create_directories(out_dir);
  const TrainOutputs out{out_dir + "/metrics.csv", out_dir + "/checkpoint.bin"};
  DrivingTask task(track, profile, cfg.reward);
  PolicyNets nets = build_policy_networks(kObservationSize, cfg.hidden, seed, cfg.head);
  std::vector<UpdateMetrics> history;
  TrainOptions opt;
  opt.total_steps = cfg.total_steps;
  opt.seed = seed;
  opt.on_update = [&](const UpdateMetrics& m, const PolicyNets& n) {
    history.push_back(m);
    if (cfg.checkpoint_every > 0 && m.update % cfg.checkpoint_every == 0) {
      save_checkpoint(n, out.checkpoint_path);
      write_file_atomic(out.metrics_path, metrics_to_csv(history));
    }
    if (progress)
      *progress << "update " << m.update << " steps " << m.steps << " B " << m.batch_size << " return "
                << fmt_double(m.mean_return) << " ep_len " << fmt_double(m.mean_ep_len) << "\n";
    return true;
  };
  TrainResult r = train(nets, task, cfg.ppo, opt);
  save_checkpoint(nets, out.checkpoint_path);
  write_file_atomic(out.metrics_path, metrics_to_csv(r.metrics));
  return r;
}

inline std::string rollout_summary(const RolloutResult& r) {
  std::ostringstream s;
  s << "rollout: " << r.log.round_count() << " laps, " << r.episodes << " episodes, " << r.failures << " failed";
  for (const auto& [k, n] : r.terminations) s << " " << k << "=" << n;
  s << "\n";
  return s.str();
}

inline std::string safety_summary(const SafetyStats& st) {
  std::ostringstream s;
  s << "safety: episodes " << st.episodes << " completed " << st.completed << " completion_rate "
    << fmt_double(st.completion_rate()) << " obstacles " << st.obstacles_encountered << " collisions "
    << st.collisions << " collision_rate " << fmt_double(st.collision_rate());
  for (const auto& [k, n] : st.terminations) s << " " << k << "=" << n;
  s << "\n";
  return s.str();
}

/// Per-round summary of a demo or rollout log.
inline std::string replay_summary(const DemoLog& log) {
  std::ostringstream s;
  s << "driver " << log.driver << " track " << log.track_id << " seed " << log.seed << "\n";
  s << "round,rows,duration_s,mean_V_kmh,mean_D_m,min_D_m,max_D_m\n";
  const auto rounds = log.rounds();
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& rs = rounds[i];
    if (rs.empty()) {
      s << i << ",0,,,,,\n";
      continue;
    }
    double v = 0.0, d = 0.0, dmin = rs.front().lateral, dmax = rs.front().lateral;
    for (const auto& r : rs) {
      v += r.speed_kmh;
      d += r.lateral;
      dmin = std::min(dmin, r.lateral);
      dmax = std::max(dmax, r.lateral);
    }
    const double n = static_cast<double>(rs.size());
    s << i << "," << rs.size() << "," << fmt_double(rs.back().t - rs.front().t) << "," << fmt_double(v / n) << ","
      << fmt_double(d / n) << "," << fmt_double(dmin) << "," << fmt_double(dmax) << "\n";
  }
  return s.str();
}

/// One episode from a reference-state start, as episode-log CSV.
inline std::string episode_log(const PolicyNets& nets, const Track& track, ActionMode mode, std::uint64_t seed,
                               long max_steps) {
  const VehicleParams vp;
  Policy policy(nets, mode, seed);
  std::mt19937_64 rng(seed);
  DrivingEnv env(track, vp);
  Eigen::VectorXd obs = env.reset(rng);
  std::string out = std::string(kEpisodeLogHeader) + "\n" + episode_log_row(env.state(), TerminationKind::none, vp.dt) + "\n";
  for (long k = 0; k < max_steps; ++k) {
    obs = env.step(policy.act(obs));
    out += episode_log_row(env.state(), env.termination(), vp.dt) + "\n";
    if (env.termination() != TerminationKind::none) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

namespace detail {

inline volatile std::sig_atomic_t g_interrupted = 0;

}  // namespace detail

/// Parses and runs one command. Exit codes: 0 success, 2 invalid input or
/// usage, 1 runtime failure.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Imitation-reward driving: tracks, expert demos, GP behavior models, PPO training, evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (default: $IMITDRIVE_CONFIG, then built-in)");

  // generate-road
  auto* gen = app.add_subcommand("generate-road", "Write a track file");
  std::string gen_kind = "alternating_50m", gen_out;
  double gen_length = 3140.0, gen_spacing_mean = 100.0, gen_spacing_std = 10.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "desk | training | alternating_50m | gaussian_spaced | gaussian_batched");
  gen->add_option("--length", gen_length, "Loop length in metres");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--spacing-mean", gen_spacing_mean, "Gaussian obstacle spacing mean (m)");
  gen->add_option("--spacing-std", gen_spacing_std, "Gaussian obstacle spacing std (m)");
  gen->add_option("--out", gen_out)->required();

  // collect-expert
  auto* col = app.add_subcommand("collect-expert", "Drive the scripted expert and write a demo CSV");
  std::string col_track, col_out;
  std::optional<int> col_rounds;
  std::uint64_t col_seed = 0;
  col->add_option("--track", col_track, "desk | training | track file");
  col->add_option("--rounds", col_rounds);
  col->add_option("--seed", col_seed);
  col->add_option("--out", col_out)->required();

  // fit-gp
  auto* fitc = app.add_subcommand("fit-gp", "Fit a GP of one variable against arc-length");
  std::string fit_track, fit_demo, fit_variable, fit_out;
  fitc->add_option("--track", fit_track);
  fitc->add_option("--demo", fit_demo)->required();
  fitc->add_option("--variable", fit_variable, "trackpos | speed")->required();
  fitc->add_option("--out", fit_out)->required();

  // sample-gp
  auto* samp = app.add_subcommand("sample-gp", "Draw trajectories within the 99% band");
  std::string samp_model, samp_out, samp_noise;
  std::optional<int> samp_n;
  std::uint64_t samp_seed = 0;
  samp->add_option("--model", samp_model)->required();
  samp->add_option("--n", samp_n);
  samp->add_option("--seed", samp_seed);
  samp->add_option("--noise", samp_noise, "correlated | white");
  samp->add_option("--out", samp_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "PPO training against the imitation reward");
  std::string tr_track, tr_dmodel, tr_vmodel, tr_dsamples, tr_vsamples, tr_out = "run", tr_reward;
  std::uint64_t tr_seed = 0;
  std::optional<long> tr_steps;
  std::optional<int> tr_ckpt;
  tr->add_option("--track", tr_track);
  tr->add_option("--trackpos-model", tr_dmodel)->required();
  tr->add_option("--speed-model", tr_vmodel)->required();
  tr->add_option("--trackpos-samples", tr_dsamples, "Samples CSV (default: drawn from the model)");
  tr->add_option("--speed-samples", tr_vsamples, "Samples CSV (default: drawn from the model)");
  tr->add_option("--reward", tr_reward, "deterministic | stochastic");
  tr->add_option("--steps", tr_steps, "Total environment steps");
  tr->add_option("--checkpoint-every", tr_ckpt, "Updates between checkpoints");
  tr->add_option("--seed", tr_seed);
  tr->add_option("--out-dir", tr_out);
  bool tr_quiet = false, tr_table_lr = false, tr_table_mb = false, tr_no_norm = false;
  tr->add_flag("--quiet", tr_quiet);
  tr->add_flag("--table-learning-rate", tr_table_lr, "Use the literal Adam stepsize 1e-1");
  tr->add_flag("--table-minibatch", tr_table_mb, "Use minibatch size 1024");
  tr->add_flag("--no-advantage-normalization", tr_no_norm);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Roll out a checkpoint and compare it with the expert");
  std::string ev_ckpt, ev_track, ev_mode, ev_dmodel, ev_vmodel, ev_out = "eval";
  std::optional<int> ev_rounds, ev_episodes;
  std::uint64_t ev_seed = 0;
  bool ev_general = false;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--track", ev_track);
  ev->add_option("--rounds", ev_rounds);
  ev->add_option("--mode", ev_mode, "mean_only | sampled");
  ev->add_option("--episodes", ev_episodes, "Safety episodes");
  ev->add_option("--trackpos-model", ev_dmodel, "Expert GP (with --speed-model enables the comparison)");
  ev->add_option("--speed-model", ev_vmodel);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--out-dir", ev_out);
  ev->add_flag("--generalization", ev_general, "Also run the generated-road suite");

  // replay
  auto* rp = app.add_subcommand("replay", "Summarize a demo log, or record one policy episode");
  std::string rp_log, rp_track, rp_ckpt, rp_mode = "mean_only", rp_out;
  std::uint64_t rp_seed = 0;
  long rp_steps = 6000;
  rp->add_option("--log", rp_log, "Demo or rollout CSV to summarize");
  rp->add_option("--track", rp_track);
  rp->add_option("--checkpoint", rp_ckpt, "Record one episode of this policy instead");
  rp->add_option("--mode", rp_mode);
  rp->add_option("--seed", rp_seed);
  rp->add_option("--max-steps", rp_steps);
  rp->add_option("--out", rp_out, "Episode log CSV (with --checkpoint)");

  // serve
  auto* sv = app.add_subcommand("serve", "Live driving sessions over newline-delimited JSON");
  std::string sv_track, sv_demo_dir = ".", sv_driver = "human";
  int sv_port = 8765;
  bool sv_stdio = false;
  double sv_speed = 50.0;
  sv->add_option("--track", sv_track);
  sv->add_option("--port", sv_port);
  sv->add_flag("--stdio", sv_stdio, "Serve one session on stdin/stdout");
  sv->add_option("--demo-dir", sv_demo_dir);
  sv->add_option("--driver", sv_driver);
  sv->add_option("--start-speed", sv_speed, "km/h");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const Config cfg = resolve_config(config_path);
    auto track_of = [&](const std::string& flag) { return resolve_track(flag.empty() ? cfg.track : flag); };

    if (*gen) {
      Track t = [&] {
        if (gen_kind == "desk") return build_desk_track();
        RoadSpec spec;
        spec.kind = road_kind_from_string(gen_kind);
        spec.length = gen_length;
        spec.seed = gen_seed;
        spec.spacing_mean = gen_spacing_mean;
        spec.spacing_std = gen_spacing_std;
        return generate_road(spec);
      }();
      write_file_atomic(gen_out, track_to_json(t).dump(1) + "\n");
      out << "wrote " << gen_out << " (" << t.id() << ", " << fmt_double(t.total_length()) << " m, "
          << t.obstacles().size() << " obstacles)\n";
    } else if (*col) {
      const Track t = track_of(col_track);
      const DemoLog log = collect_demos(t, col_rounds.value_or(cfg.demo_rounds), col_seed, cfg.expert, cfg.vehicle);
      write_demo(log, col_out);
      out << "wrote " << col_out << " (" << log.records.size() << " rows, " << log.round_count() << " rounds)\n";
    } else if (*fitc) {
      const Track t = track_of(fit_track);
      const Variable var = variable_from_string(fit_variable);
      const GpModelFile f = fit_gp_stage(load_demo(fit_demo, t), t, var, cfg.fit);
      write_file_atomic(fit_out, gp_model_to_json(f));
      const RqParams& k = f.model.kernel();
      out << "wrote " << fit_out << " (" << f.model.inputs().size() << " points, signal_variance "
          << fmt_double(k.signal_variance) << ", length_scale " << fmt_double(k.length_scale) << ", alpha "
          << fmt_double(k.alpha) << ", noise_variance " << fmt_double(f.model.noise_variance()) << ")\n";
    } else if (*samp) {
      const GpModelFile f = gp_model_from_json(read_file(samp_model));
      SampleOptions so = cfg.sampling;
      if (samp_noise == "white") so.noise = SampleNoise::white;
      else if (samp_noise == "correlated") so.noise = SampleNoise::correlated;
      else if (!samp_noise.empty()) throw ValidationError("--noise must be correlated or white");
      std::mt19937_64 rng(samp_seed);
      const auto samples =
          sample_trajectories(f.model, arc_grid(f.lap_length, cfg.grid_spacing), samp_n.value_or(cfg.samples), rng, so);
      write_file_atomic(samp_out, samples_to_csv(samples));
      out << "wrote " << samp_out << " (" << samples.size() << " samples)\n";
    } else if (*tr) {
      Config c = cfg;
      if (tr_steps) c.total_steps = *tr_steps;
      if (tr_ckpt) c.checkpoint_every = *tr_ckpt;
      if (tr_reward == "deterministic") c.reward.mode = RewardMode::deterministic;
      else if (tr_reward == "stochastic") c.reward.mode = RewardMode::stochastic;
      else if (!tr_reward.empty()) throw ValidationError("--reward must be deterministic or stochastic");
      if (tr_table_lr) c.ppo.learning_rate = 1e-1;
      if (tr_table_mb) c.ppo.minibatch_size = 1024;
      if (tr_table_mb && c.ppo.batch_size % 1024 != 0) c.ppo.batch_size = 1024;
      if (tr_no_norm) c.ppo.normalize_advantages = false;
      c.ppo.validate();
      if (c.total_steps < 1) throw ValidationError("--steps must be >= 1");
      const Track t = track_of(tr_track);
      TrainInputs in{load_gp_model(tr_dmodel, "trackpos"), load_gp_model(tr_vmodel, "speed"), {}, {}};
      if (!tr_dsamples.empty()) in.trackpos_samples = samples_from_csv(read_file(tr_dsamples));
      if (!tr_vsamples.empty()) in.speed_samples = samples_from_csv(read_file(tr_vsamples));
      const ExpertProfile profile = training_profile(c, t, in, tr_seed);
      const TrainResult r = train_stage(c, t, profile, tr_seed, tr_out, tr_quiet ? nullptr : &out);
      out << "trained " << r.steps << " steps, " << r.metrics.size() << " updates, final B " << r.final_batch_size
          << "; wrote " << tr_out << "/metrics.csv and " << tr_out << "/checkpoint.bin\n";
    } else if (*ev) {
      const Track t = track_of(ev_track);
      const PolicyNets proto = build_policy_networks(kObservationSize, cfg.hidden, 0);
      const PolicyNets nets = load_checkpoint(ev_ckpt, &proto);
      const ActionMode mode = ev_mode.empty() ? cfg.eval_mode : action_mode_from_string(ev_mode);
      if (ev_dmodel.empty() != ev_vmodel.empty())
        throw ValidationError("--trackpos-model and --speed-model go together");
      std::filesystem::create_directories(ev_out);
      RolloutOptions ro;
      ro.rounds = ev_rounds.value_or(cfg.eval_rounds);
      if (ro.rounds < 1) throw ValidationError("--rounds must be >= 1");
      SafetyOptions so;
      so.episodes = ev_episodes.value_or(cfg.eval_episodes);
      const SafetyStats safety = safety_run(nets, t, mode, ev_seed, so);
      std::string report = safety_summary(safety);
      RolloutResult roll;
      try {
        roll = rollout(nets, t, mode, ev_seed, ro);
      } catch (const ConfigurationError& e) {
        report += std::string("rollout failed: ") + e.what() + "\n";
        write_file_atomic(ev_out + "/report.txt", report);
        out << report;
        throw;
      }
      write_demo(roll.log, ev_out + "/rollout.csv");
      report += rollout_summary(roll);
      if (!ev_dmodel.empty()) {
        const BehaviorModels expert{load_gp_model(ev_dmodel, "trackpos").model,
                                    load_gp_model(ev_vmodel, "speed").model};
        ComparisonReport rep = compare(expert, roll.log, t.total_length(), cfg.fit);
        rep.safety = safety;
        report += format_report(rep, std::string("agent (") + to_string(mode) + ") vs expert on " + t.id());
        write_file_atomic(ev_out + "/report.csv", report_to_csv(rep));
      }
      if (ev_general) {
        GeneralizationOptions go;
        go.mode = mode;
        go.fit = cfg.fit;
        report += format_generalization(generalization_suite(nets, ev_seed, go));
      }
      write_file_atomic(ev_out + "/report.txt", report);
      out << report;
    } else if (*rp) {
      const Track t = track_of(rp_track);
      if (rp_ckpt.empty() == rp_log.empty()) throw ValidationError("replay needs exactly one of --log, --checkpoint");
      if (!rp_log.empty()) {
        out << replay_summary(load_demo(rp_log, t));
      } else {
        const PolicyNets proto = build_policy_networks(kObservationSize, cfg.hidden, 0);
        const PolicyNets nets = load_checkpoint(rp_ckpt, &proto);
        const std::string csv = episode_log(nets, t, action_mode_from_string(rp_mode), rp_seed, rp_steps);
        if (rp_out.empty()) out << csv;
        else write_file_atomic(rp_out, csv);
      }
    } else if (*sv) {
      const Track t = track_of(sv_track);
      SessionConfig sc;
      sc.start_speed_kmh = sv_speed;
      sc.demo_dir = sv_demo_dir;
      sc.driver = sv_driver;
      if (sv_stdio) {
        run_stream_session(t, sc, std::cin, out);
      } else {
        SessionServer server(t, sc, sv_port);
        err << "serving track " << t.id() << " on 127.0.0.1:" << server.port() << "\n";
        std::thread watcher([&] {
          while (!detail::g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
          server.stop();
        });
        std::signal(SIGINT, [](int) { detail::g_interrupted = 1; });
        std::signal(SIGTERM, [](int) { detail::g_interrupted = 1; });
        server.run();
        detail::g_interrupted = 1;
        watcher.join();
      }
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace imitdrive
