#include "fedsim/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "fedsim/bound.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"
#include "fedsim/plot.hpp"
#include "fedsim/synthetic.hpp"

namespace fedsim {

namespace {

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown model.activation: " + s);
}

InitScheme init_from_string(const std::string& s) {
  if (s == "kaiming_uniform") return InitScheme::kKaimingUniform;
  if (s == "lecun_uniform") return InitScheme::kLecunUniform;
  if (s == "orthogonal") return InitScheme::kOrthogonal;
  throw ConfigError("unknown model.init: " + s);
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.train_images = kv.get_string("dataset.train_images", "");
  c.train_labels = kv.get_string("dataset.train_labels", "");
  c.test_images = kv.get_string("dataset.test_images", "");
  c.test_labels = kv.get_string("dataset.test_labels", "");
  c.synthetic = kv.get_bool("dataset.synthetic", c.train_images.empty());
  c.synthetic_train = kv.get_int("dataset.synthetic_train", c.synthetic_train);
  c.synthetic_test = kv.get_int("dataset.synthetic_test", c.synthetic_test);
  c.image_rows = kv.get_int("dataset.image_rows", c.image_rows);
  c.image_cols = kv.get_int("dataset.image_cols", c.image_cols);
  c.downsample_k = kv.get_int("dataset.downsample", c.downsample_k);

  c.clients = kv.get_int("fl.clients", c.clients);
  c.rounds = kv.get_int("fl.rounds", c.rounds);
  c.local_steps = kv.get_int("fl.local_steps", c.local_steps);
  c.batch = kv.get_int("fl.batch", c.batch);
  c.eta = kv.get_double("fl.eta", c.eta);
  c.alpha = kv.get_double("fl.alpha", c.alpha);
  c.per_client = kv.get_int("fl.per_client", c.per_client);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<int>(c.seed)));

  c.model.class_count = kv.get_int("model.classes", 10);
  c.model.hidden.clear();
  for (const auto& h : kv.get_list("model.hidden", {"64"})) c.model.hidden.push_back(std::stoi(h));
  c.model.activation = activation_from_string(kv.get_string("model.activation", "relu"));
  c.model.init = init_from_string(kv.get_string("model.init", "kaiming_uniform"));

  c.aggregation.rule = kv.get_string("aggregation.rule", c.aggregation.rule);
  c.aggregation.attacker_count = kv.get_int("aggregation.attackers", c.aggregation.attacker_count);
  c.aggregation.trim = kv.get_int("aggregation.trim", c.aggregation.trim);
  c.aggregation.multikrum_select = kv.get_int("aggregation.multikrum_select", c.aggregation.multikrum_select);
  c.aggregation.dnc_filter_factor = kv.get_double("aggregation.dnc_filter", c.aggregation.dnc_filter_factor);
  c.aggregation.dnc_subsample = kv.get_int("aggregation.dnc_subsample", c.aggregation.dnc_subsample);
  c.aggregation.balance_phi = kv.get_double("aggregation.balance_phi", c.aggregation.balance_phi);
  c.aggregation.balance_kappa = kv.get_double("aggregation.balance_kappa", c.aggregation.balance_kappa);
  c.balance_reference_size = kv.get_int("aggregation.balance_reference", c.balance_reference_size);

  c.dp.enabled = kv.get_bool("dp.enabled", false);
  c.dp.clip = kv.get_double("dp.clip", c.dp.clip);
  c.dp.sigma = kv.get_double("dp.sigma", c.dp.sigma);
  c.dp.delta = kv.get_double("dp.delta", c.dp.delta);
  c.dp.calibration_c = kv.get_double("dp.c", c.dp.calibration_c);

  c.attack.poison = poison_kind_from_string(kv.get_string("attack.poison", "passive"));
  c.attack.sign_flip_scale = kv.get_double("attack.kappa", c.attack.sign_flip_scale);
  c.attack.gaussian_sigma = kv.get_double("attack.gaussian_sigma", c.attack.gaussian_sigma);
  c.attack.recon_every = kv.get_int("attack.recon_every", c.attack.recon_every);
  c.attack.recon_iterations = kv.get_int("attack.iterations", c.attack.recon_iterations);
  c.attack.recon_step = kv.get_double("attack.step", c.attack.recon_step);
  c.attack.recon_restarts = kv.get_int("attack.restarts", c.attack.recon_restarts);
  c.attack.surrogates = kv.get_list("attack.surrogates", c.attack.surrogates);
  c.attack.soft_median_temperature = kv.get_double("attack.soft_median_t", c.attack.soft_median_temperature);
  const std::string dummy = kv.get_string("attack.dummy", "decoder");
  if (dummy == "pixel") c.attack.dummy_param = DummyParam::kPixel;
  else if (dummy == "decoder") c.attack.dummy_param = DummyParam::kDecoder;
  else throw ConfigError("unknown attack.dummy: " + dummy);
  const std::string objective = kv.get_string("attack.objective", "l2");
  if (objective == "l2") c.attack.objective = MatchObjective::kSquaredError;
  else if (objective == "cosine_tv") c.attack.objective = MatchObjective::kCosineTv;
  else throw ConfigError("unknown attack.objective: " + objective);
  c.attack.tv_weight = kv.get_double("attack.tv_weight", c.attack.tv_weight);
  c.attack.recon_batch = kv.get_int("attack.recon_batch", c.attack.recon_batch);
  c.attack.latent_dim = kv.get_int("attack.latent_dim", c.attack.latent_dim);
  c.attack.decoder_hidden = kv.get_int("attack.decoder_hidden", c.attack.decoder_hidden);
  c.attack.decoder_epochs = kv.get_int("attack.decoder_epochs", c.attack.decoder_epochs);
  c.attack.decoder_batch = kv.get_int("attack.decoder_batch", c.attack.decoder_batch);
  c.attack.decoder_lr = kv.get_double("attack.decoder_lr", c.attack.decoder_lr);
  c.attacker_id = kv.get_int("attack.attacker_id", c.attacker_id);
  const int backdoor_label = kv.get_int("attack.backdoor_label", 0);
  c.attack.backdoor.target_label = backdoor_label;  // pattern geometry filled at run time

  c.victims.clear();
  for (const auto& v : kv.get_list("attack.victims", {})) c.victims.push_back(std::stoi(v));

  c.estimate_bound = kv.get_bool("bound.estimate", c.estimate_bound);
  c.bound_probes = kv.get_int("bound.probes", c.bound_probes);

  c.out_dir = kv.get_string("output.dir", c.out_dir);
  c.measure_wall_time = kv.get_bool("output.wall_time", c.measure_wall_time);
  c.threads = kv.get_int("threads", c.threads);

  const auto unused = kv.unused_keys();
  if (!unused.empty()) {
    std::string joined;
    for (const auto& k : unused) joined += (joined.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + joined);
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (clients < 1) throw ConfigError("fl.clients must be >= 1");
  if (rounds < 1) throw ConfigError("fl.rounds must be >= 1");
  if (local_steps < 1) throw ConfigError("fl.local_steps must be >= 1");
  if (batch < 1) throw ConfigError("fl.batch must be >= 1");
  if (eta <= 0.0) throw ConfigError("fl.eta must be positive");
  if (alpha <= 0.0) throw ConfigError("fl.alpha must be positive");
  if (attacker_id < 1 || attacker_id > clients) {
    throw ConfigError("attack.attacker_id must lie in [1, clients]");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  dp.validate();
}

double evaluate_model(const ModelSpec& spec, const ParamVector& params, const Dataset& test) {
  const Eigen::MatrixXd logits = forward(spec, params, test.images);
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int arg = 0;
    for (int c = 1; c < spec.class_count; ++c) {
      if (logits(i, c) > logits(i, arg)) arg = c;  // ties keep the lowest class
    }
    if (arg == test.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace {

void parallel_over(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex m;
  int next = 0;
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        int i;
        {
          std::lock_guard<std::mutex> lock(m);
          if (next >= count) return;
          i = next++;
        }
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& src, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
  return out;
}

struct ClientRoundOutput {
  Eigen::VectorXd update;
  std::vector<int> sampled;  // training indices touched this round
};

// tau local SGD steps from w_k; per-step local DP for benign clients when
// enabled; the attacker trains honestly (backdoor poisons its batches).
ClientRoundOutput local_train(const ExperimentConfig& cfg, const Dataset& train,
                              const ModelSpec& spec, const ParamVector& w_k,
                              BatchIterator& iter, int client_id, int round,
                              bool is_attacker) {
  ParamVector w = w_k;
  ClientRoundOutput out;
  const bool use_dp = cfg.dp.enabled && !is_attacker;
  std::unique_ptr<LossProgram> single;
  if (use_dp) single = std::make_unique<LossProgram>(spec, 1);
  RngStream noise = RngStream::derive(cfg.seed, "dp-noise", static_cast<std::uint64_t>(round),
                                      static_cast<std::uint64_t>(client_id));

  for (int t = 0; t < cfg.local_steps; ++t) {
    const std::vector<int> idx = iter.next();
    out.sampled.insert(out.sampled.end(), idx.begin(), idx.end());
    Eigen::MatrixXd xb = gather_rows(train.images, idx);
    std::vector<int> yb;
    for (const int i : idx) yb.push_back(train.labels[static_cast<std::size_t>(i)]);
    if (is_attacker && cfg.attack.poison == PoisonKind::kBackdoor) {
      poison_backdoor(xb, yb, cfg.attack.backdoor);
    }
    const Eigen::MatrixXd onehot = one_hot(yb, spec.class_count);

    Eigen::VectorXd step;
    if (use_dp) {
      std::vector<Eigen::VectorXd> grads;
      for (Eigen::Index i = 0; i < xb.rows(); ++i) {
        Eigen::VectorXd g;
        single->gradient(w, xb.row(i), onehot.row(i), g);
        grads.push_back(std::move(g));
      }
      step = privatize_batch(grads, cfg.dp.clip, cfg.dp.sigma, noise);
    } else {
      LossProgram prog(spec, static_cast<int>(xb.rows()));
      prog.gradient(w, xb, onehot, step);
    }
    w.values -= cfg.eta * step;
  }
  out.update = (w.values - w_k.values) / cfg.eta;
  std::sort(out.sampled.begin(), out.sampled.end());
  out.sampled.erase(std::unique(out.sampled.begin(), out.sampled.end()), out.sampled.end());
  return out;
}

double global_train_loss(const ExperimentConfig& cfg, const Dataset& train,
                         const ModelSpec& spec, const ParamVector& w,
                         const PartitionPlan& plan) {
  double total = 0.0;
  for (int m = 0; m < cfg.clients; ++m) {
    const auto& idx = plan.client_indices[static_cast<std::size_t>(m)];
    std::vector<int> labels;
    for (const int i : idx) labels.push_back(train.labels[static_cast<std::size_t>(i)]);
    total += mean_loss(spec, w, gather_rows(train.images, idx), labels);
  }
  return total / cfg.clients;
}

}  // namespace

std::string metrics_csv_header() {
  return "round,train_loss,test_acc,rmse_mean,rmse_std,surrogate_q,selected_ids,"
         "attacker_selected,bound_value,wall_ms";
}

std::string metrics_csv_row(const RoundMetrics& m) {
  std::string ids;
  for (std::size_t i = 0; i < m.selected_ids.size(); ++i) {
    if (i > 0) ids += '|';
    ids += std::to_string(m.selected_ids[i]);
  }
  std::string row;
  row += std::to_string(m.round);
  row += ',' + format_g(m.train_loss);
  row += ',' + format_g(m.test_acc);
  row += ',' + format_g(m.rmse_mean);
  row += ',' + format_g(m.rmse_std);
  row += ',' + m.surrogate_q;
  row += ',' + ids;
  row += ',' + std::to_string(m.attacker_selected ? 1 : 0);
  row += ',' + format_g(m.bound_value);
  row += ',' + format_g(m.wall_ms);
  return row;
}

void preflight_out_dir(const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  const fs::path probe = fs::path(out_dir) / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory not writable: " + out_dir);
    f << "ok";
  }
  fs::remove(probe, ec);
}

ExperimentResult run_experiment(const ExperimentConfig& raw_cfg) {
  ExperimentConfig cfg = raw_cfg;
  cfg.validate();
  preflight_out_dir(cfg.out_dir);

  // --- Data -----------------------------------------------------------------
  Dataset train;
  Dataset test;
  if (cfg.synthetic) {
    RngStream train_rng = RngStream::derive(cfg.seed, "synthetic-train");
    RngStream test_rng = RngStream::derive(cfg.seed, "synthetic-test");
    train = make_synthetic_dataset(cfg.synthetic_train, cfg.image_rows, cfg.image_cols, 10, train_rng);
    test = make_synthetic_dataset(cfg.synthetic_test, cfg.image_rows, cfg.image_cols, 10, test_rng);
  } else {
    train = load_idx(cfg.train_images, cfg.train_labels, "train");
    test = load_idx(cfg.test_images, cfg.test_labels, "test");
  }
  if (cfg.downsample_k > 1) {
    train = downsample(train, cfg.image_rows, cfg.image_cols, cfg.downsample_k);
    test = downsample(test, cfg.image_rows, cfg.image_cols, cfg.downsample_k);
  }
  const int image_rows = cfg.image_rows / cfg.downsample_k;
  const int image_cols = cfg.image_cols / cfg.downsample_k;

  ModelSpec spec = cfg.model;
  spec.input_dim = train.input_dim();
  spec.class_count = train.class_count;
  spec.validate();
  const int d = param_dim(spec);

  AttackConfig attack = cfg.attack;
  if (attack.poison == PoisonKind::kBackdoor && attack.backdoor.pixel_indices.empty()) {
    attack.backdoor = default_backdoor_pattern(image_rows, image_cols, attack.backdoor.target_label);
  }
  attack.image_rows = image_rows;
  attack.validate(spec.input_dim);
  ExperimentConfig run_cfg = cfg;
  run_cfg.attack = attack;

  // --- Partition -------------------------------------------------------------
  const bool needs_reference = cfg.aggregation.rule == "balance";
  int per_client = cfg.per_client;
  if (per_client == 0) {
    const int reserve = needs_reference ? cfg.balance_reference_size : 0;
    per_client = (train.size() - reserve) / cfg.clients;
  }
  RngStream part_rng = RngStream::derive(cfg.seed, "partition");
  const PartitionPlan plan = dirichlet_partition(train, cfg.clients, cfg.alpha, per_client, part_rng);

  std::vector<int> reference_indices;
  if (needs_reference) {
    std::set<int> used;
    for (const auto& list : plan.client_indices) used.insert(list.begin(), list.end());
    std::vector<int> residual;
    for (int i = 0; i < train.size(); ++i) {
      if (used.find(i) == used.end()) residual.push_back(i);
    }
    if (static_cast<int>(residual.size()) < cfg.balance_reference_size) {
      throw ConfigError("balance: not enough residual samples for the server reference set");
    }
    RngStream ref_rng = RngStream::derive(cfg.seed, "balance-reference");
    ref_rng.shuffle(residual);
    reference_indices.assign(residual.begin(), residual.begin() + cfg.balance_reference_size);
  }

  // --- Attacker setup ----------------------------------------------------------
  const int attacker_pos = cfg.attacker_id - 1;
  const bool recon_enabled = attack.recon_every > 0;
  Autoencoder decoder;
  bool has_decoder = false;
  if (recon_enabled && attack.dummy_param == DummyParam::kDecoder) {
    RngStream dec_rng = RngStream::derive(cfg.seed, "decoder-pretrain");
    const Eigen::MatrixXd own =
        gather_rows(train.images, plan.client_indices[static_cast<std::size_t>(attacker_pos)]);
    decoder = pretrain_decoder(own, attack.latent_dim, attack.decoder_hidden,
                               attack.decoder_epochs, attack.decoder_batch, attack.decoder_lr,
                               dec_rng);
    has_decoder = true;
  }
  std::vector<int> victims = cfg.victims;
  if (victims.empty()) {
    for (int m = 1; m <= cfg.clients; ++m) {
      if (m != cfg.attacker_id) victims.push_back(m);
    }
  }
  if (victims.empty()) victims.push_back(cfg.attacker_id);  // single-client self test

  // --- State -------------------------------------------------------------------
  RngStream init_rng = RngStream::derive(cfg.seed, "init");
  ParamVector w = init_params(spec, init_rng);
  std::vector<BatchIterator> iterators;
  for (int m = 0; m < cfg.clients; ++m) {
    iterators.emplace_back(plan.client_indices[static_cast<std::size_t>(m)], cfg.batch,
                           RngStream::derive(cfg.seed, "batches", 0, static_cast<std::uint64_t>(m + 1)));
  }

  ExperimentResult result;
  result.loss_trace.push_back(global_train_loss(cfg, train, spec, w, plan));

  BoundInputs bound_in;
  bound_in.lipschitz_grad = 1.0;
  bound_in.clip = cfg.dp.clip;
  bound_in.sigma = cfg.dp.enabled ? cfg.dp.sigma : 0.0;
  bound_in.clients = cfg.clients;
  bound_in.batch = cfg.batch;
  bound_in.param_dim = d;
  bound_in.input_dim = spec.input_dim;
  bound_in.eta = cfg.eta;

  // --- Round loop -----------------------------------------------------------------
  for (int k = 0; k < cfg.rounds; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundMetrics row;
    row.round = k;
    row.train_loss = result.loss_trace.back();
    try {
      std::vector<ClientRoundOutput> outputs(static_cast<std::size_t>(cfg.clients));
      parallel_over(cfg.clients, cfg.threads, [&](int m) {
        outputs[static_cast<std::size_t>(m)] =
            local_train(run_cfg, train, spec, w, iterators[static_cast<std::size_t>(m)], m + 1, k,
                        m == attacker_pos);
      });

      // Poison the attacker's upload (backdoor already acted on its batches).
      Eigen::VectorXd& attacker_update = outputs[static_cast<std::size_t>(attacker_pos)].update;
      if (attack.poison == PoisonKind::kSignFlip) {
        attacker_update = poison_sign_flip(attacker_update, attack.sign_flip_scale);
      } else if (attack.poison == PoisonKind::kGaussian) {
        RngStream prng = RngStream::derive(cfg.seed, "poison-gaussian", static_cast<std::uint64_t>(k));
        attacker_update = poison_gaussian(d, attack.gaussian_sigma, prng);
      }

      ClientUpdateSet submissions;
      submissions.round = k;
      submissions.eta = cfg.eta;
      for (int m = 0; m < cfg.clients; ++m) {
        submissions.updates.emplace_back(m + 1, outputs[static_cast<std::size_t>(m)].update);
      }

      Eigen::VectorXd reference_update;
      if (needs_reference) {
        BatchIterator ref_iter(reference_indices, cfg.batch,
                               RngStream::derive(cfg.seed, "balance-batches", static_cast<std::uint64_t>(k)));
        ExperimentConfig server_cfg = run_cfg;
        server_cfg.dp.enabled = false;
        reference_update =
            local_train(server_cfg, train, spec, w, ref_iter, 0, k, false).update;
      }

      RngStream agg_rng = RngStream::derive(cfg.seed, "aggregation", static_cast<std::uint64_t>(k));
      const AggregationOutcome outcome =
          aggregate(submissions, cfg.aggregation, needs_reference ? &reference_update : nullptr,
                    cfg.rounds, agg_rng);
      row.selected_ids = outcome.selected;
      row.attacker_selected = std::find(outcome.selected.begin(), outcome.selected.end(),
                                        cfg.attacker_id) != outcome.selected.end();

      ParamVector w_next = w;
      w_next.values = w.values + cfg.eta * outcome.aggregate;

      // Attacker-side observation and reconstruction.
      if (recon_enabled && k % attack.recon_every == 0) {
        const Eigen::VectorXd observed = observe_global_grad(w.values, w_next.values, cfg.eta);
        const ReconstructionState state =
            reconstruct(observed, spec, w, attack, cfg.clients, cfg.local_steps,
                        has_decoder ? &decoder : nullptr, cfg.seed, k, cfg.threads);
        std::vector<int> truth_rows;
        for (const int v : victims) {
          const auto& sampled = outputs[static_cast<std::size_t>(v - 1)].sampled;
          truth_rows.insert(truth_rows.end(), sampled.begin(), sampled.end());
        }
        std::sort(truth_rows.begin(), truth_rows.end());
        truth_rows.erase(std::unique(truth_rows.begin(), truth_rows.end()), truth_rows.end());
        const Eigen::MatrixXd truth = gather_rows(train.images, truth_rows);
        const RmseReport report = rmse_eval(state.dummies, truth);
        row.rmse_mean = report.mean;
        row.rmse_std = report.stddev;
        row.surrogate_q = state.chosen_surrogate;

        if (!result.bound.available && cfg.estimate_bound) {
          // One-off constant estimation at the first reconstruction round.
          result.bound.base_error = base_error_from_round0(report.per_pair, spec.input_dim);
          bool violated = false;
          result.bound.data_norm = data_norm_bound(train.images, &violated);
          result.bound.equal_norm_violated = violated;

          RngStream probe_rng = RngStream::derive(cfg.seed, "bound-probes");
          std::vector<int> probe_idx;
          for (int i = 0; i < std::min(64, train.size()); ++i) probe_idx.push_back(i);
          const Eigen::MatrixXd probe_x = gather_rows(train.images, probe_idx);
          std::vector<int> probe_y;
          for (const int i : probe_idx) probe_y.push_back(train.labels[static_cast<std::size_t>(i)]);
          const Eigen::MatrixXd probe_onehot = one_hot(probe_y, spec.class_count);
          LossProgram probe_prog(spec, static_cast<int>(probe_idx.size()));
          auto grad_map = [&](const Eigen::VectorXd& wv) {
            ParamVector pw = w;
            pw.values = wv;
            Eigen::VectorXd g;
            probe_prog.gradient(pw, probe_x, probe_onehot, g);
            return g;
          };
          result.bound.lipschitz_grad =
              estimate_lipschitz(grad_map, w.values, 0.05, 64, probe_rng);

          AttackConfig probe_attack = attack;
          probe_attack.recon_restarts = 1;
          probe_attack.recon_iterations = std::min(attack.recon_iterations, 40);
          probe_attack.surrogates = {attack.surrogates.front()};
          RngStream psi_rng = RngStream::derive(cfg.seed, "bound-psi");
          auto recon_map = [&](const Eigen::VectorXd& g) {
            const ReconstructionState s =
                reconstruct(g, spec, w, probe_attack, cfg.clients, cfg.local_steps,
                            has_decoder ? &decoder : nullptr, cfg.seed ^ 0x9e37, k, 1);
            return Eigen::VectorXd(s.dummies.row(0).transpose());
          };
          const double radius = 0.02 * (observed.norm() + 1e-9) / std::sqrt(static_cast<double>(d));
          result.bound.lipschitz_recon =
              estimate_lipschitz(recon_map, observed, radius, cfg.bound_probes, psi_rng);
          result.bound.available = true;
          bound_in.lipschitz_grad = std::max(result.bound.lipschitz_grad, 1e-9);
          bound_in.lipschitz_recon = std::max(result.bound.lipschitz_recon, 1e-9);
          bound_in.data_norm = result.bound.data_norm;
          bound_in.base_error = result.bound.base_error;
        }
      }

      w = w_next;
      result.loss_trace.push_back(global_train_loss(cfg, train, spec, w, plan));
      row.test_acc = evaluate_model(spec, w, test);

      if (result.bound.available) {
        bound_in.round = k;
        bound_in.objective_gap = objective_gap_from_losses(result.loss_trace, k + 1);
        row.bound_value = theorem_bound(bound_in);
      }
    } catch (const std::exception& e) {
      result.failed_round = k;
      result.failure = e.what();
      result.metrics.push_back(row);
      break;
    }
    if (cfg.measure_wall_time) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    result.metrics.push_back(row);
  }

  result.final_accuracy = result.metrics.empty() ? 0.0 : result.metrics.back().test_acc;
  if (cfg.dp.enabled) {
    const double q = static_cast<double>(cfg.batch) / per_client;
    result.nominal_epsilon = report_epsilon(cfg.dp.sigma, q,
                                            static_cast<double>(cfg.local_steps) * cfg.rounds,
                                            cfg.dp.delta, cfg.dp.calibration_c);
  }
  return result;
}

void emit_outputs(const ExperimentConfig& cfg, const ExperimentResult& result) {
  namespace fs = std::filesystem;
  preflight_out_dir(cfg.out_dir);

  {
    std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv");
    if (!csv) throw IoError("cannot write metrics.csv under " + cfg.out_dir);
    csv << metrics_csv_header() << "\n";
    for (const auto& m : result.metrics) csv << metrics_csv_row(m) << "\n";
  }

  nlohmann::json summary;
  summary["rounds_completed"] = result.metrics.size();
  summary["final_accuracy"] = result.final_accuracy;
  summary["loss_trace"] = result.loss_trace;
  if (cfg.dp.enabled) {
    summary["privacy"] = {
        {"sigma", cfg.dp.sigma},
        {"delta", cfg.dp.delta},
        {"epsilon_nominal_heuristic", std::isfinite(result.nominal_epsilon)
                                          ? nlohmann::json(result.nominal_epsilon)
                                          : nlohmann::json("inf")},
        {"note", "nominal (inverse-calibration heuristic), not an accountant output"},
    };
  }
  if (result.bound.available) {
    summary["bound"] = {
        {"lipschitz_grad_estimate", result.bound.lipschitz_grad},
        {"lipschitz_recon_estimate", result.bound.lipschitz_recon},
        {"base_error_estimate", result.bound.base_error},
        {"data_norm_bound", result.bound.data_norm},
        {"equal_norm_assumption_violated", result.bound.equal_norm_violated},
    };
  }
  if (result.failed_round >= 0) {
    summary["failed_round"] = result.failed_round;
    summary["failure"] = result.failure;
  }
  {
    std::ofstream js(fs::path(cfg.out_dir) / "summary.json");
    if (!js) throw IoError("cannot write summary.json under " + cfg.out_dir);
    js << summary.dump(2) << "\n";
  }

  LineChart rmse_chart;
  rmse_chart.title = "Reconstruction error per round";
  rmse_chart.x_label = "communication round";
  rmse_chart.y_label = "RMSE";
  LineChart acc_chart;
  acc_chart.title = "Test accuracy per round";
  acc_chart.x_label = "communication round";
  acc_chart.y_label = "accuracy";
  LineChart::Series rmse_series{"rmse_mean", {}};
  LineChart::Series acc_series{"test_acc", {}};
  for (const auto& m : result.metrics) {
    rmse_chart.x.push_back(m.round);
    acc_chart.x.push_back(m.round);
    rmse_series.y.push_back(m.rmse_mean);
    acc_series.y.push_back(m.test_acc);
  }
  rmse_chart.series.push_back(rmse_series);
  acc_chart.series.push_back(acc_series);
  write_svg(rmse_chart, (fs::path(cfg.out_dir) / "rmse_vs_rounds.svg").string());
  write_svg(acc_chart, (fs::path(cfg.out_dir) / "accuracy_vs_rounds.svg").string());
}

}  // namespace fedsim
