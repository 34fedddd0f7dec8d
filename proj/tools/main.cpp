// signalopt: es | collect | train | eval | report
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "signalopt/batch.hpp"
#include "signalopt/error.hpp"
#include "signalopt/es.hpp"
#include "signalopt/maddpg.hpp"
#include "signalopt/mlp.hpp"
#include "signalopt/network.hpp"
#include "signalopt/plan.hpp"
#include "signalopt/simulator.hpp"
#include "svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace signalopt;

namespace {

struct RunConfig {
  fs::path network_path;
  std::optional<fs::path> initial_plan_path;
  std::optional<fs::path> base_plan_path;  // collect: defaults to <out>/best_plan.json
  int initial_cycle = 160;
  std::uint64_t seed = 0;
  EsConfig es;
  CollectConfig collect;
  MaddpgConfig marl;
  int eval_warmup = 2;
  int eval_measured = 10;
  std::string hash;
};

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

RunConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    const fs::path dir = path.parent_path();
    c.network_path = resolve(dir, j.at("network").get<std::string>());
    if (j.contains("initial_plan")) c.initial_plan_path = resolve(dir, j["initial_plan"].get<std::string>());
    c.initial_cycle = j.value("initial_cycle", c.initial_cycle);
    c.seed = seed_override ? *seed_override : j.value("seed", std::uint64_t{0});
    c.es = j.value("es", json::object()).get<EsConfig>();
    c.marl = j.value("marl", json::object()).get<MaddpgConfig>();
    const json col = j.value("collect", json::object());
    c.collect.episodes = col.value("episodes", c.collect.episodes);
    c.collect.cycles_per_episode = col.value("cycles_per_episode", c.collect.cycles_per_episode);
    c.collect.eta = col.value("eta", c.collect.eta);
    if (col.contains("base_plan")) c.base_plan_path = resolve(dir, col["base_plan"].get<std::string>());
    const json ev = j.value("eval", json::object());
    c.eval_warmup = ev.value("warmup_cycles", c.eval_warmup);
    c.eval_measured = ev.value("measured_cycles", c.eval_measured);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  c.es.seed = c.seed;
  c.collect.seed = c.seed;
  c.marl.seed = c.seed;
  c.es.validate();
  if (c.eval_measured < 1 || c.eval_warmup < 0) throw ConfigError("eval: bad cycle counts");

  // Digest of the effective configuration; paths enter by file name only so
  // that the same inputs hash identically from any working directory.
  json canon = {{"network", c.network_path.filename().string()},
                {"initial_cycle", c.initial_cycle},
                {"seed", c.seed},
                {"es", c.es},
                {"marl", c.marl},
                {"collect", {{"episodes", c.collect.episodes},
                             {"cycles_per_episode", c.collect.cycles_per_episode},
                             {"eta", c.collect.eta}}},
                {"eval", {{"warmup_cycles", c.eval_warmup}, {"measured_cycles", c.eval_measured}}}};
  if (c.initial_plan_path) canon["initial_plan"] = c.initial_plan_path->filename().string();
  c.hash = hex_digest(fnv1a(canon.dump()));
  return c;
}

// Collects every output of a stage and writes them only once the stage has
// finished, so a failing stage leaves no partial artifacts behind.
class Artifacts {
 public:
  void text(fs::path path, std::string content) {
    pending_.push_back({std::move(path), [c = std::move(content)](const fs::path& p) {
                          std::ofstream out(p, std::ios::binary);
                          if (!out) throw Error("cannot write " + p.string());
                          out << c;
                          if (!out) throw Error("write failed: " + p.string());
                        }});
  }
  void file(fs::path path, std::function<void(const fs::path&)> writer) {
    pending_.push_back({std::move(path), std::move(writer)});
  }
  void commit() {
    std::vector<fs::path> tmps;
    try {
      for (auto& [path, writer] : pending_) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        fs::path tmp = path;
        tmp += ".partial";
        tmps.push_back(tmp);
        writer(tmp);
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& t : tmps) fs::remove(t, ec);
      throw;
    }
    for (std::size_t k = 0; k < pending_.size(); ++k) fs::rename(tmps[k], pending_[k].first);
  }

 private:
  std::vector<std::pair<fs::path, std::function<void(const fs::path&)>>> pending_;
};

std::string csv_header(const RunConfig& c) {
  return "# seed: " + std::to_string(c.seed) + "\n# config_hash: " + c.hash + "\n";
}

std::string stamp(const RunConfig& c) {
  return "seed " + std::to_string(c.seed) + " config_hash " + c.hash;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Scenario {
  Network net;
  SignalPlan initial;
};

Scenario load_scenario(const RunConfig& c) {
  NetworkSpec spec = load_network_spec(c.network_path);
  apply_default_phase_bounds(spec, c.initial_cycle);
  Network net(std::move(spec));
  SignalPlan init;
  if (c.initial_plan_path) {
    init = load_plan(*c.initial_plan_path);
  } else {
    init = uniform_plan(net.intersections(), c.initial_cycle, net.sampling_len());
  }
  const auto report = validate_plan(init, net.intersections(), net.sampling_len());
  if (!report.ok()) throw ConfigError("initial plan invalid: " + report.summary());
  return {std::move(net), std::move(init)};
}

SignalPlan load_plan_checked(const fs::path& p, const Network& net) {
  if (!fs::exists(p)) throw ConfigError("missing artifact " + p.string());
  SignalPlan plan = load_plan(p);
  const auto report = validate_plan(plan, net.intersections(), net.sampling_len());
  if (!report.ok()) throw ConfigError("plan " + p.string() + " invalid: " + report.summary());
  return plan;
}

std::string plan_json(const SignalPlan& plan, const RunConfig& c) {
  json j = plan;
  j["seed"] = c.seed;
  j["config_hash"] = c.hash;
  return j.dump(1) + "\n";
}

// ---------------------------------------------------------------- es

int cmd_es(const RunConfig& c, const fs::path& out) {
  const Scenario sc = load_scenario(c);
  const double f0 = evaluate_plan(sc.initial, sc.net, c.es.warmup_cycles, c.es.measured_cycles);
  const EsResult res = run_es(sc.initial, sc.net, c.es);

  std::ostringstream csv;
  csv << csv_header(c) << "generation,best_fitness,mean_fitness,cycle_length,queries\n";
  plot::Series best{"best", {}, {}}, mean{"mean", {}, {}};
  for (const auto& g : res.history) {
    csv << g.generation << ',' << fmt(g.best_fitness) << ',' << fmt(g.mean_fitness) << ','
        << g.plan.cycle_length(0) << ',' << g.queries << '\n';
    best.x.push_back(g.generation);
    best.y.push_back(g.best_fitness);
    mean.x.push_back(g.generation);
    mean.y.push_back(g.mean_fitness);
  }
  Artifacts a;
  a.text(out / "best_plan.json", plan_json(res.best_plan, c));
  a.text(out / "es_curve.csv", csv.str());
  a.text(out / "es_curve.svg", plot::line_chart("ES learning curve", "generation",
                                                "fitness (negative waiting per step)",
                                                {best, mean}, stamp(c)));
  a.commit();
  const double red = f0 != 0.0 ? 100.0 * (res.best_fitness - f0) / -f0 : 0.0;
  std::cout << "es: initial fitness " << fmt(f0) << ", final fitness " << fmt(res.best_fitness)
            << " (" << fmt(red) << "% less waiting), cycle " << res.best_plan.cycle_length(0)
            << " s, queries " << res.queries << "\n";
  return 0;
}

// ---------------------------------------------------------------- collect

int cmd_collect(const RunConfig& c, const fs::path& out) {
  const Scenario sc = load_scenario(c);
  const fs::path plan_path = c.base_plan_path ? *c.base_plan_path : out / "best_plan.json";
  const SignalPlan base = load_plan_checked(plan_path, sc.net);
  BatchDataset batch = collect_batch(base, sc.net, c.collect);
  batch.provenance.config_hash = c.hash;
  Artifacts a;
  a.file(out / "batch.jsonl", [&](const fs::path& p) { write_batch_jsonl(batch, p); });
  a.commit();
  std::cout << "collect: " << batch.records.size() << " records (" << c.collect.episodes
            << " episodes x " << c.collect.cycles_per_episode << " cycles, eta "
            << c.collect.eta << " s)\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct Variant {
  std::string name;
  bool bounded, ba, src;
};

const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> v = {{"baseline", false, false, false},
                                         {"bounded", true, false, false},
                                         {"bounded_ba", true, true, false},
                                         {"bounded_src", true, false, true},
                                         {"ba_src", false, true, true},
                                         {"full", true, true, true}};
  return v;
}

json policy_meta(const DecentralizedPolicy& p, const RunConfig& c) {
  json j = {{"seed", c.seed},
            {"config_hash", c.hash},
            {"base_plan", p.base},
            {"bounded_action", p.bounded},
            {"delta_bound", p.delta_bound},
            {"queue_scale", p.queue_scale},
            {"actors", json::array()}};
  for (std::size_t k = 0; k < p.actors.size(); ++k)
    j["actors"].push_back("actor_" + std::to_string(k) + ".json");
  return j;
}

void add_policy(Artifacts& a, const fs::path& dir, const DecentralizedPolicy& p, const RunConfig& c) {
  const json meta = policy_meta(p, c);
  a.text(dir / "policy.json", meta.dump(1) + "\n");
  for (std::size_t k = 0; k < p.actors.size(); ++k) {
    json m = mlp_to_json(p.actors[k]);
    m["seed"] = c.seed;
    m["config_hash"] = c.hash;
    a.text(dir / meta["actors"][k].get<std::string>(), m.dump() + "\n");
  }
}

DecentralizedPolicy load_policy(const fs::path& dir, const Network& net) {
  const fs::path meta_path = dir / "policy.json";
  std::ifstream in(meta_path);
  if (!in) throw ConfigError("missing artifact " + meta_path.string());
  const json meta = json::parse(in);
  DecentralizedPolicy p;
  p.base = meta.at("base_plan").get<SignalPlan>();
  p.bounded = meta.at("bounded_action").get<bool>();
  p.delta_bound = meta.at("delta_bound").get<int>();
  p.queue_scale = meta.at("queue_scale").get<double>();
  p.shape = ProblemShape::of(net);
  for (const auto& f : meta.at("actors")) p.actors.push_back(load_mlp(dir / f.get<std::string>()));
  if (static_cast<int>(p.actors.size()) != net.num_intersections())
    throw ConfigError("policy in " + dir.string() + " does not match the network");
  return p;
}

std::string history_csv(const TrainResult& r, const RunConfig& c, bool with_eval) {
  std::ostringstream os;
  os << csv_header(c) << "iteration,critic_loss,actor_objective";
  if (with_eval) os << ",eval_waiting_time";
  os << '\n';
  for (const auto& h : r.history) {
    os << h.iteration << ',' << fmt(h.critic_loss) << ',' << fmt(h.actor_objective);
    if (with_eval) os << ',' << (h.eval_waiting ? fmt(*h.eval_waiting) : "");
    os << '\n';
  }
  return os.str();
}

plot::Series history_series(const std::string& name, const TrainResult& r, bool eval) {
  plot::Series s{name, {}, {}};
  for (const auto& h : r.history) {
    if (eval && !h.eval_waiting) continue;
    s.x.push_back(h.iteration);
    s.y.push_back(eval ? *h.eval_waiting : h.critic_loss);
  }
  return s;
}

int cmd_train(const RunConfig& c, const fs::path& out, bool ablation) {
  const Scenario sc = load_scenario(c);
  const fs::path batch_path = out / "batch.jsonl";
  if (!fs::exists(batch_path)) throw ConfigError("missing artifact " + batch_path.string());
  const BatchDataset batch = read_batch_jsonl(batch_path);
  const auto& prov = batch.provenance;
  if (prov.network_hash != hex_digest(sc.net.hash()))
    std::cerr << "warning: batch network hash " << prov.network_hash
              << " differs from the configured network " << hex_digest(sc.net.hash()) << "\n";
  if (prov.sampling_len != sc.net.sampling_len())
    throw ConfigError("batch sampling length does not match the network");
  if (batch.records.empty()) throw ConfigError("batch is empty");
  const auto shape = ProblemShape::of(sc.net);
  if (batch.records.front().observations.size() != shape.specs.size())
    throw ConfigError("batch does not match the network shape");

  const bool with_eval = c.marl.eval_every > 0;
  const PolicyEvaluator evaluator = [&](const DecentralizedPolicy& p) {
    return evaluate_policies(p, sc.net, c.eval_warmup, c.eval_measured, sc.net.spec().seed).waiting;
  };

  Artifacts a;
  if (!ablation) {
    const TrainResult r = train_offline(batch, prov.base_plan, shape, c.marl, evaluator);
    add_policy(a, out / "policy", r.policy, c);
    a.text(out / "history.csv", history_csv(r, c, with_eval));
    a.text(out / "history.svg", plot::line_chart("critic loss", "iteration", "loss",
                                                 {history_series("critic", r, false)}, stamp(c)));
    a.commit();
    std::cout << "train: " << c.marl.iterations << " iterations, " << r.eval_calls
              << " reporting evaluations\n";
    return 0;
  }

  std::vector<plot::Series> losses, evals;
  for (const auto& v : ablation_variants()) {
    MaddpgConfig mc = c.marl;
    mc.bounded_action = v.bounded;
    mc.batch_augmentation = v.ba;
    mc.src = v.src;
    const TrainResult r = train_offline(batch, prov.base_plan, shape, mc, evaluator);
    const fs::path dir = out / "ablation" / v.name;
    add_policy(a, dir / "policy", r.policy, c);
    a.text(dir / "history.csv", history_csv(r, c, with_eval));
    losses.push_back(history_series(v.name, r, false));
    if (with_eval) evals.push_back(history_series(v.name, r, true));
    if (v.name == "full") {
      add_policy(a, out / "policy", r.policy, c);
      a.text(out / "history.csv", history_csv(r, c, with_eval));
    }
    std::cout << "train: variant " << v.name << " done\n";
  }
  a.text(out / "ablation" / "critic_loss.svg",
         plot::line_chart("critic loss by variant", "iteration", "loss", losses, stamp(c)));
  if (with_eval)
    a.text(out / "ablation" / "eval_waiting.svg",
           plot::line_chart("evaluated waiting time by variant", "iteration",
                            "waiting per step (s)", evals, stamp(c)));
  a.commit();
  return 0;
}

// ---------------------------------------------------------------- eval / report

int cmd_eval(const RunConfig& c, const fs::path& out) {
  const Scenario sc = load_scenario(c);
  const SignalPlan es_plan = load_plan_checked(out / "best_plan.json", sc.net);
  const DecentralizedPolicy policy = load_policy(out / "policy", sc.net);
  const std::uint64_t seed = sc.net.spec().seed;

  std::vector<std::pair<std::string, double>> rows;
  rows.emplace_back("initial", -evaluate_plan(sc.initial, sc.net, c.eval_warmup, c.eval_measured));
  rows.emplace_back("es", -evaluate_plan(es_plan, sc.net, c.eval_warmup, c.eval_measured));
  rows.emplace_back("marl", evaluate_policies(policy, sc.net, c.eval_warmup, c.eval_measured, seed).waiting);
  for (const auto& v : ablation_variants()) {
    const fs::path dir = out / "ablation" / v.name / "policy";
    if (!fs::exists(dir / "policy.json")) continue;
    rows.emplace_back("marl_" + v.name,
                      evaluate_policies(load_policy(dir, sc.net), sc.net, c.eval_warmup,
                                        c.eval_measured, seed).waiting);
  }
  std::ostringstream csv;
  csv << csv_header(c) << "variant,waiting_time\n";
  for (const auto& [name, w] : rows) csv << name << ',' << fmt(w) << '\n';
  Artifacts a;
  a.text(out / "eval.csv", csv.str());
  a.commit();
  for (const auto& [name, w] : rows) std::cout << "eval: " << name << " " << fmt(w) << "\n";
  return 0;
}

double improvement(double from, double to) { return from != 0.0 ? 100.0 * (from - to) / from : 0.0; }

int cmd_report(const RunConfig& c, const fs::path& out) {
  const fs::path eval_path = out / "eval.csv";
  std::ifstream in(eval_path);
  if (!in) throw ConfigError("missing artifact " + eval_path.string());
  std::map<std::string, double> w;
  std::vector<std::string> order;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("malformed eval.csv line: " + line);
    const std::string name = line.substr(0, comma);
    w[name] = std::stod(line.substr(comma + 1));
    order.push_back(name);
  }
  for (const char* need : {"initial", "es", "marl"})
    if (!w.count(need)) throw ConfigError(std::string("eval.csv lacks variant ") + need);

  const double es_vs_initial = improvement(w["initial"], w["es"]);
  const double marl_vs_es = improvement(w["es"], w["marl"]);
  const double total = improvement(w["initial"], w["marl"]);
  std::ostringstream csv;
  csv << csv_header(c) << "metric,value\n";
  for (const auto& n : order) csv << "waiting_" << n << ',' << fmt(w[n]) << '\n';
  csv << "es_vs_initial_pct," << fmt(es_vs_initial) << '\n'
      << "marl_vs_es_pct," << fmt(marl_vs_es) << '\n'
      << "total_vs_initial_pct," << fmt(total) << '\n';

  std::vector<double> vals;
  for (const auto& n : order) vals.push_back(w[n]);
  Artifacts a;
  a.text(out / "report.csv", csv.str());
  a.text(out / "report.svg",
         plot::bar_chart("average waiting per step", "seconds", order, vals, stamp(c)));
  a.commit();

  std::printf("%-22s %12s\n", "variant", "waiting (s)");
  for (const auto& n : order) std::printf("%-22s %12.4f\n", n.c_str(), w[n]);
  std::printf("ES vs initial:   %7.2f %%\nMARL vs ES:      %7.2f %%\nMARL vs initial: %7.2f %%\n",
              es_vs_initial, marl_vs_es, total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage traffic signal plan optimizer"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::string ablation = "off";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--seed", seed, "overrides the configured seed");
    sub->add_option("--out", out_dir, "output directory");
  };
  auto* es = app.add_subcommand("es", "optimize a fixed-time plan with evolution strategies");
  auto* collect = app.add_subcommand("collect", "collect a batch under the ES plan");
  auto* train = app.add_subcommand("train", "train decentralized actors offline from the batch");
  auto* eval = app.add_subcommand("eval", "evaluate initial plan, ES plan and trained policy");
  auto* report = app.add_subcommand("report", "percent improvements and comparison plot");
  for (auto* s : {es, collect, train, eval, report}) add_common(s);
  train->add_option("--ablation", ablation, "off | full")->check(CLI::IsMember({"off", "full"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = load_config(config_path, seed);
    const fs::path out(out_dir);
    if (*es) return cmd_es(cfg, out);
    if (*collect) return cmd_collect(cfg, out);
    if (*train) return cmd_train(cfg, out, ablation == "full");
    if (*eval) return cmd_eval(cfg, out);
    if (*report) return cmd_report(cfg, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
