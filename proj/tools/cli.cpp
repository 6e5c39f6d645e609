#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <boost/algorithm/string.hpp>
#include <boost/crc.hpp>
#include <json.hpp>

#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/infer.hpp"
#include "mtbd/likelihood.hpp"
#include "mtbd/parallel.hpp"
#include "mtbd/ppc.hpp"
#include "mtbd/seqmut.hpp"
#include "mtbd/simulate.hpp"
#include "mtbd/study.hpp"

namespace mtbd::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// State shared by one subcommand run: the effective configuration, the output
// directory and a record of every input file read.
struct Context {
  json cfg;
  fs::path out_dir;
  std::ostream* out = nullptr;
  json inputs = json::object();

  std::string read(const std::string& path) {
    const std::string text = read_file(path);
    boost::crc_32_type crc;
    crc.process_bytes(text.data(), text.size());
    std::ostringstream hex;
    hex << std::hex << crc.checksum();
    inputs[path] = {{"bytes", text.size()}, {"crc32", hex.str()}};
    return text;
  }
  void write(const std::string& name, const std::string& contents) const {
    write_file((out_dir / name).string(), contents);
  }
  std::string str(const char* key) const { return cfg.at(key).get<std::string>(); }
  double num(const char* key) const { return cfg.at(key).get<double>(); }
  std::size_t count(const char* key) const { return cfg.at(key).get<std::size_t>(); }
  std::uint64_t seed() const { return cfg.at("seed").get<std::uint64_t>(); }
  std::size_t threads() const { return count("threads"); }
};

struct Command {
  std::string name;
  std::string help;
  json defaults;                   // every accepted key with its default value
  std::vector<std::string> paths;  // keys naming input files
  std::function<void(Context&)> run;
};

json with_common(json j) {
  j["seed"] = 1u;
  j["threads"] = default_threads();
  j["out_dir"] = "out";
  return j;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared loaders

TypeSpace load_space(Context& c) {
  const std::string path = c.str("type_space");
  return path.empty() ? fixtures::paper_type_space() : type_space_from_json(c.read(path));
}

SquareMatrix load_gamma_star(Context& c, const TypeSpace& space) {
  const std::string path = c.str("gamma_star");
  SquareMatrix g = path.empty() ? fixtures::paper_gamma_star() : normalize_generator(matrix_from_json(c.read(path)));
  if (g.size() != space.size())
    throw ValidationError("gamma_star is " + std::to_string(g.size()) + "x" + std::to_string(g.size()) +
                          " but the type space has " + std::to_string(space.size()) + " types");
  return g;
}

// Each path holds one tree, an array of trees, {"trees": [...]}, or a
// simulate manifest whose replicate files are read relative to it.
std::vector<Tree> load_trees(Context& c) {
  std::vector<Tree> out;
  for (const auto& p : c.cfg.at("trees")) {
    const std::string path = p.get<std::string>();
    const std::string text = c.read(path);
    const json j = parse_json(text, path);
    if (j.is_object() && j.contains("replicates")) {
      const fs::path dir = fs::path(path).parent_path();
      for (const auto& r : j.at("replicates")) {
        auto t = trees_from_json(c.read((dir / r.at("file").get<std::string>()).string()));
        if (r.contains("rho_index"))
          for (auto& tree : t) tree.rho_index = r.at("rho_index").get<std::size_t>();
        out.insert(out.end(), t.begin(), t.end());
      }
    } else {
      auto t = trees_from_json(text);
      out.insert(out.end(), t.begin(), t.end());
    }
  }
  if (out.empty()) throw ValidationError("no trees given (use --trees)");
  return out;
}

Params load_params(Context& c) {
  const std::string path = c.str("params");
  if (path.empty()) throw ValidationError("--params is required");
  return params_from_json(c.read(path));
}

std::optional<Capacity> capacity_of(const Context& c) {
  const std::size_t k = c.count("capacity");
  if (k == 0) return std::nullopt;
  const std::string mode = c.str("capacity_mode");
  if (mode != "hard" && mode != "soft") throw ValidationError("capacity_mode must be hard or soft");
  return Capacity{mode == "hard" ? CapacityMode::hard : CapacityMode::soft, k, c.num("soft_sharpness")};
}

Conditioning conditioning_of(const Context& c) {
  const std::string s = c.str("conditioning");
  if (s == "conditional") return Conditioning::conditional;
  if (s == "unconditional") return Conditioning::unconditional;
  throw ValidationError("conditioning must be conditional or unconditional");
}

std::string fmt(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_simulate(Context& c) {
  const Params params = load_params(c);
  const TypeSpace space = load_space(c);
  if (params.gamma_star.size() != space.size())
    throw ValidationError("params gamma_star does not match the type space size");
  const std::string mode = c.str("mode");
  if (mode != "observed" && mode != "full") throw ValidationError("simulate --mode must be observed or full");
  SimOptions sim;
  sim.t_total = c.num("t_total");
  sim.root_state = static_cast<int>(bin_index(space, c.num("root_affinity")));
  sim.capacity = capacity_of(c);
  sim.max_events = c.count("max_events");
  sim.rejection_budget = c.count("rejection_budget");
  sim.check(space.size());

  const std::size_t n = c.count("n_trees");
  std::vector<Tree> trees(n);
  std::vector<std::size_t> rejections(n, 0);
  std::vector<SimStats> stats(n);
  parallel_for(n, c.threads(), [&](std::size_t i) {
    Rng rng(derive_seed(c.seed(), i));
    const std::size_t idx = i % params.rho.size();
    if (mode == "full") {
      trees[i] = simulate_full(params, space, sim, rng, &stats[i]);
    } else {
      ConditionedTree ct = simulate_conditioned(params, space, sim, params.rho[idx], rng);
      trees[i] = std::move(ct.tree);
      rejections[i] = ct.rejections;
    }
    trees[i].rho_index = idx;
  });

  json reps = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "tree_%04zu.json", i);
    c.write(name, tree_to_json(trees[i]));
    json r{{"file", name},
           {"seed", derive_seed(c.seed(), i)},
           {"rho_index", trees[i].rho_index},
           {"sampled_leaves", trees[i].leaf_count()},
           {"nodes", trees[i].nodes.size()}};
    if (mode == "observed") r["rejections"] = rejections[i];
    else r["events"] = stats[i].events;
    reps.push_back(r);
  }
  c.write("manifest.json", json{{"kind", mode}, {"replicates", reps}}.dump(2));
  *c.out << "wrote " << n << " " << mode << " trees to " << c.out_dir.string() << "\n";
}

void cmd_loglik(Context& c) {
  const Params params = load_params(c);
  const TypeSpace space = load_space(c);
  const std::vector<Tree> trees = load_trees(c);
  const std::string mode = c.str("mode");
  if (mode != "exact" && mode != "approx" && mode != "direct" && mode != "loglinear")
    throw ValidationError("loglik --mode must be exact, approx, direct or loglinear");
  const Rates rates = params.rates(space);

  std::vector<LogDensityResult> res(trees.size());
  parallel_for(trees.size(), c.threads(), [&](std::size_t i) {
    if (mode == "approx") {
      res[i] = log_density_approx(compile(trees[i], space.size()), rates, params.rho_for(trees[i].rho_index));
    } else {
      res[i] = log_density(trees[i], params, space, mode == "direct" ? DensityMode::direct : DensityMode::loglinear);
    }
  });

  std::ostringstream csv;
  csv << "tree,mode,log_q_root,log_survival,log_conditional\n";
  double q = 0.0, s = 0.0, l = 0.0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    csv << i << ',' << mode << ',' << fmt(res[i].log_q_root) << ',' << fmt(res[i].log_survival) << ','
        << fmt(res[i].log_conditional) << '\n';
    q += res[i].log_q_root;
    s += res[i].log_survival;
    l += res[i].log_conditional;
  }
  csv << "total," << mode << ',' << fmt(q) << ',' << fmt(s) << ',' << fmt(l) << '\n';
  c.write("loglik.csv", csv.str());
  *c.out << "total log density (" << mode << "): " << fmt(q) << " unconditional, " << fmt(l) << " conditional\n";
}

void cmd_infer(Context& c) {
  const std::vector<Tree> trees = load_trees(c);
  const auto rho = c.cfg.at("rho").get<std::vector<double>>();
  const std::string layout_name = c.str("layout");
  std::optional<ParamLayout> layout;
  if (layout_name == "sigmoid") {
    const TypeSpace space = load_space(c);
    layout = ParamLayout::sigmoid(space, load_gamma_star(c, space), rho);
  } else if (layout_name == "constant") {
    layout = ParamLayout::constant(rho);
  } else {
    throw ValidationError("layout must be sigmoid or constant");
  }

  ChainConfig cfg;
  cfg.iterations = c.count("iterations");
  cfg.burn_in = c.count("burn_in");
  cfg.thin = c.count("thin");
  cfg.block_moves = c.count("block_moves");
  cfg.adapt = c.cfg.at("adapt").get<bool>();
  cfg.seed = c.seed();
  const std::string mode = c.str("mode");
  if (mode != "exact" && mode != "approx") throw ValidationError("infer --mode must be exact or approx");
  cfg.likelihood.kind = mode == "exact" ? LikelihoodKind::exact : LikelihoodKind::approx;
  cfg.likelihood.mode = density_mode_from_string(c.str("density"));
  cfg.likelihood.conditioning = conditioning_of(c);

  const TreeSetDensity set(trees, layout->n_types());
  const Chain chain = run_chain(set, *layout, cfg);
  const ChainSummary summary =
      chain_summary(chain, *layout, linspace(c.num("grid_lo"), c.num("grid_hi"), c.count("grid_n")));

  json s = json::parse(summary_to_json(summary));
  s["acceptance"] = chain.acceptance;
  s["block_acceptance"] = chain.block_acceptance ? json(*chain.block_acceptance) : json(nullptr);
  s["final_scales"] = chain.final_scales;
  s["failed_evaluations"] = chain.failed_evaluations;
  c.write("chain.csv", chain_to_csv(chain));
  c.write("summary.json", s.dump(2));
  for (const auto& p : summary.params)
    *c.out << p.name << ": median " << fmt(p.median) << ", 90% [" << fmt(p.ci90.lo) << ", " << fmt(p.ci90.hi)
           << "], ess " << fmt(p.ess) << "\n";
}

void cmd_ratemat(Context& c) {
  const TypeSpace space = load_space(c);
  const std::string naive_path = c.str("naive");
  std::string naive = naive_path.empty() ? fixtures::synthetic_naive_sequence() : c.read(naive_path);
  boost::trim(naive);
  const double stop = c.num("stop_affinity");
  const std::string aff_path = c.str("affinity");
  const AffinityModel affinity = aff_path.empty() && naive_path.empty()
                                     ? fixtures::synthetic_affinity_model()
                                     : AffinityModel::from_csv(naive, aff_path.empty() ? "site,amino_acid,effect\n"
                                                                                       : c.read(aff_path),
                                                               stop);
  const std::string ctx_path = c.str("context");
  ContextModel context = ctx_path.empty() ? fixtures::synthetic_context_model() : ContextModel::from_csv(c.read(ctx_path));
  context.overall_rate = c.num("rate");
  const std::string conv = c.str("convention");
  if (conv == "per_site") context.convention = RateConvention::per_site;
  else if (conv == "per_sequence") context.convention = RateConvention::per_sequence;
  else throw ValidationError("convention must be per_site or per_sequence");

  const std::size_t n = c.count("chains");
  const double duration = c.num("duration");
  std::vector<TypeTrajectory> paths(n);
  parallel_for(n, c.threads(), [&](std::size_t i) {
    Rng rng(derive_seed(c.seed(), i));
    paths[i] = to_trajectory(mutate_chain(affinity.naive(), context, duration, rng), affinity, space);
  });
  const SquareMatrix g = estimate_gamma(paths, space.size());
  c.write("gamma.json", matrix_to_json(g));
  *c.out << "estimated " << g.size() << "x" << g.size() << " type-change matrix from " << n << " chains\n";
}

void cmd_discretize(Context& c) {
  const std::string path = c.str("samples");
  if (path.empty()) throw ValidationError("--samples is required");
  std::string text = c.read(path);
  std::vector<double> samples;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    samples = parse_json(text, path).get<std::vector<double>>();
  } else {
    std::vector<std::string> tokens;
    boost::split(tokens, text, boost::is_any_of(", \t\r\n"), boost::token_compress_on);
    for (const auto& t : tokens) {
      if (t.empty()) continue;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || ptr != t.data() + t.size()) throw ValidationError("not a number in " + path + ": " + t);
      samples.push_back(v);
    }
  }
  const TypeSpace space = discretize(samples, c.count("n"));
  c.write("type_space.json", type_space_to_json(space));
  *c.out << type_space_to_json(space) << "\n";
}

void cmd_ppc(Context& c) {
  const std::vector<Tree> observed = load_trees(c);
  const std::string chain_path = c.str("chain");
  if (chain_path.empty()) throw ValidationError("--chain is required");
  const Chain chain = chain_from_csv(c.read(chain_path));
  const TypeSpace space = load_space(c);
  const ParamLayout layout =
      ParamLayout::sigmoid(space, load_gamma_star(c, space), c.cfg.at("rho").get<std::vector<double>>());
  if (chain.names != layout.names()) throw ValidationError("chain columns do not match the sigmoid model");

  PpcOptions opts;
  opts.draws = c.count("draws");
  opts.n_trees = c.count("n_trees");
  opts.seed = c.seed();
  opts.threads = c.threads();
  opts.sim.t_total = c.num("t_total");
  opts.sim.root_state = static_cast<int>(bin_index(space, c.num("root_affinity")));
  const PpcReport r = run_ppc(chain, layout, observed, opts);
  c.write("ppc.json", ppc_to_json(r));
  c.write("ppc.csv", ppc_to_csv(r));
  *c.out << r.bins_within(0.9) << " of " << r.observed.size()
         << " bins inside the central 90% of the replicate distribution\n";
}

void cmd_study(Context& c) {
  StudyConfig s;
  s.name = c.str("name");
  const bool conditioning = s.name == "conditioning";
  if (!conditioning) scenario(s.name);  // validates the name
  s.sets = c.count("sets");
  s.trees_per_set = c.count("trees_per_set");
  s.seed = c.seed();
  s.threads = c.threads();
  s.ppc_draws = c.count("ppc_draws");
  s.generate.capacity = c.count("capacity");
  s.generate.soft_sharpness = c.num("soft_sharpness");
  s.generate.max_events = c.count("max_events");
  s.out_dir = c.out_dir.string();

  ChainConfig chain = conditioning ? short_chain() : ChainConfig{};
  if (c.count("iterations") > 0) chain.iterations = c.count("iterations");
  chain.burn_in = c.count("burn_in") > 0 ? c.count("burn_in") : chain.iterations / 4;
  chain.thin = c.count("thin");
  chain.block_moves = c.count("block_moves");
  s.chain = chain;
  s.conditioning.lambda = c.num("lambda");
  s.conditioning.mu = c.num("mu");
  s.conditioning.rho = c.num("rho");
  s.conditioning.t_total = c.num("t_total");
  s.conditioning.ladder = c.cfg.at("ladder").get<std::vector<std::size_t>>();
  s.conditioning.replicates = c.count("replicates");
  s.conditioning.chain = chain;

  const StudyReport r = run_study(s);
  *c.out << r.summary_json << "\n";
}

const std::vector<Command>& registry() {
  static const std::vector<Command> cmds{
      {"simulate", "Simulate trees from a params JSON file",
       with_common({{"params", ""},
                    {"type_space", ""},
                    {"n_trees", 1u},
                    {"t_total", fixtures::kSimulationTime},
                    {"root_affinity", 0.0},
                    {"mode", "observed"},
                    {"capacity", 0u},
                    {"capacity_mode", "hard"},
                    {"soft_sharpness", 0.1},
                    {"max_events", 1'000'000u},
                    {"rejection_budget", 1'000'000u}}),
       {"params", "type_space"},
       cmd_simulate},
      {"loglik", "Evaluate tree log densities",
       with_common({{"trees", json::array()}, {"params", ""}, {"type_space", ""}, {"mode", "exact"}}),
       {"trees", "params", "type_space"},
       cmd_loglik},
      {"infer", "Run an MCMC chain on a set of trees",
       with_common({{"trees", json::array()},
                    {"layout", "sigmoid"},
                    {"type_space", ""},
                    {"gamma_star", ""},
                    {"rho", {0.1}},
                    {"iterations", 20000u},
                    {"burn_in", 5000u},
                    {"thin", 1u},
                    {"block_moves", 5u},
                    {"adapt", true},
                    {"mode", "exact"},
                    {"density", "loglinear"},
                    {"conditioning", "conditional"},
                    {"grid_lo", -3.0},
                    {"grid_hi", 3.0},
                    {"grid_n", 61u}}),
       {"trees", "type_space", "gamma_star"},
       cmd_infer},
      {"ratemat", "Estimate type-change rates from simulated mutation chains",
       with_common({{"naive", ""},
                    {"context", ""},
                    {"affinity", ""},
                    {"type_space", ""},
                    {"chains", 1000u},
                    {"duration", 200.0},
                    {"rate", 1.0},
                    {"convention", "per_site"},
                    {"stop_affinity", -10.0}}),
       {"naive", "context", "affinity", "type_space"},
       cmd_ratemat},
      {"discretize", "Bin affinity samples into a type space", with_common({{"samples", ""}, {"n", 8u}}),
       {"samples"}, cmd_discretize},
      {"ppc", "Posterior predictive check of leaf type proportions",
       with_common({{"trees", json::array()},
                    {"chain", ""},
                    {"type_space", ""},
                    {"gamma_star", ""},
                    {"rho", {0.1}},
                    {"draws", 100u},
                    {"n_trees", 0u},
                    {"t_total", fixtures::kSimulationTime},
                    {"root_affinity", 0.0}}),
       {"trees", "chain", "type_space", "gamma_star"},
       cmd_ppc},
      {"study", "Run a named simulation study (nm, al, isp, cc, cc-soft, cc-slm, conditioning)",
       with_common({{"name", "nm"},
                    {"sets", fixtures::kTreeSets},
                    {"trees_per_set", fixtures::kTreesPerSet},
                    {"iterations", 0u},
                    {"burn_in", 0u},
                    {"thin", 1u},
                    {"block_moves", 5u},
                    {"ppc_draws", 100u},
                    {"capacity", static_cast<std::size_t>(fixtures::kCarryingCapacity)},
                    {"soft_sharpness", 0.1},
                    {"max_events", 20'000'000u},
                    {"lambda", 1.8},
                    {"mu", 1.0},
                    {"rho", 1.0},
                    {"t_total", 2.0},
                    {"ladder", {1u, 5u, 25u}},
                    {"replicates", 20u}}),
       {},
       cmd_study},
  };
  return cmds;
}

const Command& find_command(const std::string& name) {
  for (const auto& c : registry())
    if (c.name == name) return c;
  throw ValidationError("unknown command '" + name + "'");
}

// ---------------------------------------------------------------------------
// Configuration handling

const char* type_name(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_unsigned()) return "a non-negative integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  return "an array";
}

// Checks `value` against the type of `def` and returns it in that type.
json coerce(const std::string& key, const json& def, const json& value) {
  auto fail = [&] { throw ValidationError("config key '" + key + "' must be " + type_name(def)); };
  if (def.is_boolean()) {
    if (!value.is_boolean()) fail();
  } else if (def.is_number_unsigned()) {
    if (!value.is_number_unsigned()) fail();
  } else if (def.is_number()) {
    if (!value.is_number()) fail();
    return value.get<double>();
  } else if (def.is_string()) {
    if (!value.is_string()) fail();
  } else if (def.is_array()) {
    if (!value.is_array()) fail();
    const json elem = def.empty() ? json("") : def.front();
    json out = json::array();
    for (const auto& v : value) out.push_back(coerce(key, elem, v));
    return out;
  }
  return value;
}

json from_text(const std::string& key, const json& def, const std::string& text) {
  auto fail = [&] { throw ValidationError("--" + key + ": '" + text + "' is not " + type_name(def)); };
  if (def.is_string()) return text;
  if (def.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    fail();
  }
  if (def.is_number_unsigned()) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail();
    return v;
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) fail();
  return v;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

json apply_config_file(const Command& cmd, json cfg, const std::string& text) {
  const json file = parse_json(text, "config");
  if (!file.is_object()) throw ValidationError("config must be a JSON object");
  if (!file.contains("schema") || file.at("schema") != kConfigSchema)
    throw ValidationError(std::string("config schema must be \"") + kConfigSchema + "\"");
  for (const auto& [key, value] : file.items()) {
    if (key == "schema") continue;
    if (key == "command") {
      if (value != cmd.name) throw ValidationError("config is for command " + value.dump() + ", not " + cmd.name);
      continue;
    }
    if (!cmd.defaults.contains(key)) throw ValidationError("unknown config key '" + key + "' for " + cmd.name);
    cfg[key] = coerce(key, cmd.defaults.at(key), value);
  }
  return cfg;
}

void check_inputs(const Command& cmd, const json& cfg) {
  for (const auto& key : cmd.paths) {
    const json& v = cfg.at(key);
    std::vector<std::string> paths;
    if (v.is_array()) paths = v.get<std::vector<std::string>>();
    else if (!v.get<std::string>().empty()) paths.push_back(v.get<std::string>());
    for (const auto& p : paths)
      if (!fs::is_regular_file(p)) throw ValidationError("input file not found: " + p + " (" + key + ")");
  }
}

struct Parsed {
  const Command* cmd = nullptr;
  std::string config_path;
  std::map<std::string, std::string> scalars;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, CLI::Option*> options;
};

}  // namespace

std::vector<std::string> commands() {
  std::vector<std::string> names;
  for (const auto& c : registry()) names.push_back(c.name);
  return names;
}

std::string default_config(const std::string& command) {
  const Command& cmd = find_command(command);
  json j = cmd.defaults;
  j["schema"] = kConfigSchema;
  j["command"] = cmd.name;
  return j.dump(2);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multitype birth-death simulation and inference on affinity-typed trees", "mtbd"};
  app.set_version_flag("--version", MTBD_VERSION);
  app.require_subcommand(1, 1);

  std::vector<Parsed> parsed(registry().size());
  for (std::size_t i = 0; i < registry().size(); ++i) {
    const Command& cmd = registry()[i];
    Parsed& p = parsed[i];
    p.cmd = &cmd;
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", p.config_path, "JSON config file (schema " + std::string(kConfigSchema) + ")");
    for (const auto& [key, def] : cmd.defaults.items()) {
      const std::string desc = "default: " + def.dump();
      std::string names = flag_name(key);
      if (cmd.name == "study" && key == "name") names = "name," + names;
      if (def.is_array())
        p.options[key] = sub->add_option(names, p.lists[key], desc)->delimiter(',')->allow_extra_args();
      else
        p.options[key] = sub->add_option(names, p.scalars[key], desc);
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    const Parsed* p = nullptr;
    for (const auto& candidate : parsed)
      if (app.got_subcommand(candidate.cmd->name)) p = &candidate;
    const Command& cmd = *p->cmd;

    Context c;
    c.out = &out;
    c.cfg = cmd.defaults;
    if (!p->config_path.empty()) c.cfg = apply_config_file(cmd, c.cfg, c.read(p->config_path));
    for (const auto& [key, opt] : p->options) {
      if (opt->count() == 0) continue;
      const json& def = cmd.defaults.at(key);
      if (def.is_array()) {
        json arr = json::array();
        const json elem = def.empty() ? json("") : def.front();
        for (const auto& t : p->lists.at(key)) arr.push_back(from_text(key, elem, t));
        c.cfg[key] = arr;
      } else {
        c.cfg[key] = from_text(key, def, p->scalars.at(key));
      }
    }
    if (c.count("threads") == 0) throw ValidationError("threads must be at least 1");
    check_inputs(cmd, c.cfg);

    c.out_dir = c.str("out_dir");
    fs::create_directories(c.out_dir);
    json effective = c.cfg;
    effective["schema"] = kConfigSchema;
    effective["command"] = cmd.name;
    c.write("config.json", effective.dump(2));

    cmd.run(c);

    json meta{{"command", cmd.name},
              {"version", MTBD_VERSION},
              {"seed", c.seed()},
              {"config", effective},
              {"inputs", c.inputs},
              {"args", args},
              {"rerun", "mtbd " + cmd.name + " --config " + (c.out_dir / "config.json").string()}};
    c.write("metadata.json", meta.dump(2));
    return kExitOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace mtbd::cli
