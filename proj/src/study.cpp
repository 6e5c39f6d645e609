#include "mtbd/study.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include <json.hpp>

#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/parallel.hpp"
#include "mtbd/seqmut.hpp"

namespace mtbd {

using nlohmann::json;

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"nm", "al", "isp", "cc", "cc-soft", "cc-slm"};
  return names;
}

Scenario scenario(const std::string& name) {
  Scenario s;
  s.name = name;
  if (name == "nm" || name == "al" || name == "isp") {
    s.truth = fixtures::no_misspecification_truth();
    s.infer_rho = name == "isp" ? 0.2 : 0.1;
    if (name == "al") s.kind = LikelihoodKind::approx;
    return s;
  }
  if (name == "cc" || name == "cc-soft" || name == "cc-slm") {
    s.truth = fixtures::carrying_capacity_truth();
    s.infer_rho = 0.1;
    s.capacity = Capacity{name == "cc-soft" ? CapacityMode::soft : CapacityMode::hard,
                          static_cast<std::size_t>(fixtures::kCarryingCapacity)};
    s.sequence_level = name == "cc-slm";
    return s;
  }
  throw ValidationError("unknown study '" + name + "'");
}

std::vector<Tree> generate_set(const Scenario& s, std::size_t n_trees, Rng& rng, const GenerateOptions& opts) {
  const TypeSpace space = fixtures::paper_type_space();
  SimOptions sim;
  sim.t_total = fixtures::kSimulationTime;
  sim.root_state = static_cast<int>(fixtures::naive_state());
  sim.max_events = opts.max_events;
  if (s.capacity) {
    sim.capacity = *s.capacity;
    sim.capacity->K = opts.capacity;
    sim.capacity->sharpness = opts.soft_sharpness;
  }
  const double rho = s.truth.rho.at(0);
  std::vector<Tree> trees;
  trees.reserve(n_trees);
  if (!s.sequence_level) {
    for (std::size_t i = 0; i < n_trees; ++i) trees.push_back(simulate_conditioned(s.truth, space, sim, rho, rng).tree);
    return trees;
  }

  const AffinityModel affinity = fixtures::synthetic_affinity_model();
  ContextModel context = fixtures::synthetic_context_model();
  context.convention = RateConvention::per_sequence;
  context.overall_rate = 1.0;
  SequenceSimOptions seq;
  seq.sim = sim;
  while (trees.size() < n_trees) {
    std::size_t attempts = 0;
    for (;;) {
      if (++attempts > sim.rejection_budget)
        throw NumericalError("rejection budget exhausted while conditioning on a sampled leaf");
      const Tree full = simulate_with_sequences(s.truth.phi, s.truth.mu, space, affinity, context, seq, rng);
      if (auto obs = prune(full, rho, rng)) {
        trees.push_back(std::move(*obs));
        break;
      }
    }
  }
  return trees;
}

SetAnalysis analyze_set(const Scenario& s, const std::vector<Tree>& trees, const ChainConfig& chain) {
  const TypeSpace space = fixtures::paper_type_space();
  const ParamLayout layout = ParamLayout::sigmoid(space, fixtures::paper_gamma_star(), {s.infer_rho});
  const TreeSetDensity set(trees, space.size());
  ChainConfig cfg = chain;
  cfg.likelihood.kind = s.kind;

  SetAnalysis a;
  a.chain = run_chain(set, layout, cfg);
  a.summary = chain_summary(a.chain, layout, linspace(-3.0, 3.0, 61));
  const auto truth = layout.from_params(s.truth);
  for (std::size_t k = 0; k < space.size(); ++k) {
    const double b = layout.birth(truth, space.value(k));
    a.true_birth.push_back(b);
    a.true_net.push_back(b - s.truth.mu);
    const Interval& bi = a.summary.birth_types.ci90[k];
    const Interval& ni = a.summary.net_types.ci90[k];
    if (bi.lo <= b && b <= bi.hi) ++a.birth_inside;
    if (bi.hi < b) ++a.birth_excluded_below;
    if (ni.lo <= b - s.truth.mu && b - s.truth.mu <= ni.hi) ++a.net_inside;
  }
  a.true_plateau = s.truth.phi.phi1 + s.truth.phi.phi4;
  std::vector<double> plateau;
  for (const auto& d : a.chain.draws) plateau.push_back(d[0] + d[3]);
  a.plateau_median = median(plateau);
  return a;
}

namespace {

json analysis_json(const SetAnalysis& a) {
  double min_ess = 1e300;
  for (const auto& p : a.summary.params) min_ess = std::min(min_ess, p.ess);
  return {{"birth_inside_90", a.birth_inside},
          {"net_inside_90", a.net_inside},
          {"birth_band_below_truth", a.birth_excluded_below},
          {"true_plateau", a.true_plateau},
          {"plateau_median", a.plateau_median},
          {"min_ess", min_ess},
          {"acceptance", a.chain.acceptance},
          {"failed_evaluations", a.chain.failed_evaluations},
          {"true_birth", a.true_birth},
          {"true_net", a.true_net}};
}

StudyReport run_conditioning(const StudyConfig& cfg) {
  MedianStudyConfig m = cfg.conditioning;
  m.seed = cfg.seed;
  m.threads = cfg.threads;
  StudyReport r;
  r.name = "conditioning";
  r.medians = median_sampling_distribution(m);

  // Per n: mean medians per conditioning and the share of replicates where the
  // unconditioned mu median is below the conditioned one.
  json per_n = json::array();
  for (std::size_t n : m.ladder) {
    double mu_c = 0.0, mu_u = 0.0, lam_c = 0.0, lam_u = 0.0, below = 0.0, ok = 0.0;
    for (std::size_t i = 0; i + 1 < r.medians.size(); i += 2) {
      const auto& c = r.medians[i];
      const auto& u = r.medians[i + 1];
      if (c.n != n || !c.error.empty()) continue;
      ok += 1.0;
      mu_c += c.mu_median;
      mu_u += u.mu_median;
      lam_c += c.lambda_median;
      lam_u += u.lambda_median;
      if (u.mu_median < c.mu_median) below += 1.0;
    }
    const double d = std::max(ok, 1.0);
    per_n.push_back({{"n", n},
                     {"runs", ok},
                     {"mean_mu_median_conditional", mu_c / d},
                     {"mean_mu_median_unconditional", mu_u / d},
                     {"mean_lambda_median_conditional", lam_c / d},
                     {"mean_lambda_median_unconditional", lam_u / d},
                     {"share_unconditional_mu_below", below / d}});
  }
  r.summary_json = json{{"study", "conditioning"},
                        {"lambda", m.lambda},
                        {"mu", m.mu},
                        {"rho", m.rho},
                        {"t_total", m.t_total},
                        {"replicates", m.replicates},
                        {"per_n", per_n}}
                       .dump(2);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_file(cfg.out_dir + "/medians.csv", median_rows_to_csv(r.medians));
    write_file(cfg.out_dir + "/study_summary.json", r.summary_json);
  }
  return r;
}

}  // namespace

StudyReport run_study(const StudyConfig& cfg) {
  if (cfg.name == "conditioning") return run_conditioning(cfg);
  const Scenario s = scenario(cfg.name);
  if (cfg.sets == 0 || cfg.trees_per_set == 0) throw ValidationError("study needs at least one set and tree");
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  StudyReport r;
  r.name = cfg.name;
  r.sets.resize(cfg.sets);
  r.ppc.resize(cfg.ppc_draws > 0 ? cfg.sets : 0);
  const TypeSpace space = fixtures::paper_type_space();
  const ParamLayout layout = ParamLayout::sigmoid(space, fixtures::paper_gamma_star(), {s.infer_rho});

  parallel_for(cfg.sets, cfg.threads, [&](std::size_t k) {
    const std::uint64_t set_seed = derive_seed(cfg.seed, k);
    Rng rng(set_seed);
    const std::vector<Tree> trees = generate_set(s, cfg.trees_per_set, rng, cfg.generate);
    ChainConfig chain = cfg.chain;
    chain.seed = derive_seed(set_seed, 1);
    r.sets[k] = analyze_set(s, trees, chain);
    if (cfg.ppc_draws > 0) {
      PpcOptions p;
      p.draws = cfg.ppc_draws;
      p.seed = derive_seed(set_seed, 2);
      p.sim.t_total = fixtures::kSimulationTime;
      p.sim.root_state = static_cast<int>(fixtures::naive_state());
      r.ppc[k] = run_ppc(r.sets[k].chain, layout, trees, p);
    }
    if (!cfg.out_dir.empty()) {
      const std::string base = cfg.out_dir + "/set" + std::to_string(k);
      write_file(base + "_trees.json", trees_to_json(trees));
      write_file(base + "_chain.csv", chain_to_csv(r.sets[k].chain));
      write_file(base + "_summary.json", summary_to_json(r.sets[k].summary));
      if (cfg.ppc_draws > 0) write_file(base + "_ppc.json", ppc_to_json(r.ppc[k]));
    }
  });

  json sets = json::array();
  for (std::size_t k = 0; k < cfg.sets; ++k) {
    json j = analysis_json(r.sets[k]);
    if (cfg.ppc_draws > 0) j["ppc_bins_within_90"] = r.ppc[k].bins_within(0.9);
    sets.push_back(j);
  }
  r.summary_json = json{{"study", cfg.name},
                        {"truth", json::parse(params_to_json(s.truth))},
                        {"infer_rho", s.infer_rho},
                        {"likelihood", s.kind == LikelihoodKind::exact ? "exact" : "approx"},
                        {"capacity", s.capacity ? json(cfg.generate.capacity) : json(nullptr)},
                        {"sets", sets}}
                       .dump(2);
  if (!cfg.out_dir.empty()) write_file(cfg.out_dir + "/study_summary.json", r.summary_json);
  return r;
}

}  // namespace mtbd
