#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>

#include "cli.hpp"
#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/infer.hpp"
#include "mtbd/likelihood.hpp"
#include "mtbd/seqmut.hpp"
#include "mtbd/simulate.hpp"

namespace py = pybind11;
using namespace mtbd;

namespace {

TypeSpace space_or_default(const std::optional<std::string>& json) {
  return json ? type_space_from_json(*json) : fixtures::paper_type_space();
}

std::string simulate_trees(const std::string& params_json, std::size_t n_trees, std::uint64_t seed, double t_total,
                           double root_affinity, std::size_t capacity, bool observed,
                           const std::optional<std::string>& type_space) {
  const Params p = params_from_json(params_json);
  const TypeSpace space = space_or_default(type_space);
  SimOptions sim;
  sim.t_total = t_total;
  sim.root_state = static_cast<int>(bin_index(space, root_affinity));
  if (capacity > 0) sim.capacity = Capacity{CapacityMode::hard, capacity, 0.1};
  std::vector<Tree> trees;
  py::gil_scoped_release release;
  for (std::size_t i = 0; i < n_trees; ++i) {
    Rng rng(derive_seed(seed, i));
    const std::size_t idx = i % p.rho.size();
    Tree t = observed ? simulate_conditioned(p, space, sim, p.rho[idx], rng).tree : simulate_full(p, space, sim, rng);
    t.rho_index = idx;
    trees.push_back(std::move(t));
  }
  return trees_to_json(trees);
}

py::list log_densities(const std::string& trees_json, const std::string& params_json, const std::string& mode,
                       const std::optional<std::string>& type_space) {
  const std::vector<Tree> trees = trees_from_json(trees_json);
  const Params p = params_from_json(params_json);
  const TypeSpace space = space_or_default(type_space);
  py::list out;
  for (const auto& t : trees) {
    LogDensityResult r;
    if (mode == "approx")
      r = log_density_approx(compile(t, space.size()), p.rates(space), p.rho_for(t.rho_index));
    else
      r = log_density(t, p, space, density_mode_from_string(mode));
    py::dict d;
    d["log_q_root"] = r.log_q_root;
    d["log_survival"] = r.log_survival;
    d["log_conditional"] = r.log_conditional;
    out.append(d);
  }
  return out;
}

py::dict run_chain_py(const std::string& trees_json, std::vector<double> rho, std::size_t iterations,
                      std::size_t burn_in, std::uint64_t seed, bool approx, bool conditional) {
  const TypeSpace space = fixtures::paper_type_space();
  const ParamLayout layout = ParamLayout::sigmoid(space, fixtures::paper_gamma_star(), std::move(rho));
  const TreeSetDensity set(trees_from_json(trees_json), space.size());
  ChainConfig cfg;
  cfg.iterations = iterations;
  cfg.burn_in = burn_in;
  cfg.seed = seed;
  cfg.likelihood.kind = approx ? LikelihoodKind::approx : LikelihoodKind::exact;
  cfg.likelihood.conditioning = conditional ? Conditioning::conditional : Conditioning::unconditional;
  Chain c;
  {
    py::gil_scoped_release release;
    c = run_chain(set, layout, cfg);
  }
  py::dict d;
  d["names"] = c.names;
  d["iteration"] = c.iteration;
  d["draws"] = c.draws;
  d["log_post"] = c.log_post;
  d["acceptance"] = c.acceptance;
  d["csv"] = chain_to_csv(c);
  return d;
}

std::vector<std::vector<double>> extinction_probability(const std::vector<double>& birth, double death,
                                                        const std::vector<std::vector<double>>& gamma, double rho,
                                                        const std::vector<double>& times) {
  Rates r;
  r.birth = birth;
  r.death = death;
  r.gamma = SquareMatrix::from_rows(gamma);
  double t_max = 0.0;
  for (double t : times) t_max = std::max(t_max, t);
  const PExtinct p = solve_px(r, t_max, rho);
  std::vector<std::vector<double>> out;
  for (double t : times) {
    std::vector<double> row;
    for (std::size_t x = 0; x < r.size(); ++x) row.push_back(p.p(x, t));
    out.push_back(row);
  }
  return out;
}

// Trajectories as (initial_state, duration, [(time, state), ...]).
std::vector<std::vector<double>> estimate_gamma_py(
    const std::vector<std::tuple<int, double, std::vector<std::pair<double, int>>>>& paths, std::size_t n_types) {
  std::vector<TypeTrajectory> t;
  for (const auto& [s, d, j] : paths) t.push_back({s, d, j});
  return estimate_gamma(t, n_types).rows();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multitype birth-death simulation and inference on affinity-typed trees";
  m.attr("__version__") = MTBD_VERSION;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("birth_rate", [](const std::vector<double>& phi, double x) {
    if (phi.size() != 4) throw ValidationError("phi must have 4 entries");
    return birth_rate(SigmoidParams{phi[0], phi[1], phi[2], phi[3]}, x);
  }, py::arg("phi"), py::arg("x"));

  m.def("discretize", [](const std::vector<double>& samples, std::size_t n) {
    return type_space_to_json(discretize(samples, n));
  }, py::arg("samples"), py::arg("n"), "Type space JSON with n bins");

  m.def("nm_truth", [] { return params_to_json(fixtures::no_misspecification_truth()); });
  m.def("cc_truth", [] { return params_to_json(fixtures::carrying_capacity_truth()); });
  m.def("paper_type_space", [] { return type_space_to_json(fixtures::paper_type_space()); });

  m.def("simulate", &simulate_trees, py::arg("params"), py::arg("n_trees") = 1, py::arg("seed") = 1,
        py::arg("t_total") = fixtures::kSimulationTime, py::arg("root_affinity") = 0.0, py::arg("capacity") = 0,
        py::arg("observed") = true, py::arg("type_space") = py::none(),
        "Simulate trees; returns tree-set JSON. Tree i uses seed derive_seed(seed, i).");

  m.def("log_density", &log_densities, py::arg("trees"), py::arg("params"), py::arg("mode") = "loglinear",
        py::arg("type_space") = py::none(), "Per-tree log densities; mode is loglinear, direct or approx");

  m.def("extinction_probability", &extinction_probability, py::arg("birth"), py::arg("death"), py::arg("gamma"),
        py::arg("rho"), py::arg("times"), "p_x(t) for every type at each time");

  m.def("run_chain", &run_chain_py, py::arg("trees"), py::arg("rho") = std::vector<double>{0.1},
        py::arg("iterations") = 20000, py::arg("burn_in") = 5000, py::arg("seed") = 1, py::arg("approx") = false,
        py::arg("conditional") = true, "Sigmoid-model MCMC over the eight-bin type space");

  m.def("effective_sample_size", &effective_sample_size, py::arg("x"));
  m.def("estimate_gamma", &estimate_gamma_py, py::arg("paths"), py::arg("n_types"));
  m.def("translate", &translate, py::arg("seq"));

  m.def("run_cli", [](const std::vector<std::string>& args) {
    py::gil_scoped_release release;
    return cli::run_cli(args, std::cout, std::cerr);
  }, py::arg("args"), "Run the command-line tool in-process; returns the exit code");
}
