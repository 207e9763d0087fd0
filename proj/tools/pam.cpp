// Command-line front end: field generation, simulation, estimation,
// spectral computations and probes. Exit codes: 0 ok, 2 configuration
// error, 3 size budget exceeded, 4 invariant failure.
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pam/pam.hpp"

namespace {

using nlohmann::json;
using namespace pam;

constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;
constexpr int kExitInvariant = 4;

struct Output {
  std::string path;

  template <class Fn>
  void write(Fn&& fn) const {
    if (path.empty() || path == "-") {
      fn(std::cout);
      std::cout.flush();
      return;
    }
    std::ofstream os(path);
    if (!os) throw std::invalid_argument("cannot open output file '" + path + "'");
    fn(os);
  }
};

/// Field source: a CSV file, or a constant field on a generated box.
struct FieldArgs {
  std::string file;
  double kappa = 1.0;
  int dim = 1;
  int radius = 10;
  std::string geometry = "absorbing";

  void add(CLI::App* app) {
    app->add_option("--field", file, "conductance field CSV (overrides --kappa)");
    app->add_option("--kappa", kappa, "constant conductance");
    app->add_option("--dim", dim, "lattice dimension")->check(CLI::PositiveNumber);
    app->add_option("--radius", radius, "box radius")->check(CLI::NonNegativeNumber);
    app->add_option("--geometry", geometry, "absorbing | periodic");
  }

  ConductanceField load() const {
    if (!file.empty()) {
      std::ifstream is(file);
      if (!is) throw std::invalid_argument("cannot read field file '" + file + "'");
      return read_field_csv(is);
    }
    return constant_field(LatticeBox(dim, radius, parse_geometry(geometry)), kappa);
  }

  json echo() const {
    if (!file.empty()) return {{"field", file}};
    return {{"kappa", kappa}, {"dim", dim}, {"radius", radius}, {"geometry", geometry}};
  }
};

struct EnvArgs {
  std::string kind = "spin_flip";
  int n = 1;
  double rho = 1.0;
  double nu = 1.0;
  double beta = 0.5;
  int env_radius = 20;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--env", kind, "white_noise | finite_rw | infinite_rw | spin_flip");
    app->add_option("--n", n, "number of environment walks");
    app->add_option("--rho", rho, "environment walk rate per edge");
    app->add_option("--nu", nu, "Poisson intensity");
    app->add_option("--beta", beta, "inverse temperature");
    app->add_option("--env-radius", env_radius, "radius of the periodic environment box");
    app->add_option("--seed", seed, "master seed");
  }

  Environment build(int dim) const {
    EnvKind k;
    if (kind == "white_noise") k = WhiteNoise{};
    else if (kind == "finite_rw") k = FiniteWalks{n, rho};
    else if (kind == "infinite_rw") k = InfiniteWalks{nu};
    else if (kind == "spin_flip") {
      SpinFlip s;
      s.beta = beta;
      k = s;
    } else throw std::invalid_argument("unknown environment '" + kind + "'");
    return Environment(EnvConfig{k, LatticeBox(dim, env_radius, Geometry::periodic), seed});
  }

  json echo() const {
    return {{"env", kind}, {"n", n}, {"rho", rho}, {"nu", nu},
            {"beta", beta}, {"env_radius", env_radius}, {"seed", seed}};
  }
};

struct DynamicsArgs {
  std::string dynamics = "white_noise";
  int n = 1;
  double rho = 1.0;
  double nu = 1.0;
  double w_dt = 0.05;
  int w_radius = 0;

  void add(CLI::App* app) {
    app->add_option("--dynamics", dynamics, "white_noise | finite_rw | infinite_rw");
    app->add_option("--n", n, "number of environment walks");
    app->add_option("--rho", rho, "environment walk rate per edge");
    app->add_option("--nu", nu, "Poisson intensity");
    app->add_option("--w-dt", w_dt, "time step of the w-equation");
    app->add_option("--w-radius", w_radius, "radius of the w-equation box (0: field radius)");
  }

  AnnealedDynamics build() const {
    if (dynamics == "white_noise") return WhiteNoise{};
    if (dynamics == "finite_rw") return FiniteWalks{n, rho};
    if (dynamics == "infinite_rw") {
      InfiniteWalkOptions o;
      o.nu = nu;
      o.dt = w_dt;
      o.w_radius = w_radius;
      return o;
    }
    throw std::invalid_argument("unknown dynamics '" + dynamics + "'");
  }

  json echo() const {
    return {{"dynamics", dynamics}, {"n", n}, {"rho", rho}, {"nu", nu},
            {"w_dt", w_dt}, {"w_radius", w_radius}};
  }
};

void check_grid(const std::vector<double>& g, const char* what) {
  if (g.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  for (std::size_t i = 1; i < g.size(); ++i)
    if (!(g[i] > g[i - 1])) throw std::invalid_argument(std::string(what) + " must be increasing");
}

std::string comment_echo(const json& j) { return "# " + j.dump() + "\n"; }

// gen-field --------------------------------------------------------------------

struct GenField {
  int dim = 1, radius = 10;
  std::string geometry = "absorbing", law = "constant";
  double kappa = 1.0;
  std::vector<double> values, probs;
  std::vector<std::string> pockets;
  std::uint64_t seed = 1;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("gen-field", "generate a conductance field CSV");
    c->add_option("--dim", dim)->check(CLI::PositiveNumber);
    c->add_option("--radius", radius)->check(CLI::NonNegativeNumber);
    c->add_option("--geometry", geometry);
    c->add_option("--law", law, "constant | iid | clustered");
    c->add_option("--kappa", kappa);
    c->add_option("--values", values)->delimiter(',');
    c->add_option("--probs", probs)->delimiter(',');
    c->add_option("--pocket", pockets, "pocket as 'x1,x2,..:radius:value' (repeatable)");
    c->add_option("--seed", seed);
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    const LatticeBox box(dim, radius, parse_geometry(geometry));
    FieldLaw fl;
    if (law == "constant") fl = ConstantLaw{kappa};
    else if (law == "iid") fl = IidDiscreteLaw{values, probs};
    else if (law == "clustered") {
      ClusteredLaw cl{values, probs, {}};
      for (const auto& s : pockets) {
        const auto parts = split(s, ':');
        if (parts.size() != 3) throw std::invalid_argument("pocket must be 'coords:radius:value'");
        Pocket pk;
        pk.center = detail::parse_point(parts[0]);
        pk.radius = static_cast<int>(parse_int(parts[1]));
        pk.value = parse_double(parts[2]);
        cl.pockets.push_back(pk);
      }
      fl = cl;
    } else throw std::invalid_argument("unknown law '" + law + "'");
    const ConductanceField f = generate_field(box, fl, seed);
    out.write([&](std::ostream& os) { write_field_csv(os, f); });
  }
};

// verify-cluster -------------------------------------------------------------

struct VerifyCluster {
  FieldArgs field;
  double kappa = 1.0, delta = 0.1;
  int r = 1;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("verify-cluster", "find the first monochrome pocket");
    c->add_option("--field", field.file)->required();
    c->add_option("--target", kappa, "pocket conductance")->required();
    c->add_option("--delta", delta);
    c->add_option("--r", r, "pocket radius");
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    const auto f = field.load();
    const auto spec = verify_clustering(f, kappa, delta, r);
    json j = {{"config", {{"field", field.file}, {"target", kappa}, {"delta", delta}, {"r", r}}},
              {"found", spec.has_value()}};
    if (spec) j["center"] = spec->pocket_center;
    out.write([&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
};

// simulate-u -------------------------------------------------------------------

struct SimulateU {
  FieldArgs field;
  EnvArgs env;
  std::vector<double> times{1.0, 2.0, 4.0};
  double dt = 0.01;
  std::string initial = "delta0";
  std::uint64_t replica = 0;
  std::string events_out;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("simulate-u", "solve for u(0,t) in one environment realization");
    field.add(c);
    env.add(c);
    c->add_option("--times", times)->delimiter(',');
    c->add_option("--dt", dt);
    c->add_option("--initial", initial, "delta0 | ones");
    c->add_option("--replica", replica, "environment realization index");
    c->add_option("--events-out", events_out, "environment event log CSV");
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    check_grid(times, "--times");
    const auto f = field.load();
    const Environment e = env.build(f.box().dim());
    const EnvTrajectory traj = make_trajectory(e, times.back(), replica);
    QuenchedOptions qo;
    qo.dt = dt;
    qo.initial = parse_initial(initial);
    qo.record_times = times;
    const QuenchedSolution sol = solve_quenched(f, traj, qo);
    if (!events_out.empty()) Output{events_out}.write([&](std::ostream& os) { write_events_csv(os, traj); });
    json cfg = {{"command", "simulate-u"}, {"dt", dt}, {"initial", initial}, {"replica", replica}};
    cfg.update(field.echo());
    cfg.update(env.echo());
    out.write([&](std::ostream& os) {
      os << comment_echo(cfg) << "t,log_u\n";
      for (std::size_t i = 0; i < sol.times.size(); ++i)
        os << format_double(sol.times[i]) << ',' << format_double(sol.log_u_origin[i]) << '\n';
    });
  }
};

// moment -----------------------------------------------------------------------

struct Moment {
  FieldArgs field;
  DynamicsArgs dyn;
  int p = 2;
  std::vector<double> t_grid{4.0, 8.0, 16.0};
  std::size_t replicas = 10000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  int pocket_radius = -1;
  std::string initial = "ones";
  std::string json_out;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("moment", "annealed moments E[u(0,t)^p]");
    field.add(c);
    dyn.add(c);
    c->add_option("--p", p)->check(CLI::PositiveNumber);
    c->add_option("--t-grid", t_grid)->delimiter(',');
    c->add_option("--replicas", replicas);
    c->add_option("--seed", seed);
    c->add_option("--threads", threads);
    c->add_option("--pocket-radius", pocket_radius, "confine walks to a box around the origin");
    c->add_option("--initial", initial, "ones | delta0");
    c->add_option("--json", json_out, "JSON summary path");
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    check_grid(t_grid, "--t-grid");
    const auto f = field.load();
    MomentOptions mo;
    mo.p = p;
    mo.t_grid = t_grid;
    mo.replicas = replicas;
    mo.seed = seed;
    mo.threads = threads;
    mo.initial = parse_initial(initial);
    if (pocket_radius >= 0) mo.pocket = LatticeBox(f.box().dim(), pocket_radius);
    const MomentSeries s = run_moments(f, dyn.build(), mo);
    json cfg = {{"command", "moment"}, {"p", p}, {"t_grid", t_grid}, {"replicas", replicas},
                {"replica_ids", {0, replicas ? replicas - 1 : 0}}, {"seed", seed},
                {"initial", initial}, {"pocket_radius", pocket_radius}};
    cfg.update(field.echo());
    cfg.update(dyn.echo());
    out.write([&](std::ostream& os) {
      os << comment_echo(cfg);
      write_moments_csv(os, s.estimates);
    });
    if (!json_out.empty()) {
      json rows = json::array();
      for (const auto& e : s.estimates)
        rows.push_back({{"t", e.t}, {"log_moment", e.log_value}, {"std_error", e.log_std_error},
                        {"exponent", e.log_value / (p * e.t)}, {"diverging", e.diverging}});
      Output{json_out}.write([&](std::ostream& os) {
        os << json{{"config", cfg}, {"estimates", rows}}.dump(2) << '\n';
      });
    }
  }
};

// variational --------------------------------------------------------------------

struct Variational {
  std::string dynamics = "white_noise";
  int p = 2, dim = 1, radius = 8;
  std::string geometry = "absorbing";
  double kappa = 1.0;
  std::vector<double> kappa_grid;
  int n = 1;
  double rho = 1.0, nu = 1.0, beta = 0.5;
  int N = 1, M = 2, env_radius = 1;
  std::size_t max_dim = 4'000'000;
  bool zero_conductance = false, drop_potential = false;
  double tol = 1e-10;
  std::string export_path;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("variational", "top eigenvalue of the truncated operator");
    c->add_option("--dynamics", dynamics, "white_noise | finite_rw | infinite_rw | spin_flip");
    c->add_option("--p", p)->check(CLI::PositiveNumber);
    c->add_option("--dim", dim)->check(CLI::PositiveNumber);
    c->add_option("--radius", radius, "truncation box radius");
    c->add_option("--geometry", geometry, "absorbing (zero outside) | periodic");
    c->add_option("--kappa", kappa);
    c->add_option("--kappa-grid,--sweep", kappa_grid, "kappa sweep")->delimiter(',');
    c->add_option("--n", n);
    c->add_option("--rho", rho);
    c->add_option("--nu", nu);
    c->add_option("--N", N, "potential cap");
    c->add_option("--M", M, "occupancy cap");
    c->add_option("--beta", beta);
    c->add_option("--env-radius", env_radius);
    c->add_option("--max-dim", max_dim);
    c->add_flag("--zero-conductance", zero_conductance);
    c->add_flag("--drop-potential", drop_potential);
    c->add_option("--tol", tol);
    c->add_option("--export", export_path, "write the operator in coordinate form");
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  OperatorSpec build(double k) const {
    const Geometry g = parse_geometry(geometry);
    const LatticeBox box(dim, radius, g);
    const LatticeBox field_box = g == Geometry::periodic ? box : LatticeBox(dim, radius + 1);
    const ConductanceField f = constant_field(field_box, k);
    OperatorOptions oo;
    oo.max_dim = max_dim;
    oo.zero_conductance = zero_conductance;
    oo.drop_potential = drop_potential;
    const LatticeBox env_box(dim, env_radius, Geometry::periodic);
    if (dynamics == "white_noise") return build_wn_operator(f, p, box, oo);
    if (dynamics == "finite_rw") return build_firw_operator(f, p, n, rho, box, oo);
    if (dynamics == "infinite_rw") return build_iirw_operator(f, p, {nu, N, M}, env_box, box, oo);
    if (dynamics == "spin_flip") return build_spinflip_operator(f, p, beta, env_box, box, oo);
    throw std::invalid_argument("unknown dynamics '" + dynamics + "'");
  }

  void run() {
    EigenOptions eo;
    eo.tol = tol;
    json cfg = {{"command", "variational"}, {"dynamics", dynamics}, {"p", p}, {"dim", dim},
                {"radius", radius}, {"geometry", geometry}, {"n", n}, {"rho", rho},
                {"nu", nu}, {"N", N}, {"M", M}, {"beta", beta}, {"env_radius", env_radius},
                {"zero_conductance", zero_conductance}, {"drop_potential", drop_potential}};
    if (!kappa_grid.empty()) {
      check_grid(kappa_grid, "--kappa-grid");
      cfg["kappa_grid"] = kappa_grid;
      const auto rows = kappa_sweep([this](double k) { return build(k); }, kappa_grid, eo);
      out.write([&](std::ostream& os) {
        os << comment_echo(cfg) << "kappa,lambda_p,residual,first_difference,second_difference\n";
        for (const auto& r : rows)
          os << format_double(r.kappa) << ',' << format_double(r.lambda_p) << ','
             << format_double(r.residual) << ',' << format_double(r.first_difference) << ','
             << format_double(r.second_difference) << '\n';
      });
      return;
    }
    cfg["kappa"] = kappa;
    const OperatorSpec op = build(kappa);
    if (!export_path.empty()) Output{export_path}.write([&](std::ostream& os) { write_operator(os, op); });
    const EigenResult r = top_eigenvalue(op, eo);
    json j = {{"config", cfg}, {"state_space", op.state_space}, {"dim", op.dim},
              {"result", eigen_json(r)}};
    if (!op.warnings.empty()) j["warnings"] = op.warnings;
    out.write([&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
};

// green --------------------------------------------------------------------------

struct Green {
  int dim = 3, radius = 40;
  std::vector<double> ps{1.0, 2.0, 3.0, 4.0};
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("green", "Green function at the origin");
    c->add_option("--dim", dim)->check(CLI::PositiveNumber);
    c->add_option("--radius", radius);
    c->add_option("--p", ps, "p values for the w-bar limit")->delimiter(',');
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    const GreenFunctionResult g = green_function(dim, radius);
    auto num = [](double x) { return std::isfinite(x) ? json(x) : json("inf"); };
    json wbar = json::object();
    for (double p : ps) wbar[format_double(p)] = num(g.wbar_limit(p));
    json j = {{"config", {{"command", "green"}, {"dim", dim}, {"radius", radius}}},
              {"G0", num(g.value)},
              {"divergent", g.divergent},
              {"method", g.method},
              {"threshold_inverse_G0", g.divergent ? json("0") : json(g.threshold())},
              {"wbar_limit", wbar}};
    if (!g.divergent) {
      j["half_radius_G0"] = g.half_radius_value;
      j["extrapolated_G0"] = g.extrapolated;
      j["cg_iterations"] = g.cg_iterations;
    }
    out.write([&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
};

// quenched --------------------------------------------------------------------------

struct Quenched {
  FieldArgs field;
  EnvArgs env;
  std::vector<double> t_grid{4.0, 8.0, 16.0};
  double dt = 0.01;
  std::size_t replicas = 32;
  unsigned threads = 1;
  int pocket_radius = -1;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("quenched", "quenched exponent estimate over realizations");
    field.add(c);
    env.add(c);
    c->add_option("--t-grid", t_grid)->delimiter(',');
    c->add_option("--dt", dt);
    c->add_option("--replicas", replicas);
    c->add_option("--threads", threads);
    c->add_option("--pocket-radius", pocket_radius);
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    check_grid(t_grid, "--t-grid");
    const auto f = field.load();
    const Environment e = env.build(f.box().dim());
    QuenchedRunOptions ro;
    ro.dt = dt;
    ro.replicas = replicas;
    ro.threads = threads;
    if (pocket_radius >= 0) ro.pocket = LatticeBox(f.box().dim(), pocket_radius);
    const LyapunovEstimate est =
        estimate_exponent(quenched_exponent_estimate(f, e, t_grid, ro), EstimateOptions{});
    json cfg = {{"command", "quenched"}, {"t_grid", t_grid}, {"dt", dt}, {"replicas", replicas},
                {"replica_ids", {0, replicas ? replicas - 1 : 0}}, {"pocket_radius", pocket_radius}};
    cfg.update(field.echo());
    cfg.update(env.echo());
    out.write([&](std::ostream& os) {
      os << comment_echo(cfg);
      write_estimate_csv(os, est);
    });
  }
};

// probe ------------------------------------------------------------------------------

struct Probe {
  std::string statement = "annealed_sup";
  FieldArgs field;
  DynamicsArgs dyn;
  EnvArgs env;
  int p = 2;
  std::vector<double> t_grid{4.0, 8.0, 16.0};
  std::size_t replicas = 10000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  int pocket_radius = 2;
  double dt = 0.01;
  double kappa1 = 0.2, kappa2 = 4.0;
  Output out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("probe", "compare exponents across fields");
    c->add_option("--statement", statement,
                  "annealed_sup | quenched_lower | decorated_gap | init_invariance");
    field.add(c);
    dyn.add(c);
    c->add_option("--env", env.kind);
    c->add_option("--beta", env.beta);
    c->add_option("--env-radius", env.env_radius);
    c->add_option("--p", p);
    c->add_option("--t-grid", t_grid)->delimiter(',');
    c->add_option("--replicas", replicas);
    c->add_option("--seed", seed);
    c->add_option("--threads", threads);
    c->add_option("--pocket-radius", pocket_radius);
    c->add_option("--dt", dt);
    c->add_option("--kappa1", kappa1);
    c->add_option("--kappa2", kappa2);
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    check_grid(t_grid, "--t-grid");
    const Statement s = parse_statement(statement);
    ProbeReport probe;
    env.seed = seed;
    if (s == Statement::annealed_sup) {
      AnnealedProbeConfig cfg;
      cfg.dynamics = dyn.build();
      cfg.p = p;
      cfg.t_grid = t_grid;
      cfg.replicas = replicas;
      cfg.seed = seed;
      cfg.threads = threads;
      cfg.pocket_radius = pocket_radius;
      cfg.estimate.seed = seed;
      probe = probe_annealed_sup(field.load(), cfg);
    } else if (s == Statement::init_invariance) {
      MomentOptions mo;
      mo.p = p;
      mo.t_grid = t_grid;
      mo.replicas = replicas;
      mo.seed = seed;
      mo.threads = threads;
      probe = probe_init_invariance(field.load(), dyn.build(), mo, EstimateOptions{0.95, 200, seed});
    } else {
      QuenchedProbeConfig qc;
      qc.t_grid = t_grid;
      qc.dt = dt;
      qc.replicas = replicas;
      qc.threads = threads;
      qc.estimate.seed = seed;
      const auto f = field.load();
      const Environment e = env.build(f.box().dim());
      probe = s == Statement::quenched_lower ? probe_quenched_lower(f, e, qc)
                                             : probe_decorated_gap(kappa1, kappa2, f.box(), e, qc);
    }
    json j = probe.to_json();
    j["inputs"].update(field.echo());
    out.write([&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
};

// verify -------------------------------------------------------------------------------

struct Verify {
  Output out;
  bool failed = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("verify", "run the invariant suite");
    c->add_option("--out", out.path);
    c->callback([this] { run(); });
  }

  void run() {
    std::vector<std::pair<std::string, bool>> checks;
    auto check = [&](const std::string& name, const std::function<bool()>& fn) {
      bool ok = false;
      try {
        ok = fn();
      } catch (const std::exception&) {
        ok = false;
      }
      checks.emplace_back(name, ok);
    };

    const LatticeBox box1(1, 12);
    const ConductanceField binary =
        generate_field(box1, IidDiscreteLaw{{0.1, 0.4, 1.0}, {0.3, 0.3, 0.4}}, 3);
    check("field rates within bounds", [&] {
      for (double r : binary.rates())
        if (r < binary.lower() || r > binary.upper()) return false;
      return true;
    });
    check("discretization idempotent and within h", [&] {
      const auto d1 = discretize_field(binary, 4);
      const auto d2 = discretize_field(d1, 4);
      const double h = (binary.upper() - binary.lower()) / 4;
      for (std::size_t e = 0; e < d1.rates().size(); ++e) {
        if (d1.rates()[e] != d2.rates()[e]) return false;
        if (d1.rates()[e] > binary.rates()[e] || binary.rates()[e] - d1.rates()[e] > h) return false;
      }
      return true;
    });
    check("detailed balance of the Ising dynamics", [] {
      return check_detailed_balance(0.5, LatticeBox(1, 4, Geometry::periodic)) < 1e-12 &&
             check_detailed_balance(0.5, LatticeBox(2, 1, Geometry::periodic)) < 1e-12;
    });
    check("particle conservation", [] {
      Environment env(EnvConfig{InfiniteWalks{2.0}, LatticeBox(1, 10, Geometry::periodic), 5});
      const auto traj = make_trajectory(env, 3.0, 0);
      double before = 0.0, after = 0.0;
      for (double v : traj.initial) before += v;
      for (double v : field_snapshot(traj, 3.0)) after += v;
      return before == after;
    });
    check("girsanov bound", [&] {
      const auto to = discretize_field(binary, 4);
      const double bound = 2.0 * (binary.upper() - binary.lower()) * 1.0 / 4.0;
      for (std::size_t r = 0; r < 2000; ++r) {
        RngStream rng(9, stream_id(r, slot::walk_base));
        const auto path = simulate_path(binary, box1.center(), 1.0, rng);
        const auto w = girsanov_weight(path, binary, to);
        if (w.jump_term > 0.0 || w.log_weight > bound) return false;
      }
      return true;
    });
    check("operators exactly symmetric", [] {
      const auto f = constant_field(LatticeBox(1, 5), 1.0);
      const LatticeBox b(1, 4);
      const auto f1 = constant_field(LatticeBox(1, 2), 1.0);
      const LatticeBox env(1, 1, Geometry::periodic);
      return build_wn_operator(f, 2, b).max_asymmetry() == 0.0 &&
             build_firw_operator(f, 1, 1, 0.7, b).max_asymmetry() == 0.0 &&
             build_iirw_operator(f1, 1, {1.0, 2, 2}, env, LatticeBox(1, 1)).max_asymmetry() == 0.0 &&
             build_spinflip_operator(f1, 1, 0.5, env, LatticeBox(1, 1)).max_asymmetry() == 0.0;
    });
    check("w-equation monotone with pinned source", [] {
      const LatticeBox b(3, 8);
      WalkPath path;
      path.box = b;
      path.start = b.center();
      path.horizon = 5.0;
      path.positions = {b.center()};
      std::vector<WalkPath> paths{path};
      const auto sol = solve_w_along_path(paths, b, 5.0, 0.05);
      for (std::size_t k = 1; k < sol.origin_trace.size(); ++k)
        if (sol.origin_trace[k] < sol.origin_trace[k - 1]) return false;
      return true;
    });

    for (const auto& [name, ok] : checks) failed = failed || !ok;
    out.write([&](std::ostream& os) {
      for (const auto& [name, ok] : checks) os << (ok ? "PASS " : "FAIL ") << name << '\n';
    });
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parabolic Anderson model with random conductances"};
  app.set_config("--config", "", "flat config file; command-line flags win");
  app.require_subcommand(1);
  GenField gen;
  VerifyCluster vc;
  SimulateU su;
  Moment mom;
  Variational var;
  Green green;
  Quenched q;
  Probe probe;
  Verify verify;
  gen.add(app);
  vc.add(app);
  su.add(app);
  mom.add(app);
  var.add(app);
  green.add(app);
  q.add(app);
  probe.add(app);
  verify.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  } catch (const BudgetError& e) {
    std::cerr << "budget error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return verify.failed ? kExitInvariant : 0;
}
