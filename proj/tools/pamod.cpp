// pamod: command-line front end. Every command prints one JSON document on
// stdout (report prints a table). Exit codes: 0 ok, 1 domain failure
// (infeasible, validation violations, failed check), 2 usage or input error.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "pamod/coordinator.hpp"
#include "pamod/error.hpp"
#include "pamod/pathdecomp.hpp"
#include "pamod/scenario.hpp"
#include "pamod/sim.hpp"

using namespace pamod;
using json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0, kDomain = 1, kUsage = 2;

// Thrown for input problems that are not the library's business.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

json series_json(const BusSeries& s) {
  json out = json::array();
  for (const auto& [bt, v] : s) out.push_back({{"bus", bt.first}, {"t", bt.second}, {"value", v}});
  return out;
}

json iso_json(const IsoSolution& iso, const GridModel& grid) {
  json gens = json::array();
  for (std::size_t g = 0; g < iso.p.size(); ++g) gens.push_back({{"name", grid.generators[g].name}, {"p", iso.p[g]}});
  return {{"generation_cost", iso.generation_cost},
          {"shed_mwh", iso.shed_energy},
          {"lmp", series_json(iso.lmp)},
          {"shed", series_json(iso.shed)},
          {"generators", gens}};
}

json costs_json(const CostBreakdown& c, const FleetSpec& fleet) {
  return {{"travel_time_steps", c.travel_time},
          {"distance_km", c.distance},
          {"energy", c.energy},
          {"battery", c.battery},
          {"operating", c.operating(fleet)},
          {"total", c.total(fleet)}};
}

json final_json(const std::map<NodeCharge, double>& dist) {
  json out = json::array();
  for (const auto& [nc, n] : dist)
    if (std::abs(n) > 1e-9) out.push_back({{"node", nc.first}, {"c", nc.second}, {"vehicles", n}});
  return out;
}

PriceTable baseline_prices(const Scenario& s) {
  const auto iso = solve_dispatch(s.grid, {}, s.T);
  PriceTable p;
  for (const auto& st : s.stations) {
    const int bus = s.coupling.bus_of_station(st.node);
    for (int t = 1; t <= s.T; ++t)
      p.set(st.node, t, bus < 0 ? 0.0 : iso.lmp.at({bus, t}) * s.fleet.level_energy / 3.6e9);
  }
  return p;
}

void maybe_dump(const lp::LpProblem& p, const lp::LpSolution* sol, const std::string& mps, const std::string& solution) {
  if (!mps.empty()) write_file(mps, lp::write_mps(p));
  if (!solution.empty() && sol) write_file(solution, lp::write_solution_file(*sol, p));
}

void emit(const json& j, const std::string& out) {
  if (out.empty())
    std::cout << j.dump(2) << "\n";
  else
    write_file(out, j.dump(2) + "\n");
}

json sim_report_from(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("report input is not JSON: ") + e.what());
  }
}

std::string cell(const json& j, const char* key, int precision) {
  if (!j.contains(key)) return "-";
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(precision);
  ss << v.get<double>();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-in-the-loop fleet and grid toolkit"};
  app.require_subcommand(1);
  std::string scenario_path, out_path, mps_path, solution_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("scenario", scenario_path, "Scenario JSON")->required();
    cmd->add_option("-o,--out", out_path, "Write the JSON result here instead of stdout");
  };

  auto* validate = app.add_subcommand("validate", "Check a scenario and list diagnostics");
  add_common(validate);

  auto* generate = app.add_subcommand("generate", "Write a generated scenario");
  std::string kind = "micro";
  std::uint64_t seed = 1;
  GeneratorParams gp;
  generate->add_option("--kind", kind, "micro | micro-tight | grid-ladder | tight-feeder | random");
  generate->add_option("--seed", seed);
  generate->add_option("--road-nodes", gp.road_nodes);
  generate->add_option("--buses", gp.buses);
  generate->add_option("--T", gp.T);
  generate->add_option("--C", gp.C);
  generate->add_option("--vehicles", gp.vehicles);
  generate->add_option("--demand", gp.demand);
  generate->add_option("--grid-margin", gp.grid_margin);
  generate->add_option("-o,--out", out_path, "Scenario file to write (stdout if omitted)");

  auto* vrcp = app.add_subcommand("solve-vrcp", "Fleet routing and charging at fixed prices");
  add_common(vrcp);
  std::string prices_mode = "baseline";
  double flat_price = 0.0;
  vrcp->add_option("--prices", prices_mode, "baseline (dispatch LMPs without the fleet) | flat")
      ->check(CLI::IsMember({"baseline", "flat"}));
  vrcp->add_option("--flat-price", flat_price, "Price per charge level for --prices flat");
  vrcp->add_option("--mps", mps_path, "Write the LP in MPS format");
  vrcp->add_option("--solution", solution_path, "Write the solution file");

  auto* dispatch = app.add_subcommand("solve-dispatch", "Economic dispatch without the fleet");
  add_common(dispatch);
  std::optional<double> shed_penalty;
  dispatch->add_option("--shed-penalty", shed_penalty, "Enable load shedding at this price per MWh");
  dispatch->add_option("--mps", mps_path);
  dispatch->add_option("--solution", solution_path);

  auto* joint = app.add_subcommand("solve-joint", "Joint fleet and grid LP");
  add_common(joint);
  joint->add_option("--shed-penalty", shed_penalty);
  joint->add_option("--mps", mps_path);
  joint->add_option("--solution", solution_path);

  auto* verify = app.add_subcommand("verify-equilibrium", "Check the joint optimum is a market equilibrium");
  add_common(verify);
  double tol = 1e-5;
  verify->add_option("--tol", tol);

  auto* negotiate = app.add_subcommand("negotiate", "Price negotiation between the fleet and grid operators");
  add_common(negotiate);
  std::string listen, connect, replay, transcript_path, role_name;
  NegotiationOptions nopt;
  negotiate->add_option("--listen", listen, "Serve one side on host:port");
  negotiate->add_option("--connect", connect, "Run one side against a listening peer");
  negotiate->add_option("--role", role_name, "tso | iso (with --listen or --connect)")
      ->check(CLI::IsMember({"tso", "iso"}));
  negotiate->add_option("--replay", replay, "Re-run a recorded transcript and compare frame by frame");
  negotiate->add_option("--transcript", transcript_path, "Write the frames as JSON lines");
  negotiate->add_option("--max-iter", nopt.max_iter);
  negotiate->add_option("--tol", nopt.tol, "MW");
  negotiate->add_flag("!--cold-start", nopt.warm_start, "Start from zero prices");
  auto* net_group = negotiate->add_option_group("mode");
  net_group->add_options(negotiate->get_option("--listen"), negotiate->get_option("--connect"),
                         negotiate->get_option("--replay"));
  net_group->require_option(0, 1);

  auto* routes = app.add_subcommand("decompose-routes", "Per-request routes from the bundled joint optimum");
  add_common(routes);
  std::string jsonl_path;
  routes->add_option("--jsonl", jsonl_path, "Write one route set per line");

  auto* simulate = app.add_subcommand("simulate", "Receding-horizon closed-loop simulation");
  add_common(simulate);
  std::string mode = "coordinated", csv_path, svg_path;
  std::optional<std::uint64_t> sim_seed;
  simulate->add_option("--mode", mode)->check(CLI::IsMember({"baseline", "uncoordinated", "coordinated"}));
  simulate->add_option("--seed", sim_seed);
  simulate->add_option("--csv", csv_path, "Per-tick, per-bus series");
  simulate->add_option("--svg", svg_path, "Mean LMP and shed plot");

  auto* report = app.add_subcommand("report", "Table of simulation reports side by side");
  std::vector<std::string> report_inputs;
  std::string format = "markdown";
  report->add_option("reports", report_inputs, "simulate outputs")->required();
  report->add_option("--format", format)->check(CLI::IsMember({"markdown", "json"}));
  report->add_option("-o,--out", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (generate->parsed()) {
      const auto s = generate_instance(kind, gp, seed);
      if (out_path.empty())
        std::cout << scenario_to_json(s) << "\n";
      else
        save_scenario(s, out_path);
      return kOk;
    }
    if (report->parsed()) {
      std::vector<json> reps;
      for (const auto& p : report_inputs) reps.push_back(sim_report_from(read_file(p)));
      if (format == "json") {
        json rows = json::array();
        for (const auto& r : reps) {
          json row;
          for (const char* k : {"mode", "avg_trip_hours", "energy_mwh", "grid_expenditure", "mean_lmp",
                                "tso_expenditure", "shed_mwh"})
            if (r.contains(k)) row[k] = r.at(k);
          rows.push_back(row);
        }
        emit(rows, out_path);
        return kOk;
      }
      struct Row {
        const char* label;
        const char* key;
        int precision;
      };
      const Row rows[] = {{"Avg. travel + wait time [h]", "avg_trip_hours", 4},
                          {"Total energy [MWh]", "energy_mwh", 3},
                          {"Grid expenditure", "grid_expenditure", 2},
                          {"Mean price [per MWh]", "mean_lmp", 4},
                          {"TSO expenditure", "tso_expenditure", 2},
                          {"Shed [MWh]", "shed_mwh", 3},
                          {"Customers served", "served", 0},
                          {"Customers dropped", "dropped", 2}};
      std::ostringstream ss;
      ss << "| |";
      for (const auto& r : reps) ss << " " << r.value("mode", std::string("?")) << " |";
      ss << "\n|---|";
      for (std::size_t i = 0; i < reps.size(); ++i) ss << "---:|";
      ss << "\n";
      for (const auto& row : rows) {
        ss << "| " << row.label << " |";
        for (const auto& r : reps) ss << " " << cell(r, row.key, row.precision) << " |";
        ss << "\n";
      }
      if (out_path.empty())
        std::cout << ss.str();
      else
        write_file(out_path, ss.str());
      return kOk;
    }

    auto s = load_scenario(scenario_path);
    if (validate->parsed()) {
      const auto diags = s.diagnostics();
      json list = json::array();
      bool ok = true;
      for (const auto& d : diags) {
        const bool v = d.severity == Diagnostic::Severity::Violation;
        ok = ok && !v;
        list.push_back({{"severity", v ? "violation" : "warning"}, {"subject", d.subject}, {"message", d.message}});
      }
      emit({{"valid", ok}, {"diagnostics", list}}, out_path);
      return ok ? kOk : kDomain;
    }
    const auto g = s.graph();
    if (vrcp->parsed()) {
      const auto prices = prices_mode == "flat" ? PriceTable::flat(s.stations, s.T, flat_price) : baseline_prices(s);
      const auto a = assemble_vrcp(g, s.requests, s.fleet, prices);
      const auto sol = lp::solve(a.problem);
      maybe_dump(a.problem, &sol, mps_path, solution_path);
      if (!sol.optimal()) throw lp::SolveError(sol.status, sol.message);
      const auto tso = extract_tso_solution(sol, a.layout, g, s.fleet, &prices);
      emit({{"status", lp::to_string(sol.status)},
            {"objective", sol.objective},
            {"costs", costs_json(tso.costs, s.fleet)},
            {"vehicle_load", series_json(coupling_loads(tso, g, s.coupling, s.fleet.level_energy, s.step_seconds))},
            {"final_distribution", final_json(tso.final_distribution)}},
           out_path);
      return kOk;
    }
    if (dispatch->parsed()) {
      DispatchOptions o;
      o.shed_penalty = shed_penalty;
      const auto a = assemble_dispatch(s.grid, {}, s.T, o);
      const auto sol = lp::solve(a.problem);
      maybe_dump(a.problem, &sol, mps_path, solution_path);
      if (!sol.optimal()) throw lp::SolveError(sol.status, sol.message);
      const auto iso = solve_dispatch(s.grid, {}, s.T, o);
      emit({{"status", lp::to_string(sol.status)}, {"dispatch", iso_json(iso, s.grid)}}, out_path);
      return kOk;
    }
    if (joint->parsed()) {
      JointOptions o;
      o.shed_penalty = shed_penalty;
      if (!mps_path.empty() || !solution_path.empty()) {
        const auto a = assemble_pamod(g, s.requests, s.fleet, s.grid, s.coupling, s.T, o);
        const auto sol = lp::solve(a.problem);
        maybe_dump(a.problem, &sol, mps_path, solution_path);
      }
      const auto j = solve_joint(g, s.requests, s.fleet, s.grid, s.coupling, s.T, o);
      emit({{"status", "optimal"},
            {"objective", j.objective},
            {"degenerate", j.degenerate},
            {"fleet_costs", costs_json(j.tso.costs, s.fleet)},
            {"vehicle_load", series_json(j.vehicle_load)},
            {"coupling_residual", coupling_residual(j, s.grid, s.T)},
            {"dispatch", iso_json(j.iso, s.grid)}},
           out_path);
      return kOk;
    }
    if (verify->parsed()) {
      const auto j = solve_joint(g, s.requests, s.fleet, s.grid, s.coupling, s.T);
      const auto r = verify_equilibrium(j, g, s.requests, s.fleet, s.grid, s.coupling, tol);
      json gens = json::array();
      for (const auto& c : r.generators)
        gens.push_back({{"generator", s.grid.generators[c.generator].name},
                        {"schedule_profit", c.schedule_profit},
                        {"best_profit", c.best_profit},
                        {"gap", c.gap}});
      emit({{"passed", r.passed},
            {"tol", r.tol},
            {"degenerate", r.degenerate},
            {"tso_optimum", r.tso_optimum},
            {"tso_cost", r.tso_cost},
            {"tso_gap", r.tso_gap},
            {"generators", gens},
            {"violations", r.violations},
            {"warnings", r.warnings}},
           out_path);
      return r.passed ? kOk : kDomain;
    }
    if (negotiate->parsed()) {
      s.coupling.validate(g, s.grid);
      TsoAgent tso(g, s.requests, s.fleet, s.coupling, s.step_seconds);
      IsoAgent iso(s.grid, coupled_set(s.coupling, s.T), s.T, nopt);
      if (!replay.empty()) {
        const auto frames = parse_transcript(read_file(replay));
        const auto r = replay_transcript(tso, iso, frames);
        emit({{"frames", r.frames}, {"ok", r.ok()}, {"mismatches", r.mismatches}}, out_path);
        return r.ok() ? kOk : kDomain;
      }
      if (!listen.empty() || !connect.empty()) {
        if (role_name.empty()) throw UsageError("--role is required with --listen or --connect");
        const Role role = role_name == "tso" ? Role::Tso : Role::Iso;
        const auto frames = listen.empty()
                                ? connect_agent(role, &tso, &iso, Endpoint::parse(connect))
                                : serve_agent(role, &tso, &iso, Endpoint::parse(listen));
        if (!transcript_path.empty()) write_file(transcript_path, transcript_jsonl(frames));
        json out{{"role", role_name}, {"frames", frames.size()}};
        if (role == Role::Iso) {
          out["converged"] = iso.converged();
          out["iterations"] = iso.state().k;
          out["dispatch"] = iso_json(iso.final_dispatch(), s.grid);
        } else {
          out["final_prices"] = series_json(tso.final_price().price);
          out["fleet_costs"] = costs_json(tso.recovered().costs, s.fleet);
        }
        emit(out, out_path);
        return kOk;
      }
      const auto r = run_negotiation(tso, iso);
      if (!transcript_path.empty()) write_file(transcript_path, transcript_jsonl(r.transcript));
      emit({{"converged", r.converged},
            {"iterations", r.iterations},
            {"social_cost", r.social_cost},
            {"prices", series_json(r.prices)},
            {"residuals", r.state.residuals},
            {"dispatch", iso_json(r.iso, s.grid)}},
           out_path);
      return kOk;
    }
    if (routes->parsed()) {
      const auto a = assemble_pamod(g, s.requests, s.fleet, s.grid, s.coupling, s.T);
      const auto j = solve_joint(g, s.requests, s.fleet, s.grid, s.coupling, s.T);
      const auto r = decompose_routes(j.tso, a.fleet, g, s.fleet);
      if (!jsonl_path.empty()) write_file(jsonl_path, route_sets_jsonl(r.requests, g));
      json sets = json::array();
      for (const auto& rs : r.requests)
        sets.push_back({{"request", rs.request},
                        {"origin", rs.trip.origin},
                        {"destination", rs.trip.destination},
                        {"departure_time", rs.trip.departure_time},
                        {"rate", rs.trip.rate},
                        {"paths", rs.paths.size()},
                        {"total", rs.total}});
      emit({{"reconstruction_error", r.reconstruction_error},
            {"continuity_residual", r.continuity_residual},
            {"rebalancing_paths", r.rebalancing.paths.size()},
            {"requests", sets}},
           out_path);
      return kOk;
    }
    if (simulate->parsed()) {
      if (sim_seed) s.sim.seed = *sim_seed;
      SimReport partial;
      try {
        const auto r = run_simulation(s, sim_mode_from_string(mode), &partial);
        if (!csv_path.empty()) write_file(csv_path, r.to_csv());
        if (!svg_path.empty()) write_file(svg_path, r.to_svg());
        if (out_path.empty())
          std::cout << r.to_json() << "\n";
        else
          write_file(out_path, r.to_json() + "\n");
        return kOk;
      } catch (const lp::SolveError&) {
        std::cout << partial.to_json() << "\n";
        throw;
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kUsage;
  } catch (const lp::SolveError& e) {
    std::cerr << "solve failed: " << e.what() << "\n";
    return kDomain;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kDomain;
  } catch (const ValidationError& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return kDomain;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
