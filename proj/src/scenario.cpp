#include "pamod/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "pamod/error.hpp"

namespace pamod {

using nlohmann::json;

ExpandedGraph Scenario::graph() const { return build_expanded_graph(road, stations, T, C, expansion()); }

std::vector<Diagnostic> Scenario::diagnostics() const {
  auto out = validate_scenario(road, stations, fleet, requests, T, C, expansion());
  auto add = [&](std::string subj, std::string msg) {
    out.push_back({Diagnostic::Severity::Violation, std::move(subj), std::move(msg)});
  };
  try {
    validate_grid(grid, T);
  } catch (const ValidationError& e) {
    add("grid", e.what());
  }
  std::set<int> mapped;
  for (const auto& [bus, node] : coupling.station_of_bus) {
    if (std::find(grid.buses.begin(), grid.buses.end(), bus) == grid.buses.end())
      add("coupling", "unknown bus " + std::to_string(bus));
    if (std::none_of(stations.begin(), stations.end(), [&](const ChargingStation& s) { return s.node == node; }))
      add("coupling", "node " + std::to_string(node) + " has no station");
    if (!mapped.insert(node).second) add("coupling", "station " + std::to_string(node) + " mapped twice");
  }
  for (std::size_t i = 0; i < stations.size(); ++i)
    if (!mapped.count(stations[i].node))
      add("station[" + std::to_string(i) + "]", "station is not mapped to a bus");
  for (int t = 1; t <= T; ++t)
    for (int b : grid.buses)
      if (grid.demand(b, t) > grid.cap(b, t))
        out.push_back({Diagnostic::Severity::Warning, "grid.bus " + std::to_string(b),
                       "exogenous demand exceeds the delivery cap at t=" + std::to_string(t)});
  if (std::abs(grid.step_seconds - step_seconds) > 0) add("grid", "step length differs from the scenario horizon");
  return out;
}

bool operator==(const Scenario& a, const Scenario& b) {
  return a.road.nodes == b.road.nodes && a.road.edges.size() == b.road.edges.size() &&
         std::equal(a.road.edges.begin(), a.road.edges.end(), b.road.edges.begin(),
                    [](const RoadEdge& x, const RoadEdge& y) {
                      return x.tail == y.tail && x.head == y.head && x.length_km == y.length_km &&
                             x.traversal_time == y.traversal_time && x.charge_cost == y.charge_cost &&
                             x.capacity == y.capacity;
                    }) &&
         a.stations.size() == b.stations.size() &&
         std::equal(a.stations.begin(), a.stations.end(), b.stations.begin(),
                    [](const ChargingStation& x, const ChargingStation& y) {
                      return x.node == y.node && x.charge_rate == y.charge_rate &&
                             x.discharge_rate == y.discharge_rate && x.capacity == y.capacity;
                    }) &&
         a.fleet == b.fleet && a.requests == b.requests && a.grid == b.grid &&
         a.coupling.station_of_bus == b.coupling.station_of_bus && a.sim == b.sim && a.T == b.T &&
         a.step_seconds == b.step_seconds && a.C == b.C && a.waiting_edges == b.waiting_edges;
}

namespace {

std::string escape(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

// Walks one JSON object, recording the keys it consumed so that leftovers can
// be rejected with their pointer.
class Obj {
 public:
  Obj(const json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {
    if (!j_.is_object()) throw SchemaError(ptr_.empty() ? "/" : ptr_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string at(const std::string& key) const { return ptr_ + "/" + escape(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw SchemaError(at(key), "missing required field");
    return j_.at(key);
  }

  double number(const std::string& key) { return as_number(raw(key), at(key)); }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : (used_.insert(key), fallback); }
  int integer(const std::string& key) { return as_integer(raw(key), at(key)); }
  int integer(const std::string& key, int fallback) { return has(key) ? integer(key) : (used_.insert(key), fallback); }
  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw SchemaError(at(key), "expected a boolean");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) throw SchemaError(at(key), "expected a string");
    return j_.at(key).get<std::string>();
  }
  const json& array(const std::string& key) {
    const json& a = raw(key);
    if (!a.is_array()) throw SchemaError(at(key), "expected an array");
    return a;
  }
  Series series(const std::string& key, bool optional) {
    if (optional && !has(key)) {
      used_.insert(key);
      return {};
    }
    const json& a = array(key);
    Series s;
    for (std::size_t i = 0; i < a.size(); ++i) s.push_back(as_number(a[i], at(key) + "/" + std::to_string(i)));
    return s;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw SchemaError(at(it.key()), "unknown field");
  }

  static double as_number(const json& v, const std::string& ptr) {
    if (!v.is_number()) throw SchemaError(ptr, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(ptr, "expected a finite number");
    return d;
  }
  static int as_integer(const json& v, const std::string& ptr) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return static_cast<int>(v.get<double>());
    throw SchemaError(ptr, "expected an integer");
  }

 private:
  const json& j_;
  std::string ptr_;
  std::set<std::string> used_;
};

json series_json(const Series& s) { return json(s); }

}  // namespace

Scenario scenario_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", std::string("invalid JSON: ") + e.what());
  }
  Obj top(root, "");
  const int version = top.integer("schema_version");
  if (version != kSchemaVersion)
    throw SchemaError("/schema_version", "unsupported version " + std::to_string(version));
  Scenario s;

  {
    Obj h(top.raw("horizon"), "/horizon");
    s.T = h.integer("T");
    s.step_seconds = h.number("step_seconds");
    if (s.T < 1) throw SchemaError("/horizon/T", "must be at least 1");
    if (!(s.step_seconds > 0)) throw SchemaError("/horizon/step_seconds", "must be positive");
    h.finish();
  }
  {
    Obj c(top.raw("charge"), "/charge");
    s.C = c.integer("levels");
    s.fleet.level_energy = c.number("level_energy_j");
    if (s.C < 1) throw SchemaError("/charge/levels", "must be at least 1");
    if (!(s.fleet.level_energy > 0)) throw SchemaError("/charge/level_energy_j", "must be positive");
    c.finish();
  }
  if (top.has("options")) {
    Obj o(top.raw("options"), "/options");
    s.waiting_edges = o.boolean("waiting_edges", false);
    o.finish();
  }
  std::set<int> node_set;
  {
    Obj r(top.raw("road"), "/road");
    const json& nodes = r.array("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const int v = Obj::as_integer(nodes[i], "/road/nodes/" + std::to_string(i));
      if (!node_set.insert(v).second) throw SchemaError("/road/nodes/" + std::to_string(i), "duplicate node");
      s.road.nodes.push_back(v);
    }
    const json& edges = r.array("edges");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const std::string p = "/road/edges/" + std::to_string(i);
      Obj e(edges[i], p);
      RoadEdge re;
      re.tail = e.integer("tail");
      re.head = e.integer("head");
      re.length_km = e.number("length_km");
      re.traversal_time = e.integer("traversal_time");
      re.charge_cost = e.integer("charge_cost");
      re.capacity = e.number("capacity");
      e.finish();
      if (!node_set.count(re.tail)) throw SchemaError(p + "/tail", "unknown node " + std::to_string(re.tail));
      if (!node_set.count(re.head)) throw SchemaError(p + "/head", "unknown node " + std::to_string(re.head));
      s.road.edges.push_back(re);
    }
    r.finish();
  }
  {
    const json& st = top.array("stations");
    for (std::size_t i = 0; i < st.size(); ++i) {
      const std::string p = "/stations/" + std::to_string(i);
      Obj o(st[i], p);
      ChargingStation cs;
      cs.node = o.integer("node");
      cs.charge_rate = o.integer("charge_rate");
      cs.discharge_rate = o.integer("discharge_rate");
      cs.capacity = o.integer("capacity");
      o.finish();
      if (!node_set.count(cs.node)) throw SchemaError(p + "/node", "unknown node " + std::to_string(cs.node));
      s.stations.push_back(cs);
    }
  }
  {
    Obj f(top.raw("fleet"), "/fleet");
    const json& init = f.array("initial");
    for (std::size_t i = 0; i < init.size(); ++i) {
      const std::string p = "/fleet/initial/" + std::to_string(i);
      Obj o(init[i], p);
      const int node = o.integer("node"), charge = o.integer("charge");
      const double count = o.number("count");
      o.finish();
      if (!node_set.count(node)) throw SchemaError(p + "/node", "unknown node " + std::to_string(node));
      s.fleet.initial[{node, charge}] += count;
    }
    {
      Obj fin(f.raw("final"), "/fleet/final");
      const std::string mode = fin.string("mode", "threshold");
      if (mode == "threshold") {
        s.fleet.final_constraint.mode = FinalConstraint::Mode::Threshold;
        s.fleet.final_constraint.threshold = fin.integer("threshold", 1);
      } else if (mode == "fixed") {
        s.fleet.final_constraint.mode = FinalConstraint::Mode::Fixed;
        const json& counts = fin.array("counts");
        for (std::size_t i = 0; i < counts.size(); ++i) {
          Obj o(counts[i], "/fleet/final/counts/" + std::to_string(i));
          const int node = o.integer("node"), charge = o.integer("charge");
          s.fleet.final_constraint.fixed[{node, charge}] += o.number("count");
          o.finish();
        }
      } else {
        throw SchemaError("/fleet/final/mode", "expected \"threshold\" or \"fixed\"");
      }
      fin.finish();
    }
    s.fleet.battery_wear_cost = f.number("battery_wear_cost");
    s.fleet.value_of_time = f.number("value_of_time");
    s.fleet.distance_cost = f.number("distance_cost");
    f.finish();
  }
  {
    const json& rq = top.array("requests");
    for (std::size_t i = 0; i < rq.size(); ++i) {
      const std::string p = "/requests/" + std::to_string(i);
      Obj o(rq[i], p);
      TripRequest r;
      r.origin = o.integer("origin");
      r.destination = o.integer("destination");
      r.departure_time = o.integer("departure_time");
      r.rate = o.number("rate");
      o.finish();
      if (!node_set.count(r.origin)) throw SchemaError(p + "/origin", "unknown node");
      if (!node_set.count(r.destination)) throw SchemaError(p + "/destination", "unknown node");
      s.requests.push_back(r);
    }
  }
  std::set<int> bus_set;
  {
    Obj g(top.raw("grid"), "/grid");
    const json& buses = g.array("buses");
    for (std::size_t i = 0; i < buses.size(); ++i) {
      const int b = Obj::as_integer(buses[i], "/grid/buses/" + std::to_string(i));
      if (!bus_set.insert(b).second) throw SchemaError("/grid/buses/" + std::to_string(i), "duplicate bus");
      s.grid.buses.push_back(b);
    }
    s.grid.reference_bus = g.integer("reference_bus", -1);
    if (s.grid.reference_bus >= 0 && !bus_set.count(s.grid.reference_bus))
      throw SchemaError("/grid/reference_bus", "unknown bus");
    const json& lines = g.array("lines");
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string p = "/grid/lines/" + std::to_string(i);
      Obj o(lines[i], p);
      Line l;
      l.from = o.integer("from");
      l.to = o.integer("to");
      l.reactance = o.number("reactance");
      l.limit = o.number("limit");
      o.finish();
      if (!bus_set.count(l.from)) throw SchemaError(p + "/from", "unknown bus");
      if (!bus_set.count(l.to)) throw SchemaError(p + "/to", "unknown bus");
      s.grid.lines.push_back(l);
    }
    const json& gens = g.array("generators");
    for (std::size_t i = 0; i < gens.size(); ++i) {
      const std::string p = "/grid/generators/" + std::to_string(i);
      Obj o(gens[i], p);
      Generator gen;
      gen.name = o.string("name", "");
      gen.bus = o.integer("bus");
      gen.pmin = o.series("pmin", false);
      gen.pmax = o.series("pmax", false);
      gen.cost = o.series("cost", false);
      gen.ramp_up = o.series("ramp_up", true);
      gen.ramp_down = o.series("ramp_down", true);
      if (o.has("initial_output")) gen.initial_output = o.number("initial_output");
      else o.number("initial_output", 0.0);
      o.finish();
      if (!bus_set.count(gen.bus)) throw SchemaError(p + "/bus", "unknown bus");
      s.grid.generators.push_back(gen);
    }
    const json& loads = g.array("loads");
    for (std::size_t i = 0; i < loads.size(); ++i) {
      const std::string p = "/grid/loads/" + std::to_string(i);
      Obj o(loads[i], p);
      Load l;
      l.bus = o.integer("bus");
      l.demand = o.series("demand", false);
      l.cap = o.series("cap", true);
      o.finish();
      if (!bus_set.count(l.bus)) throw SchemaError(p + "/bus", "unknown bus");
      s.grid.loads.push_back(l);
    }
    g.finish();
    s.grid.step_seconds = s.step_seconds;
  }
  {
    const json& cp = top.array("coupling");
    std::set<int> station_nodes;
    for (const auto& st : s.stations) station_nodes.insert(st.node);
    for (std::size_t i = 0; i < cp.size(); ++i) {
      const std::string p = "/coupling/" + std::to_string(i);
      Obj o(cp[i], p);
      const int bus = o.integer("bus"), station = o.integer("station");
      o.finish();
      if (!bus_set.count(bus)) throw SchemaError(p + "/bus", "unknown bus");
      if (!station_nodes.count(station)) throw SchemaError(p + "/station", "no station at node " + std::to_string(station));
      if (!s.coupling.station_of_bus.emplace(bus, station).second) throw SchemaError(p + "/bus", "bus mapped twice");
    }
  }
  if (top.has("sim")) {
    Obj o(top.raw("sim"), "/sim");
    s.sim.horizon = o.integer("horizon", s.sim.horizon);
    s.sim.resolve_every = o.integer("resolve_every", s.sim.resolve_every);
    s.sim.end_charge_threshold = o.integer("end_charge_threshold", s.sim.end_charge_threshold);
    s.sim.drop_penalty = o.number("drop_penalty", s.sim.drop_penalty);
    s.sim.shed_penalty = o.number("shed_penalty", s.sim.shed_penalty);
    s.sim.noise_transport = o.number("noise_transport", s.sim.noise_transport);
    s.sim.noise_power = o.number("noise_power", s.sim.noise_power);
    s.sim.bpr_a = o.number("bpr_a", s.sim.bpr_a);
    s.sim.bpr_b = o.number("bpr_b", s.sim.bpr_b);
    if (o.has("seed")) {
      const json& v = o.raw("seed");
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw SchemaError("/sim/seed", "expected a nonnegative integer");
      s.sim.seed = v.get<std::uint64_t>();
    } else {
      o.number("seed", 0.0);
    }
    o.finish();
    if (s.sim.horizon < 1) throw SchemaError("/sim/horizon", "must be at least 1");
    if (s.sim.resolve_every < 1) throw SchemaError("/sim/resolve_every", "must be at least 1");
    if (s.sim.end_charge_threshold < 1 || s.sim.end_charge_threshold > s.C)
      throw SchemaError("/sim/end_charge_threshold", "must lie in 1..levels");
    if (s.sim.drop_penalty < 0 || s.sim.shed_penalty < 0 || s.sim.noise_transport < 0 || s.sim.noise_power < 0)
      throw SchemaError("/sim", "penalties and noise levels must be nonnegative");
  }
  top.finish();
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["horizon"] = {{"T", s.T}, {"step_seconds", s.step_seconds}};
  j["charge"] = {{"levels", s.C}, {"level_energy_j", s.fleet.level_energy}};
  j["options"] = {{"waiting_edges", s.waiting_edges}};
  json edges = json::array();
  for (const auto& e : s.road.edges)
    edges.push_back({{"tail", e.tail}, {"head", e.head}, {"length_km", e.length_km},
                     {"traversal_time", e.traversal_time}, {"charge_cost", e.charge_cost}, {"capacity", e.capacity}});
  j["road"] = {{"nodes", s.road.nodes}, {"edges", edges}};
  json st = json::array();
  for (const auto& c : s.stations)
    st.push_back({{"node", c.node}, {"charge_rate", c.charge_rate}, {"discharge_rate", c.discharge_rate},
                  {"capacity", c.capacity}});
  j["stations"] = st;
  json init = json::array();
  for (const auto& [key, n] : s.fleet.initial) init.push_back({{"node", key.first}, {"charge", key.second}, {"count", n}});
  json fin;
  if (s.fleet.final_constraint.mode == FinalConstraint::Mode::Threshold) {
    fin = {{"mode", "threshold"}, {"threshold", s.fleet.final_constraint.threshold}};
  } else {
    json counts = json::array();
    for (const auto& [key, n] : s.fleet.final_constraint.fixed)
      counts.push_back({{"node", key.first}, {"charge", key.second}, {"count", n}});
    fin = {{"mode", "fixed"}, {"counts", counts}};
  }
  j["fleet"] = {{"initial", init},
                {"final", fin},
                {"battery_wear_cost", s.fleet.battery_wear_cost},
                {"value_of_time", s.fleet.value_of_time},
                {"distance_cost", s.fleet.distance_cost}};
  json rq = json::array();
  for (const auto& r : s.requests)
    rq.push_back({{"origin", r.origin}, {"destination", r.destination}, {"departure_time", r.departure_time},
                  {"rate", r.rate}});
  j["requests"] = rq;
  json lines = json::array();
  for (const auto& l : s.grid.lines)
    lines.push_back({{"from", l.from}, {"to", l.to}, {"reactance", l.reactance}, {"limit", l.limit}});
  json gens = json::array();
  for (const auto& g : s.grid.generators) {
    json o = {{"name", g.name}, {"bus", g.bus}, {"pmin", series_json(g.pmin)}, {"pmax", series_json(g.pmax)},
              {"cost", series_json(g.cost)}};
    if (!g.ramp_up.empty()) o["ramp_up"] = series_json(g.ramp_up);
    if (!g.ramp_down.empty()) o["ramp_down"] = series_json(g.ramp_down);
    if (g.initial_output) o["initial_output"] = *g.initial_output;
    gens.push_back(o);
  }
  json loads = json::array();
  for (const auto& l : s.grid.loads) {
    json o = {{"bus", l.bus}, {"demand", series_json(l.demand)}};
    if (!l.cap.empty()) o["cap"] = series_json(l.cap);
    loads.push_back(o);
  }
  j["grid"] = {{"buses", s.grid.buses}, {"lines", lines}, {"generators", gens}, {"loads", loads}};
  if (s.grid.reference_bus >= 0) j["grid"]["reference_bus"] = s.grid.reference_bus;
  json cp = json::array();
  for (const auto& [bus, node] : s.coupling.station_of_bus) cp.push_back({{"bus", bus}, {"station", node}});
  j["coupling"] = cp;
  j["sim"] = {{"horizon", s.sim.horizon},
              {"resolve_every", s.sim.resolve_every},
              {"end_charge_threshold", s.sim.end_charge_threshold},
              {"drop_penalty", s.sim.drop_penalty},
              {"shed_penalty", s.sim.shed_penalty},
              {"noise_transport", s.sim.noise_transport},
              {"noise_power", s.sim.noise_power},
              {"bpr_a", s.sim.bpr_a},
              {"bpr_b", s.sim.bpr_b},
              {"seed", s.sim.seed}};
  return j.dump(2) + "\n";
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(buf.str());
}

void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << scenario_to_json(s);
}

int kwh_to_levels(double kwh, double level_energy) {
  if (!(level_energy > 0)) throw ValidationError("level energy must be positive");
  return static_cast<int>(std::floor(kwh * 3.6e6 / level_energy + 0.5));
}

int seconds_to_steps(double seconds, double step_seconds) {
  if (!(step_seconds > 0)) throw ValidationError("step length must be positive");
  // Guard against 1799.9999 style noise turning an exact multiple into one more step.
  const double q = seconds / step_seconds;
  const double r = std::round(q);
  return static_cast<int>(std::abs(q - r) < 1e-9 ? r : std::ceil(q));
}

namespace {

// Two buses where an uncoordinated fleet overloads the line. The coordinated
// optimum fills the line exactly to its limit, so its prices there are not unique.
Scenario micro_tight() {
  Scenario s;
  s.T = 6;
  s.C = 4;
  s.step_seconds = 3600;
  s.waiting_edges = true;
  s.road.nodes = {1, 2};
  s.road.edges = {{1, 2, 8.0, 1, 1, 20.0}, {2, 1, 8.0, 1, 1, 20.0}};
  s.stations = {{1, 1, -1, 8}, {2, 1, -1, 8}};
  s.fleet.initial = {{{1, 2}, 6.0}, {{2, 2}, 6.0}};
  s.fleet.final_constraint.mode = FinalConstraint::Mode::Threshold;
  s.fleet.final_constraint.threshold = 2;
  s.fleet.level_energy = 3.6e9;  // 1 MWh per level: one charging vehicle draws 1 MW
  s.fleet.battery_wear_cost = 2.0;
  s.fleet.value_of_time = 20.0;
  s.fleet.distance_cost = 0.1;
  for (int t = 1; t <= 4; ++t) {
    s.requests.push_back({1, 2, t, 1.5});
    s.requests.push_back({2, 1, t, 2.5});
  }
  s.grid.buses = {1, 2};
  s.grid.lines = {{1, 2, 0.1, 25.0}};
  Generator cheap;
  cheap.name = "cheap";
  cheap.bus = 1;
  cheap.pmax = {100};
  cheap.cost = {10};
  Generator peaker;
  peaker.name = "peaker";
  peaker.bus = 2;
  peaker.pmax = {100};
  peaker.cost = {50};
  s.grid.generators = {cheap, peaker};
  s.grid.loads = {{1, {10}, {}}, {2, {21, 22, 23, 24, 23, 22}, {}}};
  s.grid.step_seconds = s.step_seconds;
  s.coupling.station_of_bus = {{2, 1}, {1, 2}};
  s.sim.horizon = 3;
  return s;
}

// Two buses, two nodes. Bus 2 imports over a 25 MW line; at t = 5 its demand
// alone exceeds the line and the peaker runs. Elsewhere the line keeps more
// headroom than the station can draw, and wear makes selling back to the grid
// unprofitable, so every price is set by a generator strictly inside its range.
Scenario micro() {
  Scenario s = micro_tight();
  s.fleet.battery_wear_cost = 25.0;
  s.grid.loads = {{1, {10}, {}}, {2, {14, 15, 16, 15, 28, 15}, {}}};
  return s;
}

// Shortest travel time and its charge use between every pair of road nodes.
std::map<std::pair<int, int>, std::pair<int, int>> shortest_paths(const RoadNetwork& road) {
  std::map<std::pair<int, int>, std::pair<int, int>> out;
  for (int src : road.nodes) {
    std::map<int, std::pair<int, int>> dist;
    using Item = std::tuple<int, int, int>;  // time, charge, node
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.push({0, 0, src});
    while (!pq.empty()) {
      auto [t, c, v] = pq.top();
      pq.pop();
      if (dist.count(v)) continue;
      dist[v] = {t, c};
      for (const auto& e : road.edges)
        if (e.tail == v && !dist.count(e.head)) pq.push({t + e.traversal_time, c + e.charge_cost, e.head});
    }
    for (const auto& [v, tc] : dist)
      if (v != src) out[{src, v}] = tc;
  }
  return out;
}

Scenario random_instance(const GeneratorParams& gp, std::uint64_t seed, bool ladder) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Scenario s;
  const int n = std::max(2, gp.road_nodes);
  const int nb = std::max(1, gp.buses);
  s.T = std::max(3, gp.T);
  s.C = std::max(3, gp.C);
  s.step_seconds = 3600;
  s.waiting_edges = true;
  s.fleet.level_energy = 3.6e9;
  s.fleet.battery_wear_cost = 0.5 + 2.0 * U(rng);
  s.fleet.value_of_time = 10.0 + 20.0 * U(rng);
  s.fleet.distance_cost = 0.1 + 0.1 * U(rng);
  s.fleet.final_constraint.mode = FinalConstraint::Mode::Threshold;
  s.fleet.final_constraint.threshold = 1;

  for (int v = 1; v <= n; ++v) s.road.nodes.push_back(v);
  auto add_link = [&](int a, int b) {
    for (const auto& e : s.road.edges)
      if (e.tail == a && e.head == b) return;
    const double len = 2.0 + 8.0 * U(rng);
    const int tt = U(rng) < 0.7 ? 1 : 2;
    s.road.edges.push_back({a, b, std::round(len * 10) / 10, tt, 1, 0.0});
  };
  for (int v = 1; v <= n; ++v) {
    add_link(v, v % n + 1);
    add_link(v % n + 1, v);
  }
  for (int k = 0; k < n / 2; ++k) {
    const int a = uniform_int(1, n), b = uniform_int(1, n);
    if (a != b) add_link(a, b);
  }

  // Requests only between pairs that an undisturbed vehicle can finish in time
  // with charge to spare.
  const auto sp = shortest_paths(s.road);
  std::map<int, double> origin_rate;
  const int count = std::max(1, n);
  for (int k = 0; k < count; ++k) {
    const int o = uniform_int(1, n);
    int d = uniform_int(1, n - 1);
    if (d >= o) ++d;
    const auto [tt, cc] = sp.at({o, d});
    if (cc > s.C - 1 || tt > s.T - 1) continue;
    const int latest = s.T - tt;
    const int t = uniform_int(1, std::max(1, std::min(latest, s.T - 1)));
    const double rate = std::round(gp.demand * (0.5 + U(rng)) * 4) / 4;
    if (rate <= 0) continue;
    s.requests.push_back({o, d, t, rate});
    origin_rate[o] += rate;
  }
  // Enough fully charged vehicles at every origin to serve its requests alone,
  // plus the requested fleet size spread over the network.
  for (const auto& [o, rate] : origin_rate) s.fleet.initial[{o, s.C}] += std::ceil(rate);
  for (int k = 0; k < gp.vehicles; ++k) s.fleet.initial[{uniform_int(1, n), uniform_int(2, s.C)}] += 1;
  double total_rate = 0.0;
  for (const auto& r : s.requests) total_rate += r.rate;
  for (auto& e : s.road.edges) e.capacity = std::ceil(total_rate + s.fleet.size());

  const int ns = std::min(n, nb);
  for (int k = 0; k < ns; ++k) s.stations.push_back({k + 1, 1, -1, 2 + uniform_int(0, 4)});

  for (int b = 1; b <= nb; ++b) s.grid.buses.push_back(b);
  if (ladder) {
    for (int b = 1; b < nb; ++b) s.grid.lines.push_back({b, b + 1, 0.1, 40.0 * gp.grid_margin});
  } else {
    for (int b = 2; b <= nb; ++b) s.grid.lines.push_back({uniform_int(1, b - 1), b, 0.05 + 0.2 * U(rng), 15.0 + 30.0 * U(rng)});
    if (nb >= 3) {
      const int a = uniform_int(1, nb), b = uniform_int(1, nb);
      if (a != b) s.grid.lines.push_back({std::min(a, b), std::max(a, b), 0.05 + 0.2 * U(rng), 15.0 + 30.0 * U(rng)});
    }
  }
  std::map<int, double> max_vehicle_mw;
  for (int k = 0; k < ns; ++k) max_vehicle_mw[k + 1] = s.stations[k].capacity * s.stations[k].charge_rate;
  for (int b = 1; b <= nb; ++b) {
    Series demand;
    const double base = ladder ? 15.0 : 5.0 + 20.0 * U(rng);
    for (int t = 1; t <= s.T; ++t) demand.push_back(std::round(base * (0.8 + 0.4 * U(rng)) * 10) / 10);
    Load l{b, demand, {}};
    if (ladder && max_vehicle_mw.count(b)) {
      const double peak = *std::max_element(demand.begin(), demand.end());
      l.cap = {peak + max_vehicle_mw[b] * gp.grid_margin};
    }
    s.grid.loads.push_back(l);
    // Local capacity covers local demand plus the largest possible fleet draw,
    // so dispatch is feasible even with every line out of use.
    const double peak = *std::max_element(demand.begin(), demand.end());
    Generator g;
    g.name = "g" + std::to_string(b);
    g.bus = b;
    g.pmax = {std::ceil(peak + max_vehicle_mw[b] + 5.0)};
    g.cost = {ladder ? 20.0 + 15.0 * (b - 1) : std::round(10.0 + 50.0 * U(rng))};
    s.grid.generators.push_back(g);
    if (ladder && b == 1) {
      Generator base_unit;
      base_unit.name = "base";
      base_unit.bus = 1;
      base_unit.pmax = {200};
      base_unit.cost = {8};
      s.grid.generators.push_back(base_unit);
    }
  }
  s.grid.step_seconds = s.step_seconds;
  for (int k = 0; k < ns; ++k) s.coupling.station_of_bus[k + 1] = k + 1;
  s.sim.horizon = std::min(4, s.T);
  s.sim.seed = seed;
  return s;
}

// Three-node ring with two feeder-capped station buses. Generation is a fine
// staircase of small units, so prices move by cents when load shifts, and
// night demand is low, so frozen prices reward charging all at once.
Scenario tight_feeder(const GeneratorParams& gp, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Scenario s;
  s.T = std::max(4, gp.T);
  s.C = 5;
  s.step_seconds = 3600;
  s.waiting_edges = true;
  s.road.nodes = {1, 2, 3};
  for (int v = 1; v <= 3; ++v) {
    const int w = v % 3 + 1;
    s.road.edges.push_back({v, w, 5.0, 1, 1, 60.0});
    s.road.edges.push_back({w, v, 5.0, 1, 1, 60.0});
  }
  s.stations = {{1, 1, -1, 40}, {2, 1, -1, 40}};
  s.fleet.level_energy = 3.6e9;
  s.fleet.battery_wear_cost = 2.0;
  s.fleet.value_of_time = 20.0;
  s.fleet.distance_cost = 0.1;
  s.fleet.final_constraint.mode = FinalConstraint::Mode::Threshold;
  s.fleet.final_constraint.threshold = 1;
  for (int k = 0; k < std::max(1, gp.vehicles); ++k)
    s.fleet.initial[{1 + static_cast<int>(U(rng) * 3), 2 + static_cast<int>(U(rng) * 2)}] += 1;
  for (int t = 1; t <= s.T; ++t)
    for (int o = 1; o <= 3; ++o)
      for (int d = 1; d <= 3; ++d)
        if (o != d && U(rng) < 0.6) s.requests.push_back({o, d, t, std::round(gp.demand * (0.5 + U(rng)) * 4) / 4});

  s.grid.buses = {1, 2};
  s.grid.lines = {{1, 2, 0.1, 200.0}};
  for (int k = 0; k < 40; ++k) {
    Generator g;
    g.name = "u" + std::to_string(k);
    g.bus = 1 + k % 2;
    g.pmax = {4};
    g.cost = {20.0 + 0.02 * k};
    s.grid.generators.push_back(g);
  }
  for (int b = 1; b <= 2; ++b) {
    Series demand;
    for (int t = 1; t <= s.T; ++t) {
      const double night = t <= s.T / 3 ? 0.6 : 1.0;
      demand.push_back(std::round(50.0 * night * (0.9 + 0.2 * U(rng))));
    }
    Series cap;
    for (double d : demand) cap.push_back(d + 20.0 * gp.grid_margin);
    s.grid.loads.push_back({b, demand, cap});
  }
  s.grid.step_seconds = s.step_seconds;
  s.coupling.station_of_bus = {{1, 1}, {2, 2}};
  s.sim.horizon = 4;
  s.sim.seed = seed;
  return s;
}

}  // namespace

Scenario generate_instance(const std::string& kind, const GeneratorParams& params, std::uint64_t seed) {
  if (kind == "micro") return micro();
  if (kind == "micro-tight") return micro_tight();
  if (kind == "grid-ladder") return random_instance(params, seed, true);
  if (kind == "random") return random_instance(params, seed, false);
  if (kind == "tight-feeder") return tight_feeder(params, seed);
  throw ValidationError("unknown instance kind '" + kind + "'");
}

}  // namespace pamod
