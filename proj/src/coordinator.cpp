#include "pamod/coordinator.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

#include "pamod/error.hpp"

namespace pamod {

using json = nlohmann::json;

namespace {

json series_json(const BusSeries& s) {
  json a = json::array();
  for (const auto& [key, v] : s) a.push_back(json::array({key.first, key.second, v}));
  return a;
}

BusSeries series_from(const json& a, const std::string& ptr) {
  if (!a.is_array()) throw SchemaError(ptr, "expected an array");
  BusSeries out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& e = a[i];
    const std::string at = ptr + "/" + std::to_string(i);
    if (!e.is_array() || e.size() != 3) throw SchemaError(at, "expected [bus, t, value]");
    if (!e[0].is_number_integer()) throw SchemaError(at + "/0", "bus must be an integer");
    if (!e[1].is_number_integer()) throw SchemaError(at + "/1", "t must be an integer");
    if (!e[2].is_number()) throw SchemaError(at + "/2", "value must be a number");
    const double v = e[2].get<double>();
    if (!std::isfinite(v)) throw SchemaError(at + "/2", "value must be finite");
    if (!out.emplace(std::make_pair(e[0].get<int>(), e[1].get<int>()), v).second)
      throw SchemaError(at, "duplicate (bus, t)");
  }
  return out;
}

json parse_frame(const std::string& frame) {
  json j;
  try {
    j = json::parse(frame);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("frame is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("", "frame must be an object");
  return j;
}

void expect_fields(const json& j, const std::set<std::string>& fields) {
  for (const auto& [key, v] : j.items())
    if (!fields.count(key)) throw SchemaError("/" + key, "field not allowed on the wire");
  for (const auto& f : fields)
    if (!j.contains(f)) throw SchemaError("/" + f, "missing field");
  if (!j["k"].is_number_integer() || j["k"].get<long long>() < 0) throw SchemaError("/k", "k must be a nonnegative integer");
}

using LinearExpr = std::vector<std::pair<int, double>>;

std::string key_tag(const BusTime& key) {
  return "[" + std::to_string(key.first) + "," + std::to_string(key.second) + "]";
}

// Second stage of a two-stage solve: keep the first-stage objective within a
// relative slack of its optimum and move each expression as close to its
// target as possible. Falls back to the first-stage point if this fails.
lp::LpSolution closest_within(lp::LpProblem lp, const lp::LpSolution& first, const std::map<BusTime, LinearExpr>& exprs,
                              const BusSeries& target, double slack) {
  const int tie = lp.add_row("tie", lp::Sense::LessEqual, first.objective - lp.objective_offset() + slack);
  for (int j = 0; j < lp.num_cols(); ++j)
    if (lp.cost(j) != 0.0) {
      lp.add_coefficient(tie, j, lp.cost(j));
      lp.set_cost(j, 0.0);
    }
  lp.set_objective_offset(0.0);
  for (const auto& [key, expr] : exprs) {
    const std::string tag = key_tag(key);
    const int u = lp.add_variable("u" + tag, 0.0, lp::kInf, 1.0);
    const int v = lp.add_variable("v" + tag, 0.0, lp::kInf, 1.0);
    const int r = lp.add_row("dev" + tag, lp::Sense::Equal, target.at(key));
    for (const auto& [col, coef] : expr) lp.add_coefficient(r, col, coef);
    lp.add_coefficient(r, u, -1.0);
    lp.add_coefficient(r, v, 1.0);
  }
  auto second = lp::solve(lp);
  if (second.optimal()) {
    for (int j = 0; j < lp.num_cols(); ++j) second.x[j] = std::clamp(second.x[j], lp.lower(j), lp.upper(j));
    return second;
  }
  spdlog::warn("tie-break LP {}; keeping the first-stage point", lp::to_string(second.status));
  return first;
}

void expect_keys(const BusSeries& s, const std::vector<BusTime>& coupled, const char* what) {
  bool same = s.size() == coupled.size();
  for (std::size_t i = 0; same && i < coupled.size(); ++i) same = s.count(coupled[i]) > 0;
  if (!same) throw ValidationError(std::string(what) + " does not cover exactly the coupled (bus, t) set");
}

}  // namespace

std::string encode(const ScheduleMsg& m) {
  return json{{"type", "schedule"}, {"k", m.k}, {"load", series_json(m.load)}}.dump();
}

std::string encode(const PriceMsg& m) {
  return json{{"type", "price"}, {"k", m.k}, {"price", series_json(m.price)}, {"terminate", m.terminate}}.dump();
}

std::string frame_type(const std::string& frame) {
  const auto j = parse_frame(frame);
  if (!j.contains("type") || !j["type"].is_string()) throw SchemaError("/type", "missing message type");
  const auto t = j["type"].get<std::string>();
  if (t != "schedule" && t != "price") throw SchemaError("/type", "unknown message type " + t);
  return t;
}

ScheduleMsg decode_schedule(const std::string& frame) {
  const auto j = parse_frame(frame);
  expect_fields(j, {"type", "k", "load"});
  if (j["type"] != "schedule") throw SchemaError("/type", "expected a schedule");
  ScheduleMsg m;
  m.k = j["k"].get<int>();
  m.load = series_from(j["load"], "/load");
  return m;
}

PriceMsg decode_price(const std::string& frame) {
  const auto j = parse_frame(frame);
  expect_fields(j, {"type", "k", "price", "terminate"});
  if (j["type"] != "price") throw SchemaError("/type", "expected a price");
  if (!j["terminate"].is_boolean()) throw SchemaError("/terminate", "terminate must be a boolean");
  PriceMsg m;
  m.k = j["k"].get<int>();
  m.price = series_from(j["price"], "/price");
  m.terminate = j["terminate"].get<bool>();
  return m;
}

std::vector<BusTime> coupled_set(const CouplingMap& map, int T) {
  std::vector<BusTime> out;
  for (const auto& [bus, node] : map.station_of_bus)
    for (int t = 1; t <= T; ++t) out.emplace_back(bus, t);
  return out;
}

// --- TSO ----------------------------------------------------------------

TsoAgent::TsoAgent(ExpandedGraph graph, std::vector<TripRequest> requests, FleetSpec fleet, CouplingMap map,
                   double step_seconds, int window, double tie_tolerance)
    : graph_(std::move(graph)),
      requests_(std::move(requests)),
      fleet_(std::move(fleet)),
      map_(std::move(map)),
      step_seconds_(step_seconds),
      window_(std::max(window, 1)),
      tie_tolerance_(tie_tolerance),
      coupled_(coupled_set(map_, graph_.horizon())) {
  for (const auto& st : graph_.stations())
    if (map_.bus_of_station(st.node) < 0)
      throw ValidationError("station " + std::to_string(st.node) + " is not mapped to a bus");
}

PriceTable TsoAgent::level_prices(const PriceMsg& price) const {
  expect_keys(price.price, coupled_, "price message");
  PriceTable out;
  for (const auto& [key, v] : price.price) {
    auto it = map_.station_of_bus.find(key.first);
    out.set(it->second, key.second, v * fleet_.level_energy / 3.6e9);
  }
  return out;
}

namespace {

TsoSolution average(const std::deque<TsoSolution>& h, std::size_t n, const ExpandedGraph& g, const FleetSpec& fleet) {
  TsoSolution avg = h.back();
  const double w = 1.0 / static_cast<double>(n);
  auto scale = [w](std::vector<double>& v) { for (double& x : v) x *= w; };
  auto accumulate = [](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  for (std::size_t i = h.size() - n; i + 1 < h.size(); ++i) {
    const auto& s = h[i];
    accumulate(avg.f0, s.f0);
    for (std::size_t b = 0; b < avg.fb.size(); ++b) accumulate(avg.fb[b], s.fb[b]);
    for (std::size_t r = 0; r < avg.lambda_in.size(); ++r) accumulate(avg.lambda_in[r], s.lambda_in[r]);
    for (std::size_t b = 0; b < avg.lambda_out.size(); ++b) accumulate(avg.lambda_out[b], s.lambda_out[b]);
    for (const auto& [key, v] : s.final_distribution) avg.final_distribution[key] += v;
  }
  scale(avg.f0);
  for (auto& v : avg.fb) scale(v);
  for (auto& v : avg.lambda_in) scale(v);
  for (auto& v : avg.lambda_out) scale(v);
  for (auto& [key, v] : avg.final_distribution) v *= w;
  avg.costs = cost_breakdown(avg, g, fleet, nullptr);
  return avg;
}

}  // namespace

std::optional<ScheduleMsg> TsoAgent::respond(const PriceMsg& price) {
  if (finished_) throw ValidationError("TSO: negotiation already finished");
  if (price.k != expected_k_)
    throw ValidationError("TSO: price for round " + std::to_string(price.k) + ", expected " + std::to_string(expected_k_));
  const auto prices = level_prices(price);
  ScheduleMsg out;
  out.k = price.k;
  if (price.terminate && recovering_) {
    finished_ = true;
    final_price_ = price;
    return std::nullopt;
  }
  const TsoSolution* plan = nullptr;
  if (price.terminate) {
    if (history_.empty()) throw ValidationError("TSO: terminated before any schedule was solved");
    recovering_ = true;
    recovered_ = average(history_, std::min<std::size_t>(window_, history_.size()), graph_, fleet_);
    plan = &recovered_;
  } else {
    const auto a = assemble_vrcp(graph_, requests_, fleet_, prices);
    const auto s1 = lp::solve(a.problem);
    if (!s1.optimal())
      throw lp::SolveError(s1.status, "TSO subproblem at round " + std::to_string(price.k) + ": " + s1.message);
    lp::LpSolution s = s1;
    if (!history_.empty()) {
      // Stay near the previous schedule among the near-optimal plans.
      std::map<BusTime, LinearExpr> exprs;
      for (const auto& key : coupled_) {
        auto& expr = exprs[key];
        for (bool charging : {true, false})
          for (int e : map_.edges_at(graph_, key.first, key.second, charging)) {
            const double mw = edge_load_mw(graph_.edges()[e], fleet_.level_energy, step_seconds_);
            expr.emplace_back(a.layout.f0[e], mw);
            for (const auto& b : a.layout.fb) expr.emplace_back(b[e], mw);
          }
      }
      double magnitude = 1.0;
      for (int j = 0; j < a.problem.num_cols(); ++j) magnitude += std::abs(a.problem.cost(j) * s1.x[j]);
      s = closest_within(a.problem, s1, exprs, last_load_, std::max(1e-7, tie_tolerance_) * magnitude);
    }
    history_.push_back(extract_tso_solution(s, a.layout, graph_, fleet_, &prices));
    if (static_cast<int>(history_.size()) > window_) history_.pop_front();
    plan = &history_.back();
    ++expected_k_;
  }
  const auto loads = coupling_loads(*plan, graph_, map_, fleet_.level_energy, step_seconds_);
  for (const auto& key : coupled_) {
    auto it = loads.find(key);
    out.load[key] = it == loads.end() ? 0.0 : it->second;
  }
  last_load_ = out.load;
  return out;
}

// --- ISO ----------------------------------------------------------------

IsoAgent::IsoAgent(GridModel grid, std::vector<BusTime> coupled, int T, NegotiationOptions options)
    : grid_(std::move(grid)), coupled_(std::move(coupled)), T_(T), opt_(options) {
  std::sort(coupled_.begin(), coupled_.end());
  validate_grid(grid_, T_);
  for (const auto& [bus, t] : coupled_)
    if (std::find(grid_.buses.begin(), grid_.buses.end(), bus) == grid_.buses.end() || t < 1 || t > T_)
      throw ValidationError("coupled pair outside the grid or horizon");
  if (opt_.max_iter < 1 || opt_.patience < 1 || !(opt_.tol > 0))
    throw ValidationError("negotiation options out of range");
}

PriceMsg IsoAgent::price_msg(int k, bool terminate) const {
  PriceMsg m;
  m.k = k;
  m.terminate = terminate;
  for (const auto& key : coupled_) m.price[key] = state_.lambda.at(key) + state_.mu.at(key);
  return m;
}

PriceMsg IsoAgent::open() {
  if (!state_.log.empty()) throw ValidationError("ISO: negotiation already opened");
  for (const auto& key : coupled_) state_.lambda[key] = state_.mu[key] = 0.0;
  if (opt_.warm_start) {
    DispatchOptions o;
    o.shed_penalty = opt_.shed_penalty;
    const auto a = assemble_dispatch(grid_, {}, T_, o);
    const auto s = lp::solve(a.problem);
    if (!s.optimal()) throw lp::SolveError(s.status, "ISO baseline dispatch: " + s.message);
    const double h = grid_.step_hours();
    for (const auto& key : coupled_) {
      const int b = a.layout.bus_pos.at(key.first);
      state_.lambda[key] = s.duals[a.layout.balance[b][key.second - 1]] / h;
      const int c = a.layout.cap[b][key.second - 1];
      if (c >= 0) state_.mu[key] = std::max(0.0, -s.duals[c] / h);
    }
  }
  auto m = price_msg(0, false);
  state_.log.push_back(encode(m));
  return m;
}

BusSeries IsoAgent::subproblem(const BusSeries& target) const {
  const double h = grid_.step_hours();
  DispatchOptions o;
  o.shed_penalty = opt_.shed_penalty;
  o.relaxed.insert(coupled_.begin(), coupled_.end());
  auto a = assemble_dispatch(grid_, {}, T_, o);
  auto& lp = a.problem;
  auto col = [&](const BusTime& key) { return a.layout.delivered[a.layout.bus_pos.at(key.first)][key.second - 1]; };
  for (const auto& key : coupled_) lp.add_cost(col(key), -state_.lambda.at(key) * h);
  const auto s1 = lp::solve(lp);
  if (!s1.optimal()) throw lp::SolveError(s1.status, "ISO subproblem at round " + std::to_string(state_.k) + ": " + s1.message);

  // Among the near-optimal dispatches, deliver as close to the proposal as possible.
  std::map<BusTime, LinearExpr> exprs;
  for (const auto& key : coupled_) exprs[key] = {{col(key), 1.0}};
  // Slack measured against the cost of serving the proposal, not against the
  // unconstrained first stage.
  double magnitude = 1.0;
  for (std::size_t g = 0; g < grid_.generators.size(); ++g)
    for (int t = 1; t <= T_; ++t) magnitude += std::abs(lp.cost(a.layout.p[g][t - 1]) * s1.x[a.layout.p[g][t - 1]]);
  for (const auto& key : coupled_) magnitude += std::abs(state_.lambda.at(key) * h * target.at(key));
  const auto s = closest_within(lp, s1, exprs, target, std::max(1e-7, opt_.tie_tolerance) * magnitude);
  BusSeries dl;
  for (const auto& key : coupled_) dl[key] = s.x[col(key)];
  return dl;
}

PriceMsg IsoAgent::respond(const ScheduleMsg& schedule) {
  if (state_.log.empty()) throw ValidationError("ISO: negotiation not opened");
  if (finished_) throw ValidationError("ISO: negotiation already finished");
  if (schedule.k != state_.k)
    throw ValidationError("ISO: schedule for round " + std::to_string(schedule.k) + ", expected " + std::to_string(state_.k));
  expect_keys(schedule.load, coupled_, "schedule message");
  state_.log.push_back(encode(schedule));

  BusSeries target;
  for (const auto& key : coupled_) target[key] = grid_.demand(key.first, key.second) + schedule.load.at(key);

  PriceMsg out;
  if (terminating_) {
    // Primal recovery: dispatch the averaged schedule with every row in place.
    DispatchOptions o;
    o.shed_penalty = opt_.shed_penalty;
    BusSeries extra = schedule.load;
    const auto a = assemble_dispatch(grid_, extra, T_, o);
    const auto s = lp::solve(a.problem);
    if (!s.optimal()) throw lp::SolveError(s.status, "ISO recovery dispatch: " + s.message);
    final_ = extract_lmp(s, a.layout, grid_, 3.6e9, {}).first;
    out.k = state_.k;
    out.terminate = true;
    for (const auto& key : coupled_) out.price[key] = final_.lmp.at(key);
    finished_ = true;
  } else {
    const auto dl = subproblem(target);
    BusSeries r, g;
    double norm = 0.0;
    for (const auto& key : coupled_) {
      r[key] = target.at(key) - dl.at(key);
      g[key] = target.at(key) - grid_.cap(key.first, key.second);
      norm = std::max(norm, std::abs(r[key]));
      if (std::isfinite(g[key])) norm = std::max(norm, g[key] > 0 ? g[key] : 0.0);
    }
    state_.residuals.push_back(norm);
    below_tol_ = norm <= opt_.tol ? below_tol_ + 1 : 0;
    // Nothing is coupled: the first round already is the answer.
    const bool settled = coupled_.empty() || below_tol_ >= opt_.patience;
    if (settled || state_.k + 1 >= opt_.max_iter) {
      converged_ = settled;
      terminating_ = true;
      ++state_.k;
      out = price_msg(state_.k, true);
    } else {
      if (state_.k == 0) {
        double scale = opt_.price_scale;
        if (!(scale > 0)) {
          double lo = lp::kInf, hi = -lp::kInf;
          for (const auto& gen : grid_.generators)
            for (int t = 1; t <= T_; ++t) {
              lo = std::min(lo, series_at(gen.cost, t, 0));
              hi = std::max(hi, series_at(gen.cost, t, 0));
            }
          scale = hi > lo ? hi - lo : std::max(std::abs(hi), 1.0);
          if (!std::isfinite(scale)) scale = 1.0;
        }
        state_.alpha0 = opt_.alpha0 > 0 ? opt_.alpha0 : scale / std::max(norm, opt_.tol);
      }
      state_.alpha = opt_.constant_step ? state_.alpha0 : state_.alpha0 / std::sqrt(state_.k + 1.0);
      for (const auto& key : coupled_) {
        state_.lambda[key] += state_.alpha * r[key];
        if (std::isfinite(g[key])) state_.mu[key] = std::max(0.0, state_.mu[key] + state_.alpha * g[key]);
      }
      ++state_.k;
      out = price_msg(state_.k, false);
    }
  }
  state_.log.push_back(encode(out));
  return out;
}

double negotiated_social_cost(const TsoAgent& tso, const IsoAgent& iso) {
  if (!iso.finished() || !tso.finished()) throw ValidationError("negotiation has not finished");
  const double voll = iso.options().shed_penalty.value_or(0.0);
  return tso.recovered().costs.operating(tso.fleet()) + iso.final_dispatch().generation_cost +
         voll * iso.final_dispatch().shed_energy;
}

NegotiationResult run_negotiation(TsoAgent& tso, IsoAgent& iso) {
  NegotiationResult res;
  std::string frame = encode(iso.open());
  res.transcript.push_back(frame);
  while (true) {
    const auto schedule = tso.respond(decode_price(frame));
    if (!schedule) break;
    frame = encode(*schedule);
    res.transcript.push_back(frame);
    frame = encode(iso.respond(decode_schedule(frame)));
    res.transcript.push_back(frame);
  }
  res.converged = iso.converged();
  res.iterations = static_cast<int>(iso.state().residuals.size());
  res.tso = tso.recovered();
  res.iso = iso.final_dispatch();
  res.prices = tso.final_price().price;
  res.social_cost = negotiated_social_cost(tso, iso);
  res.state = iso.state();
  res.state.best_social_cost = res.social_cost;
  if (!res.converged)
    spdlog::warn("negotiation stopped after {} rounds without meeting the residual tolerance (last {:.3g} MW)",
                 res.iterations, res.state.residuals.empty() ? 0.0 : res.state.residuals.back());
  return res;
}

std::string transcript_jsonl(const std::vector<std::string>& frames) {
  std::string out;
  for (const auto& f : frames) {
    frame_type(f);
    out += json::parse(f).dump();
    out += '\n';
  }
  return out;
}

std::vector<std::string> parse_transcript(const std::string& jsonl) {
  std::vector<std::string> out;
  std::istringstream in(jsonl);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto type = frame_type(line);
      if (type == "schedule") decode_schedule(line);
      else decode_price(line);
    } catch (const SchemaError& e) {
      throw ParseError(std::string("transcript frame: ") + e.what(), n);
    }
    out.push_back(line);
  }
  return out;
}

namespace {

std::string compare_series(const BusSeries& want, const BusSeries& got) {
  if (want.size() != got.size()) return "different (bus, t) sets";
  for (const auto& [key, v] : want) {
    auto it = got.find(key);
    if (it == got.end()) return "missing (" + std::to_string(key.first) + "," + std::to_string(key.second) + ")";
    if (std::abs(it->second - v) > 1e-9 * std::max(1.0, std::abs(v)))
      return "value at (" + std::to_string(key.first) + "," + std::to_string(key.second) + ") differs: recorded " +
             std::to_string(v) + ", recomputed " + std::to_string(it->second);
  }
  return {};
}

}  // namespace

ReplayReport replay_transcript(TsoAgent& tso, IsoAgent& iso, const std::vector<std::string>& frames) {
  ReplayReport rep;
  rep.frames = frames.size();
  auto note = [&](std::size_t i, const std::string& what) {
    rep.mismatches.push_back("frame " + std::to_string(i) + ": " + what);
  };
  if (frames.empty()) {
    note(0, "empty transcript");
    return rep;
  }
  auto check_price = [&](std::size_t i, const PriceMsg& got) {
    const auto want = decode_price(frames[i]);
    if (want.k != got.k) note(i, "round differs");
    if (want.terminate != got.terminate) note(i, "terminate flag differs");
    if (auto d = compare_series(want.price, got.price); !d.empty()) note(i, d);
  };
  try {
    check_price(0, iso.open());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto type = frame_type(frames[i]);
      if (type == "price") {
        const auto got = tso.respond(decode_price(frames[i]));
        if (i + 1 == frames.size()) {
          if (got) note(i, "recomputed a schedule after the last recorded frame");
          break;
        }
        if (!got) {
          note(i + 1, "recorded a frame after the negotiation ended");
          break;
        }
        const auto want = decode_schedule(frames[i + 1]);
        if (want.k != got->k) note(i + 1, "round differs");
        if (auto d = compare_series(want.load, got->load); !d.empty()) note(i + 1, d);
      } else {
        if (i + 1 == frames.size()) {
          note(i, "transcript ends with a schedule");
          break;
        }
        check_price(i + 1, iso.respond(decode_schedule(frames[i])));
      }
    }
  } catch (const Error& e) {
    note(rep.frames, std::string("replay aborted: ") + e.what());
  }
  return rep;
}

}  // namespace pamod
