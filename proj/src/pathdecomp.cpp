#include "pamod/pathdecomp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>

#include "json.hpp"
#include "pamod/error.hpp"

namespace pamod {

namespace {

std::string node_name(const ExpandedGraph& g, int n) {
  const auto& x = g.nodes()[n];
  return "(" + std::to_string(x.road) + "," + std::to_string(x.t) + "," + std::to_string(x.c) + ")";
}

double clean(double v) { return v < kCrumb ? 0.0 : v; }

}  // namespace

namespace {

struct Arc {
  int from, to;
};

Decomposition decompose(int V, const std::vector<Arc>& edges, const std::vector<std::vector<int>>& out_edges,
                        const std::vector<double>& flow, const std::map<int, double>& supply,
                        const std::map<int, double>& demand, const std::function<std::string(int)>& node_name) {
  if (flow.size() != edges.size()) throw ValidationError("flow vector does not match the graph");

  double scale = 1.0;
  for (double f : flow) scale = std::max(scale, std::abs(f));
  for (const auto& [n, v] : supply) scale = std::max(scale, std::abs(v));
  for (const auto& [n, v] : demand) scale = std::max(scale, std::abs(v));

  std::vector<double> res(edges.size()), sres(V, 0.0), dres(V, 0.0), balance(V, 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (flow[e] < -kCrumb) throw ValidationError("negative flow on edge " + std::to_string(e));
    balance[edges[e].to] += flow[e];
    balance[edges[e].from] -= flow[e];
    res[e] = clean(flow[e]);
  }
  auto load = [&](const std::map<int, double>& m, std::vector<double>& into, double sign) {
    for (const auto& [n, v] : m) {
      if (n < 0 || n >= V) throw ValidationError("supply or demand at unknown node " + std::to_string(n));
      if (v < -kCrumb) throw ValidationError("negative supply or demand at node " + node_name(n));
      balance[n] += sign * v;
      into[n] += clean(v);
    }
  };
  load(supply, sres, 1.0);
  load(demand, dres, -1.0);
  for (int n = 0; n < V; ++n)
    if (std::abs(balance[n]) > 1e-9 * scale)
      throw ValidationError("flow is not conserved at node " + node_name(n) + " (residual " +
                            std::to_string(balance[n]) + ")");

  const double eps = 1e-12 * scale;
  auto snap = [&](double& v) {
    if (v <= eps) v = 0.0;
  };
  for (int n = 0; n < V; ++n) {
    const double both = std::min(sres[n], dres[n]);
    sres[n] -= both;
    dres[n] -= both;
    snap(sres[n]);
    snap(dres[n]);
  }

  auto next_edge = [&](int u) {
    for (int e : out_edges[u])
      if (res[e] > 0.0) return e;
    return -1;
  };

  Decomposition out;
  // Cuts the cycle closing at path position k off the current trace.
  auto cut_cycle = [&](std::vector<int>& nodes, std::vector<int>& path_edges, std::vector<int>& pos, std::size_t k,
                       int closing_edge) {
    PathFlow cyc;
    cyc.nodes.assign(nodes.begin() + k, nodes.end());
    cyc.nodes.push_back(nodes[k]);
    cyc.edges.assign(path_edges.begin() + k, path_edges.end());
    cyc.edges.push_back(closing_edge);
    cyc.intensity = std::numeric_limits<double>::infinity();
    for (int e : cyc.edges) cyc.intensity = std::min(cyc.intensity, res[e]);
    for (int e : cyc.edges) {
      res[e] -= cyc.intensity;
      snap(res[e]);
    }
    out.cycles.push_back(std::move(cyc));
    for (std::size_t i = k + 1; i < nodes.size(); ++i) pos[nodes[i]] = -1;
    nodes.resize(k + 1);
    path_edges.resize(k);
  };

  std::vector<int> pos(V, -1);
  for (int s = 0; s < V; ++s) {
    while (sres[s] > 0.0) {
      std::vector<int> nodes{s}, path_edges;
      pos[s] = 0;
      int u = s;
      while (true) {
        if (u != s && dres[u] > 0.0) break;
        const int e = next_edge(u);
        if (e < 0) break;
        const int w = edges[e].to;
        if (pos[w] >= 0) {
          cut_cycle(nodes, path_edges, pos, static_cast<std::size_t>(pos[w]), e);
          u = w;
          continue;
        }
        pos[w] = static_cast<int>(nodes.size());
        nodes.push_back(w);
        path_edges.push_back(e);
        u = w;
      }
      for (int n : nodes) pos[n] = -1;
      if (path_edges.empty()) {
        sres[s] = 0.0;  // numerical leftover with nowhere to go
        break;
      }
      double amount = sres[s];
      for (int e : path_edges) amount = std::min(amount, res[e]);
      if (dres[u] > 0.0) amount = std::min(amount, dres[u]);
      sres[s] -= amount;
      snap(sres[s]);
      for (int e : path_edges) {
        res[e] -= amount;
        snap(res[e]);
      }
      if (dres[u] > 0.0) {
        dres[u] -= amount;
        snap(dres[u]);
      }
      out.paths.push_back({std::move(nodes), std::move(path_edges), amount});
    }
  }

  // Whatever is left circulates.
  for (std::size_t e0 = 0; e0 < edges.size(); ++e0) {
    while (res[e0] > 0.0) {
      std::vector<int> nodes{edges[e0].from}, path_edges;
      pos[nodes[0]] = 0;
      int e = static_cast<int>(e0);
      bool closed = false;
      while (e >= 0) {
        const int w = edges[e].to;
        if (pos[w] >= 0) {
          cut_cycle(nodes, path_edges, pos, static_cast<std::size_t>(pos[w]), e);
          closed = true;
          break;
        }
        pos[w] = static_cast<int>(nodes.size());
        nodes.push_back(w);
        path_edges.push_back(e);
        e = next_edge(w);
      }
      for (int n : nodes) pos[n] = -1;
      if (!closed) {
        for (int pe : path_edges) res[pe] = 0.0;  // open chain of numerical dust
        res[e0] = 0.0;
      }
    }
  }
  return out;
}

}  // namespace

Decomposition decompose_flow(int num_nodes, const std::vector<std::pair<int, int>>& arcs,
                             const std::vector<double>& flow, const std::map<int, double>& supply,
                             const std::map<int, double>& demand) {
  std::vector<Arc> edges;
  std::vector<std::vector<int>> out(num_nodes);
  for (std::size_t e = 0; e < arcs.size(); ++e) {
    const auto [a, b] = arcs[e];
    if (a < 0 || b < 0 || a >= num_nodes || b >= num_nodes) throw ValidationError("arc with unknown endpoint");
    edges.push_back({a, b});
    out[a].push_back(static_cast<int>(e));
  }
  return decompose(num_nodes, edges, out, flow, supply, demand, [](int n) { return std::to_string(n); });
}

Decomposition decompose_flow(const ExpandedGraph& g, const std::vector<double>& flow,
                             const std::map<int, double>& supply, const std::map<int, double>& demand) {
  std::vector<Arc> edges;
  for (const auto& e : g.edges()) edges.push_back({e.from, e.to});
  std::vector<std::vector<int>> out(g.nodes().size());
  for (std::size_t n = 0; n < g.nodes().size(); ++n) out[n] = g.out_edges(static_cast<int>(n));
  return decompose(static_cast<int>(g.nodes().size()), edges, out, flow, supply, demand,
                   [&g](int n) { return node_name(g, n); });
}

std::vector<RequestRouteSet> assign_to_requests(const ExpandedGraph& g, const std::vector<PathFlow>& paths,
                                                const BundleIndex& B, int bundle) {
  std::vector<RequestRouteSet> sets;
  std::map<std::pair<int, int>, int> by_origin;
  for (int m : B.members.at(bundle)) {
    const auto& r = B.requests[m];
    if (!by_origin.emplace(std::make_pair(r.origin, r.departure_time), static_cast<int>(sets.size())).second)
      throw ValidationError("two requests of one bundle share origin and departure step");
    sets.push_back({m, r, {}, 0.0});
  }
  for (const auto& p : paths) {
    const auto& first = g.nodes()[p.nodes.front()];
    auto it = by_origin.find({first.road, first.t});
    if (it == by_origin.end())
      throw ValidationError("orphan path starting at " + node_name(g, p.nodes.front()) + " in bundle " +
                            std::to_string(B.destinations.at(bundle)));
    auto& set = sets[it->second];
    set.paths.push_back(p);
    set.total += p.intensity;
  }
  return sets;
}

std::vector<std::vector<double>> per_request_flows(const std::vector<RequestRouteSet>& sets, std::size_t E) {
  std::vector<std::vector<double>> out(sets.size(), std::vector<double>(E, 0.0));
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (const auto& p : sets[i].paths)
      for (int e : p.edges) out[i][e] += p.intensity;
  return out;
}

double request_flow_residual(const ExpandedGraph& g, const RequestRouteSet& set, const std::vector<double>& flow) {
  std::vector<double> r(g.nodes().size(), 0.0);
  double worst = 0.0;
  for (const auto& p : set.paths) {
    const auto& a = g.nodes()[p.nodes.front()];
    const auto& b = g.nodes()[p.nodes.back()];
    // departures only at the origin copy, arrivals only at the destination
    if (a.road != set.trip.origin || a.t != set.trip.departure_time || b.road != set.trip.destination)
      worst = std::max(worst, p.intensity);
    r[p.nodes.front()] += p.intensity;
    r[p.nodes.back()] -= p.intensity;
  }
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    r[g.edges()[e].to] += flow[e];
    r[g.edges()[e].from] -= flow[e];
  }
  for (double x : r) worst = std::max(worst, std::abs(x));
  return std::max(worst, std::abs(set.total - set.trip.rate));
}

RouteReport decompose_routes(const TsoSolution& tso, const FleetLayout& L, const ExpandedGraph& g,
                             const FleetSpec& fleet) {
  const auto& B = L.bundles;
  const int C = g.levels(), T = g.horizon();
  const std::size_t E = g.edges().size();
  const int D = static_cast<int>(B.destinations.size());

  struct BundleResult {
    std::vector<RequestRouteSet> sets;
    std::vector<PathFlow> cycles;
    double reconstruction = 0.0;
    double continuity = 0.0;
  };
  auto work = [&](int d) {
    std::map<int, double> supply, demand;
    for (int m : B.members[d]) {
      const auto& r = B.requests[m];
      for (int c = 1; c <= C; ++c) supply[g.node_id(r.origin, r.departure_time, c)] += tso.lambda_in[m][c - 1];
    }
    for (int t = 1; t <= T; ++t)
      for (int c = 1; c <= C; ++c)
        demand[g.node_id(B.destinations[d], t, c)] += tso.lambda_out[d][(t - 1) * C + c - 1];
    auto dec = decompose_flow(g, tso.fb[d], supply, demand);
    BundleResult br;
    br.sets = assign_to_requests(g, dec.paths, B, d);
    br.cycles = std::move(dec.cycles);
    const auto flows = per_request_flows(br.sets, E);
    std::vector<double> sum(E, 0.0);
    for (const auto& f : flows)
      for (std::size_t e = 0; e < E; ++e) sum[e] += f[e];
    for (const auto& c : br.cycles)
      for (int e : c.edges) sum[e] += c.intensity;
    for (std::size_t e = 0; e < E; ++e) br.reconstruction = std::max(br.reconstruction, std::abs(sum[e] - tso.fb[d][e]));
    for (std::size_t i = 0; i < br.sets.size(); ++i)
      br.continuity = std::max(br.continuity, request_flow_residual(g, br.sets[i], flows[i]));
    return br;
  };
  std::vector<std::future<BundleResult>> futures;
  for (int d = 0; d < D; ++d) futures.push_back(std::async(std::launch::async, work, d));

  RouteReport rep;
  for (auto& f : futures) {
    auto br = f.get();
    for (auto& s : br.sets) rep.requests.push_back(std::move(s));
    rep.cycles.push_back(std::move(br.cycles));
    rep.reconstruction_error = std::max(rep.reconstruction_error, br.reconstruction);
    rep.continuity_residual = std::max(rep.continuity_residual, br.continuity);
  }

  std::map<int, double> supply, demand;
  for (const auto& [key, n] : fleet.initial) supply[g.node_id(key.first, 1, key.second)] += n;
  for (int d = 0; d < D; ++d)
    for (int t = 1; t <= T; ++t)
      for (int c = 1; c <= C; ++c) supply[g.node_id(B.destinations[d], t, c)] += tso.lambda_out[d][(t - 1) * C + c - 1];
  for (std::size_t m = 0; m < B.requests.size(); ++m)
    for (int c = 1; c <= C; ++c)
      demand[g.node_id(B.requests[m].origin, B.requests[m].departure_time, c)] += tso.lambda_in[m][c - 1];
  for (const auto& [key, n] : tso.final_distribution) demand[g.node_id(key.first, T, key.second)] += n;
  rep.rebalancing = decompose_flow(g, tso.f0, supply, demand);
  return rep;
}

std::string route_sets_jsonl(const std::vector<RequestRouteSet>& sets, const ExpandedGraph& g) {
  std::string out;
  for (const auto& s : sets) {
    nlohmann::json j;
    j["request"] = s.request;
    j["origin"] = s.trip.origin;
    j["destination"] = s.trip.destination;
    j["departure_time"] = s.trip.departure_time;
    j["rate"] = s.trip.rate;
    j["total"] = s.total;
    j["paths"] = nlohmann::json::array();
    for (const auto& p : s.paths) {
      nlohmann::json nodes = nlohmann::json::array();
      for (int n : p.nodes) {
        const auto& x = g.nodes()[n];
        nodes.push_back({x.road, x.t, x.c});
      }
      j["paths"].push_back({{"intensity", p.intensity}, {"nodes", nodes}});
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace pamod
