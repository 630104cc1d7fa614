#include "distillkit/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dk {

std::string to_string(MapStrategy s) {
    switch (s) {
        case MapStrategy::Skip: return "Skip";
        case MapStrategy::Last: return "Last";
        case MapStrategy::EMD: return "EMD";
    }
    return "?";
}

MapStrategy map_strategy_from_string(const std::string& s) {
    if (s == "Skip") return MapStrategy::Skip;
    if (s == "Last") return MapStrategy::Last;
    if (s == "EMD") return MapStrategy::EMD;
    throw std::invalid_argument("unknown mapping strategy: " + s);
}

MappingMatrix build_mapping(MapStrategy strategy, int M, int N) {
    if (N < 1 || N > M)
        throw std::invalid_argument("build_mapping: need 1 <= student layers <= teacher layers");
    if (strategy == MapStrategy::EMD)
        throw std::invalid_argument("build_mapping: EMD weights come from the transport solver");
    MappingMatrix m;
    m.strategy = strategy;
    m.weights = Mat(M, N);
    for (int s = 1; s <= N; ++s) {
        int teacher = strategy == MapStrategy::Skip ? s * (M / N) : s + M - N;
        m.weights(teacher - 1, s - 1) = 1.0;
    }
    return m;
}

namespace {

// Min-cost max-flow with successive shortest paths; sizes here are layer
// counts, so the SPFA relabeling per augmentation is nowhere near a concern.
struct McmfGraph {
    struct Edge {
        int to;
        double cap, cost;
    };
    std::vector<Edge> edges;
    std::vector<std::vector<int>> adj;

    explicit McmfGraph(int n) : adj(n) {}

    void add(int u, int v, double cap, double cost) {
        adj[u].push_back(static_cast<int>(edges.size()));
        edges.push_back({v, cap, cost});
        adj[v].push_back(static_cast<int>(edges.size()));
        edges.push_back({u, 0.0, -cost});
    }

    // Augments until the source is exhausted; returns total cost.
    double run(int s, int t) {
        constexpr double kInf = std::numeric_limits<double>::infinity();
        constexpr double kFlowEps = 1e-15;
        double total = 0.0;
        for (;;) {
            int n = static_cast<int>(adj.size());
            std::vector<double> dist(n, kInf);
            std::vector<int> in_edge(n, -1);
            std::vector<char> in_queue(n, 0);
            std::vector<int> queue{s};
            dist[s] = 0.0;
            in_queue[s] = 1;
            for (size_t qi = 0; qi < queue.size(); ++qi) {
                int u = queue[qi];
                in_queue[u] = 0;
                for (int ei : adj[u]) {
                    const Edge& e = edges[ei];
                    if (e.cap <= kFlowEps) continue;
                    double nd = dist[u] + e.cost;
                    if (nd < dist[e.to] - 1e-15) {
                        dist[e.to] = nd;
                        in_edge[e.to] = ei;
                        if (!in_queue[e.to]) {
                            in_queue[e.to] = 1;
                            queue.push_back(e.to);
                        }
                    }
                }
            }
            if (!std::isfinite(dist[t])) break;
            double push = kInf;
            for (int v = t; v != s; v = edges[in_edge[v] ^ 1].to)
                push = std::min(push, edges[in_edge[v]].cap);
            if (push <= kFlowEps) break;
            for (int v = t; v != s; v = edges[in_edge[v] ^ 1].to) {
                edges[in_edge[v]].cap -= push;
                edges[in_edge[v] ^ 1].cap += push;
            }
            total += push * dist[t];
        }
        return total;
    }
};

}  // namespace

Mat solve_transport(const FlowProblem& p) {
    const int M = p.cost.rows, N = p.cost.cols;
    if (static_cast<int>(p.supplies.size()) != M || static_cast<int>(p.demands.size()) != N)
        throw std::invalid_argument("solve_transport: marginal length mismatch");
    if (!p.cost.all_finite()) throw std::invalid_argument("solve_transport: non-finite cost");
    for (double s : p.supplies)
        if (!(s > 0.0)) throw std::invalid_argument("solve_transport: supplies must be positive");
    for (double d : p.demands)
        if (!(d > 0.0)) throw std::invalid_argument("solve_transport: demands must be positive");
    double total_supply = std::accumulate(p.supplies.begin(), p.supplies.end(), 0.0);
    double total_demand = std::accumulate(p.demands.begin(), p.demands.end(), 0.0);
    if (std::fabs(total_supply - total_demand) > 1e-12)
        throw std::invalid_argument("solve_transport: unbalanced problem");

    // Shift costs to be nonnegative: with the total flow fixed this moves the
    // objective by a constant and leaves the optimal flow unchanged.
    double shift = std::min(0.0, *std::min_element(p.cost.a.begin(), p.cost.a.end()));

    const int src = 0, snk = M + N + 1;
    McmfGraph g(M + N + 2);
    for (int i = 0; i < M; ++i) g.add(src, 1 + i, p.supplies[i], 0.0);
    for (int j = 0; j < N; ++j) g.add(1 + M + j, snk, p.demands[j], 0.0);
    std::vector<int> cell_edge(static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            cell_edge[static_cast<size_t>(i) * N + j] = static_cast<int>(g.edges.size());
            g.add(1 + i, 1 + M + j, total_supply, p.cost(i, j) - shift);
        }
    g.run(src, snk);

    Mat flow(M, N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            const auto& e = g.edges[cell_edge[static_cast<size_t>(i) * N + j]];
            flow(i, j) = total_supply - e.cap;  // residual capacity -> shipped mass
        }
    return flow;
}

EmdResult emd_loss(const std::vector<Mat>& Hs, const std::vector<Mat>& Ht, InterKind kind,
                   const Projection& proj) {
    const int N = static_cast<int>(Hs.size()), M = static_cast<int>(Ht.size());
    if (M == 0 || N == 0) throw std::invalid_argument("emd_loss: empty state list");
    FlowProblem p;
    p.cost = Mat(M, N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) p.cost(i, j) = inter_loss_value(kind, Hs[j], Ht[i], proj);
    p.supplies.assign(M, 1.0 / M);
    p.demands.assign(N, 1.0 / N);

    EmdResult r;
    r.mapping.strategy = MapStrategy::EMD;
    r.mapping.weights = solve_transport(p);
    r.costs = p.cost;
    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < p.cost.size(); ++k) {
        num += r.mapping.weights.a[k] * p.cost.a[k];
        den += r.mapping.weights.a[k];
    }
    r.loss = num / den;
    return r;
}

Var emd_loss_graph(Tape& t, InterKind kind, const std::vector<Var>& Hs,
                   const std::vector<Var>& Ht, Var proj) {
    std::vector<Mat> hs_vals, ht_vals;
    for (Var v : Hs) hs_vals.push_back(t.val(v));
    for (Var v : Ht) ht_vals.push_back(t.val(v));
    Projection p;
    if (proj.valid()) p.w = t.val(proj);
    EmdResult plan = emd_loss(hs_vals, ht_vals, kind, p);

    double den = std::accumulate(plan.mapping.weights.a.begin(), plan.mapping.weights.a.end(), 0.0);
    Var loss = t.scalar(0.0);
    for (int i = 0; i < plan.mapping.weights.rows; ++i)
        for (int j = 0; j < plan.mapping.weights.cols; ++j) {
            double w = plan.mapping.weights(i, j);
            if (w <= 0.0) continue;
            Var d = inter_loss_graph(t, kind, Hs[j], Ht[i], proj);
            loss = t.add(loss, t.scale(d, w / den));
        }
    return loss;
}

}  // namespace dk
