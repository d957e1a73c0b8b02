#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "dagvae/error.hpp"
#include "dagvae/modality_graph.hpp"

using namespace dagvae;
using Names = std::vector<std::string>;

TEST_CASE("chain ATAC to RNA") {
  const ModalityGraph g({"ATAC", "RNA"}, {{"ATAC", "RNA"}});
  CHECK(g.ancestors("RNA") == Names{"ATAC"});
  CHECK(g.offspring("ATAC") == Names{"RNA"});
  CHECK(g.parents("ATAC").empty());
  CHECK(g.parents("RNA") == Names{"ATAC"});
  const TopoOrder t = g.topo_stages();
  CHECK(t.stage_of == std::vector<std::size_t>{1, 2});
  CHECK(t.stage_count() == 2);
}

TEST_CASE("two roots feeding one child share the first stage") {
  const ModalityGraph g({"ATAC", "TF", "RNA"}, {{"ATAC", "RNA"}, {"TF", "RNA"}});
  const TopoOrder t = g.topo_stages();
  CHECK(t.stage_of == std::vector<std::size_t>{1, 1, 2});
  CHECK(t.stages() == std::vector<std::vector<std::size_t>>{{0, 1}, {2}});
  CHECK(t.sequence() == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("edgeless graph") {
  const ModalityGraph g({"A", "B"}, {});
  CHECK(g.topo_stages().stage_of == std::vector<std::size_t>{1, 1});
  CHECK(g.ancestors("A").empty());
  CHECK(g.offspring("B").empty());
}

TEST_CASE("diamond ancestors") {
  const ModalityGraph g({"A", "B", "C", "D"}, {{"A", "B"}, {"A", "C"}, {"B", "D"}, {"C", "D"}});
  CHECK(g.ancestors("D") == Names{"A", "B", "C"});
  CHECK(g.offspring("A") == Names{"B", "C", "D"});
  CHECK(g.topo_stages().stage_of == std::vector<std::size_t>{1, 2, 2, 3});
}

TEST_CASE("isolated vertex") {
  const ModalityGraph g({"A", "B", "X"}, {{"A", "B"}});
  CHECK(g.parents("X").empty());
  CHECK(g.ancestors("X").empty());
  CHECK(g.offspring("X").empty());
}

TEST_CASE("stage is the longest path depth") {
  const ModalityGraph g({"C", "B", "A"}, {{"A", "B"}, {"B", "C"}, {"A", "C"}});
  CHECK(g.topo_stages().stage_of == std::vector<std::size_t>{3, 2, 1});
  CHECK(g.topo_stages().sequence() == std::vector<std::size_t>{2, 1, 0});
}

TEST_CASE("malformed graphs") {
  CHECK_THROWS_AS(ModalityGraph({"A", "B"}, {{"A", "B"}, {"B", "A"}}), CycleError);
  CHECK_THROWS_AS(ModalityGraph({"A"}, {{"A", "A"}}), CycleError);
  CHECK_THROWS_AS(ModalityGraph({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}, {"C", "A"}}), CycleError);
  CHECK_THROWS_AS(ModalityGraph({"A", "A"}, {}), DuplicateVertexError);
  CHECK_THROWS_AS(ModalityGraph({"A", ""}, {}), DuplicateVertexError);
  CHECK_THROWS_AS(ModalityGraph({"A"}, {{"A", "Z"}}), DanglingEdgeError);
  const ModalityGraph ok({"A"}, {});
  CHECK_THROWS_AS(ok.parents("Z"), LookupError);
  CHECK_THROWS_AS(ok.index_of("Z"), LookupError);
}

TEST_CASE("cycle error names the cycle") {
  try {
    ModalityGraph({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}, {"C", "B"}});
    FAIL("expected CycleError");
  } catch (const CycleError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('B') != std::string::npos);
    CHECK(msg.find('C') != std::string::npos);
  }
}

TEST_CASE("random DAGs against brute-force reachability") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("v" + std::to_string(i));
    std::vector<Edge> edges;
    std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
    std::bernoulli_distribution coin(0.35);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (coin(rng)) {
          edges.push_back({names[perm[a]], names[perm[b]]});
          adj[perm[a]][perm[b]] = true;
        }
    const ModalityGraph g(names, edges);

    // Floyd-Warshall closure.
    auto reach = adj;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (reach[i][k] && reach[k][j]) reach[i][j] = true;

    const TopoOrder t = g.topo_stages();
    for (const auto& [p, m] : edges) CHECK(t.stage_of[g.index_of(p)] < t.stage_of[g.index_of(m)]);
    for (std::size_t m = 0; m < n; ++m) {
      std::vector<std::size_t> anc, off;
      for (std::size_t i = 0; i < n; ++i) {
        if (reach[i][m]) anc.push_back(i);
        if (reach[m][i]) off.push_back(i);
      }
      CHECK(g.ancestors(m) == anc);
      CHECK(g.offspring(m) == off);
      std::size_t expected = 1;
      for (std::size_t p : g.parents(m)) expected = std::max(expected, t.stage_of[p] + 1);
      CHECK(t.stage_of[m] == expected);
    }
    CHECK(g.topo_stages().stage_of == t.stage_of);
  }
}
