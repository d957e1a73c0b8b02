#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace dagvae {

using Edge = std::pair<std::string, std::string>;

// Stage number (1-based) per vertex, in vertex declaration order.
struct TopoOrder {
  std::vector<std::size_t> stage_of;

  std::size_t stage_count() const;
  // Vertex indices grouped by stage; within a stage, declaration order.
  std::vector<std::vector<std::size_t>> stages() const;
  // All vertex indices sorted by (stage, declaration order).
  std::vector<std::size_t> sequence() const;
};

// Directed acyclic graph over named modalities. Immutable once constructed;
// construction validates and throws on a malformed graph.
class ModalityGraph {
 public:
  ModalityGraph() = default;
  ModalityGraph(std::vector<std::string> vertices, std::vector<Edge> edges);

  const std::vector<std::string>& vertices() const noexcept { return vertices_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t size() const noexcept { return vertices_.size(); }

  std::size_t index_of(const std::string& name) const;
  const std::string& name(std::size_t index) const { return vertices_.at(index); }

  // Direct predecessors, declaration order.
  std::vector<std::size_t> parents(std::size_t m) const;
  // All vertices with a directed walk to m, declaration order.
  std::vector<std::size_t> ancestors(std::size_t m) const;
  // All vertices reachable from m, declaration order.
  std::vector<std::size_t> offspring(std::size_t m) const;

  std::vector<std::string> parents(const std::string& m) const;
  std::vector<std::string> ancestors(const std::string& m) const;
  std::vector<std::string> offspring(const std::string& m) const;

  TopoOrder topo_stages() const;

 private:
  std::vector<std::string> names_of(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> reach(std::size_t m, bool forward) const;

  std::vector<std::string> vertices_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
};

// Throws CycleError, DuplicateVertexError or DanglingEdgeError.
void validate(const std::vector<std::string>& vertices, const std::vector<Edge>& edges);

}  // namespace dagvae
