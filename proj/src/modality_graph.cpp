#include "dagvae/modality_graph.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "dagvae/error.hpp"

namespace dagvae {

namespace {

std::map<std::string, std::size_t> index_vertices(const std::vector<std::string>& vertices) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    if (vertices[i].empty()) throw DuplicateVertexError("vertex names must be nonempty");
    if (!index.emplace(vertices[i], i).second) throw DuplicateVertexError("duplicate vertex '" + vertices[i] + "'");
  }
  return index;
}

}  // namespace

void validate(const std::vector<std::string>& vertices, const std::vector<Edge>& edges) {
  const auto index = index_vertices(vertices);
  std::vector<std::vector<std::size_t>> children(vertices.size());
  for (const auto& [from, to] : edges) {
    const auto f = index.find(from);
    const auto t = index.find(to);
    if (f == index.end() || t == index.end())
      throw DanglingEdgeError("edge " + from + " -> " + to + " references an unknown vertex");
    if (f->second == t->second) throw CycleError("self-loop on '" + from + "'");
    children[f->second].push_back(t->second);
  }
  // Iterative DFS with colors; on a back edge, report the cycle along the stack.
  enum Color { white, grey, black };
  std::vector<Color> color(vertices.size(), white);
  for (std::size_t start = 0; start < vertices.size(); ++start) {
    if (color[start] != white) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
    color[start] = grey;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      if (next < children[v].size()) {
        const std::size_t w = children[v][next++];
        if (color[w] == grey) {
          std::string cycle;
          auto it = std::find_if(stack.begin(), stack.end(), [w](const auto& e) { return e.first == w; });
          for (; it != stack.end(); ++it) cycle += vertices[it->first] + " -> ";
          throw CycleError("cycle " + cycle + vertices[w]);
        }
        if (color[w] == white) {
          color[w] = grey;
          stack.emplace_back(w, 0);
        }
      } else {
        color[v] = black;
        stack.pop_back();
      }
    }
  }
}

std::size_t TopoOrder::stage_count() const {
  return stage_of.empty() ? 0 : *std::max_element(stage_of.begin(), stage_of.end());
}

std::vector<std::vector<std::size_t>> TopoOrder::stages() const {
  std::vector<std::vector<std::size_t>> out(stage_count());
  for (std::size_t v = 0; v < stage_of.size(); ++v) out[stage_of[v] - 1].push_back(v);
  return out;
}

std::vector<std::size_t> TopoOrder::sequence() const {
  std::vector<std::size_t> out;
  for (const auto& stage : stages()) out.insert(out.end(), stage.begin(), stage.end());
  return out;
}

ModalityGraph::ModalityGraph(std::vector<std::string> vertices, std::vector<Edge> edges)
    : vertices_(std::move(vertices)), edges_(std::move(edges)) {
  validate(vertices_, edges_);
  parents_.resize(vertices_.size());
  children_.resize(vertices_.size());
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [from, to] : edges_) {
    const std::size_t f = index_of(from);
    const std::size_t t = index_of(to);
    if (!seen.emplace(f, t).second) continue;
    parents_[t].push_back(f);
    children_[f].push_back(t);
  }
  for (auto& p : parents_) std::sort(p.begin(), p.end());
  for (auto& c : children_) std::sort(c.begin(), c.end());
}

std::size_t ModalityGraph::index_of(const std::string& name) const {
  const auto it = std::find(vertices_.begin(), vertices_.end(), name);
  if (it == vertices_.end()) throw LookupError("unknown modality '" + name + "'");
  return static_cast<std::size_t>(it - vertices_.begin());
}

std::vector<std::size_t> ModalityGraph::parents(std::size_t m) const {
  if (m >= vertices_.size()) throw LookupError("vertex index out of range");
  return parents_[m];
}

std::vector<std::size_t> ModalityGraph::reach(std::size_t m, bool forward) const {
  if (m >= vertices_.size()) throw LookupError("vertex index out of range");
  std::vector<bool> seen(vertices_.size(), false);
  std::vector<std::size_t> frontier{m};
  while (!frontier.empty()) {
    const std::size_t v = frontier.back();
    frontier.pop_back();
    for (std::size_t w : forward ? children_[v] : parents_[v])
      if (!seen[w]) {
        seen[w] = true;
        frontier.push_back(w);
      }
  }
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < seen.size(); ++v)
    if (seen[v]) out.push_back(v);
  return out;
}

std::vector<std::size_t> ModalityGraph::ancestors(std::size_t m) const { return reach(m, false); }
std::vector<std::size_t> ModalityGraph::offspring(std::size_t m) const { return reach(m, true); }

std::vector<std::string> ModalityGraph::names_of(const std::vector<std::size_t>& idx) const {
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(vertices_[i]);
  return out;
}

std::vector<std::string> ModalityGraph::parents(const std::string& m) const { return names_of(parents(index_of(m))); }
std::vector<std::string> ModalityGraph::ancestors(const std::string& m) const {
  return names_of(ancestors(index_of(m)));
}
std::vector<std::string> ModalityGraph::offspring(const std::string& m) const {
  return names_of(offspring(index_of(m)));
}

TopoOrder ModalityGraph::topo_stages() const {
  // Longest-path depth: stage(m) = 1 + max stage over parents.
  TopoOrder order;
  order.stage_of.assign(vertices_.size(), 0);
  std::vector<std::size_t> pending(vertices_.size());
  for (std::size_t v = 0; v < vertices_.size(); ++v) pending[v] = parents_[v].size();
  std::vector<std::size_t> ready;
  for (std::size_t v = 0; v < vertices_.size(); ++v)
    if (pending[v] == 0) {
      order.stage_of[v] = 1;
      ready.push_back(v);
    }
  while (!ready.empty()) {
    const std::size_t v = ready.back();
    ready.pop_back();
    for (std::size_t w : children_[v]) {
      order.stage_of[w] = std::max(order.stage_of[w], order.stage_of[v] + 1);
      if (--pending[w] == 0) ready.push_back(w);
    }
  }
  return order;
}

}  // namespace dagvae
