#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/errors.hpp"
#include "trimediq/triplet.hpp"

namespace trimediq {

struct KgNode {
  EntityId id;
  std::string label;
  friend bool operator==(const KgNode&, const KgNode&) = default;
};

struct InsertionReport {
  std::size_t inserted = 0;
  std::size_t duplicates_skipped = 0;
  std::vector<Rejection> rejected;

  std::size_t offered() const { return inserted + duplicates_skipped + rejected.size(); }

  InsertionReport& operator+=(const InsertionReport& o) {
    inserted += o.inserted;
    duplicates_skipped += o.duplicates_skipped;
    rejected.insert(rejected.end(), o.rejected.begin(), o.rejected.end());
    return *this;
  }
};

/// Directed multigraph of validated clinical facts gathered during one consultation.
/// Nodes and edges keep insertion order; that order defines encoder node indices.
class PatientKG {
 public:
  PatientKG() = default;
  explicit PatientKG(std::string schema_version) : schema_version_(std::move(schema_version)) {}

  static std::string default_label(std::string_view id) {
    std::string label(id);
    for (auto& c : label)
      if (c == '_') c = ' ';
    return label;
  }

  /// Adds a node if absent. Returns its index.
  std::size_t add_node(const EntityId& id, std::string label = {}) {
    if (auto it = node_index_.find(id); it != node_index_.end()) return it->second;
    if (label.empty()) label = default_label(id);
    nodes_.push_back({id, std::move(label)});
    node_index_.emplace(id, nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  bool contains(const ValidatedTriplet& t) const { return edge_keys_.count(key_of(t)) > 0; }

  /// Inserts one triplet; returns false for an exact (head, relation, tail) duplicate.
  bool insert(const ValidatedTriplet& t) {
    if (!edge_keys_.insert(key_of(t)).second) return false;
    add_node(t.head);
    add_node(t.tail);
    edges_.push_back(t);
    return true;
  }

  std::size_t node_index(const EntityId& id) const { return node_index_.at(id); }
  bool has_node(const EntityId& id) const { return node_index_.count(id) > 0; }

  const std::vector<KgNode>& nodes() const noexcept { return nodes_; }
  const std::vector<ValidatedTriplet>& edges() const noexcept { return edges_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  bool empty() const noexcept { return edges_.empty() && nodes_.empty(); }
  const std::string& schema_version() const noexcept { return schema_version_; }

  friend bool operator==(const PatientKG& a, const PatientKG& b) {
    return a.schema_version_ == b.schema_version_ && a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  static std::string key_of(const ValidatedTriplet& t) {
    std::string k = t.head;
    k += '\x1f';
    k += t.relation;
    k += '\x1f';
    k += t.tail;
    return k;
  }

  std::string schema_version_ = "clinical-v1";
  std::vector<KgNode> nodes_;
  std::vector<ValidatedTriplet> edges_;
  std::unordered_map<EntityId, std::size_t> node_index_;
  std::unordered_set<std::string> edge_keys_;
};

inline InsertionReport insert_triplets(PatientKG& kg, const std::vector<ValidatedTriplet>& candidates) {
  InsertionReport report;
  for (const auto& t : candidates) {
    if (kg.insert(t))
      ++report.inserted;
    else
      ++report.duplicates_skipped;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Text form: a header line then one "(head | relation | tail)" line per edge.

inline constexpr std::string_view kKgTextHeader = "# patient knowledge graph triplets";

inline std::string format_triplet_line(const ValidatedTriplet& t) {
  return "(" + t.head + " | " + t.relation + " | " + t.tail + ")";
}

inline std::string serialize_kg_text(const PatientKG& kg) {
  std::string out(kKgTextHeader);
  out += '\n';
  for (const auto& e : kg.edges()) {
    out += format_triplet_line(e);
    out += '\n';
  }
  return out;
}

/// Splits "(a | b | c)" into its three fields; nullopt when the line has another shape.
inline std::optional<RawTriplet> split_triplet_line(std::string_view line) {
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
  if (line.size() < 2 || line.front() != '(' || line.back() != ')') return std::nullopt;
  line = line.substr(1, line.size() - 2);
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '|') {
      parts.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  parts.emplace_back(line.substr(start));
  if (parts.size() != 3) return std::nullopt;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  return RawTriplet{trim(parts[0]), trim(parts[1]), trim(parts[2])};
}

/// Inverse of serialize_kg_text. Turn provenance is not carried by the text form.
inline PatientKG parse_kg_text(const std::string& text, const RelationSchema& schema) {
  PatientKG kg(schema.version());
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.rfind("#", 0) == 0) continue;
    auto raw = split_triplet_line(line);
    if (!raw) throw ParseError("expected '(head | relation | tail)'", lineno);
    auto v = validate_triplet(*raw, schema);
    if (auto* rej = std::get_if<Rejection>(&v)) throw ParseError(rej->detail, lineno);
    kg.insert(std::get<ValidatedTriplet>(v));
  }
  return kg;
}

// ---------------------------------------------------------------------------
// Adjacency view consumed by the graph encoder.

struct GraphEdge {
  std::size_t src;
  std::size_t dst;
  std::string relation;
};

struct Graph {
  std::vector<EntityId> node_ids;
  std::vector<std::string> node_labels;
  std::vector<GraphEdge> edges;

  std::size_t node_count() const noexcept { return node_ids.size(); }
  std::size_t edge_count() const noexcept { return edges.size(); }
};

inline Graph kg_to_graph(const PatientKG& kg) {
  Graph g;
  for (const auto& n : kg.nodes()) {
    g.node_ids.push_back(n.id);
    g.node_labels.push_back(n.label);
  }
  for (const auto& e : kg.edges())
    g.edges.push_back({kg.node_index(e.head), kg.node_index(e.tail), e.relation});
  return g;
}

// ---------------------------------------------------------------------------
// JSON document form.

inline std::string export_kg_json(const PatientKG& kg) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kg.schema_version();
  doc["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : kg.nodes()) doc["nodes"].push_back({{"id", n.id}, {"label", n.label}});
  doc["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : kg.edges())
    doc["edges"].push_back({{"head", e.head},
                            {"relation", e.relation},
                            {"tail", e.tail},
                            {"turn", e.turn},
                            {"source_fact", e.source_fact}});
  return doc.dump(2) + "\n";
}

namespace detail {
inline std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& path,
                                     nlohmann::json::value_t type) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError("missing", 0, path + "." + key);
  const auto& v = obj.at(key);
  bool ok = v.type() == type ||
            (type == nlohmann::json::value_t::number_integer && v.is_number_unsigned());
  if (!ok) throw ParseError(std::string("wrong type, found ") + v.type_name(), 0, path + "." + key);
  return v;
}
}  // namespace detail

inline PatientKG import_kg_json(const std::string& text,
                                const RelationSchema& schema = RelationSchema::clinical_default()) {
  using vt = nlohmann::json::value_t;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), detail::line_of_byte(text, e.byte));
  }
  if (!doc.is_object()) throw ParseError("top level must be an object");
  PatientKG kg(detail::require(doc, "schema_version", "$", vt::string).get<std::string>());

  const auto& nodes = detail::require(doc, "nodes", "$", vt::array);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::string path = "nodes[" + std::to_string(i) + "]";
    auto id = detail::require(nodes[i], "id", path, vt::string).get<std::string>();
    auto label = detail::require(nodes[i], "label", path, vt::string).get<std::string>();
    auto canon = canonicalize_entity(id);
    if (!canon || *canon != id) throw ParseError("node id is not canonical", 0, path + ".id");
    if (kg.has_node(id)) throw ParseError("duplicate node id '" + id + "'", 0, path + ".id");
    kg.add_node(id, label.empty() ? PatientKG::default_label(id) : label);
  }

  const auto& edges = detail::require(doc, "edges", "$", vt::array);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    std::string path = "edges[" + std::to_string(i) + "]";
    ValidatedTriplet t;
    t.head = detail::require(edges[i], "head", path, vt::string).get<std::string>();
    t.relation = detail::require(edges[i], "relation", path, vt::string).get<std::string>();
    t.tail = detail::require(edges[i], "tail", path, vt::string).get<std::string>();
    t.turn = detail::require(edges[i], "turn", path, vt::number_integer).get<int>();
    t.source_fact = detail::require(edges[i], "source_fact", path, vt::string).get<std::string>();
    if (!schema.contains(t.relation))
      throw ParseError("unknown relation '" + t.relation + "'", 0, path + ".relation");
    if (t.turn < 0) throw ParseError("turn must be non-negative", 0, path + ".turn");
    if (!kg.has_node(t.head)) throw ParseError("head '" + t.head + "' is not a node", 0, path + ".head");
    if (!kg.has_node(t.tail)) throw ParseError("tail '" + t.tail + "' is not a node", 0, path + ".tail");
    if (!kg.insert(t)) throw ParseError("duplicate edge", 0, path);
  }
  return kg;
}

}  // namespace trimediq
