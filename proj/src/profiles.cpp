#include "mpsl/profiles.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mpsl {

namespace {

constexpr std::string_view kRoleNames[] = {"data-owner", "compute", "aggregator", "manager"};

std::size_t line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

[[noreturn]] void fail(const YAML::Node& n, const std::string& what) { throw ParseError(what, line_of(n)); }

void check_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!map.IsMap()) fail(map, std::string(where) + " must be a mapping");
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(kv.first, "unknown key '" + key + "' in " + std::string(where));
  }
}

YAML::Node require(const YAML::Node& map, const char* key, std::string_view where) {
  YAML::Node slot = map[key];
  if (!slot.IsDefined() || slot.IsNull())
    fail(map, "missing required key '" + std::string(key) + "' in " + std::string(where));
  return slot;
}

double as_double(const YAML::Node& n) {
  try {
    const auto s = n.as<std::string>();
    if (s == "inf" || s == ".inf") return std::numeric_limits<double>::infinity();
    return n.as<double>();
  } catch (const YAML::Exception&) {
    fail(n, "expected a number");
  }
}

std::uint64_t as_bytes(const YAML::Node& n) {
  const double v = as_double(n);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1.8e19) fail(n, "expected a non-negative byte count");
  return static_cast<std::uint64_t>(v);
}

std::size_t as_count(const YAML::Node& n) {
  const double v = as_double(n);
  if (!(v >= 0.0) || v != std::floor(v)) fail(n, "expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::string as_string(const YAML::Node& n) {
  if (!n.IsScalar()) fail(n, "expected a string");
  return n.as<std::string>();
}

std::vector<double> as_double_list(const YAML::Node& n) {
  if (!n.IsSequence()) fail(n, "expected a list of numbers");
  std::vector<double> out;
  for (const auto& v : n) out.push_back(as_double(v));
  return out;
}

ModelProfile parse_model(const YAML::Node& root) {
  check_keys(root, {"name", "notes", "layers", "overrides"}, "model");
  ModelProfile m;
  m.name = as_string(require(root, "name", "model"));
  if (root["notes"]) m.notes = as_string(root["notes"]);
  const YAML::Node layers = require(root, "layers", "model");
  if (!layers.IsSequence()) fail(layers, "model layers must be a list");
  for (const auto& ln : layers) {
    check_keys(ln,
               {"index", "fwd_work", "back_work", "mem_bytes", "act_out_bytes", "grad_out_bytes",
                "param_bytes"},
               "layer");
    LayerProfile l;
    l.index = m.layers.size();
    if (ln["index"] && as_count(ln["index"]) != l.index)
      fail(ln, "layer indices must be consecutive from 0");
    l.fwd_work = as_double(require(ln, "fwd_work", "layer"));
    l.back_work = as_double(require(ln, "back_work", "layer"));
    l.mem_bytes = as_bytes(require(ln, "mem_bytes", "layer"));
    l.act_out_bytes = ln["act_out_bytes"] ? as_bytes(ln["act_out_bytes"]) : 0;
    if (ln["grad_out_bytes"])
      l.grad_out_bytes = as_bytes(ln["grad_out_bytes"]);
    else
      l.grad_out_bytes = m.layers.empty() ? 0 : m.layers.back().act_out_bytes;
    l.param_bytes = ln["param_bytes"] ? as_bytes(ln["param_bytes"]) : l.mem_bytes;
    if (l.fwd_work < 0 || l.back_work < 0) fail(ln, "layer work must be >= 0");
    if (l.mem_bytes == 0) fail(ln, "layer mem_bytes must be > 0");
    m.layers.push_back(l);
  }
  if (const YAML::Node ov = root["overrides"]) {
    if (!ov.IsMap()) fail(ov, "overrides must map node class -> time table");
    for (const auto& kv : ov) {
      check_keys(kv.second, {"fwd", "back"}, "override table");
      TimeTable t{as_double_list(require(kv.second, "fwd", "override table")),
                  as_double_list(require(kv.second, "back", "override table"))};
      if (t.fwd.size() != m.layers.size() || t.back.size() != m.layers.size())
        fail(kv.second, "override table length must equal the layer count");
      m.overrides.emplace(as_string(kv.first), std::move(t));
    }
  }
  return m;
}

YAML::Node load_yaml(std::string_view text) {
  try {
    return YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.is_null() ? 0 : e.mark.line + 1);
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelProfile resolve_model(const YAML::Node& n, const LoadOptions& options) {
  if (n.IsMap()) return parse_model(n);
  const auto name = as_string(n);
  for (const auto& dir : options.artifact_dirs) {
    const auto candidate = dir / (name + ".yaml");
    if (std::filesystem::exists(candidate)) {
      auto m = load_model(candidate);
      if (m.name != name) fail(n, "model file " + candidate.string() + " declares name '" + m.name + "'");
      return m;
    }
  }
  fail(n, "model not in artifact: '" + name + "'");
}

int match_rank(std::string_view selector, const NodeSpec& n) {
  if (selector == n.id) return 0;
  if (!n.group.empty() && selector == n.group) return 1;
  if (!n.node_class.empty() && selector == n.node_class) return 2;
  if (selector == to_string(n.role)) return 3;
  return -1;
}

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::Forward ? "fwd" : "back"; }

std::string_view to_string(Role r) { return kRoleNames[static_cast<int>(r)]; }

Role parse_role(std::string_view s) {
  for (int i = 0; i < 4; ++i)
    if (kRoleNames[i] == s) return static_cast<Role>(i);
  throw ValidationError("unknown role '" + std::string(s) + "'");
}

double layer_time(const LayerProfile& layer, const NodeSpec& node, Direction dir) {
  return (dir == Direction::Forward ? layer.fwd_work : layer.back_work) / node.speed;
}

double ModelProfile::layer_time(std::size_t index, const NodeSpec& node, Direction dir) const {
  if (!node.node_class.empty()) {
    if (auto it = overrides.find(node.node_class); it != overrides.end())
      return dir == Direction::Forward ? it->second.fwd[index] : it->second.back[index];
  }
  return mpsl::layer_time(layers[index], node, dir);
}

std::vector<const NodeSpec*> Scenario::owners() const {
  std::vector<const NodeSpec*> out;
  for (const auto& n : nodes)
    if (n.role == Role::DataOwner) out.push_back(&n);
  return out;
}

std::vector<const NodeSpec*> Scenario::compute_nodes() const {
  std::vector<const NodeSpec*> out;
  for (const auto& n : nodes)
    if (n.role == Role::Compute) out.push_back(&n);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return out;
}

const NodeSpec& Scenario::aggregator() const {
  for (const auto& n : nodes)
    if (n.role == Role::Aggregator) return n;
  throw ValidationError("scenario has no aggregator");
}

const NodeSpec& Scenario::manager() const {
  for (const auto& n : nodes)
    if (n.role == Role::Manager) return n;
  throw ValidationError("scenario has no manager");
}

const NodeSpec* Scenario::find_node(std::string_view id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

const NodeSpec& Scenario::node(std::string_view id) const {
  if (auto* n = find_node(id)) return *n;
  throw ValidationError("unknown node '" + std::string(id) + "'");
}

std::optional<double> Scenario::find_link(const NodeSpec& a, const NodeSpec& b) const {
  int best = std::numeric_limits<int>::max();
  std::optional<double> bw;
  for (const auto& l : links) {
    for (int flip = 0; flip < 2; ++flip) {
      const auto& x = flip ? l.b : l.a;
      const auto& y = flip ? l.a : l.b;
      const int ra = match_rank(x, a);
      const int rb = match_rank(y, b);
      if (ra < 0 || rb < 0) continue;
      if (ra + rb < best) {
        best = ra + rb;
        bw = l.bandwidth_bytes_per_s;
      }
    }
  }
  return bw;
}

double Scenario::bandwidth(const NodeSpec& a, const NodeSpec& b) const {
  if (auto bw = find_link(a, b)) return *bw;
  if (default_bandwidth > 0.0) return default_bandwidth;
  throw ValidationError("missing link between '" + a.id + "' and '" + b.id + "'");
}

double Scenario::bandwidth(std::string_view a, std::string_view b) const {
  return bandwidth(node(a), node(b));
}

std::uint64_t Scenario::part_mem(Segment seg) const {
  std::uint64_t sum = 0;
  for (std::size_t j = seg.start; j <= seg.end; ++j) sum += model.layers[j].mem_bytes;
  return sum;
}

PartStats part_stats(const Scenario& scenario, Segment segment, const NodeSpec& node) {
  const auto& layers = scenario.model.layers;
  if (segment.start > segment.end || segment.end >= layers.size())
    throw ValidationError("segment [" + std::to_string(segment.start) + ", " +
                          std::to_string(segment.end) + "] out of range");
  PartStats s;
  for (std::size_t j = segment.start; j <= segment.end; ++j) {
    s.fwd_s += scenario.model.layer_time(j, node, Direction::Forward);
    s.back_s += scenario.model.layer_time(j, node, Direction::Backward);
    s.mem_bytes += layers[j].mem_bytes;
    s.param_bytes += layers[j].param_bytes;
  }
  s.act_out_bytes = layers[segment.end].act_out_bytes;
  s.grad_out_bytes = layers[segment.start].grad_out_bytes;
  return s;
}

void validate_assignment(const Scenario& sc, const SplitAssignment& a) {
  const std::size_t n = sc.compute_count();
  if (a.segments.size() != n || a.node_order.size() != n)
    throw ValidationError("assignment must have " + std::to_string(n) + " segments and nodes");
  std::size_t next = sc.first_cut + 1;
  for (const auto& seg : a.segments) {
    if (seg.start != next || seg.end < seg.start)
      throw ValidationError("assignment segments must be contiguous, non-empty and start at first_cut+1");
    next = seg.end + 1;
  }
  if (next != sc.last_cut) throw ValidationError("assignment segments must end at last_cut-1");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = a.node_order[i];
    const NodeSpec& node = sc.node(id);
    if (node.role != Role::Compute) throw ValidationError("'" + id + "' is not a compute node");
    if (!seen.insert(id).second) throw ValidationError("compute node '" + id + "' used twice");
    const std::uint64_t need = sc.K * sc.part_mem(a.segments[i]);
    if (need > node.mem_bytes)
      throw ValidationError("memory: node '" + id + "' holds " + std::to_string(node.mem_bytes) +
                            " B but segment needs K*mem = " + std::to_string(need) + " B");
  }
}

void validate(const Scenario& sc) {
  const std::size_t S = sc.num_layers();
  if (S < 3) throw ValidationError("model needs at least 3 layers");
  for (std::size_t i = 0; i < S; ++i) {
    const auto& l = sc.model.layers[i];
    if (l.index != i) throw ValidationError("layer indices must be consecutive from 0");
    if (l.fwd_work < 0 || l.back_work < 0) throw ValidationError("layer work must be >= 0");
    if (l.mem_bytes == 0) throw ValidationError("layer mem_bytes must be > 0");
  }
  for (const auto& [cls, t] : sc.model.overrides)
    if (t.fwd.size() != S || t.back.size() != S)
      throw ValidationError("override table for '" + cls + "' has wrong length");
  if (sc.first_cut >= sc.last_cut) throw ValidationError("cuts out of order");
  if (sc.last_cut > S - 1) throw ValidationError("last_cut beyond the last layer");
  if (sc.P < 3) throw ValidationError("multihop level P must be >= 3");
  if (sc.intermediate_count() < sc.compute_count())
    throw ValidationError("fewer intermediate layers than compute nodes");
  if (sc.B == 0 || sc.r == 0) throw ValidationError("B and r must be >= 1");

  std::set<std::string> ids;
  std::size_t owners = 0, compute = 0, aggregators = 0, managers = 0;
  for (const auto& n : sc.nodes) {
    if (!ids.insert(n.id).second) throw ValidationError("duplicate node id '" + n.id + "'");
    if (!(n.speed > 0.0)) throw ValidationError("node '" + n.id + "' speed must be > 0");
    if (n.mem_bytes == 0) throw ValidationError("node '" + n.id + "' mem_bytes must be > 0");
    if (n.price_per_hour < 0.0) throw ValidationError("node '" + n.id + "' price must be >= 0");
    switch (n.role) {
      case Role::DataOwner: ++owners; break;
      case Role::Compute: ++compute; break;
      case Role::Aggregator: ++aggregators; break;
      case Role::Manager: ++managers; break;
    }
  }
  if (owners == 0) throw ValidationError("scenario has no data owners");
  if (sc.K != owners)
    throw ValidationError("K = " + std::to_string(sc.K) + " but " + std::to_string(owners) +
                          " data owners are declared");
  if (compute != sc.compute_count())
    throw ValidationError("P = " + std::to_string(sc.P) + " needs " +
                          std::to_string(sc.compute_count()) + " compute nodes, found " +
                          std::to_string(compute));
  if (aggregators != 1) throw ValidationError("exactly one aggregator required");
  if (managers != 1) throw ValidationError("exactly one manager required");

  for (const auto& l : sc.links) {
    if (!(l.bandwidth_bytes_per_s > 0.0))
      throw ValidationError("link " + l.a + "<->" + l.b + " bandwidth must be > 0");
    for (const auto* sel : {&l.a, &l.b}) {
      const bool known =
          sc.classes.count(*sel) ||
          std::any_of(sc.nodes.begin(), sc.nodes.end(), [&](const NodeSpec& n) { return match_rank(*sel, n) >= 0; });
      if (!known) throw ValidationError("link endpoint '" + *sel + "' matches no node, group, class or role");
    }
  }

  const std::uint64_t owner_need = sc.part_mem(sc.first_part()) + sc.part_mem(sc.last_part());
  const auto own = sc.owners();
  const auto comp = sc.compute_nodes();
  const NodeSpec& aggr = sc.aggregator();
  for (const auto* o : own) {
    if (o->mem_bytes < owner_need)
      throw ValidationError("owner memory insufficient for M_1+M_P ('" + o->id + "')");
    for (const auto* c : comp) sc.bandwidth(*o, *c);
    sc.bandwidth(*o, aggr);
  }
  for (const auto* c : comp)
    for (const auto* d : comp)
      if (c != d) sc.bandwidth(*c, *d);

  if (sc.assignment) validate_assignment(sc, *sc.assignment);
}

ModelProfile load_model(const std::filesystem::path& path) {
  return parse_model(load_yaml(read_file(path)));
}

Scenario parse_scenario(std::string_view text, const LoadOptions& options) {
  const YAML::Node root = load_yaml(text);
  check_keys(root,
             {"name", "model", "K", "B", "r", "batch_size", "first_cut", "last_cut", "P", "rng_seed",
              "default_bandwidth", "aggregator_alpha", "epochs", "classes", "nodes", "links",
              "assignment"},
             "scenario");
  Scenario sc;
  if (root["name"]) sc.name = as_string(root["name"]);
  sc.model = resolve_model(require(root, "model", "scenario"), options);
  sc.B = as_count(require(root, "B", "scenario"));
  sc.r = as_count(require(root, "r", "scenario"));
  if (root["batch_size"]) sc.batch_size = as_count(root["batch_size"]);
  sc.first_cut = as_count(require(root, "first_cut", "scenario"));
  sc.last_cut = as_count(require(root, "last_cut", "scenario"));
  sc.P = as_count(require(root, "P", "scenario"));
  if (root["rng_seed"]) sc.rng_seed = as_count(root["rng_seed"]);
  if (root["default_bandwidth"]) sc.default_bandwidth = as_double(root["default_bandwidth"]);
  if (root["aggregator_alpha"]) sc.aggregator_alpha = as_double(root["aggregator_alpha"]);
  if (root["epochs"]) sc.epochs = as_count(root["epochs"]);

  if (const YAML::Node classes = root["classes"]) {
    if (!classes.IsMap()) fail(classes, "classes must be a mapping");
    for (const auto& kv : classes) {
      check_keys(kv.second, {"speed", "mem_bytes", "price_per_hour"}, "class");
      NodeClass c;
      c.speed = as_double(require(kv.second, "speed", "class"));
      c.mem_bytes = as_bytes(require(kv.second, "mem_bytes", "class"));
      if (kv.second["price_per_hour"]) c.price_per_hour = as_double(kv.second["price_per_hour"]);
      sc.classes.emplace(as_string(kv.first), c);
    }
  }

  const YAML::Node nodes = require(root, "nodes", "scenario");
  if (!nodes.IsSequence()) fail(nodes, "nodes must be a list");
  for (const auto& nn : nodes) {
    check_keys(nn, {"id", "role", "class", "group", "count", "speed", "mem_bytes", "price_per_hour", "listen"},
               "node");
    NodeSpec base;
    base.id = as_string(require(nn, "id", "node"));
    try {
      base.role = parse_role(as_string(require(nn, "role", "node")));
    } catch (const ValidationError& e) {
      fail(nn, e.what());
    }
    if (nn["class"]) {
      base.node_class = as_string(nn["class"]);
      auto it = sc.classes.find(base.node_class);
      if (it == sc.classes.end()) fail(nn, "unknown node class '" + base.node_class + "'");
      base.speed = it->second.speed;
      base.mem_bytes = it->second.mem_bytes;
      base.price_per_hour = it->second.price_per_hour;
    } else if (!nn["speed"] || !nn["mem_bytes"]) {
      fail(nn, "node '" + base.id + "' needs a class or explicit speed and mem_bytes");
    }
    if (nn["group"]) base.group = as_string(nn["group"]);
    if (nn["speed"]) base.speed = as_double(nn["speed"]);
    if (nn["mem_bytes"]) base.mem_bytes = as_bytes(nn["mem_bytes"]);
    if (nn["price_per_hour"]) base.price_per_hour = as_double(nn["price_per_hour"]);
    if (nn["listen"]) base.listen = as_string(nn["listen"]);
    if (nn["count"]) {
      if (nn["group"] || nn["listen"]) fail(nn, "replicated nodes cannot set group or listen");
      const std::size_t count = as_count(nn["count"]);
      for (std::size_t i = 0; i < count; ++i) {
        NodeSpec n = base;
        n.group = base.id;
        n.id = base.id + "-" + std::to_string(i);
        sc.nodes.push_back(std::move(n));
      }
    } else {
      sc.nodes.push_back(std::move(base));
    }
  }

  if (const YAML::Node links = root["links"]) {
    if (!links.IsSequence()) fail(links, "links must be a list");
    for (const auto& ln : links) {
      check_keys(ln, {"between", "bandwidth"}, "link");
      const YAML::Node between = require(ln, "between", "link");
      if (!between.IsSequence() || between.size() != 2) fail(ln, "link 'between' needs two endpoints");
      sc.links.push_back({as_string(between[0]), as_string(between[1]),
                          as_double(require(ln, "bandwidth", "link"))});
    }
  }

  if (const YAML::Node an = root["assignment"]) {
    check_keys(an, {"segments", "node_order"}, "assignment");
    SplitAssignment a;
    for (const auto& s : require(an, "segments", "assignment")) {
      if (!s.IsSequence() || s.size() != 2) fail(s, "segment must be [start, end]");
      a.segments.push_back({as_count(s[0]), as_count(s[1])});
    }
    for (const auto& id : require(an, "node_order", "assignment")) a.node_order.push_back(as_string(id));
    sc.assignment = std::move(a);
  }

  sc.K = sc.owners().size();
  if (root["K"] && as_count(root["K"]) != sc.K)
    fail(root["K"], "K = " + std::to_string(as_count(root["K"])) + " but " + std::to_string(sc.K) +
                        " data owners are declared");
  validate(sc);
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) { return load_scenario(path, {}); }

Scenario load_scenario(const std::filesystem::path& path, LoadOptions options) {
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  options.artifact_dirs.push_back(dir / "models");
  options.artifact_dirs.push_back(dir);
  return parse_scenario(read_file(path), options);
}

std::string to_yaml(const Scenario& sc) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << sc.name;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << sc.model.name;
  out << YAML::Key << "notes" << YAML::Value << sc.model.notes;
  out << YAML::Key << "layers" << YAML::Value << YAML::BeginSeq;
  for (const auto& l : sc.model.layers) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "fwd_work" << YAML::Value << l.fwd_work;
    out << YAML::Key << "back_work" << YAML::Value << l.back_work;
    out << YAML::Key << "mem_bytes" << YAML::Value << l.mem_bytes;
    out << YAML::Key << "act_out_bytes" << YAML::Value << l.act_out_bytes;
    out << YAML::Key << "grad_out_bytes" << YAML::Value << l.grad_out_bytes;
    out << YAML::Key << "param_bytes" << YAML::Value << l.param_bytes;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  if (!sc.model.overrides.empty()) {
    out << YAML::Key << "overrides" << YAML::Value << YAML::BeginMap;
    for (const auto& [cls, t] : sc.model.overrides) {
      out << YAML::Key << cls << YAML::Value << YAML::BeginMap;
      out << YAML::Key << "fwd" << YAML::Value << YAML::Flow << t.fwd;
      out << YAML::Key << "back" << YAML::Value << YAML::Flow << t.back;
      out << YAML::EndMap;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  out << YAML::Key << "K" << YAML::Value << sc.K;
  out << YAML::Key << "B" << YAML::Value << sc.B;
  out << YAML::Key << "r" << YAML::Value << sc.r;
  out << YAML::Key << "batch_size" << YAML::Value << sc.batch_size;
  out << YAML::Key << "first_cut" << YAML::Value << sc.first_cut;
  out << YAML::Key << "last_cut" << YAML::Value << sc.last_cut;
  out << YAML::Key << "P" << YAML::Value << sc.P;
  out << YAML::Key << "rng_seed" << YAML::Value << sc.rng_seed;
  out << YAML::Key << "default_bandwidth" << YAML::Value << sc.default_bandwidth;
  out << YAML::Key << "aggregator_alpha" << YAML::Value << sc.aggregator_alpha;
  out << YAML::Key << "epochs" << YAML::Value << sc.epochs;
  if (!sc.classes.empty()) {
    out << YAML::Key << "classes" << YAML::Value << YAML::BeginMap;
    for (const auto& [name, c] : sc.classes) {
      out << YAML::Key << name << YAML::Value << YAML::Flow << YAML::BeginMap;
      out << YAML::Key << "speed" << YAML::Value << c.speed;
      out << YAML::Key << "mem_bytes" << YAML::Value << c.mem_bytes;
      out << YAML::Key << "price_per_hour" << YAML::Value << c.price_per_hour;
      out << YAML::EndMap;
    }
    out << YAML::EndMap;
  }
  out << YAML::Key << "nodes" << YAML::Value << YAML::BeginSeq;
  for (const auto& n : sc.nodes) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << n.id;
    out << YAML::Key << "role" << YAML::Value << std::string(to_string(n.role));
    if (!n.node_class.empty()) out << YAML::Key << "class" << YAML::Value << n.node_class;
    if (!n.group.empty()) out << YAML::Key << "group" << YAML::Value << n.group;
    out << YAML::Key << "speed" << YAML::Value << n.speed;
    out << YAML::Key << "mem_bytes" << YAML::Value << n.mem_bytes;
    out << YAML::Key << "price_per_hour" << YAML::Value << n.price_per_hour;
    if (!n.listen.empty()) out << YAML::Key << "listen" << YAML::Value << n.listen;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "links" << YAML::Value << YAML::BeginSeq;
  for (const auto& l : sc.links) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "between" << YAML::Value << YAML::Flow << std::vector<std::string>{l.a, l.b};
    out << YAML::Key << "bandwidth" << YAML::Value << l.bandwidth_bytes_per_s;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  if (sc.assignment) {
    out << YAML::Key << "assignment" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "segments" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& s : sc.assignment->segments)
      out << YAML::Flow << std::vector<std::size_t>{s.start, s.end};
    out << YAML::EndSeq;
    out << YAML::Key << "node_order" << YAML::Value << YAML::Flow << sc.assignment->node_order;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void save_scenario(const Scenario& scenario, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << to_yaml(scenario);
}

Scenario with_owners(Scenario base, const std::vector<NodeGroup>& groups) {
  std::erase_if(base.nodes, [](const NodeSpec& n) { return n.role == Role::DataOwner; });
  std::vector<NodeSpec> owners;
  for (const auto& g : groups) {
    auto it = base.classes.find(g.node_class);
    if (it == base.classes.end()) throw ValidationError("unknown node class '" + g.node_class + "'");
    for (std::size_t i = 0; i < g.count; ++i) {
      NodeSpec n;
      n.id = g.id + "-" + std::to_string(i);
      n.role = Role::DataOwner;
      n.node_class = g.node_class;
      n.group = g.id;
      n.speed = it->second.speed;
      n.mem_bytes = it->second.mem_bytes;
      n.price_per_hour = it->second.price_per_hour;
      owners.push_back(std::move(n));
    }
  }
  base.nodes.insert(base.nodes.begin(), owners.begin(), owners.end());
  base.K = owners.size();
  return base;
}

Scenario with_compute(Scenario base, const std::vector<NodeGroup>& groups) {
  auto first = std::find_if(base.nodes.begin(), base.nodes.end(),
                            [](const NodeSpec& n) { return n.role == Role::Compute; });
  std::ptrdiff_t at = first == base.nodes.end() ? static_cast<std::ptrdiff_t>(base.nodes.size())
                                                : first - base.nodes.begin();
  std::erase_if(base.nodes, [](const NodeSpec& n) { return n.role == Role::Compute; });
  at = std::min<std::ptrdiff_t>(at, static_cast<std::ptrdiff_t>(base.nodes.size()));
  std::vector<NodeSpec> compute;
  for (const auto& g : groups) {
    auto it = base.classes.find(g.node_class);
    if (it == base.classes.end()) throw ValidationError("unknown node class '" + g.node_class + "'");
    for (std::size_t i = 0; i < g.count; ++i) {
      NodeSpec n;
      n.id = g.id + "-" + std::to_string(i);
      n.role = Role::Compute;
      n.node_class = g.node_class;
      n.group = g.id;
      n.speed = it->second.speed;
      n.mem_bytes = it->second.mem_bytes;
      n.price_per_hour = it->second.price_per_hour;
      compute.push_back(std::move(n));
    }
  }
  base.nodes.insert(base.nodes.begin() + at, compute.begin(), compute.end());
  base.P = compute.size() + 2;
  base.assignment.reset();
  return base;
}

}  // namespace mpsl
