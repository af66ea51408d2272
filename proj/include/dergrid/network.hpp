#pragma once

#include <algorithm>
#include <complex>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace dergrid {

// Feeder description model. A node is a bus-phase pair; each phase is an
// independent single-phase radial circuit that only meets at the source.

struct Bus {
    std::string id;
    std::vector<Phase> phases;
    double base_voltage = 0.0;  // line-to-neutral volts
    bool is_source = false;
    bool operator==(const Bus&) const = default;
};

enum class NodeKind : std::uint8_t { internal, consumer };

struct Node {
    std::string bus_id;
    Phase phase = Phase::A;
    NodeKind kind = NodeKind::internal;
    ConsumerClass consumer_class = ConsumerClass::none;
    double peak_load = 0.0;  // kW, average daily peak
    std::size_t bus = 0;
    bool operator==(const Node&) const = default;
};

struct Line {
    std::string id;
    std::string from_bus;
    std::string to_bus;
    std::vector<Phase> phases;
    double r_ohm = 0.0;
    double x_ohm = 0.0;
    bool operator==(const Line&) const = default;
};

/// Single-phase transformer record. Multi-phase file entries expand into one
/// record per phase sharing `group`.
struct Transformer {
    std::string id;
    std::string group;
    Phase phase = Phase::A;
    std::string from_bus;
    std::string to_bus;
    std::optional<double> rated_kva;
    double r_ohm = 0.0;  // referred to the output side
    double x_ohm = 0.0;
    double voltage_ratio = 1.0;
    bool ratio_given = false;
    std::size_t input_node = 0;
    std::size_t output_node = 0;
    bool operator==(const Transformer&) const = default;
};

struct RegulatorSettings {
    std::string monitor_bus;
    double target = 1.0;
    double deadband = 0.0125;
    double tap_step = 0.00625;
    int min_tap = -16;
    int max_tap = 16;
    bool operator==(const RegulatorSettings&) const = default;
};

/// Per-phase series element in per unit.
struct Branch {
    std::size_t from_node = 0;
    std::size_t to_node = 0;
    std::complex<double> z_pu;
    double tap = 1.0;  // ideal ratio on the input side, 1 for lines
    int transformer = -1;
};

struct NetworkSummary {
    std::size_t nodes = 0;
    std::size_t consumers = 0;
    std::size_t transformers = 0;
    std::size_t buses = 0;
    std::array<std::size_t, 3> consumers_per_phase{};
    double commercial_percent = 0.0;
};

class NetworkModel {
public:
    std::string name;
    double source_voltage_pu = 1.0;
    double base_kva = 100.0;  // per-phase power base
    std::vector<Bus> buses;
    std::vector<Node> nodes;
    std::vector<Line> lines;
    std::vector<Transformer> transformers;
    std::optional<RegulatorSettings> regulator;

    // Derived topology, rebuilt by finalize().
    std::vector<Branch> branches;
    std::vector<int> parent_branch;      // per node, -1 at the source
    std::vector<std::size_t> sweep_order;  // parents before children
    std::vector<std::size_t> consumer_nodes;
    std::vector<std::size_t> source_nodes;

    std::size_t node_count() const { return nodes.size(); }
    std::size_t consumer_count() const { return consumer_nodes.size(); }
    std::size_t transformer_count() const { return transformers.size(); }

    std::optional<std::size_t> bus_index(std::string_view id) const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == id) return i;
        return std::nullopt;
    }

    std::optional<std::size_t> node_index(std::string_view bus, Phase ph) const {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].bus_id == bus && nodes[i].phase == ph) return i;
        return std::nullopt;
    }

    std::string node_label(std::size_t n) const {
        return nodes[n].bus_id + "." + phase_char(nodes[n].phase);
    }

    /// True when `upstream` lies on the path from `node` to the source.
    bool is_upstream(std::size_t upstream, std::size_t node) const {
        std::size_t cur = node;
        while (parent_branch[cur] >= 0) {
            cur = branches[static_cast<std::size_t>(parent_branch[cur])].from_node;
            if (cur == upstream) return true;
        }
        return false;
    }

    NetworkSummary summary() const {
        NetworkSummary s;
        s.nodes = nodes.size();
        s.consumers = consumer_nodes.size();
        s.transformers = transformers.size();
        s.buses = buses.size();
        std::size_t commercial = 0;
        for (auto n : consumer_nodes) {
            ++s.consumers_per_phase[static_cast<int>(nodes[n].phase)];
            if (nodes[n].consumer_class == ConsumerClass::commercial) ++commercial;
        }
        s.commercial_percent = s.consumers ? 100.0 * static_cast<double>(commercial) / static_cast<double>(s.consumers) : 0.0;
        return s;
    }

    bool operator==(const NetworkModel& o) const {
        return name == o.name && source_voltage_pu == o.source_voltage_pu && base_kva == o.base_kva &&
               buses == o.buses && nodes == o.nodes && lines == o.lines && transformers == o.transformers &&
               regulator == o.regulator;
    }

    /// Validates the element lists and derives the per-phase tree.
    void finalize();
};

namespace detail {

inline std::vector<Phase> parse_phases(const std::string& s, const std::string& element) {
    std::vector<Phase> out;
    for (char c : s) {
        Phase p;
        try {
            p = phase_from_char(c);
        } catch (const ConfigError&) {
            throw NetworkError(element, std::string("invalid phase '") + c + "'");
        }
        if (std::find(out.begin(), out.end(), p) != out.end())
            throw NetworkError(element, "duplicate phase");
        out.push_back(p);
    }
    if (out.empty()) throw NetworkError(element, "no phases");
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string phases_string(std::span<const Phase> ph) {
    std::string s;
    for (auto p : ph) s += phase_char(p);
    return s;
}

inline bool has_phase(std::span<const Phase> ph, Phase p) {
    return std::find(ph.begin(), ph.end(), p) != ph.end();
}

template <class T>
T require(const nlohmann::json& j, const char* key, const std::string& element) {
    if (!j.contains(key)) throw NetworkError(element, std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw NetworkError(element, std::string("bad value for '") + key + "'");
    }
}

}  // namespace detail

inline void NetworkModel::finalize() {
    using detail::has_phase;
    if (!(base_kva > 0.0)) throw NetworkError("meta", "base_kva must be positive");
    if (!(source_voltage_pu > 0.0)) throw NetworkError("meta", "source voltage must be positive");

    std::map<std::string, std::size_t> bus_of;
    std::size_t sources = 0;
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const auto& b = buses[i];
        if (b.id.empty()) throw NetworkError("bus", "empty identifier");
        if (!bus_of.emplace(b.id, i).second) throw NetworkError(b.id, "duplicate bus");
        if (!(b.base_voltage > 0.0)) throw NetworkError(b.id, "base voltage must be positive");
        if (b.phases.empty()) throw NetworkError(b.id, "bus has no phases");
        if (b.is_source) ++sources;
    }
    if (sources == 0) throw NetworkError("", "missing source bus");
    if (sources > 1) throw NetworkError("", "more than one source bus");

    auto bus_ref = [&](const std::string& id, const std::string& element) {
        auto it = bus_of.find(id);
        if (it == bus_of.end()) throw NetworkError(element, "dangling reference to bus '" + id + "'");
        return it->second;
    };

    // Bus-level edges: lines then transformer groups.
    struct Edge {
        std::size_t a, b;
        std::string element;
        std::vector<Phase> phases;
    };
    std::vector<Edge> edges;
    for (const auto& l : lines) {
        const auto a = bus_ref(l.from_bus, l.id), b = bus_ref(l.to_bus, l.id);
        if (a == b) throw NetworkError(l.id, "line connects a bus to itself");
        if (!(l.r_ohm >= 0.0)) throw NetworkError(l.id, "negative resistance");
        if (!std::isfinite(l.x_ohm)) throw NetworkError(l.id, "non-finite reactance");
        if (l.phases.empty()) throw NetworkError(l.id, "line has no phases");
        const double va = buses[a].base_voltage, vb = buses[b].base_voltage;
        if (std::abs(va - vb) > 1e-9 * va) throw NetworkError(l.id, "line joins buses of different base voltage");
        for (auto p : l.phases)
            if (!has_phase(buses[a].phases, p) || !has_phase(buses[b].phases, p))
                throw NetworkError(l.id, std::string("phase ") + phase_char(p) + " missing at an end bus");
        edges.push_back({a, b, l.id, l.phases});
    }
    {
        std::map<std::string, std::size_t> group_edge;
        std::map<std::string, int> ids;
        for (auto& t : transformers) {
            if (!ids.emplace(t.id, 0).second) throw NetworkError(t.id, "duplicate transformer");
            const auto a = bus_ref(t.from_bus, t.group), b = bus_ref(t.to_bus, t.group);
            if (a == b) throw NetworkError(t.group, "transformer connects a bus to itself");
            if (t.rated_kva && !(*t.rated_kva > 0.0)) throw NetworkError(t.id, "rated capacity must be positive");
            if (!(t.r_ohm >= 0.0)) throw NetworkError(t.id, "negative resistance");
            if (!t.ratio_given) t.voltage_ratio = buses[a].base_voltage / buses[b].base_voltage;
            if (!(t.voltage_ratio > 0.0)) throw NetworkError(t.id, "voltage ratio must be positive");
            if (!has_phase(buses[a].phases, t.phase) || !has_phase(buses[b].phases, t.phase))
                throw NetworkError(t.id, std::string("phase ") + phase_char(t.phase) + " missing at an end bus");
            auto it = group_edge.find(t.group);
            if (it == group_edge.end()) {
                group_edge.emplace(t.group, edges.size());
                edges.push_back({a, b, t.group, {t.phase}});
            } else {
                edges[it->second].phases.push_back(t.phase);
            }
        }
    }

    // Radiality: union-find over buses, then orientation from the source.
    std::vector<std::size_t> uf(buses.size());
    std::iota(uf.begin(), uf.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (uf[x] != x) x = uf[x] = uf[uf[x]];
        return x;
    };
    for (const auto& e : edges) {
        const auto ra = find(e.a), rb = find(e.b);
        if (ra == rb) throw NetworkError(e.element, "non-radial topology (closes a loop)");
        uf[ra] = rb;
    }
    std::size_t src_bus = 0;
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].is_source) src_bus = i;
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (find(i) != find(src_bus)) throw NetworkError(buses[i].id, "bus not connected to the source");

    std::vector<std::vector<std::size_t>> adj(buses.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
        adj[edges[k].a].push_back(k);
        adj[edges[k].b].push_back(k);
    }
    std::vector<int> parent_edge(buses.size(), -1);
    std::vector<std::size_t> bus_order{src_bus};
    std::vector<bool> seen(buses.size(), false);
    seen[src_bus] = true;
    for (std::size_t h = 0; h < bus_order.size(); ++h) {
        const auto b = bus_order[h];
        for (auto k : adj[b]) {
            const auto other = edges[k].a == b ? edges[k].b : edges[k].a;
            if (seen[other]) continue;
            seen[other] = true;
            parent_edge[other] = static_cast<int>(k);
            bus_order.push_back(other);
        }
    }

    // Transformer direction must point away from the source.
    for (const auto& t : transformers) {
        const auto out = bus_of.at(t.to_bus);
        const int pe = parent_edge[out];
        if (pe < 0 || edges[static_cast<std::size_t>(pe)].element != t.group)
            throw NetworkError(t.id, "output bus is on the source side of the input bus");
    }

    // Nodes: keep consumer attributes, rebuild the list in bus/phase order.
    std::map<std::pair<std::string, Phase>, Node> loads;
    for (const auto& n : nodes) {
        if (n.kind != NodeKind::consumer) continue;
        const auto b = bus_ref(n.bus_id, "load@" + n.bus_id);
        const std::string label = n.bus_id + "." + phase_char(n.phase);
        if (!has_phase(buses[b].phases, n.phase)) throw NetworkError(label, "load on a phase the bus lacks");
        if (n.consumer_class == ConsumerClass::none) throw NetworkError(label, "consumer node without class");
        if (!(n.peak_load > 0.0)) throw NetworkError(label, "consumer peak load must be positive");
        if (!loads.emplace(std::make_pair(n.bus_id, n.phase), n).second)
            throw NetworkError(label, "duplicate load on node");
    }
    nodes.clear();
    std::map<std::pair<std::size_t, Phase>, std::size_t> node_of;
    for (std::size_t b = 0; b < buses.size(); ++b) {
        for (auto p : buses[b].phases) {
            Node n;
            if (auto it = loads.find({buses[b].id, p}); it != loads.end()) n = it->second;
            n.bus_id = buses[b].id;
            n.phase = p;
            n.bus = b;
            node_of[{b, p}] = nodes.size();
            nodes.push_back(n);
        }
    }
    if (buses[src_bus].phases.size() < 1) throw NetworkError(buses[src_bus].id, "source without phases");

    for (auto& t : transformers) {
        t.input_node = node_of.at({bus_of.at(t.from_bus), t.phase});
        t.output_node = node_of.at({bus_of.at(t.to_bus), t.phase});
    }

    // Per-phase branches following the bus tree.
    branches.clear();
    parent_branch.assign(nodes.size(), -1);
    sweep_order.clear();
    source_nodes.clear();
    consumer_nodes.clear();
    const double sbase_va = base_kva * 1000.0;
    for (auto b : bus_order) {
        for (auto p : buses[b].phases) {
            const auto n = node_of.at({b, p});
            if (b == src_bus) {
                source_nodes.push_back(n);
                sweep_order.push_back(n);
                continue;
            }
            const auto& e = edges[static_cast<std::size_t>(parent_edge[b])];
            const auto up = e.a == b ? e.b : e.a;
            if (!has_phase(e.phases, p))
                throw NetworkError(nodes[n].bus_id + "." + phase_char(p), "phase not fed by the upstream element " + e.element);
            Branch br;
            br.from_node = node_of.at({up, p});
            br.to_node = n;
            const auto tx = std::find_if(transformers.begin(), transformers.end(),
                                         [&](const Transformer& t) { return t.group == e.element && t.phase == p; });
            if (tx != transformers.end()) {
                if (tx->from_bus != buses[up].id) throw NetworkError(tx->id, "transformer reversed");
                const double vout = buses[b].base_voltage;
                const double zbase = vout * vout / sbase_va;
                br.z_pu = {tx->r_ohm / zbase, tx->x_ohm / zbase};
                br.tap = tx->voltage_ratio * vout / buses[up].base_voltage;
                br.transformer = static_cast<int>(tx - transformers.begin());
            } else {
                const auto& l = *std::find_if(lines.begin(), lines.end(), [&](const Line& x) { return x.id == e.element; });
                const double v = buses[up].base_voltage;
                const double zbase = v * v / sbase_va;
                br.z_pu = {l.r_ohm / zbase, l.x_ohm / zbase};
            }
            parent_branch[n] = static_cast<int>(branches.size());
            branches.push_back(br);
            sweep_order.push_back(n);
        }
    }
    for (std::size_t n = 0; n < nodes.size(); ++n)
        if (nodes[n].kind == NodeKind::consumer) consumer_nodes.push_back(n);
    if (consumer_nodes.empty()) throw NetworkError("", "feeder has no loads");

    if (regulator) {
        if (!bus_of.count(regulator->monitor_bus))
            throw NetworkError("regulator", "dangling reference to bus '" + regulator->monitor_bus + "'");
        if (regulator->min_tap > 0 || regulator->max_tap < 0 || !(regulator->tap_step > 0.0) ||
            !(regulator->deadband > 0.0))
            throw NetworkError("regulator", "invalid tap range or deadband");
    }
}

/// Parses the JSON feeder document (meta.version 1).
inline NetworkModel parse_network(std::string_view text) {
    using detail::require;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw NetworkError("", std::string("malformed feeder file: ") + e.what());
    }
    if (!doc.is_object()) throw NetworkError("", "malformed feeder file: top level must be an object");
    if (!doc.contains("meta")) throw NetworkError("meta", "missing meta section");
    const auto& meta = doc["meta"];
    if (require<int>(meta, "version", "meta") != 1) throw NetworkError("meta", "unsupported version");

    NetworkModel m;
    m.name = meta.value("name", std::string{});
    m.source_voltage_pu = meta.value("source_voltage_pu", 1.0);
    m.base_kva = meta.value("base_kva", 100.0);

    for (const char* section : {"buses", "lines", "transformers", "loads"})
        if (doc.contains(section) && !doc[section].is_array())
            throw NetworkError(section, "section must be a list");

    for (const auto& jb : doc.value("buses", nlohmann::json::array())) {
        Bus b;
        b.id = require<std::string>(jb, "id", "bus");
        b.phases = detail::parse_phases(require<std::string>(jb, "phases", b.id), b.id);
        b.base_voltage = require<double>(jb, "base_voltage", b.id);
        b.is_source = jb.value("source", false);
        m.buses.push_back(std::move(b));
    }
    for (const auto& jl : doc.value("lines", nlohmann::json::array())) {
        Line l;
        l.id = require<std::string>(jl, "id", "line");
        l.from_bus = require<std::string>(jl, "from", l.id);
        l.to_bus = require<std::string>(jl, "to", l.id);
        l.phases = detail::parse_phases(require<std::string>(jl, "phases", l.id), l.id);
        l.r_ohm = require<double>(jl, "r_ohm", l.id);
        l.x_ohm = require<double>(jl, "x_ohm", l.id);
        m.lines.push_back(std::move(l));
    }
    for (const auto& jt : doc.value("transformers", nlohmann::json::array())) {
        const auto id = require<std::string>(jt, "id", "transformer");
        const auto phases = detail::parse_phases(require<std::string>(jt, "phases", id), id);
        for (auto p : phases) {
            Transformer t;
            t.group = id;
            t.id = phases.size() == 1 ? id : id + "." + phase_char(p);
            t.phase = p;
            t.from_bus = require<std::string>(jt, "from", id);
            t.to_bus = require<std::string>(jt, "to", id);
            t.r_ohm = require<double>(jt, "r_ohm", id);
            t.x_ohm = require<double>(jt, "x_ohm", id);
            if (jt.contains("ratio")) {
                t.voltage_ratio = require<double>(jt, "ratio", id);
                t.ratio_given = true;
            }
            if (jt.contains("kva")) {
                const auto& k = jt["kva"];
                if (k.is_number()) {
                    t.rated_kva = k.get<double>();
                } else if (k.is_object()) {
                    const std::string key(1, phase_char(p));
                    if (k.contains(key)) t.rated_kva = require<double>(k, key.c_str(), t.id);
                } else {
                    throw NetworkError(id, "bad value for 'kva'");
                }
            }
            m.transformers.push_back(std::move(t));
        }
    }
    for (const auto& jd : doc.value("loads", nlohmann::json::array())) {
        Node n;
        n.kind = NodeKind::consumer;
        n.bus_id = require<std::string>(jd, "bus", "load");
        const auto ph = require<std::string>(jd, "phase", "load@" + n.bus_id);
        if (ph.size() != 1) throw NetworkError("load@" + n.bus_id, "a load sits on exactly one phase");
        n.phase = detail::parse_phases(ph, "load@" + n.bus_id).front();
        try {
            n.consumer_class = consumer_class_from(require<std::string>(jd, "class", "load@" + n.bus_id));
        } catch (const ConfigError& e) {
            throw NetworkError("load@" + n.bus_id, e.what());
        }
        n.peak_load = require<double>(jd, "peak_kw", "load@" + n.bus_id);
        m.nodes.push_back(std::move(n));
    }
    if (doc.contains("regulator")) {
        const auto& jr = doc["regulator"];
        RegulatorSettings r;
        r.monitor_bus = require<std::string>(jr, "monitor_bus", "regulator");
        r.target = jr.value("target", r.target);
        r.deadband = jr.value("deadband", r.deadband);
        r.tap_step = jr.value("tap_step", r.tap_step);
        r.min_tap = jr.value("min_tap", r.min_tap);
        r.max_tap = jr.value("max_tap", r.max_tap);
        m.regulator = r;
    }
    m.finalize();
    return m;
}

inline NetworkModel load_network_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NetworkError("", "cannot open feeder file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_network(ss.str());
}

inline nlohmann::ordered_json network_to_json(const NetworkModel& m) {
    using nlohmann::ordered_json;
    ordered_json doc;
    doc["meta"] = {{"version", 1}, {"name", m.name}, {"source_voltage_pu", m.source_voltage_pu}, {"base_kva", m.base_kva}};
    ordered_json buses = ordered_json::array();
    for (const auto& b : m.buses) {
        ordered_json jb = {{"id", b.id}, {"phases", detail::phases_string(b.phases)}, {"base_voltage", b.base_voltage}};
        if (b.is_source) jb["source"] = true;
        buses.push_back(jb);
    }
    doc["buses"] = buses;
    ordered_json lines = ordered_json::array();
    for (const auto& l : m.lines)
        lines.push_back({{"id", l.id}, {"from", l.from_bus}, {"to", l.to_bus}, {"phases", detail::phases_string(l.phases)},
                         {"r_ohm", l.r_ohm}, {"x_ohm", l.x_ohm}});
    doc["lines"] = lines;
    ordered_json txs = ordered_json::array();
    for (std::size_t i = 0; i < m.transformers.size();) {
        const auto& first = m.transformers[i];
        std::size_t j = i;
        std::vector<Phase> ph;
        while (j < m.transformers.size() && m.transformers[j].group == first.group) ph.push_back(m.transformers[j++].phase);
        ordered_json jt = {{"id", first.group}, {"from", first.from_bus}, {"to", first.to_bus},
                           {"phases", detail::phases_string(ph)}, {"r_ohm", first.r_ohm}, {"x_ohm", first.x_ohm}};
        if (first.ratio_given) jt["ratio"] = first.voltage_ratio;
        bool all_rated = true, uniform_rating = true;
        for (std::size_t k = i; k < j; ++k) {
            all_rated = all_rated && m.transformers[k].rated_kva.has_value();
            uniform_rating = uniform_rating && m.transformers[k].rated_kva == first.rated_kva;
        }
        if (all_rated && uniform_rating) {
            jt["kva"] = *first.rated_kva;
        } else {
            ordered_json per = ordered_json::object();
            for (std::size_t k = i; k < j; ++k)
                if (m.transformers[k].rated_kva)
                    per[std::string(1, phase_char(m.transformers[k].phase))] = *m.transformers[k].rated_kva;
            if (!per.empty()) jt["kva"] = per;
        }
        txs.push_back(jt);
        i = j;
    }
    doc["transformers"] = txs;
    ordered_json loads = ordered_json::array();
    for (auto n : m.consumer_nodes) {
        const auto& nd = m.nodes[n];
        loads.push_back({{"bus", nd.bus_id}, {"phase", std::string(1, phase_char(nd.phase))},
                         {"class", std::string(to_string(nd.consumer_class))}, {"peak_kw", nd.peak_load}});
    }
    doc["loads"] = loads;
    if (m.regulator) {
        const auto& r = *m.regulator;
        doc["regulator"] = {{"monitor_bus", r.monitor_bus}, {"target", r.target},     {"deadband", r.deadband},
                            {"tap_step", r.tap_step},       {"min_tap", r.min_tap}, {"max_tap", r.max_tap}};
    }
    return doc;
}

inline std::string serialize_network(const NetworkModel& m) { return network_to_json(m).dump(2) + "\n"; }

/// Fills missing transformer ratings with `factor` x the baseline apparent-power peak.
inline NetworkModel derive_transformer_capacities(const NetworkModel& network, std::span<const double> baseline_peaks_kva,
                                                  double factor = 1.2) {
    if (baseline_peaks_kva.size() != network.transformers.size())
        throw NetworkError("", "baseline peak list does not match transformer count");
    NetworkModel out = network;
    for (std::size_t k = 0; k < out.transformers.size(); ++k) {
        auto& t = out.transformers[k];
        if (t.rated_kva) continue;
        const double peak = baseline_peaks_kva[k];
        if (!(peak > 0.0)) throw NetworkError(t.id, "no rating and no positive baseline peak");
        t.rated_kva = factor * peak;
    }
    return out;
}

}  // namespace dergrid
