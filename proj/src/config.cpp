#include "plora/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "plora/errors.hpp"

namespace plora {

std::string to_string(HeterogeneityKind k) {
    switch (k) {
        case HeterogeneityKind::iid: return "iid";
        case HeterogeneityKind::dirichlet: return "dirichlet";
        case HeterogeneityKind::pathological: return "pathological";
    }
    return "?";
}

HeterogeneityKind parse_heterogeneity(const std::string& s) {
    if (s == "iid") return HeterogeneityKind::iid;
    if (s == "dirichlet") return HeterogeneityKind::dirichlet;
    if (s == "pathological") return HeterogeneityKind::pathological;
    throw ConfigError("unknown partition kind '" + s + "'", "partition.kind");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    if (v.empty() || v[0] == '-' || v[0] == '+') throw ConfigError("expected a nonnegative integer, got '" + v + "'", key);
    errno = 0;
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) {
        throw ConfigError("expected a nonnegative integer, got '" + v + "'", key);
    }
    return x;
}

double parse_f64(const std::string& v, const std::string& key) {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || errno != 0 || end != v.c_str() + v.size()) {
        throw ConfigError("expected a number, got '" + v + "'", key);
    }
    return x;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected true or false, got '" + v + "'", key);
}

std::string format_f64(double x) {
    char buf[40];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

std::string format_roles(const RoleScope& r) {
    std::vector<std::string> names;
    if (r.embedding) names.emplace_back("embedding");
    if (r.hidden) names.emplace_back("hidden");
    if (r.pre_classification) names.emplace_back("pre_classification");
    if (r.classification) names.emplace_back("classification");
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i) out += (i ? "," : "") + names[i];
    return out;
}

RoleScope parse_roles(const std::string& v, const std::string& key) {
    RoleScope r{false, false, false, false};
    for (const auto& name : split_list(v)) {
        try {
            switch (parse_layer_role(name)) {
                case LayerRole::embedding: r.embedding = true; break;
                case LayerRole::hidden: r.hidden = true; break;
                case LayerRole::pre_classification: r.pre_classification = true; break;
                case LayerRole::classification: r.classification = true; break;
            }
        } catch (const ConfigError&) {
            throw ConfigError("unknown layer role '" + name + "'", key);
        }
    }
    return r;
}

struct Key {
    const char* name;  // section.key
    std::function<std::string(const ExperimentSpec&)> get;
    std::function<void(ExperimentSpec&, const std::string&, const std::string&)> set;
};

template <typename Field>
Key size_key(const char* name, Field field) {
    return {name, [field](const ExperimentSpec& s) { return std::to_string(field(const_cast<ExperimentSpec&>(s))); },
            [field](ExperimentSpec& s, const std::string& v, const std::string& k) {
                field(s) = static_cast<std::remove_reference_t<decltype(field(s))>>(parse_u64(v, k));
            }};
}

template <typename Field>
Key real_key(const char* name, Field field) {
    return {name, [field](const ExperimentSpec& s) { return format_f64(field(const_cast<ExperimentSpec&>(s))); },
            [field](ExperimentSpec& s, const std::string& v, const std::string& k) { field(s) = parse_f64(v, k); }};
}

// Wraps a ConfigError thrown by an enum parser so it names the key.
template <typename Parse>
auto keyed(Parse parse) {
    return [parse](const std::string& v, const std::string& k) {
        try {
            return parse(v);
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), k);
        }
    };
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = [] {
        std::vector<Key> t;
        // [data]
        t.push_back({"data.source", [](const ExperimentSpec& s) { return s.data.source; },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         if (v != "synth" && v != "csv") throw ConfigError("expected synth or csv", k);
                         s.data.source = v;
                     }});
        t.push_back({"data.path", [](const ExperimentSpec& s) { return s.data.path.string(); },
                     [](ExperimentSpec& s, const std::string& v, const std::string&) { s.data.path = v; }});
        t.push_back(size_key("data.classes", [](ExperimentSpec& s) -> auto& { return s.data.synth.num_classes; }));
        t.push_back(size_key("data.dims", [](ExperimentSpec& s) -> auto& { return s.data.synth.dims; }));
        t.push_back(size_key("data.samples", [](ExperimentSpec& s) -> auto& { return s.data.synth.samples; }));
        t.push_back(real_key("data.separation", [](ExperimentSpec& s) -> auto& { return s.data.synth.separation; }));
        t.push_back(real_key("data.noise", [](ExperimentSpec& s) -> auto& { return s.data.synth.noise; }));
        t.push_back(size_key("data.seed", [](ExperimentSpec& s) -> auto& { return s.data.synth.seed; }));
        t.push_back(size_key("data.mean_seed", [](ExperimentSpec& s) -> auto& { return s.data.synth.mean_seed; }));
        t.push_back(real_key("data.mean_shift", [](ExperimentSpec& s) -> auto& { return s.data.synth.mean_shift; }));
        t.push_back(real_key("data.train_fraction", [](ExperimentSpec& s) -> auto& { return s.data.train_fraction; }));
        t.push_back(size_key("data.split_seed", [](ExperimentSpec& s) -> auto& { return s.data.split_seed; }));
        // [pretrain]
        t.push_back({"pretrain.source", [](const ExperimentSpec& s) { return s.pretrain.source; },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         if (v != "synth" && v != "csv") throw ConfigError("expected synth or csv", k);
                         s.pretrain.source = v;
                     }});
        t.push_back({"pretrain.path", [](const ExperimentSpec& s) { return s.pretrain.path.string(); },
                     [](ExperimentSpec& s, const std::string& v, const std::string&) { s.pretrain.path = v; }});
        t.push_back(size_key("pretrain.samples", [](ExperimentSpec& s) -> auto& { return s.pretrain.samples; }));
        t.push_back(real_key("pretrain.mean_shift", [](ExperimentSpec& s) -> auto& { return s.pretrain.mean_shift; }));
        t.push_back(size_key("pretrain.seed", [](ExperimentSpec& s) -> auto& { return s.pretrain.seed; }));
        t.push_back(size_key("pretrain.epochs", [](ExperimentSpec& s) -> auto& { return s.pretrain.epochs; }));
        t.push_back(real_key("pretrain.lr", [](ExperimentSpec& s) -> auto& { return s.pretrain.lr; }));
        t.push_back(size_key("pretrain.batch_size", [](ExperimentSpec& s) -> auto& { return s.pretrain.batch_size; }));
        // [model]
        t.push_back(size_key("model.width", [](ExperimentSpec& s) -> auto& { return s.model.width; }));
        t.push_back(size_key("model.pre_cls_width", [](ExperimentSpec& s) -> auto& { return s.model.pre_cls_width; }));
        // [partition]
        t.push_back({"partition.kind", [](const ExperimentSpec& s) { return to_string(s.partition.kind); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.partition.kind = keyed(parse_heterogeneity)(v, k);
                     }});
        t.push_back(real_key("partition.alpha", [](ExperimentSpec& s) -> auto& { return s.partition.alpha; }));
        t.push_back(size_key("partition.shards_per_client",
                             [](ExperimentSpec& s) -> auto& { return s.partition.shards_per_client; }));
        // [federation]
        t.push_back({"federation.algorithm", [](const ExperimentSpec& s) { return to_string(s.fed.algorithm); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.fed.algorithm = keyed(parse_algorithm)(v, k);
                     }});
        t.push_back(size_key("federation.clients", [](ExperimentSpec& s) -> auto& { return s.fed.clients; }));
        t.push_back(size_key("federation.participants", [](ExperimentSpec& s) -> auto& { return s.fed.participants; }));
        t.push_back(size_key("federation.local_epochs", [](ExperimentSpec& s) -> auto& { return s.fed.local_epochs; }));
        t.push_back(size_key("federation.rounds_stage1", [](ExperimentSpec& s) -> auto& { return s.fed.rounds_stage1; }));
        t.push_back(size_key("federation.rounds_stage2", [](ExperimentSpec& s) -> auto& { return s.fed.rounds_stage2; }));
        t.push_back({"federation.aggregation", [](const ExperimentSpec& s) { return to_string(s.fed.aggregation); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.fed.aggregation = keyed(parse_aggregation)(v, k);
                     }});
        // [train]
        t.push_back(real_key("train.lr", [](ExperimentSpec& s) -> auto& { return s.fed.lr; }));
        t.push_back(size_key("train.batch_size", [](ExperimentSpec& s) -> auto& { return s.fed.batch_size; }));
        // [peft]
        t.push_back(real_key("peft.density", [](ExperimentSpec& s) -> auto& { return s.fed.density; }));
        t.push_back(size_key("peft.hidden_rank", [](ExperimentSpec& s) -> auto& { return s.fed.hidden_rank; }));
        t.push_back(size_key("peft.pre_cls_rank", [](ExperimentSpec& s) -> auto& { return s.fed.pre_cls_rank; }));
        t.push_back(real_key("peft.beta", [](ExperimentSpec& s) -> auto& { return s.fed.beta; }));
        t.push_back(size_key("peft.adapter_rank", [](ExperimentSpec& s) -> auto& { return s.fed.adapter_rank; }));
        t.push_back({"peft.lora_roles", [](const ExperimentSpec& s) { return format_roles(s.fed.lora_scope); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.fed.lora_scope = parse_roles(v, k);
                     }});
        t.push_back({"peft.mask_roles", [](const ExperimentSpec& s) { return format_roles(s.fed.mask_scope); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.fed.mask_scope = parse_roles(v, k);
                     }});
        t.push_back({"peft.stage2_init", [](const ExperimentSpec& s) { return to_string(s.fed.stage2_init); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.fed.stage2_init = keyed(parse_stage2_init)(v, k);
                     }});
        // [costs]
        t.push_back(size_key("costs.bits_per_param", [](ExperimentSpec& s) -> auto& { return s.fed.bits_per_param; }));
        t.push_back(real_key("costs.bandwidth_up", [](ExperimentSpec& s) -> auto& { return s.fed.bandwidth_up; }));
        t.push_back(real_key("costs.bandwidth_down", [](ExperimentSpec& s) -> auto& { return s.fed.bandwidth_down; }));
        t.push_back(real_key("costs.flops_rate", [](ExperimentSpec& s) -> auto& { return s.fed.flops_rate; }));
        t.push_back(size_key("costs.budget_bits", [](ExperimentSpec& s) -> auto& { return s.fed.budget_bits; }));
        // [run]
        t.push_back({"run.seeds",
                     [](const ExperimentSpec& s) {
                         std::string out;
                         for (std::size_t i = 0; i < s.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(s.seeds[i]);
                         return out;
                     },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) {
                         s.seeds.clear();
                         for (const auto& item : split_list(v)) s.seeds.push_back(parse_u64(item, k));
                     }});
        t.push_back({"run.out", [](const ExperimentSpec& s) { return s.out.string(); },
                     [](ExperimentSpec& s, const std::string& v, const std::string&) { s.out = v; }});
        t.push_back(size_key("run.eval_stride", [](ExperimentSpec& s) -> auto& { return s.fed.eval_stride; }));
        t.push_back(size_key("run.threads", [](ExperimentSpec& s) -> auto& { return s.fed.threads; }));
        t.push_back({"run.checkpoints", [](const ExperimentSpec& s) { return std::string(s.checkpoints ? "true" : "false"); },
                     [](ExperimentSpec& s, const std::string& v, const std::string& k) { s.checkpoints = parse_bool(v, k); }});
        return t;
    }();
    return table;
}

const Key& find_key(const std::string& name) {
    for (const auto& k : keys())
        if (name == k.name) return k;
    throw ConfigError("unknown key", name);
}

}  // namespace

void ExperimentSpec::validate() const {
    fed.validate();
    if (seeds.empty()) throw ConfigError("seed list must not be empty", "run.seeds");
    if (data.source == "csv") {
        if (data.path.empty()) throw ConfigError("csv source needs a path", "data.path");
        if (!std::filesystem::exists(data.path)) {
            throw ConfigError("dataset file not found: " + data.path.string(), "data.path");
        }
    } else {
        if (data.synth.samples < data.synth.num_classes) throw ConfigError("must be >= classes", "data.samples");
        if (data.synth.dims < 1) throw ConfigError("must be >= 1", "data.dims");
    }
    if (pretrain.source == "csv") {
        if (pretrain.path.empty()) throw ConfigError("csv source needs a path", "pretrain.path");
        if (!std::filesystem::exists(pretrain.path)) {
            throw ConfigError("pretraining file not found: " + pretrain.path.string(), "pretrain.path");
        }
    } else if (pretrain.samples < data.synth.num_classes) {
        throw ConfigError("must be >= classes", "pretrain.samples");
    }
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
        throw ConfigError("must lie in (0, 1)", "data.train_fraction");
    }
    if (model.width < 1 || model.pre_cls_width < 1) throw ConfigError("must be >= 1", "model.width");
    if (partition.kind == HeterogeneityKind::dirichlet && !(partition.alpha > 0.0)) {
        throw ConfigError("must be > 0", "partition.alpha");
    }
    if (partition.kind == HeterogeneityKind::pathological && partition.shards_per_client < 1) {
        throw ConfigError("must be >= 1", "partition.shards_per_client");
    }
    if (pretrain.batch_size < 1) throw ConfigError("must be >= 1", "pretrain.batch_size");
}

void apply_override(ExperimentSpec& spec, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    const std::string name = trim(assignment.substr(0, eq));
    const Key& key = find_key(name);
    key.set(spec, trim(assignment.substr(eq + 1)), name);
}

ExperimentSpec parse_config(const std::string& text) {
    ExperimentSpec spec;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string name = trim(line.substr(0, eq));
        if (name.find('.') == std::string::npos && !section.empty()) name = section + "." + name;
        find_key(name).set(spec, trim(line.substr(eq + 1)), name);
    }
    spec.validate();
    return spec;
}

ExperimentSpec load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string print_config(const ExperimentSpec& spec) {
    std::string out, section;
    for (const auto& k : keys()) {
        const std::string name = k.name;
        const auto dot = name.find('.');
        const std::string sec = name.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += name.substr(dot + 1) + " = " + k.get(spec) + "\n";
    }
    return out;
}

}  // namespace plora
