#include "cnapwp/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cnapwp/errors.hpp"

namespace cnapwp {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  std::istringstream in(trim(raw));
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof())
    throw ConfigError("bad value for '" + key + "': '" + raw + "'");
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& raw) {
  const auto t = trim(raw);
  if (!t.empty() && t[0] == '-') throw ConfigError("'" + key + "' must be non-negative");
  return parse_value<std::size_t>(key, t);
}

template <class T, class F>
std::vector<T> parse_list(const std::string& key, const std::string& raw, F parse) {
  std::vector<T> out;
  for (const auto& item : split_list(raw)) out.push_back(parse(key, item));
  if (out.empty()) throw ConfigError("'" + key + "' must list at least one value");
  return out;
}

std::string join(const auto& values) {
  std::ostringstream o;
  bool first = true;
  for (const auto& v : values) {
    if (!first) o << ',';
    o << v;
    first = false;
  }
  return o.str();
}

using Handler = std::function<void(const std::string&, const std::string&)>;

void apply_section(const pt::ptree& tree, const std::string& section,
                   const std::map<std::string, Handler>& handlers) {
  auto child = tree.get_child_optional(section);
  if (!child) return;
  for (const auto& [key, node] : *child) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    it->second(section + "." + key, node.data());
  }
}

}  // namespace

ConfigFile parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> known{"engine", "model", "run", "gen", "concepts", "sweep"};
  for (const auto& [name, node] : tree)
    if (!known.count(name)) throw ConfigError("unknown config section [" + name + "]");

  ConfigFile c;
  EngineConfig& e = c.engine;
  ModelConfig& m = e.model;
  const auto sz = [](std::size_t& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_size(k, v); };
  };
  const auto real = [](double& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_value<double>(k, v); };
  };

  apply_section(tree, "engine",
                {{"window_size", sz(e.window_size)},
                 {"buffer_size", sz(e.buffer_size)},
                 {"threshold", real(e.threshold)},
                 {"buckets", sz(e.buckets)},
                 {"batch_size", sz(e.batch_size)},
                 {"epochs", sz(e.epochs)},
                 {"lr", real(e.lr)},
                 {"validation_fraction", real(e.validation_fraction)},
                 {"fingerprint_cap", sz(e.fingerprint_cap)},
                 {"freeze_after", sz(e.freeze_after)},
                 {"retention_cap", sz(e.retention_cap)},
                 {"landmark_scope",
                  [&](const std::string& k, const std::string& v) {
                    const auto t = trim(v);
                    if (t == "since_start") e.landmark_scope = LandmarkScope::SinceStart;
                    else if (t == "window") e.landmark_scope = LandmarkScope::Window;
                    else throw ConfigError("bad value for '" + k + "': '" + v + "'");
                  }},
                 {"pending",
                  [&](const std::string& k, const std::string& v) {
                    const auto t = trim(v);
                    if (t == "active_task") e.pending = PendingTraining::ActiveTask;
                    else if (t == "no_eprompt") e.pending = PendingTraining::NoEPrompt;
                    else if (t == "skip") e.pending = PendingTraining::Skip;
                    else throw ConfigError("bad value for '" + k + "': '" + v + "'");
                  }}});

  apply_section(tree, "model",
                {{"max_len", sz(m.max_len)},
                 {"layers", sz(m.layers)},
                 {"heads", sz(m.heads)},
                 {"dropout", real(m.dropout)},
                 {"prompt_len", sz(m.prompt_len)},
                 {"g_layers",
                  [&](const std::string& k, const std::string& v) {
                    m.g_layers.clear();
                    for (const auto& item : split_list(v)) m.g_layers.push_back(parse_size(k, item));
                  }},
                 {"e_layers",
                  [&](const std::string& k, const std::string& v) {
                    m.e_layers.clear();
                    for (const auto& item : split_list(v)) m.e_layers.push_back(parse_size(k, item));
                  }},
                 {"mode",
                  [&](const std::string& k, const std::string& v) {
                    const auto t = trim(v);
                    if (t == "prefix") m.mode = PromptMode::Prefix;
                    else if (t == "prompt") m.mode = PromptMode::Prompt;
                    else throw ConfigError("bad value for '" + k + "': '" + v + "'");
                  }},
                 {"init_gain", real(m.init_gain)},
                 {"g_init", real(m.g_init)},
                 {"e_init", real(m.e_init)}});

  apply_section(tree, "run",
                {{"strategy",
                  [&](const std::string&, const std::string& v) {
                    c.strategy = trim(v);
                    parse_variant(c.strategy);
                  }},
                 {"seeds", [&](const std::string& k, const std::string& v) {
                    c.seeds = parse_list<std::uint64_t>(k, v, parse_value<std::uint64_t>);
                  }}});

  apply_section(tree, "gen",
                {{"segment_length", sz(c.gen.schedule.segment_length)},
                 {"order",
                  [&](const std::string&, const std::string& v) { c.gen.schedule.concept_order = split_list(v); }},
                 {"traces_per_concept", sz(c.gen.traces_per_concept)},
                 {"concurrency", sz(c.gen.concurrency)},
                 {"seed", [&](const std::string& k, const std::string& v) {
                    c.gen.seed = parse_value<std::uint64_t>(k, v);
                  }}});

  if (auto concepts = tree.get_child_optional("concepts")) {
    for (const auto& [name, node] : *concepts) {
      std::string spec = trim(node.data());
      if (spec.empty()) throw ConfigError("concept '" + name + "' has no source");
      if (spec.rfind("builtin:", 0) != 0 && !base_dir.empty() && std::filesystem::path(spec).is_relative())
        spec = (base_dir / spec).lexically_normal().string();
      c.gen.concepts[name] = spec;
    }
  }

  apply_section(tree, "sweep",
                {{"window_size",
                  [&](const std::string& k, const std::string& v) {
                    c.sweep.window_size = parse_list<std::size_t>(k, v, parse_size);
                  }},
                 {"buffer_size",
                  [&](const std::string& k, const std::string& v) {
                    c.sweep.buffer_size = parse_list<std::size_t>(k, v, parse_size);
                  }},
                 {"threshold", [&](const std::string& k, const std::string& v) {
                    c.sweep.threshold = parse_list<double>(k, v, parse_value<double>);
                  }}});

  e.validate();
  for (const auto& name : c.gen.schedule.concept_order)
    if (!c.gen.concepts.empty() && !c.gen.concepts.count(name))
      throw ConfigError("order names unknown concept '" + name + "'");
  return c;
}

ConfigFile load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  return parse_config(f, path.parent_path());
}

std::string dump_config(const ConfigFile& c) {
  const EngineConfig& e = c.engine;
  const ModelConfig& m = e.model;
  std::ostringstream o;
  o.precision(17);
  o << "[engine]\n"
    << "window_size=" << e.window_size << "\nbuffer_size=" << e.buffer_size
    << "\nthreshold=" << e.threshold << "\nbuckets=" << e.buckets << "\nbatch_size=" << e.batch_size
    << "\nepochs=" << e.epochs << "\nlr=" << e.lr << "\nvalidation_fraction=" << e.validation_fraction
    << "\nfingerprint_cap=" << e.fingerprint_cap << "\nfreeze_after=" << e.freeze_after
    << "\nretention_cap=" << e.retention_cap << "\nlandmark_scope="
    << (e.landmark_scope == LandmarkScope::SinceStart ? "since_start" : "window") << "\npending="
    << (e.pending == PendingTraining::ActiveTask  ? "active_task"
        : e.pending == PendingTraining::NoEPrompt ? "no_eprompt"
                                                  : "skip")
    << "\n\n[model]\n"
    << "max_len=" << m.max_len << "\nlayers=" << m.layers << "\nheads=" << m.heads
    << "\ndropout=" << m.dropout << "\nprompt_len=" << m.prompt_len << "\ng_layers=" << join(m.g_layers)
    << "\ne_layers=" << join(m.e_layers) << "\nmode=" << (m.mode == PromptMode::Prefix ? "prefix" : "prompt")
    << "\ninit_gain=" << m.init_gain << "\ng_init=" << m.g_init << "\ne_init=" << m.e_init << "\n\n[run]\n"
    << "strategy=" << c.strategy << "\nseeds=" << join(c.seeds) << "\n\n[gen]\n"
    << "segment_length=" << c.gen.schedule.segment_length << "\norder=" << join(c.gen.schedule.concept_order)
    << "\ntraces_per_concept=" << c.gen.traces_per_concept << "\nconcurrency=" << c.gen.concurrency
    << "\nseed=" << c.gen.seed << "\n";
  if (!c.gen.concepts.empty()) {
    o << "\n[concepts]\n";
    for (const auto& [name, spec] : c.gen.concepts) o << name << '=' << spec << '\n';
  }
  o << "\n[sweep]\nwindow_size=" << join(c.sweep.window_size) << "\nbuffer_size=" << join(c.sweep.buffer_size)
    << "\nthreshold=" << join(c.sweep.threshold) << '\n';
  return o.str();
}

std::vector<ConceptPool> resolve_concepts(const GenConfig& gen, std::uint64_t seed) {
  std::vector<ConceptPool> pools;
  std::uint64_t position = 0;
  for (const auto& [name, spec] : gen.concepts) {
    ++position;
    ConceptPool pool{name, {}};
    if (spec.rfind("builtin:", 0) == 0) {
      const int id = static_cast<int>(parse_value<long>(name, spec.substr(8)));
      pool.traces = simulate_process(builtin_process(id), gen.traces_per_concept, seed * 1000 + position);
    } else {
      std::ifstream f(spec);
      if (!f) throw ConfigError("cannot open concept log " + spec);
      pool.traces = traces_of(parse_event_log(f));
    }
    if (pool.traces.empty()) throw ConfigError("concept '" + name + "' has no traces");
    pools.push_back(std::move(pool));
  }
  return pools;
}

}  // namespace cnapwp
