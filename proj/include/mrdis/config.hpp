#ifndef MRDIS_CONFIG_HPP
#define MRDIS_CONFIG_HPP

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mrdis/data.hpp"
#include "mrdis/loss.hpp"

namespace mrdis {

// Flat "key = value" text. '#' starts a comment, blank lines are ignored,
// later assignments override earlier ones, and "include = other.cfg" splices
// another file in place (paths relative to the including file).

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline void parse_key_values(const std::string& text, const std::filesystem::path& base, KeyValues& out,
                             std::set<std::filesystem::path>& open, const std::string& origin) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, "bad_config", origin + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        require(!key.empty(), "bad_config", origin + ":" + std::to_string(line_no) + ": empty key");
        if (key == "include") {
            const auto path = std::filesystem::weakly_canonical(base / value);
            require(!open.contains(path), "bad_config", "include cycle through " + path.string());
            require(std::filesystem::exists(path), "missing_file", "included file not found: " + path.string());
            const auto bytes = read_file(path);
            open.insert(path);
            parse_key_values(std::string(bytes.begin(), bytes.end()), path.parent_path(), out, open, path.string());
            open.erase(path);
        } else {
            out[key] = value;
        }
    }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::size_t pos = 0;
    while (true) {
        const auto end = s.find(sep, pos);
        out.push_back(trim(std::string_view(s).substr(pos, end == std::string::npos ? std::string::npos : end - pos)));
        if (end == std::string::npos) break;
        pos = end + 1;
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    require(ec == std::errc{} && ptr == last && !text.empty(), "bad_config",
            "'" + key + "' expects a number, got '" + text + "'");
    return v;
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + fmt(xs[i]);
    return out;
}

}  // namespace detail

inline KeyValues parse_key_values(const std::string& text, const std::filesystem::path& base = ".") {
    KeyValues kv;
    std::set<std::filesystem::path> open;
    detail::parse_key_values(text, base, kv, open, "<config>");
    return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), "missing_file", "config file not found: " + path.string());
    KeyValues kv;
    std::set<std::filesystem::path> open{std::filesystem::weakly_canonical(path)};
    const auto bytes = read_file(path);
    detail::parse_key_values(std::string(bytes.begin(), bytes.end()), path.parent_path(), kv, open, path.string());
    return kv;
}

/// Binds each key of a config struct to a parser and a printer, so that
/// loading and rendering share one field list.
template <typename C>
struct FieldTable {
    struct Field {
        std::string key;
        std::function<void(C&, const std::string&)> set;
        std::function<std::string(const C&)> get;
    };
    std::vector<Field> fields;

    C load(const KeyValues& kv) const {
        C c;
        for (const auto& [key, value] : kv) {
            auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.key == key; });
            require(it != fields.end(), "bad_config", "unknown config key '" + key + "'");
            it->set(c, value);
        }
        return c;
    }

    std::string render(const C& c) const {
        std::string out;
        for (const auto& f : fields) {
            const auto v = f.get(c);
            out += f.key + (v.empty() ? " =" : " = " + v) + "\n";
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Run configuration

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

struct RunConfig {
    std::string train_data;
    std::string val_data;
    std::string test_data;
    std::vector<std::size_t> resolutions{32, 48};
    std::string network = "standard";
    std::size_t stem_width = 8;
    std::size_t body_width = 16;
    Precision precision = Precision::f32;
    std::size_t epochs = 12;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::vector<std::size_t> lr_milestones;  // epochs; empty selects 60% and 85%
    double lr_decay = 0.1;
    double tau = 0.5;
    bool size_weighted_merge = false;
    double lambda = 0.5;
    SoftLoss soft_loss = SoftLoss::standard;
    bool ten_crop_soft_targets = false;
    std::string partition;
    std::string knowledge;
    std::vector<double> fusion_weights;  // empty selects equal weights
    std::uint64_t seed = 0;
    std::string out = "out";

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline const FieldTable<RunConfig>& run_config_fields() {
    using C = RunConfig;
    using detail::parse_number;
    auto str = [](std::string C::*m) {
        return std::make_pair([m](C& c, const std::string& v) { c.*m = v; }, [m](const C& c) { return c.*m; });
    };
    auto size = [](std::size_t C::*m, const char* key) {
        return std::make_pair([m, key](C& c, const std::string& v) { c.*m = parse_number<std::size_t>(key, v); },
                              [m](const C& c) { return std::to_string(c.*m); });
    };
    auto real = [](double C::*m, const char* key) {
        return std::make_pair([m, key](C& c, const std::string& v) { c.*m = parse_number<double>(key, v); },
                              [m](const C& c) { return format_double(c.*m); });
    };
    auto flag = [](bool C::*m, const char* key) {
        return std::make_pair(
            [m, key](C& c, const std::string& v) {
                require(v == "true" || v == "false", "bad_config", std::string("'") + key + "' expects true or false");
                c.*m = v == "true";
            },
            [m](const C& c) { return std::string(c.*m ? "true" : "false"); });
    };
    auto sizes = [](std::vector<std::size_t> C::*m, const char* key) {
        return std::make_pair(
            [m, key](C& c, const std::string& v) {
                (c.*m).clear();
                for (const auto& s : detail::split(v, ',')) (c.*m).push_back(parse_number<std::size_t>(key, s));
            },
            [m](const C& c) {
                return detail::join<std::size_t>(c.*m, [](const std::size_t& x) { return std::to_string(x); });
            });
    };
    auto field = [](const char* key, auto pair) {
        return typename FieldTable<C>::Field{key, pair.first, pair.second};
    };
    static const FieldTable<RunConfig> table{{
        field("train_data", str(&C::train_data)),
        field("val_data", str(&C::val_data)),
        field("test_data", str(&C::test_data)),
        field("resolutions", sizes(&C::resolutions, "resolutions")),
        field("network", str(&C::network)),
        field("stem_width", size(&C::stem_width, "stem_width")),
        field("body_width", size(&C::body_width, "body_width")),
        field("precision", std::make_pair(
                               [](C& c, const std::string& v) {
                                   require(v == "f32" || v == "f64", "bad_config", "precision must be f32 or f64");
                                   c.precision = v == "f32" ? Precision::f32 : Precision::f64;
                               },
                               [](const C& c) { return to_string(c.precision); })),
        field("epochs", size(&C::epochs, "epochs")),
        field("batch_size", size(&C::batch_size, "batch_size")),
        field("learning_rate", real(&C::learning_rate, "learning_rate")),
        field("momentum", real(&C::momentum, "momentum")),
        field("lr_milestones", sizes(&C::lr_milestones, "lr_milestones")),
        field("lr_decay", real(&C::lr_decay, "lr_decay")),
        field("tau", real(&C::tau, "tau")),
        field("size_weighted_merge", flag(&C::size_weighted_merge, "size_weighted_merge")),
        field("lambda", real(&C::lambda, "lambda")),
        field("soft_loss", std::make_pair([](C& c, const std::string& v) { c.soft_loss = soft_loss_from_string(v); },
                                          [](const C& c) { return std::string(to_string(c.soft_loss)); })),
        field("ten_crop_soft_targets", flag(&C::ten_crop_soft_targets, "ten_crop_soft_targets")),
        field("partition", str(&C::partition)),
        field("knowledge", str(&C::knowledge)),
        field("fusion_weights", std::make_pair(
                                    [](C& c, const std::string& v) {
                                        c.fusion_weights.clear();
                                        for (const auto& s : detail::split(v, ','))
                                            c.fusion_weights.push_back(parse_number<double>("fusion_weights", s));
                                    },
                                    [](const C& c) {
                                        return detail::join<double>(c.fusion_weights,
                                                                    [](const double& x) { return format_double(x); });
                                    })),
        field("seed", std::make_pair([](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                                     [](const C& c) { return std::to_string(c.seed); })),
        field("out", str(&C::out)),
    }};
    return table;
}

inline void validate(const RunConfig& c) {
    require(!c.resolutions.empty(), "bad_config", "resolution roster is empty");
    require(c.network == "standard", "bad_config", "unknown network family '" + c.network + "'");
    require(c.stem_width > 0 && c.body_width > 0, "bad_config", "network widths must be positive");
    require(c.epochs > 0, "bad_config", "epochs must be positive");
    require(c.learning_rate > 0, "bad_config", "learning_rate must be positive");
    require(c.momentum >= 0 && c.momentum < 1, "bad_config", "momentum must be in [0,1)");
    require(c.tau >= 0, "bad_config", "tau must be non-negative");
    require(c.lambda >= 0, "bad_config", "lambda must be non-negative");
    for (double w : c.fusion_weights) require(w >= 0, "bad_weight", "fusion weights must be non-negative");
    require(c.fusion_weights.empty() || c.fusion_weights.size() == c.resolutions.size(), "bad_weight",
            "one fusion weight per resolution required");
}

/// Every referenced input file must exist when a config is loaded from disk.
inline void require_inputs_exist(const RunConfig& c) {
    for (const auto* p : {&c.train_data, &c.val_data, &c.test_data, &c.partition, &c.knowledge})
        if (!p->empty()) require(std::filesystem::exists(*p), "missing_file", "config references missing file " + *p);
}

inline RunConfig run_config_from(const KeyValues& kv) {
    auto c = run_config_fields().load(kv);
    validate(c);
    return c;
}

inline std::string to_text(const RunConfig& c) { return run_config_fields().render(c); }

/// Loads a config; relative data paths are resolved against the config's
/// directory.
inline RunConfig load_run_config(const std::filesystem::path& path) {
    auto c = run_config_from(read_key_values(path));
    const auto base = path.parent_path();
    for (auto* p : {&c.train_data, &c.val_data, &c.test_data, &c.partition, &c.knowledge})
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    require_inputs_exist(c);
    return c;
}

// ---------------------------------------------------------------------------
// Synthetic dataset spec

inline const FieldTable<SceneGenSpec>& scene_spec_fields() {
    using S = SceneGenSpec;
    using detail::parse_number;
    auto size = [](std::size_t S::*m, const char* key) {
        return typename FieldTable<S>::Field{key,
                                             [m, key](S& s, const std::string& v) { s.*m = parse_number<std::size_t>(key, v); },
                                             [m](const S& s) { return std::to_string(s.*m); }};
    };
    auto real = [](double S::*m, const char* key) {
        return typename FieldTable<S>::Field{key, [m, key](S& s, const std::string& v) { s.*m = parse_number<double>(key, v); },
                                             [m](const S& s) { return format_double(s.*m); }};
    };
    static const FieldTable<SceneGenSpec> table{{
        size(&S::num_classes, "classes"),
        size(&S::images_per_class, "train_per_class"),
        size(&S::val_per_class, "val_per_class"),
        size(&S::test_per_class, "test_per_class"),
        size(&S::resolution, "resolution"),
        {"ambiguous_pairs",
         [](S& s, const std::string& v) {
             s.ambiguous_pairs.clear();
             for (const auto& item : detail::split(v, ',')) {
                 const auto parts = detail::split(item, ':');
                 require(parts.size() == 3, "bad_config", "ambiguous pair '" + item + "' must be first:second:separation");
                 s.ambiguous_pairs.push_back({parse_number<std::size_t>("ambiguous_pairs", parts[0]),
                                              parse_number<std::size_t>("ambiguous_pairs", parts[1]),
                                              parse_number<double>("ambiguous_pairs", parts[2])});
             }
         },
         [](const S& s) {
             return detail::join<AmbiguousPair>(s.ambiguous_pairs, [](const AmbiguousPair& p) {
                 return std::to_string(p.first) + ":" + std::to_string(p.second) + ":" + format_double(p.separation);
             });
         }},
        real(&S::intra_class_variation, "variation"),
        real(&S::imbalance, "imbalance"),
        {"seed", [](S& s, const std::string& v) { s.seed = parse_number<std::uint64_t>("seed", v); },
         [](const S& s) { return std::to_string(s.seed); }},
    }};
    return table;
}

inline SceneGenSpec scene_spec_from(const KeyValues& kv) {
    auto s = scene_spec_fields().load(kv);
    validate(s);
    return s;
}

inline std::string to_text(const SceneGenSpec& s) { return scene_spec_fields().render(s); }

}  // namespace mrdis

#endif
