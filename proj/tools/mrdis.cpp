// mrdis: command-line front end for the multi-resolution training and label
// disambiguation pipeline. Errors go to stderr as one JSON object and the
// process exits nonzero.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "mrdis/pipeline.hpp"
#include "mrdis/png_import.hpp"

namespace {

using namespace mrdis;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
    std::optional<double> lambda;
    std::optional<std::string> soft_loss;
    std::optional<std::string> resolutions;
    std::optional<std::string> out;
    std::optional<std::string> partition;
    std::optional<std::string> knowledge;
    std::optional<std::string> precision;

    void add_common(CLI::App* app, bool config_required) {
        auto* opt = app->add_option("--config", config, "run configuration file");
        if (config_required) opt->required();
        app->add_option("--seed", seed, "random seed");
        app->add_option("--out", out, "output directory");
    }

    void add_training(CLI::App* app) {
        app->add_option("--tau", tau, "merge threshold");
        app->add_option("--lambda", lambda, "soft-label loss weight");
        app->add_option("--soft-loss", soft_loss, "soft-label term orientation")
            ->check(CLI::IsMember({"printed", "standard"}));
        app->add_option("--resolutions", resolutions, "comma separated stored sizes, e.g. 32,48");
        app->add_option("--partition", partition, "train on the super categories of this partition");
        app->add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    }

    RunConfig resolve() const {
        RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
        KeyValues kv;
        if (seed) kv["seed"] = std::to_string(*seed);
        if (tau) kv["tau"] = format_double(*tau);
        if (lambda) kv["lambda"] = format_double(*lambda);
        if (soft_loss) kv["soft_loss"] = *soft_loss;
        if (resolutions) kv["resolutions"] = *resolutions;
        if (out) kv["out"] = *out;
        if (partition) kv["partition"] = *partition;
        if (knowledge) kv["knowledge"] = *knowledge;
        if (precision) kv["precision"] = *precision;
        // Apply the overrides through the same parsers as the file.
        for (const auto& field : run_config_fields().fields)
            if (auto it = kv.find(field.key); it != kv.end()) field.set(c, it->second);
        validate(c);
        require_inputs_exist(c);
        return c;
    }
};

void print_json(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

template <typename F>
auto with_precision(Precision p, F&& f) {
    return p == Precision::f32 ? f(float{}) : f(double{});
}

void run_train(const Overrides& o, bool distill) {
    const auto cfg = o.resolve();
    nlohmann::json summary = nlohmann::json::array();
    for (auto n : cfg.resolutions) {
        const auto out = with_precision(cfg.precision, [&](auto tag) {
            using T = decltype(tag);
            return train_resolution<T>(cfg, n, distill);
        });
        const auto means = epoch_means(out.rows);
        summary.push_back({{"resolution", n},
                           {"checkpoint", out.checkpoint.string()},
                           {"log", out.log.string()},
                           {"fingerprint", to_hex(out.fingerprint)},
                           {"final_hard", means.empty() ? 0.0 : means.back().first},
                           {"final_soft", means.empty() ? 0.0 : means.back().second}});
    }
    print_json(summary);
}

Precision parse_precision(const std::string& s) {
    require(s == "f32" || s == "f64", "bad_config", "precision must be f32 or f64");
    return s == "f32" ? Precision::f32 : Precision::f64;
}

int run(int argc, char** argv) {
    CLI::App app{"Multi-resolution CNN training with confusion-based category merging and soft-label distillation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/val/test splits");
    std::string gen_spec;
    std::optional<std::uint64_t> gen_seed;
    std::string gen_out = "data";
    gen->add_option("--config", gen_spec, "dataset spec file (defaults apply when omitted)");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->callback([&] {
        SceneGenSpec spec = gen_spec.empty() ? SceneGenSpec{} : scene_spec_from(read_key_values(gen_spec));
        if (gen_seed) spec.seed = *gen_seed;
        validate(spec);
        const auto o = gen_data(spec, gen_out);
        print_json({{"train", o.train.string()}, {"val", o.val.string()}, {"test", o.test.string()}});
    });

    // train / distill
    Overrides train_o, distill_o;
    auto* train_cmd = app.add_subcommand("train", "train one network per configured resolution");
    train_o.add_common(train_cmd, true);
    train_o.add_training(train_cmd);
    train_cmd->callback([&] { run_train(train_o, false); });

    auto* distill = app.add_subcommand("distill", "train with hard labels plus soft labels from a knowledge network");
    distill_o.add_common(distill, true);
    distill_o.add_training(distill);
    distill->add_option("--knowledge", distill_o.knowledge, "knowledge network checkpoint");
    distill->callback([&] { run_train(distill_o, true); });

    // confusion
    auto* conf = app.add_subcommand("confusion", "confusion matrix of a checkpoint on a labelled split");
    std::string conf_ck, conf_data, conf_out = "confusion.csv", conf_precision = "f32";
    conf->add_option("--checkpoint", conf_ck, "model checkpoint")->required();
    conf->add_option("--data", conf_data, "labelled split, usually val")->required();
    conf->add_option("--out", conf_out, "output CSV");
    conf->add_option("--precision", conf_precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    conf->callback([&] {
        with_precision(parse_precision(conf_precision), [&](auto tag) {
            using T = decltype(tag);
            confusion_for<T>(conf_ck, conf_data, conf_out);
            return 0;
        });
        print_json({{"confusion", conf_out}});
    });

    // merge
    auto* merge = app.add_subcommand("merge", "merge confusable classes into super categories");
    std::string merge_in, merge_out = "partition.json", merge_config;
    std::optional<double> merge_tau;
    bool merge_weighted = false;
    merge->add_option("--confusion", merge_in, "confusion CSV")->required();
    merge->add_option("--config", merge_config, "run configuration (supplies tau)");
    merge->add_option("--tau", merge_tau, "merge threshold");
    merge->add_flag("--size-weighted", merge_weighted, "weight merged rows by group size");
    merge->add_option("--out", merge_out, "output partition JSON");
    merge->callback([&] {
        RunConfig cfg = merge_config.empty() ? RunConfig{} : load_run_config(merge_config);
        const double tau = merge_tau.value_or(cfg.tau);
        const auto m = merge_file(merge_in, tau, merge_weighted || cfg.size_weighted_merge, merge_out);
        nlohmann::json trace = nlohmann::json::array();
        for (const auto& s : m.trace)
            trace.push_back({{"first", s.first}, {"second", s.second}, {"similarity", s.similarity}});
        print_json({{"partition", merge_out}, {"groups", m.partition.groups.size()}, {"merges", trace}});
    });

    // eval
    auto* ev = app.add_subcommand("eval", "top-1/top-5 report for a checkpoint or score dumps");
    std::string ev_ck, ev_data, ev_partition, ev_out = "eval", ev_precision = "f32";
    std::vector<std::string> ev_scores;
    auto* ev_ck_opt = ev->add_option("--checkpoint", ev_ck, "model checkpoint");
    auto* ev_sc_opt = ev->add_option("--scores", ev_scores, "score dump(s); several are fused with equal weights");
    ev_ck_opt->excludes(ev_sc_opt);
    ev->add_option("--data", ev_data, "labelled split")->required();
    ev->add_option("--partition", ev_partition, "redistribute super-category scores through this partition");
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--precision", ev_precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    ev->callback([&] {
        require(!ev_ck.empty() || !ev_scores.empty(), "usage", "eval needs --checkpoint or --scores");
        EvalOutput o;
        if (!ev_ck.empty()) {
            o = with_precision(parse_precision(ev_precision), [&](auto tag) {
                using T = decltype(tag);
                return eval_checkpoint<T>(ev_ck, ev_data, ev_partition, ev_out);
            });
        } else {
            std::vector<ScoreDump> dumps;
            for (const auto& p : ev_scores) dumps.push_back(read_scores(p));
            o = report_scores(fuse_dumps(dumps), ev_data, ev_partition, ev_out);
        }
        std::cout << to_text(o.report);
    });

    // fuse
    auto* fu = app.add_subcommand("fuse", "weighted arithmetic mean of score dumps");
    std::vector<std::string> fu_scores;
    std::vector<double> fu_weights;
    std::string fu_data, fu_partition, fu_out = "fused";
    fu->add_option("--scores", fu_scores, "score dumps")->required();
    fu->add_option("--weights", fu_weights, "fusion weights summing to 1 (default equal)")->delimiter(',');
    fu->add_option("--data", fu_data, "labelled split the dumps were computed on")->required();
    fu->add_option("--partition", fu_partition, "redistribute super-category scores through this partition");
    fu->add_option("--out", fu_out, "output directory");
    fu->callback([&] {
        std::vector<fs::path> paths(fu_scores.begin(), fu_scores.end());
        const auto o = fuse_files(paths, fu_weights, fu_data, fu_partition, fu_out);
        std::cout << to_text(o.report);
    });

    // resample
    auto* rs = app.add_subcommand("resample", "bilinear downsampling of a dataset file");
    std::string rs_in, rs_out;
    std::size_t rs_size = 32;
    rs->add_option("--in", rs_in, "source dataset")->required();
    rs->add_option("--size", rs_size, "target stored size")->required();
    rs->add_option("--out", rs_out, "output dataset")->required();
    rs->callback([&] {
        write_dataset(rs_out, resample(read_dataset(rs_in), rs_size));
        print_json({{"dataset", rs_out}});
    });

    // import-png
    auto* im = app.add_subcommand("import-png", "convert a directory of PNGs (one subdirectory per class)");
    std::string im_in, im_out;
    std::size_t im_size = 48;
    im->add_option("--in", im_in, "root directory")->required();
    im->add_option("--size", im_size, "stored size");
    im->add_option("--out", im_out, "output dataset")->required();
    im->callback([&] {
        const auto r = import_png_directory(im_in, im_size);
        write_dataset(im_out, r.data);
        std::string names;
        for (const auto& n : r.class_names) names += n + "\n";
        const auto names_path = fs::path(im_out).replace_extension(".classes.txt");
        write_file_atomic(names_path, names);
        print_json({{"dataset", im_out}, {"classes", names_path.string()}, {"images", r.data.size()}});
    });

    // show-config
    auto* show = app.add_subcommand("show-config", "print a configuration with every default filled in");
    Overrides show_o;
    show_o.add_common(show, false);
    show_o.add_training(show);
    show->callback([&] { std::cout << to_text(show_o.resolve()); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mrdis::Error& e) {
        std::cerr << nlohmann::json{{"error", e.code()}, {"message", e.what()}}.dump() << "\n";
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    }
    return 1;
}
