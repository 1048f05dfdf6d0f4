#include "cli.hpp"

#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "laser/benchmark.hpp"
#include "laser/errors.hpp"
#include "laser/hash.hpp"
#include "laser/run.hpp"
#include "laser/trace_cache.hpp"

namespace laser::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flags that feed RunConfig; only those given on the command line override the config file.
struct ConfigFlags {
    std::string config_path;
    std::string backbone, weights, strategy, llm, out, trace_cache;
    int steps = 0, n_f = 0, n_t = 0, jobs = 0, fps = 0;
    double cfg = 0, w = 0;
    std::uint64_t seed = 0;
    bool beta_embeddings = false;
    std::vector<CLI::Option*> options;

    void attach(CLI::App& app) {
        app.add_option("--config", config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
        options = {
            app.add_option("--backbone", backbone, "tiny-test or sd15-like"),
            app.add_option("--weights", weights, "weights path for real backbones"),
            app.add_option("--strategy", strategy, "FAI, KVAI, DAI or None; bypasses ICA"),
            app.add_option("--llm", llm, "mock or openai-compatible"),
            app.add_option("--out", out, "run directory"),
            app.add_option("--trace-cache", trace_cache, "directory for cached inversion traces"),
            app.add_option("--steps", steps, "DDIM steps")->check(CLI::PositiveNumber),
            app.add_option("--nf", n_f, "frames per stage")->check(CLI::Range(2, 1000)),
            app.add_option("--nt", n_t, "transformation stages (0: planner decides)")->check(CLI::Range(0, kMaxStages)),
            app.add_option("--jobs", jobs, "workers for independent frames")->check(CLI::PositiveNumber),
            app.add_option("--fps", fps, "GIF frame rate")->check(CLI::PositiveNumber),
            app.add_option("--cfg", cfg, "classifier-free guidance scale")->check(CLI::NonNegativeNumber),
            app.add_option("--w", w, "DAI source-retention weight in (0, 1)"),
            app.add_option("--seed", seed, "seed"),
            app.add_flag("--beta-embeddings", beta_embeddings, "DAI: interpolate text embeddings with w*alpha"),
        };
    }

    bool given(const char* name) const {
        for (auto* o : options) {
            if (o->check_lname(std::string(name).substr(2)) && o->count() > 0) return true;
        }
        return false;
    }

    RunConfig resolve() const {
        RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        json overlay = json::object();
        if (given("--backbone")) overlay["backbone"] = backbone;
        if (given("--weights")) overlay["weights"] = weights;
        if (given("--strategy")) overlay["strategy"] = strategy;
        if (given("--llm")) overlay["llm"] = {{"backend", llm}};
        if (given("--out")) overlay["output_dir"] = out;
        if (given("--trace-cache")) overlay["trace_cache"] = trace_cache;
        if (given("--steps")) overlay["steps"] = steps;
        if (given("--nf")) overlay["n_f"] = n_f;
        if (given("--nt")) overlay["n_t"] = n_t;
        if (given("--jobs")) overlay["jobs"] = jobs;
        if (given("--fps")) overlay["gif_fps"] = fps;
        if (given("--cfg")) overlay["cfg_scale"] = cfg;
        if (given("--w")) overlay["w"] = w;
        if (given("--seed")) overlay["seed"] = seed;
        if (given("--beta-embeddings")) overlay["beta_embeddings"] = beta_embeddings;
        try {
            c.merge(overlay);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

Image load_input_image(const std::string& path, const BackboneDescriptor& desc) {
    Image img = load_png(path);
    if (img.width != desc.image_size || img.height != desc.image_size) {
        throw ShapeError("input image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", " +
                         desc.name + " expects " + std::to_string(desc.image_size) + "x" + std::to_string(desc.image_size));
    }
    return img;
}

void print_metrics(const MetricsReport& m) {
    std::printf("PIC %.4f  LPIPS_T %.4f  LPIPS_M %.4f  CLIP(frame) %.4f  CLIP(text) %.4f  PPL %.4f  runtime %.2fs\n",
                m.pic, m.lpips_total, m.lpips_max_endpoint, m.clip_frame, m.clip_text, m.ppl, m.runtime_seconds);
}

// ---- generate ----

struct GenerateArgs {
    ConfigFlags flags;
    std::string description, image, from_manifest;
};

int cmd_generate(const GenerateArgs& args) {
    RunConfig config;
    AnimationRequest request;
    RunOptions options;
    if (!args.from_manifest.empty()) {
        RecordedRun rec = load_recorded_run(args.from_manifest);
        config = rec.config;
        if (args.flags.given("--out")) config.output_dir = args.flags.out;
        if (args.flags.given("--trace-cache")) config.trace_cache = args.flags.trace_cache;
        request = std::move(rec.request);
        options.preset_plan = std::move(rec.plan);
    } else {
        if (args.description.empty()) throw UsageError("generate needs --description (or --from-manifest)");
        config = args.flags.resolve();
        request.description = args.description;
        request.n_f = config.n_f;
        request.n_t = config.n_t;
        request.seed = config.seed;
    }
    const auto backbone = make_backbone(config.backbone, config.weights);
    if (!args.image.empty()) request.input_image = load_input_image(args.image, backbone->descriptor());
    const auto llm = make_backend(config.llm_backend);
    const RunArtifacts run = execute_run(*backbone, *llm, config, request, config.output_dir, options);

    std::printf("run: %s\n", config.output_dir.c_str());
    for (std::size_t i = 0; i < run.plan.prompts.size(); ++i) std::printf("P%zu: %s\n", i, run.plan.prompts[i].c_str());
    for (const auto& t : run.plan.transitions) {
        std::printf("stage %d: %s (%s)\n", t.index, std::string(to_string(t.strategy)).c_str(),
                    std::string(to_string(t.source)).c_str());
    }
    for (const auto& w : run.plan.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("frames: %zu\n", run.animation.frames.size());
    print_metrics(run.metrics);
    return kOk;
}

// ---- invert ----

struct InvertArgs {
    ConfigFlags flags;
    std::string image, prompt;
};

int cmd_invert(const InvertArgs& args) {
    RunConfig config = args.flags.resolve();
    if (config.trace_cache.empty()) throw UsageError("invert needs --trace-cache");
    const auto backbone = make_backbone(config.backbone, config.weights);
    const auto& desc = backbone->descriptor();
    const GeneratorConfig gen = config.generator_config(desc);
    const InjectionStrategy strategy = config.strategy.value_or(InjectionStrategy::fai);
    const auto sites = inversion_sites(strategy, gen.schedule_for(strategy), desc);

    const Image image = load_input_image(args.image, desc);
    const auto rgb = to_rgb8(image);
    const std::string image_hash = sha256_hex(std::string_view(reinterpret_cast<const char*>(rgb.data()), rgb.size()));
    const TextEmbedding emb = backbone->encode_prompt(args.prompt);
    const TimestepGrid grid(config.steps, desc.num_train_timesteps);
    const TraceCache cache(config.trace_cache);
    const TraceCacheKey key{desc.name, image_hash, sha256_hex(emb.values.data()), grid.num_steps(), sites};
    const bool hit = fs::exists(cache.path_for(key));
    const InversionResult inv = cached_invert(*backbone, &cache, backbone->encode_image(image), emb, grid, sites,
                                              image_hash, "stage0");
    std::printf("%s %s\n", hit ? "cache hit:" : "stored:", cache.path_for(key).string().c_str());
    std::printf("strategy sites: %s (%zu sites x %zu timesteps = %zu entries)\n",
                std::string(to_string(strategy)).c_str(), sites.size(), inv.trace->timesteps().size(), inv.trace->size());
    std::printf("z_T norm: %.6f\n", l2_norm(inv.z_T.values));
    return kOk;
}

// ---- eval ----

struct EvalArgs {
    std::string frames, input, out, manifest;
};

int cmd_eval(const EvalArgs& args) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(args.frames)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    if (files.empty()) throw IoError("no PNG frames in " + args.frames);
    std::sort(files.begin(), files.end());
    std::vector<Image> frames;
    for (const auto& f : files) frames.push_back(load_png(f));
    const Image input = load_png(args.input);

    std::vector<std::string> prompts;
    std::vector<FramePosition> positions;
    double runtime = 0.0;
    if (!args.manifest.empty()) {
        const json m = read_json(args.manifest);
        prompts = m.at("plan").at("prompts").get<std::vector<std::string>>();
        for (const auto& f : m.at("frames")) positions.push_back({f.at("stage").get<int>(), f.at("alpha").get<double>()});
        if (positions.size() != frames.size()) throw ConfigError("manifest lists a different number of frames");
        const fs::path timing = fs::path(args.manifest).parent_path() / "timing.json";
        if (fs::exists(timing)) runtime = read_json(timing).value("total_seconds", 0.0);
    }
    PerceptualNet net;
    const MetricsReport report = evaluate_frames(net, frames, input, prompts, positions, runtime);
    const fs::path out = args.out.empty() ? fs::path(args.frames) / "metrics.json" : fs::path(args.out);
    write_json(out, metrics_to_json(report));
    std::printf("metrics: %s (%d frames)\n", out.string().c_str(), report.n_frames);
    print_metrics(report);
    return kOk;
}

// ---- describe ----

struct DescribeArgs {
    std::string backbone = "sd15-like";
    int steps = 50;
};

int cmd_describe(const DescribeArgs& args) {
    const auto desc = find_descriptor(args.backbone);
    if (!desc) throw ConfigError("unknown backbone '" + args.backbone + "' (known: tiny-test, sd15-like)");
    std::printf("backbone: %s\n", desc->name.c_str());
    std::printf("image %dx%d, latent %dx%dx%d, text %dx%d, %d train timesteps\n", desc->image_size, desc->image_size,
                desc->latent_channels, desc->latent_size, desc->latent_size, desc->num_tokens, desc->embed_dim,
                desc->num_train_timesteps);
    std::printf("decoder layers (1 = deepest block):\n");
    std::printf("  layer  resolution  channels  self-attention\n");
    for (const auto& l : desc->decoder_layers) {
        std::printf("  %5d  %10d  %8d  %s\n", l.index, l.resolution, l.channels, l.has_attention ? "yes" : "no");
    }
    std::printf("hook sites:\n");
    for (const auto& s : desc->hook_sites()) std::printf("%s\n", s.label().c_str());

    const auto fai = default_fai_schedule(args.steps, *desc);
    const auto attn = default_attention_schedule(args.steps);
    auto span = [](const std::set<int>& s) {
        return std::to_string(*s.begin()) + "–" + std::to_string(*s.rbegin());
    };
    std::printf("default schedules (%d steps):\n", args.steps);
    std::printf("FAI: steps %s, all decoder layers, residual feature at layer %d\n", span(fai.active_steps).c_str(),
                fai.feature_layer);
    std::printf("KVAI/DAI: steps %s, layers %s\n", span(attn.active_steps).c_str(), span(attn.decoder_layers).c_str());
    return kOk;
}

// ---- bench ----

struct BenchRunArgs {
    ConfigFlags flags;
    std::string set, ablation = "full", format = "markdown", table;
};

int cmd_bench_run(const BenchRunArgs& args) {
    RunConfig config = args.flags.resolve();
    const BenchmarkSet set = load_benchmark(args.set);
    const AblationMode mode = parse_ablation(args.ablation);
    const fs::path out = config.output_dir;
    const BenchmarkReport report = run_benchmark(set, config, mode, out);

    int failures = 0;
    json summary = json::array();
    for (const auto& e : report.entries) {
        json strategies = json::array();
        for (auto s : e.strategies) strategies.push_back(std::string(to_string(s)));
        summary.push_back({{"id", e.id}, {"category", std::string(to_string(e.category))}, {"ok", e.ok},
                           {"error", e.error}, {"strategies", strategies},
                           {"metrics", e.ok ? metrics_to_json(e.metrics) : json(nullptr)}});
        if (!e.ok) {
            ++failures;
            std::fprintf(stderr, "entry %s failed: %s\n", e.id.c_str(), e.error.c_str());
        }
    }
    fs::create_directories(out);
    write_json(out / "results.json", {{"ablation", mode.label()}, {"entries", summary}});
    if (report.rows.empty()) throw Error("every benchmark entry failed");
    const TableFormat format = args.format == "csv" ? TableFormat::csv : TableFormat::markdown;
    const std::string table = emit_table(report.rows, format);
    const fs::path table_path = args.table.empty() ? out / (format == TableFormat::csv ? "table.csv" : "table.md") : fs::path(args.table);
    {
        std::ofstream f(table_path);
        if (!f) throw IoError("cannot write " + table_path.string());
        f << table;
    }
    std::printf("ablation: %s\n%s", mode.label().c_str(), table.c_str());
    std::printf("table: %s (%d of %zu entries failed)\n", table_path.string().c_str(), failures, report.entries.size());
    return kOk;
}

struct BenchExpandArgs {
    std::string seeds, out, llm = "mock";
    int retries = 2;
};

int cmd_bench_expand(const BenchExpandArgs& args) {
    const BenchmarkSet seeds = load_benchmark(args.seeds);
    const auto llm = make_backend(args.llm);
    Controller controller(*llm, args.retries);
    BenchmarkSet expanded = expand_benchmark(seeds, controller);
    if (expanded.declared_counts.empty()) expanded.declared_counts = expanded.counts();
    save_benchmark(expanded, args.out);
    std::printf("expanded %zu entries into %s\n", expanded.entries.size(), args.out.c_str());
    return kOk;
}

struct BenchValidateArgs {
    std::string set;
    bool reference = false;
};

int cmd_bench_validate(const BenchValidateArgs& args) {
    const BenchmarkSet set = load_benchmark(args.set);
    const auto counts = set.counts();
    std::printf("%zu entries: material=%d non_rigid=%d hybrid=%d\n", set.entries.size(), counts.at(Category::material),
                counts.at(Category::non_rigid), counts.at(Category::hybrid));
    if (args.reference) {
        validate_reference_split(set);
        std::printf("matches the reference split\n");
    }
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Text-conditioned image-to-animation with planned feature and attention injection"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "plan and render an animation into a run directory");
    generate->add_option("-d,--description", gen.description, "what should happen over the animation");
    generate->add_option("-i,--image", gen.image, "initial image (PNG); generated from the prompt when absent")
        ->check(CLI::ExistingFile);
    generate->add_option("--from-manifest", gen.from_manifest, "re-run a recorded manifest.json bit-identically")
        ->check(CLI::ExistingFile);
    gen.flags.attach(*generate);

    InvertArgs inv;
    auto* invert = app.add_subcommand("invert", "DDIM-invert an image and store its activation trace");
    invert->add_option("-i,--image", inv.image, "source image (PNG)")->required()->check(CLI::ExistingFile);
    invert->add_option("-p,--prompt", inv.prompt, "prompt for the inversion")->required();
    inv.flags.attach(*invert);

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "compute metrics for a directory of frames");
    eval->add_option("--frames", ev.frames, "directory of PNG frames, sorted by name")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--input", ev.input, "input image (PNG)")->required()->check(CLI::ExistingFile);
    eval->add_option("--manifest", ev.manifest, "run manifest for stage prompts and frame positions")->check(CLI::ExistingFile);
    eval->add_option("--out", ev.out, "metrics.json path (default: inside the frames directory)");

    DescribeArgs desc;
    auto* describe = app.add_subcommand("describe", "print a backbone's decoder layers, hook sites and schedules");
    describe->add_option("--backbone", desc.backbone, "tiny-test or sd15-like");
    describe->add_option("--steps", desc.steps, "sampling steps for the schedule lines")->check(CLI::PositiveNumber);

    auto* bench = app.add_subcommand("bench", "benchmark sets");
    bench->require_subcommand(1);
    BenchRunArgs brun;
    auto* bench_run = bench->add_subcommand("run", "run every entry and emit a results table");
    bench_run->add_option("--set", brun.set, "benchmark JSONL")->required()->check(CLI::ExistingFile);
    bench_run->add_option("--ablation", brun.ablation, "full, w/o-FAI, w/o-KVAI, w/o-DAI, w/o-ICA (combine with +)");
    bench_run->add_option("--format", brun.format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}));
    bench_run->add_option("--table", brun.table, "table output path");
    brun.flags.attach(*bench_run);
    BenchExpandArgs bexp;
    auto* bench_expand = bench->add_subcommand("expand", "fill stage prompts of seed descriptions through the planner");
    bench_expand->add_option("--seeds", bexp.seeds, "seed JSONL")->required()->check(CLI::ExistingFile);
    bench_expand->add_option("--out", bexp.out, "expanded JSONL")->required();
    bench_expand->add_option("--llm", bexp.llm, "mock or openai-compatible");
    bench_expand->add_option("--retries", bexp.retries, "retries per agent call");
    BenchValidateArgs bval;
    auto* bench_validate = bench->add_subcommand("validate", "check a set's schema and category counts");
    bench_validate->add_option("--set", bval.set, "benchmark JSONL")->required()->check(CLI::ExistingFile);
    bench_validate->add_flag("--reference", bval.reference, "require the 70/70/60 reference split");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*generate) return cmd_generate(gen);
        if (*invert) return cmd_invert(inv);
        if (*eval) return cmd_eval(ev);
        if (*describe) return cmd_describe(desc);
        if (*bench_run) return cmd_bench_run(brun);
        if (*bench_expand) return cmd_bench_expand(bexp);
        if (*bench_validate) return cmd_bench_validate(bval);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const PlanningError& e) {
        std::fprintf(stderr, "error: %s\nlast agent output:\n%s\n", e.what(), e.raw_output().c_str());
        return kFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kUsage;
}

}  // namespace laser::cli
