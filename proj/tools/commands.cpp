#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "pacgrid/crf.hpp"
#include "pacgrid/data.hpp"
#include "pacgrid/pac.hpp"
#include "pacgrid/verify.hpp"

namespace pacgrid::cli {

namespace {

using nlohmann::json;

// Held-out scenes come from a seed this far from the training seed.
constexpr std::uint64_t kHoldoutSeedOffset = 1000;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + " must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
void read(const json& j, const char* key, std::optional<T>& slot, const std::string& where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        if constexpr (std::is_unsigned_v<T>) {
            if (!j.at(key).is_number_unsigned()) {
                throw ConfigError(where + "." + key + " must be a non-negative integer");
            }
        }
        slot = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

KernelSpec parse_kernel(const json& j) {
    check_keys(j, {"kind", "alpha", "epsilon", "lambda"}, "crf.kernel");
    const std::string kind = j.value("kind", "gaussian");
    KernelSpec k;
    if (kind == "gaussian") {
        k = KernelSpec::gaussian();
    } else if (kind == "constant") {
        k = KernelSpec::constant();
    } else if (kind == "detail_preserving") {
        k = KernelSpec::detail_preserving(j.value("alpha", 0.0), j.value("epsilon", 1.0), j.value("lambda", 1.0));
    } else {
        throw ConfigError("crf.kernel.kind must be gaussian, constant or detail_preserving, not '" + kind + "'");
    }
    try {
        validate_kernel(k);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("crf.kernel: ") + e.what());
    }
    return k;
}

Schedule parse_schedule(const json& j) {
    if (!j.is_array() || j.empty()) {
        throw ConfigError("train.schedule must be a non-empty array of [lr, steps] pairs");
    }
    Schedule s;
    for (const json& phase : j) {
        if (!phase.is_array() || phase.size() != 2 || !phase[0].is_number() || !phase[1].is_number_unsigned()) {
            throw ConfigError("train.schedule entries must be [lr, steps]");
        }
        s.lrs.push_back(phase[0].get<double>());
        s.steps.push_back(phase[1].get<std::size_t>());
    }
    return s;
}

std::string required(const std::optional<std::string>& flag, const std::optional<std::string>& config,
                     const char* name) {
    if (flag) {
        return *flag;
    }
    if (config) {
        return *config;
    }
    throw CLI::RequiredError(name);
}

template <typename T>
T pick(const std::optional<T>& flag, const std::optional<T>& config, T fallback) {
    return flag ? *flag : config ? *config : fallback;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << j.dump(2) << '\n';
}

ByteImage read_image(const std::string& path) {
    const Bytes bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
        return pgm_read(path);
    }
    return ppm_read(path);
}

void write_image(const std::string& path, const ByteImage& img) {
    if (img.channels == 1) {
        pgm_write(path, img);
    } else {
        ppm_write(path, img);
    }
}

// ---------------------------------------------------------------- commands

struct GradcheckArgs {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> cases;
    std::optional<std::string> report;
};

int cmd_gradcheck(const GradcheckArgs& a, const RunConfig& cfg, std::ostream& out) {
    GradcheckOptions opt;
    opt.seed = pick(a.seed, cfg.seed, std::uint64_t{0});
    opt.cases = pick(a.cases, cfg.cases, opt.cases);
    const GradcheckReport r = run_gradcheck(opt);
    out << r.text();
    if (!r.lines.empty()) {
        out << (r.passed() ? "gradcheck passed" : "gradcheck FAILED") << '\n';
    }
    if (const auto path = a.report ? a.report : cfg.report_path) {
        json j = {{"seed", opt.seed}, {"cases", opt.cases}, {"passed", r.passed()}, {"gradients", json::array()}};
        for (const GradcheckLine& l : r.lines) {
            j["gradients"].push_back({{"op", l.op},
                                      {"gradient", l.gradient},
                                      {"max_rel_error", l.max_rel_error},
                                      {"tolerance", l.tolerance},
                                      {"coords", l.coords}});
        }
        write_json(*path, j);
    }
    return r.passed() ? kExitOk : kExitVerification;
}

struct BilateralArgs {
    std::string input;
    std::string output;
    std::optional<double> spatial_sigma;
    std::optional<double> feature_sigma;
    std::optional<std::size_t> window;
};

int cmd_bilateral(const BilateralArgs& a, const RunConfig& cfg, std::ostream& out) {
    const double spatial = pick(a.spatial_sigma, cfg.spatial_sigma, 2.0);
    // Range sigma is given in 8-bit intensity units.
    const double feature = pick(a.feature_sigma, cfg.feature_sigma, 20.0);
    if (!(spatial > 0.0) || !(feature > 0.0)) {
        throw CLI::ValidationError("--spatial-sigma and --feature-sigma must be positive");
    }
    BilateralOptions opt;
    opt.feature_sigma = feature / 255.0;
    opt.window = pick(a.window, cfg.window, std::size_t{0});
    if (opt.window != 0 && opt.window % 2 == 0) {
        throw CLI::ValidationError("--window must be odd");
    }
    const ByteImage img = read_image(a.input);
    const Tensor4 filtered = bilateral_filter(image_to_tensor(img), spatial, opt);
    write_image(a.output, tensor_to_image(filtered));
    out << "filtered " << img.width << "x" << img.height << " spatial_sigma " << spatial << " feature_sigma "
        << feature << " -> " << a.output << '\n';
    return kExitOk;
}

struct CrfArgs {
    std::optional<std::string> unary;
    std::optional<std::string> guide;
    std::optional<std::string> out;
    std::optional<std::string> branches;
    std::optional<std::size_t> steps;
    std::optional<std::string> compat;
    std::optional<std::string> marginals;
    std::optional<std::string> report;
};

Tensor4 load_logits(const std::string& path) {
    const TensorContainer c = TensorContainer::load(path);
    std::string name = "unary";
    if (!c.contains(name)) {
        if (c.entries().size() != 1) {
            throw std::runtime_error(path + ": expected an entry named 'unary' or exactly one entry");
        }
        name = c.entries().front().name;
    }
    Tensor4 t = c.tensor(name);
    if (t.dims().n != 1 || t.dims().c < 2) {
        throw std::runtime_error(path + ": unary logits must have dims (1, L, h, w) with L >= 2, got " +
                                 to_string(t.dims()));
    }
    return t;
}

int cmd_crf_refine(const CrfArgs& a, const RunConfig& cfg, std::ostream& out) {
    const std::string unary_path = required(a.unary, cfg.unary_path, "--unary");
    const std::string guide_path = required(a.guide, cfg.guide_path, "--guide");
    const std::string out_path = required(a.out, cfg.out_path, "--out");

    const Tensor4 logits = load_logits(unary_path);
    const ByteImage guide_img = read_image(guide_path);
    const Dims& d = logits.dims();
    if (guide_img.height != d.h || guide_img.width != d.w) {
        throw std::runtime_error(guide_path + ": guide is " + std::to_string(guide_img.width) + "x" +
                                 std::to_string(guide_img.height) + ", unaries are " + std::to_string(d.w) + "x" +
                                 std::to_string(d.h));
    }
    if (d.c > 256) {
        throw std::runtime_error(unary_path + ": at most 256 labels fit an 8-bit label map");
    }
    const Tensor4 guide = image_to_tensor(guide_img);

    std::vector<BranchConfig> branches;
    if (a.branches) {
        for (std::size_t dil : parse_dilations(*a.branches)) {
            branches.push_back({5, dil});
        }
    } else if (cfg.branches) {
        branches = *cfg.branches;
    } else {
        branches = {{5, 16}, {5, 64}};
    }

    CrfSpec spec;
    spec.labels = d.c;
    spec.steps = pick(a.steps, cfg.steps, std::size_t{5});
    const double weight = cfg.crf_weight.value_or(0.5);
    const double scale = cfg.crf_feature_scale.value_or(12.5);
    const auto compat_path = a.compat ? a.compat : cfg.compat_path;
    std::optional<TensorContainer> compat;
    if (compat_path) {
        compat = TensorContainer::load(*compat_path);
        if (compat->entries().size() != branches.size()) {
            throw std::runtime_error(*compat_path + ": " + std::to_string(compat->entries().size()) +
                                     " compat tensors for " + std::to_string(branches.size()) + " branches");
        }
    }
    for (std::size_t k = 0; k < branches.size(); ++k) {
        PairwiseBranch b = potts_branch(d.c, branches[k].size, branches[k].dilation, weight, {scale});
        if (compat) {
            const ContainerEntry& e = compat->entries()[k];
            b.compat = compat->tensor(e.name);
            b.win = WindowSpec::same(b.compat.dims().h, branches[k].dilation);
        }
        if (cfg.kernel) {
            b.kernel = *cfg.kernel;
        }
        spec.branches.push_back(std::move(b));
    }

    const Tensor4 unary = unary_from_logits(logits);
    const MfResult res = mf_infer(unary, guide, spec);
    const std::vector<std::uint32_t> before = argmax_labels(softmax_neg(unary));

    ByteImage labels{d.w, d.h, 1, {}};
    labels.pixels.reserve(res.labels.size());
    for (std::uint32_t l : res.labels) {
        labels.pixels.push_back(static_cast<std::uint8_t>(l));
    }
    pgm_write(out_path, labels);
    if (a.marginals) {
        TensorContainer q;
        q.add("marginals", res.q, DType::F64);
        q.save(*a.marginals);
    }

    std::size_t changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        changed += before[i] != res.labels[i];
    }
    const std::size_t iso_before = isolated_pixels(before, d.h, d.w);
    const std::size_t iso_after = isolated_pixels(res.labels, d.h, d.w);
    out << "labels " << d.c << " steps " << spec.steps << " branches " << spec.branches.size() << '\n'
        << "isolated_pixels unary " << iso_before << " refined " << iso_after << '\n'
        << "changed_pixels " << changed << '\n';
    if (const auto path = a.report ? a.report : cfg.report_path) {
        write_json(*path, {{"labels", d.c},
                           {"steps", spec.steps},
                           {"isolated_unary", iso_before},
                           {"isolated_refined", iso_after},
                           {"changed", changed}});
    }
    return kExitOk;
}

struct TrainSetup {
    SynthMode mode = SynthMode::Depth;
    std::size_t factor = 4;
    std::string variant = "lite";
    std::uint64_t seed = 7;
    std::size_t scenes = 200;
    std::size_t holdout = 50;
    std::size_t size = 64;
};

SynthMode parse_mode(const std::string& m) {
    if (m == "depth") {
        return SynthMode::Depth;
    }
    if (m == "flow") {
        return SynthMode::Flow;
    }
    throw CLI::ValidationError("--mode must be depth or flow, not '" + m + "'");
}

UpsamplerSpec network_spec(const TrainSetup& s) {
    const std::size_t channels = s.mode == SynthMode::Depth ? 1 : 2;
    UpsamplerSpec spec;
    if (s.variant == "lite") {
        spec = UpsamplerSpec::lite(s.factor, channels);
    } else if (s.variant == "standard") {
        spec = UpsamplerSpec::standard(s.factor, channels);
    } else {
        throw CLI::ValidationError("--variant must be lite or standard, not '" + s.variant + "'");
    }
    spec.residual = true;
    return spec;
}

std::string setup_header(const TrainSetup& s) {
    std::ostringstream os;
    os << "mode " << (s.mode == SynthMode::Depth ? "depth" : "flow") << '\n'
       << "factor " << s.factor << '\n'
       << "variant " << s.variant << '\n'
       << "seed " << s.seed << '\n'
       << "scenes " << s.scenes << '\n'
       << "holdout " << s.holdout << '\n'
       << "size " << s.size << '\n';
    return os.str();
}

TrainSetup parse_header(const std::string& manifest_file) {
    std::ifstream in(manifest_file);
    if (!in) {
        throw std::runtime_error("cannot open " + manifest_file);
    }
    TrainSetup s;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# ", 0) != 0) {
            continue;
        }
        std::istringstream ls(line.substr(2));
        std::string key, value;
        ls >> key >> value;
        seen.insert(key);
        try {
            if (key == "mode") {
                s.mode = parse_mode(value);
            } else if (key == "factor") {
                s.factor = std::stoul(value);
            } else if (key == "variant") {
                s.variant = value;
            } else if (key == "seed") {
                s.seed = std::stoull(value);
            } else if (key == "scenes") {
                s.scenes = std::stoul(value);
            } else if (key == "holdout") {
                s.holdout = std::stoul(value);
            } else if (key == "size") {
                s.size = std::stoul(value);
            }
        } catch (const std::logic_error&) {
            throw std::runtime_error(manifest_file + ": bad header line '" + line + "'");
        }
    }
    for (const char* key : {"mode", "factor", "variant", "seed", "holdout", "size"}) {
        if (!seen.contains(key)) {
            throw std::runtime_error(manifest_file + ": header has no '" + key + "' line");
        }
    }
    return s;
}

struct TrainArgs {
    std::optional<std::string> mode;
    std::optional<std::size_t> factor;
    std::optional<std::string> variant;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

int cmd_upsample_train(const TrainArgs& a, const RunConfig& cfg, std::ostream& out) {
    TrainSetup s;
    s.mode = parse_mode(pick(a.mode, cfg.mode, std::string("depth")));
    s.factor = pick(a.factor, cfg.factor, std::size_t{4});
    s.variant = pick(a.variant, cfg.variant, std::string("lite"));
    s.seed = pick(a.seed, cfg.seed, std::uint64_t{7});
    s.scenes = cfg.scenes.value_or(s.scenes);
    s.holdout = cfg.holdout.value_or(s.holdout);
    s.size = cfg.size.value_or(s.size);
    const std::string ckpt = required(a.out, cfg.ckpt_path, "--out");
    if (s.factor != 4 && s.factor != 8 && s.factor != 16) {
        throw CLI::ValidationError("--factor must be 4, 8 or 16");
    }
    if (s.scenes == 0 || s.size % s.factor != 0) {
        throw CLI::ValidationError("need at least one scene and a scene size divisible by the factor");
    }

    Network net(network_spec(s), s.seed);
    const UpsampleSet data = make_upsample_set(synth_generate(s.seed, s.scenes, s.size, s.mode), s.mode, s.factor);
    TrainOptions opt;
    opt.seed = s.seed;
    opt.schedule = cfg.schedule.value_or(Schedule::desk());
    opt.batch = cfg.batch.value_or(opt.batch);
    opt.crop = cfg.crop.value_or(opt.crop);
    opt.on_step = [&out](std::size_t step, double loss) {
        if (step % 100 == 0) {
            out << "step " << step << " loss " << format_double(loss) << '\n';
        }
    };
    const std::vector<double> curve = train(net, data, opt);
    save_checkpoint(net, ckpt, setup_header(s));
    out << "trained " << curve.size() << " steps, " << net.parameter_count() << " parameters -> " << ckpt << '\n';
    return kExitOk;
}

struct EvalArgs {
    std::optional<std::string> ckpt;
    std::optional<std::string> report;
};

int cmd_upsample_eval(const EvalArgs& a, const RunConfig& cfg, std::ostream& out) {
    const std::string ckpt = required(a.ckpt, cfg.ckpt_path, "--ckpt");
    const std::string report = required(a.report, cfg.report_path, "--report");
    const TrainSetup s = parse_header(manifest_path(ckpt).string());
    Network net(network_spec(s), s.seed);
    load_checkpoint(net, ckpt);

    const UpsampleSet held =
        make_upsample_set(synth_generate(s.seed + kHoldoutSeedOffset, s.holdout, s.size, s.mode), s.mode, s.factor);
    const EvalMetrics m = evaluate(net, held);
    const bool flow = s.mode == SynthMode::Flow;
    json j = {{"mode", flow ? "flow" : "depth"},
              {"factor", s.factor},
              {"variant", s.variant},
              {"scenes", s.holdout},
              {"rmse", m.rmse},
              {"baseline_rmse", m.baseline_rmse}};
    if (flow) {
        j["epe"] = m.epe;
        j["baseline_epe"] = m.baseline_epe;
        out << "epe " << format_double(m.epe) << " bilinear_epe " << format_double(m.baseline_epe) << '\n';
    }
    out << "rmse " << format_double(m.rmse) << " bilinear_rmse " << format_double(m.baseline_rmse) << '\n';
    write_json(report, j);
    return kExitOk;
}

struct SwapArgs {
    std::optional<double> scale;
    std::optional<std::uint64_t> seed;
};

int cmd_swap_check(const SwapArgs& a, const RunConfig& cfg, std::ostream& out) {
    const double scale = pick(a.scale, cfg.scale, 1e-4);
    const std::uint64_t seed = pick(a.seed, cfg.seed, std::uint64_t{0});
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
        throw CLI::ValidationError("--scale must be finite and non-negative");
    }
    bool ok = true;
    for (double s : {0.0, scale}) {
        const SwapCheckResult r = swap_check(seed, s);
        const bool within = s == 0.0 ? r.deviation == 0.0 : r.deviation <= r.bound;
        ok = ok && within;
        out << "scale " << format_double(s) << " deviation " << format_double(r.deviation) << " bound "
            << format_double(r.bound) << (within ? "" : " EXCEEDED") << '\n';
        if (s == scale) {
            break;
        }
    }
    return ok ? kExitOk : kExitVerification;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, {"seed", "gradcheck", "swap", "bilateral", "crf", "train", "paths"}, "config");
    RunConfig c;
    read(j, "seed", c.seed, "config");
    if (j.contains("gradcheck")) {
        const json& g = j["gradcheck"];
        check_keys(g, {"cases"}, "gradcheck");
        read(g, "cases", c.cases, "gradcheck");
    }
    if (j.contains("swap")) {
        const json& s = j["swap"];
        check_keys(s, {"scale"}, "swap");
        read(s, "scale", c.scale, "swap");
    }
    if (j.contains("bilateral")) {
        const json& b = j["bilateral"];
        check_keys(b, {"spatial_sigma", "feature_sigma", "window"}, "bilateral");
        read(b, "spatial_sigma", c.spatial_sigma, "bilateral");
        read(b, "feature_sigma", c.feature_sigma, "bilateral");
        read(b, "window", c.window, "bilateral");
    }
    if (j.contains("crf")) {
        const json& r = j["crf"];
        check_keys(r, {"branches", "steps", "weight", "feature_scale", "kernel"}, "crf");
        if (r.contains("branches")) {
            if (!r["branches"].is_array() || r["branches"].empty()) {
                throw ConfigError("crf.branches must be a non-empty array");
            }
            std::vector<BranchConfig> bs;
            for (const json& b : r["branches"]) {
                check_keys(b, {"size", "dilation"}, "crf.branches[]");
                std::optional<std::size_t> size, dil;
                read(b, "size", size, "crf.branches[]");
                read(b, "dilation", dil, "crf.branches[]");
                BranchConfig bc{size.value_or(5), dil.value_or(1)};
                if (bc.size % 2 == 0 || bc.dilation == 0) {
                    throw ConfigError("crf.branches[]: size must be odd and dilation positive");
                }
                bs.push_back(bc);
            }
            c.branches = std::move(bs);
        }
        read(r, "steps", c.steps, "crf");
        read(r, "weight", c.crf_weight, "crf");
        read(r, "feature_scale", c.crf_feature_scale, "crf");
        if (r.contains("kernel")) {
            c.kernel = parse_kernel(r["kernel"]);
        }
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t, {"mode", "factor", "variant", "scenes", "holdout", "size", "batch", "crop", "schedule"}, "train");
        read(t, "mode", c.mode, "train");
        read(t, "factor", c.factor, "train");
        read(t, "variant", c.variant, "train");
        read(t, "scenes", c.scenes, "train");
        read(t, "holdout", c.holdout, "train");
        read(t, "size", c.size, "train");
        read(t, "batch", c.batch, "train");
        read(t, "crop", c.crop, "train");
        if (t.contains("schedule")) {
            c.schedule = parse_schedule(t["schedule"]);
        }
    }
    if (j.contains("paths")) {
        const json& p = j["paths"];
        check_keys(p, {"unary", "guide", "out", "compat", "ckpt", "report"}, "paths");
        read(p, "unary", c.unary_path, "paths");
        read(p, "guide", c.guide_path, "paths");
        read(p, "out", c.out_path, "paths");
        read(p, "compat", c.compat_path, "paths");
        read(p, "ckpt", c.ckpt_path, "paths");
        read(p, "report", c.report_path, "paths");
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    const Bytes bytes = read_file(path);
    try {
        return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::vector<std::size_t> parse_dilations(const std::string& text) {
    std::vector<std::size_t> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || v == 0) {
            throw CLI::ValidationError("--branches expects positive dilations like 16,64; got '" + text + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw CLI::ValidationError("--branches needs at least one dilation");
    }
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pixel-adaptive convolution toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration");

    GradcheckArgs gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every analytic gradient");
    gradcheck->add_option("--seed", gc.seed);
    gradcheck->add_option("--cases", gc.cases, "Random PAC/PacT configurations (0: run nothing)");
    gradcheck->add_option("--report", gc.report, "Write the results as JSON");

    BilateralArgs bl;
    auto* bilateral = app.add_subcommand("bilateral", "Edge-preserving bilateral filter of a PPM/PGM image");
    bilateral->add_option("input", bl.input)->required();
    bilateral->add_option("output", bl.output)->required();
    bilateral->add_option("--spatial-sigma", bl.spatial_sigma, "Spatial sigma in pixels (default 2)");
    bilateral->add_option("--feature-sigma", bl.feature_sigma, "Range sigma in 0-255 units (default 20)");
    bilateral->add_option("--window", bl.window, "Odd window size (default 2 ceil(2 S) + 1)");

    CrfArgs cr;
    auto* crf = app.add_subcommand("crf-refine", "Mean-field refinement of per-pixel label logits");
    crf->add_option("--unary", cr.unary, "Tensor container with logits (1, L, h, w)");
    crf->add_option("--guide", cr.guide, "Guide image (PPM/PGM)");
    crf->add_option("--out", cr.out, "Label map (PGM, value = label index)");
    crf->add_option("--branches", cr.branches, "Comma-separated dilations of 5x5 branches (default 16,64)");
    crf->add_option("--steps", cr.steps, "Mean-field steps (default 5)");
    crf->add_option("--compat", cr.compat, "Tensor container with one (L, L, s, s) compat per branch");
    crf->add_option("--marginals", cr.marginals, "Write the final marginals (1, L, h, w) as a tensor container");
    crf->add_option("--report", cr.report, "Write counts as JSON");

    TrainArgs tr;
    auto* utrain = app.add_subcommand("upsample-train", "Train a joint upsampling network on synthetic scenes");
    utrain->add_option("--mode", tr.mode, "depth or flow (default depth)");
    utrain->add_option("--factor", tr.factor, "4, 8 or 16 (default 4)");
    utrain->add_option("--variant", tr.variant, "lite or standard (default lite)");
    utrain->add_option("--out", tr.out, "Checkpoint path");
    utrain->add_option("--seed", tr.seed, "Scene, initialization and batch seed (default 7)");

    EvalArgs ev;
    auto* ueval = app.add_subcommand("upsample-eval", "Held-out RMSE/EPE of a checkpoint against bilinear");
    ueval->add_option("--ckpt", ev.ckpt, "Checkpoint written by upsample-train");
    ueval->add_option("--report", ev.report, "Metrics JSON output");

    SwapArgs sw;
    auto* swap = app.add_subcommand("swap-check", "Hot-swap a random conv stack into PAC and measure the change");
    swap->add_option("--scale", sw.scale, "Feature scale (default 0.0001)");
    swap->add_option("--seed", sw.seed);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (gradcheck->parsed()) {
            return cmd_gradcheck(gc, cfg, out);
        }
        if (bilateral->parsed()) {
            return cmd_bilateral(bl, cfg, out);
        }
        if (crf->parsed()) {
            return cmd_crf_refine(cr, cfg, out);
        }
        if (utrain->parsed()) {
            return cmd_upsample_train(tr, cfg, out);
        }
        if (ueval->parsed()) {
            return cmd_upsample_eval(ev, cfg, out);
        }
        if (swap->parsed()) {
            return cmd_swap_check(sw, cfg, out);
        }
        return kExitUsage;
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

}  // namespace pacgrid::cli
