// Command-line front end: track sequences, evaluate traces, dump prior-stage
// maps, generate synthetic sequences, and run the oracle self-test.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "sdt/harness.hpp"
#include "sdt/oracles.hpp"

namespace {

int fail(int code, const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code;
}

std::unique_ptr<sdt::FeatureProvider> make_provider(const std::string& spec) {
    if (spec == "standin") return std::make_unique<sdt::StandInProvider>();
    if (spec.rfind("file:", 0) == 0)
        return std::make_unique<sdt::FileFeatureProvider>(spec.substr(5));
    throw std::invalid_argument("unknown feature provider \"" + spec +
                                "\"; expected standin or file:<path>");
}

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

struct TrackOpts {
    std::string seq_dir;
    std::string config_path;
    std::string ablation = "full";
    std::string provider = "standin";
    std::string dump_dir;
    std::string trace_path = "trace.jsonl";
    std::string report_path = "report.json";
    int64_t seed = -1;
};

int run_track(const TrackOpts& o) {
    sdt::TrackerConfig cfg;
    sdt::Ablation ablation = sdt::Ablation::full;
    sdt::SequenceDataset ds;
    std::unique_ptr<sdt::FeatureProvider> provider;
    try {
        if (!o.config_path.empty()) cfg = sdt::load_config(o.config_path);
        if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
        sdt::validate(cfg);
        ablation = sdt::ablation_from_string(o.ablation);
        ds = sdt::load_sequence(o.seq_dir);
        provider = make_provider(o.provider);
    } catch (const std::exception& e) {
        return fail(1, e);
    }
    try {
        const sdt::LoadedSequence seq = sdt::load_frames(ds);
        const sdt::Trace trace = sdt::run_tracker(seq, cfg, ablation, *provider, o.dump_dir);
        sdt::write_trace(trace, o.trace_path);
        std::cerr << "trace: " << o.trace_path << "\n";
        if (seq.groundtruth.size() == seq.frames.size()) {
            const auto j = sdt::report_to_json(sdt::evaluate(trace, seq.groundtruth));
            write_json(j, o.report_path);
            std::cout << j.dump(2) << "\n";
        } else {
            std::cout << "tracked " << trace.frames.size()
                      << " frames; single ground-truth box, no report\n";
        }
        return 0;
    } catch (const std::exception& e) {
        return fail(2, e);
    }
}

struct EvalOpts {
    std::string trace_path;
    std::string seq_dir;
    std::string report_path;
};

int run_eval(const EvalOpts& o) {
    sdt::Trace trace;
    std::vector<sdt::BoundingBox> gt;
    try {
        trace = sdt::read_trace(o.trace_path);
        const sdt::SequenceDataset ds = sdt::load_sequence(o.seq_dir);
        gt = ds.groundtruth;
        if (gt.size() != trace.frames.size())
            throw std::invalid_argument("eval: trace has " + std::to_string(trace.frames.size()) +
                                        " frames but the sequence has " +
                                        std::to_string(gt.size()) + " ground-truth boxes");
    } catch (const std::exception& e) {
        return fail(1, e);
    }
    try {
        const auto j = sdt::report_to_json(sdt::evaluate(trace, gt));
        if (!o.report_path.empty()) write_json(j, o.report_path);
        std::cout << j.dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        return fail(2, e);
    }
}

struct PriorOpts {
    std::string seq_dir;
    std::string config_path;
    std::string out_dir = "prior_out";
    int frame = 2;
};

int run_prior(const PriorOpts& o) {
    sdt::TrackerConfig cfg;
    sdt::SequenceDataset ds;
    try {
        if (!o.config_path.empty()) cfg = sdt::load_config(o.config_path);
        sdt::validate(cfg);
        ds = sdt::load_sequence(o.seq_dir);
        if (!ds.color)
            throw std::invalid_argument("prior: the shallow-cue stage needs color frames");
        if (o.frame < 2 || o.frame > static_cast<int>(ds.size()))
            throw std::invalid_argument("prior: --frame must be in [2, " +
                                        std::to_string(ds.size()) + "]");
    } catch (const std::exception& e) {
        return fail(1, e);
    }
    try {
        const sdt::Image first = sdt::load_image(ds.frame_paths[0]);
        const sdt::Image frame = sdt::load_image(ds.frame_paths[static_cast<size_t>(o.frame - 1)]);
        const sdt::BoundingBox gt0 = ds.groundtruth[0];
        const sdt::BoundingBox prev =
            ds.groundtruth[std::min<size_t>(static_cast<size_t>(o.frame - 2),
                                            ds.groundtruth.size() - 1)];

        const sdt::ShallowFeatureStack first_stack = sdt::extract_shallow_features(first);
        const sdt::PriorWeights weights = sdt::learn_prior_weights(
            first_stack, sdt::box_to_map(gt0, first.width, first.height), cfg.lambda_s);

        const sdt::ShallowFeatureStack stack = sdt::extract_shallow_features(frame);
        const double pcx =
            std::clamp(sdt::detail::resample_coord(prev.cx, stack.width, frame.width), 0.0,
                       static_cast<double>(stack.width - 1));
        const double pcy =
            std::clamp(sdt::detail::resample_coord(prev.cy, stack.height, frame.height), 0.0,
                       static_cast<double>(stack.height - 1));
        const sdt::SaliencyMap smap =
            sdt::build_saliency_map(stack, weights, pcx, pcy, cfg.sigma_b, cfg.delta_s,
                                    cfg.center_prior_literal);
        const sdt::BoundingBox mb = sdt::box_to_map(prev, frame.width, frame.height);
        std::vector<sdt::RegionCandidate> cands =
            sdt::extract_candidates(smap, frame, prev, cfg.sigma_s_factor * mb.w * mb.h);

        const int tw = std::max(1, static_cast<int>(std::lround(gt0.w)));
        const int th = std::max(1, static_cast<int>(std::lround(gt0.h)));
        const sdt::Image tmpl = sdt::crop_resize(first, gt0.cx, gt0.cy, gt0.w, gt0.h, tw, th);
        const sdt::RoiDecision dec =
            sdt::decide_roi(cands, tmpl, prev.cx, prev.cy, cfg.sigma_c, cfg.delta_c);

        std::filesystem::create_directories(o.out_dir);
        sdt::save_heatmap(smap.combined, o.out_dir + "/combined.png");
        sdt::save_heatmap(smap.penalized, o.out_dir + "/penalized.png");
        sdt::Image binary;
        binary.width = smap.width;
        binary.height = smap.height;
        binary.channels = 1;
        binary.data.assign(smap.binary.begin(), smap.binary.end());
        sdt::save_image(binary, o.out_dir + "/binary.png");

        nlohmann::ordered_json j;
        j["frame"] = o.frame;
        j["threshold"] = smap.threshold;
        j["weights"] = weights.w;
        j["decision"] = {{"cx", dec.cx},
                         {"cy", dec.cy},
                         {"used_prior", dec.used_prior},
                         {"confidence", dec.confidence},
                         {"winner", dec.winner}};
        j["candidates"] = nlohmann::ordered_json::array();
        for (const auto& c : cands)
            j["candidates"].push_back({{"map", {c.centroid_x, c.centroid_y}},
                                       {"frame", {c.frame_x, c.frame_y}},
                                       {"area", c.pixels.size()},
                                       {"confidence", c.confidence}});
        write_json(j, o.out_dir + "/prior.json");
        std::cout << j.dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        return fail(2, e);
    }
}

struct SynthOpts {
    std::string spec_path;
    std::string out_dir;
};

int run_synth(const SynthOpts& o) {
    sdt::SyntheticSpec spec;
    try {
        std::ifstream is(o.spec_path);
        if (!is) throw std::invalid_argument("synth: cannot open " + o.spec_path);
        nlohmann::json j;
        is >> j;
        spec = sdt::synthetic_spec_from_json(j);
        sdt::validate_synthetic_spec(spec);
    } catch (const std::exception& e) {
        return fail(1, e);
    }
    try {
        sdt::write_synthetic(spec, o.out_dir);
        std::cout << "wrote " << spec.frames << " frames to " << o.out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        return fail(2, e);
    }
}

int run_selftest() {
    try {
        return sdt::oracles::selftest_run_all(std::cout) == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        return fail(2, e);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual tracker with a shallow-cue relocation prior and online-updated heads"};
    app.require_subcommand(1);

    TrackOpts t;
    CLI::App* track = app.add_subcommand("track", "Track a target through a sequence directory");
    track->add_option("seq_dir", t.seq_dir, "Sequence directory (img/ + groundtruth_rect.txt)")
        ->required();
    track->add_option("--config", t.config_path, "Tracker configuration JSON");
    track->add_option("--ablation", t.ablation,
                      "full, no_update, update_first_frame_only, update_current_frame, "
                      "no_prior, or no_rectify");
    track->add_option("--provider", t.provider, "Feature provider: standin or file:<path>");
    track->add_option("--dump-maps", t.dump_dir, "Directory for per-frame heat-map PNGs");
    track->add_option("--trace", t.trace_path, "Output trace path (JSON lines)");
    track->add_option("--report", t.report_path, "Output report path (JSON)");
    track->add_option("--seed", t.seed, "Override the configured seed");

    EvalOpts e;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a trace against ground truth");
    eval->add_option("trace", e.trace_path, "Trace file produced by track")->required();
    eval->add_option("seq_dir", e.seq_dir, "Sequence directory with groundtruth_rect.txt")
        ->required();
    eval->add_option("--report", e.report_path, "Also write the report JSON here");

    PriorOpts p;
    CLI::App* prior = app.add_subcommand("prior", "Dump saliency maps and the ROI decision");
    prior->add_option("seq_dir", p.seq_dir, "Sequence directory")->required();
    prior->add_option("--frame", p.frame, "1-based frame to analyze (>= 2)")->required();
    prior->add_option("--config", p.config_path, "Tracker configuration JSON");
    prior->add_option("--out", p.out_dir, "Output directory for PNGs and prior.json");

    SynthOpts s;
    CLI::App* synth = app.add_subcommand("synth", "Render a synthetic sequence");
    synth->add_option("spec", s.spec_path, "Scenario description JSON")->required();
    synth->add_option("out_dir", s.out_dir, "Output sequence directory")->required();

    CLI::App* selftest = app.add_subcommand("selftest", "Run the numerical oracle self-test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 1;
    }

    if (*track) return run_track(t);
    if (*eval) return run_eval(e);
    if (*prior) return run_prior(p);
    if (*synth) return run_synth(s);
    if (*selftest) return run_selftest();
    return 1;
}
