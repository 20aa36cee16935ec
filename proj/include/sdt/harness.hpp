/*
 * Benchmark harness: sequence loading (OTB-style directory layout), tracker
 * execution with ablation switches, overlap/center-error metrics, and trace
 * and report serialization.
 */
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "sdt/image_io.hpp"
#include "sdt/synthetic.hpp"
#include "sdt/tracker.hpp"

namespace sdt {

constexpr double kSuccessIouThreshold = 0.5;
constexpr double kPrecisionPxThreshold = 20.0;

// ---------------------------------------------------------------------------
// Dataset loading.
// ---------------------------------------------------------------------------

struct SequenceDataset {
    std::string name;
    std::vector<std::string> frame_paths;
    std::vector<BoundingBox> groundtruth;  // center convention
    bool color = false;
    size_t size() const { return frame_paths.size(); }
};

// Ground-truth lines are "x,y,w,h" in top-left convention (commas or
// whitespace); they are converted to center convention here.
inline std::vector<BoundingBox> parse_groundtruth(std::istream& is, const std::string& source) {
    std::vector<BoundingBox> boxes;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string cleaned = line;
        for (char& c : cleaned)
            if (c == ',' || c == '\t' || c == '\r') c = ' ';
        if (cleaned.find_first_not_of(' ') == std::string::npos) continue;
        std::istringstream ls(cleaned);
        double x = 0, y = 0, w = 0, h = 0;
        if (!(ls >> x >> y >> w >> h))
            throw std::runtime_error(source + ": unparsable ground-truth line " +
                                     std::to_string(line_no) + ": \"" + line + "\"");
        boxes.push_back(BoundingBox::from_tlwh(x, y, w, h));
    }
    return boxes;
}

inline SequenceDataset load_sequence(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    const fs::path img_dir = root / "img";
    if (!fs::is_directory(img_dir))
        throw std::runtime_error("sequence " + dir + ": missing img/ directory");

    SequenceDataset ds;
    ds.name = root.filename().string();
    if (ds.name.empty()) ds.name = root.parent_path().filename().string();
    for (const auto& entry : fs::directory_iterator(img_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".jpg" || ext == ".jpeg" || ext == ".png")
            ds.frame_paths.push_back(entry.path().string());
    }
    std::sort(ds.frame_paths.begin(), ds.frame_paths.end());
    if (ds.frame_paths.size() < 2)
        throw std::runtime_error("sequence " + dir + ": needs at least 2 frames, found " +
                                 std::to_string(ds.frame_paths.size()));

    const fs::path gt_path = root / "groundtruth_rect.txt";
    std::ifstream gt(gt_path);
    if (!gt) throw std::runtime_error("sequence " + dir + ": missing groundtruth_rect.txt");
    ds.groundtruth = parse_groundtruth(gt, gt_path.string());
    if (ds.groundtruth.size() != ds.frame_paths.size() && ds.groundtruth.size() != 1)
        throw std::runtime_error(gt_path.string() + ": " + std::to_string(ds.groundtruth.size()) +
                                 " ground-truth boxes for " +
                                 std::to_string(ds.frame_paths.size()) + " frames");

    ds.color = load_image(ds.frame_paths.front()).channels == 3;
    return ds;
}

inline LoadedSequence load_frames(const SequenceDataset& ds) {
    LoadedSequence seq;
    seq.name = ds.name;
    seq.groundtruth = ds.groundtruth;
    seq.frames.reserve(ds.frame_paths.size());
    for (const auto& path : ds.frame_paths) seq.frames.push_back(load_image(path));
    return seq;
}

// ---------------------------------------------------------------------------
// Tracker execution.
// ---------------------------------------------------------------------------

struct Trace {
    std::string sequence;
    std::string ablation = "full";
    TrackerConfig config;
    std::vector<FrameDiagnostics> frames;
    std::vector<UpdateEvent> events;
};

inline Trace run_tracker(const LoadedSequence& seq, const TrackerConfig& cfg,
                         Ablation ablation, FeatureProvider& provider,
                         const std::string& dump_dir = "") {
    if (seq.frames.size() < 2) throw std::invalid_argument("run_tracker: needs at least 2 frames");
    if (seq.groundtruth.empty())
        throw std::invalid_argument("run_tracker: needs at least the first ground-truth box");
    Trace trace;
    trace.sequence = seq.name;
    trace.ablation = to_string(ablation);
    trace.config = cfg;

    Tracker tracker(cfg, provider, ablation);
    const bool dump = !dump_dir.empty();
    if (dump) {
        std::filesystem::create_directories(dump_dir);
        tracker.set_keep_dumps(true);
    }
    trace.frames.push_back(tracker.init(seq.frames[0], seq.groundtruth[0]));
    for (size_t i = 1; i < seq.frames.size(); ++i) {
        trace.frames.push_back(tracker.track(seq.frames[i]));
        if (dump && tracker.dumps().valid) {
            std::ostringstream tag;
            tag << std::setw(4) << std::setfill('0') << (i + 1);
            const auto& d = tracker.dumps();
            save_heatmap(d.holistic_raw, dump_dir + "/mh_raw_" + tag.str() + ".png");
            save_heatmap(d.holistic_rect, dump_dir + "/mh_rect_" + tag.str() + ".png");
            for (int p = 0; p < 4; ++p)
                save_heatmap(d.parts[static_cast<size_t>(p)],
                             dump_dir + "/mp" + std::to_string(p + 1) + "_" + tag.str() + ".png");
        }
    }
    trace.events = tracker.update_events();
    return trace;
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

struct EvalReport {
    std::string sequence;
    std::string ablation = "full";
    int frames = 0;
    double overlap_rate = 0.0;   // mean IoU
    double center_error = 0.0;   // mean distance in px
    double success = 0.0;        // fraction of frames with IoU > 0.5
    double precision = 0.0;      // fraction of frames with CE <= 20 px
};

inline EvalReport evaluate(const Trace& trace, const std::vector<BoundingBox>& groundtruth) {
    if (trace.frames.size() != groundtruth.size())
        throw std::runtime_error("evaluate: trace has " + std::to_string(trace.frames.size()) +
                                 " frames but ground truth has " +
                                 std::to_string(groundtruth.size()));
    if (trace.frames.empty()) throw std::runtime_error("evaluate: empty trace");
    EvalReport r;
    r.sequence = trace.sequence;
    r.ablation = trace.ablation;
    r.frames = static_cast<int>(trace.frames.size());
    int success = 0, precise = 0;
    for (size_t i = 0; i < trace.frames.size(); ++i) {
        const double overlap = iou(trace.frames[i].box, groundtruth[i]);
        const double ce = center_error(trace.frames[i].box, groundtruth[i]);
        r.overlap_rate += overlap;
        r.center_error += ce;
        if (overlap > kSuccessIouThreshold) ++success;
        if (ce <= kPrecisionPxThreshold) ++precise;
    }
    const double n = static_cast<double>(trace.frames.size());
    r.overlap_rate /= n;
    r.center_error /= n;
    r.success = success / n;
    r.precision = precise / n;
    return r;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    return {{"sequence", r.sequence}, {"ablation", r.ablation},   {"frames", r.frames},
            {"overlap_rate", r.overlap_rate}, {"center_error", r.center_error},
            {"success", r.success},   {"precision", r.precision}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.sequence = j.at("sequence").get<std::string>();
    r.ablation = j.at("ablation").get<std::string>();
    r.frames = j.at("frames").get<int>();
    r.overlap_rate = j.at("overlap_rate").get<double>();
    r.center_error = j.at("center_error").get<double>();
    r.success = j.at("success").get<double>();
    r.precision = j.at("precision").get<double>();
    return r;
}

// ---------------------------------------------------------------------------
// Trace serialization (JSON lines).
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json frame_to_json(const FrameDiagnostics& d) {
    nlohmann::ordered_json j;
    j["frame"] = d.frame;
    j["box"] = {d.box.cx, d.box.cy, d.box.w, d.box.h};
    j["scale"] = d.box.scale;
    j["confidence"] = d.confidence;
    j["used_prior"] = d.used_prior;
    j["holistic_peaks"] = d.holistic_peaks;
    j["valid_part_peaks"] = d.valid_part_peaks;
    j["frozen"] = d.frozen;
    j["update_fired"] = d.update_fired;
    if (!d.note.empty()) j["note"] = d.note;
    return j;
}

inline FrameDiagnostics frame_from_json(const nlohmann::json& j) {
    FrameDiagnostics d;
    d.frame = j.at("frame").get<int>();
    const auto& box = j.at("box");
    d.box = BoundingBox{box.at(0).get<double>(), box.at(1).get<double>(), box.at(2).get<double>(),
                        box.at(3).get<double>(), j.at("scale").get<double>()};
    d.confidence = j.at("confidence").get<double>();
    d.used_prior = j.at("used_prior").get<bool>();
    d.holistic_peaks = j.at("holistic_peaks").get<int>();
    d.valid_part_peaks = j.at("valid_part_peaks").get<int>();
    d.frozen = j.at("frozen").get<bool>();
    d.update_fired = j.at("update_fired").get<bool>();
    if (j.contains("note")) d.note = j.at("note").get<std::string>();
    return d;
}

inline void write_trace(const Trace& trace, std::ostream& os) {
    nlohmann::ordered_json header;
    header["sequence"] = trace.sequence;
    header["ablation"] = trace.ablation;
    header["config"] = config_to_json(trace.config);
    os << header.dump() << "\n";
    size_t next_event = 0;
    for (const auto& frame : trace.frames) {
        os << frame_to_json(frame).dump() << "\n";
        while (next_event < trace.events.size() &&
               trace.events[next_event].frame == frame.frame) {
            const auto& e = trace.events[next_event++];
            nlohmann::ordered_json j;
            j["event"] = "update";
            j["frame"] = e.frame;
            j["entry_frame"] = e.entry_frame;
            j["probability"] = e.probability;
            j["pre_loss"] = e.pre_loss;
            j["post_loss"] = e.post_loss;
            j["reverted"] = e.reverted;
            os << j.dump() << "\n";
        }
    }
}

inline void write_trace(const Trace& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write trace: " + path);
    write_trace(trace, os);
}

inline Trace read_trace(std::istream& is) {
    Trace trace;
    std::string line;
    bool have_header = false;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("trace line " + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("config")) {
            trace.sequence = j.value("sequence", "");
            trace.ablation = j.value("ablation", "full");
            trace.config = config_from_json(j.at("config"));
            have_header = true;
        } else if (j.contains("box")) {
            trace.frames.push_back(frame_from_json(j));
        } else if (j.value("event", "") == "update") {
            UpdateEvent e;
            e.frame = j.at("frame").get<int>();
            e.entry_frame = j.at("entry_frame").get<int>();
            e.probability = j.at("probability").get<double>();
            e.pre_loss = j.at("pre_loss").get<double>();
            e.post_loss = j.at("post_loss").get<double>();
            e.reverted = j.at("reverted").get<bool>();
            trace.events.push_back(e);
        } else {
            throw std::runtime_error("trace line " + std::to_string(line_no) +
                                     ": unrecognized record");
        }
    }
    if (!have_header && trace.frames.empty()) throw std::runtime_error("trace: empty file");
    return trace;
}

inline Trace read_trace(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read trace: " + path);
    return read_trace(is);
}

// ---------------------------------------------------------------------------
// Synthetic sequence export.
// ---------------------------------------------------------------------------

inline void write_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    const LoadedSequence seq = synthesize(spec);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "img");
    std::ofstream gt(fs::path(out_dir) / "groundtruth_rect.txt");
    if (!gt) throw std::runtime_error("cannot write ground truth in " + out_dir);
    gt << std::setprecision(10);
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        std::ostringstream name;
        name << std::setw(4) << std::setfill('0') << (i + 1) << ".png";
        save_image(seq.frames[i], (fs::path(out_dir) / "img" / name.str()).string());
        const BoundingBox& b = seq.groundtruth[i];
        gt << b.left() << "," << b.top() << "," << b.w << "," << b.h << "\n";
    }
}

}  // namespace sdt
