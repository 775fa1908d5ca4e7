// xcanids command line. Every pipeline stage is a subcommand mapping input
// files and flags to output files; given the same inputs and seeds every
// subcommand writes byte-identical artifacts. Exit codes: 0 ok, 1 usage,
// 2 bad input data, 3 internal fault.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "xcanids/attack.hpp"
#include "xcanids/canlog.hpp"
#include "xcanids/container.hpp"
#include "xcanids/dbc.hpp"
#include "xcanids/detect.hpp"
#include "xcanids/error.hpp"
#include "xcanids/eval.hpp"
#include "xcanids/model.hpp"
#include "xcanids/pipeline.hpp"
#include "xcanids/selection.hpp"
#include "xcanids/synth.hpp"
#include "xcanids/util.hpp"

namespace {

using namespace xcanids;

std::vector<CanMessage> load_log(const std::string& path) {
    if (path == "-") return read_log(std::cin);
    return read_log_file(path);
}

// Streams to the named file, or to stdout for "-" / empty.
void with_output(const std::string& path, const std::function<void(std::ostream&)>& fn) {
    if (path.empty() || path == "-") {
        fn(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    fn(out);
    out.flush();
    if (!out) throw DataError("short write to " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint32_t parse_aid(std::string_view s) {
    if (s.starts_with("0x") || s.starts_with("0X")) s.remove_prefix(2);
    std::uint64_t v = parse_u64(s, 16);
    if (v > kMaxAid) throw DataError("arbitration id out of range: " + std::string(s));
    return static_cast<std::uint32_t>(v);
}

std::string format_time_s(TimeUs t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld.%06lld", static_cast<long long>(t / kUsPerSec),
                  static_cast<long long>(t % kUsPerSec));
    return buf;
}

// ---------------------------------------------------------------- parse-dbc

struct ParseDbcOpts {
    std::string dbc, out;
    bool quiet = false;
};

void run_parse_dbc(const ParseDbcOpts& o) {
    std::vector<std::string> notes;
    CanDatabase db = parse_dbc_file(o.dbc, &notes);
    for (const auto& n : notes) std::fprintf(stderr, "note: %s\n", n.c_str());
    std::size_t signals = 0;
    for (const auto& [aid, msg] : db.messages) signals += msg.signals.size();
    if (!o.quiet) with_output(o.out, [&](std::ostream& os) { os << print_dbc(db); });
    std::fprintf(stderr, "parse-dbc: %zu messages, %zu signals\n", db.messages.size(), signals);
}

// -------------------------------------------------------------------- stats

struct StatsOpts {
    std::string log, dbc, out;
};

void run_stats(const StatsOpts& o) {
    auto log = load_log(o.log);
    CanDatabase db;
    bool have_db = !o.dbc.empty();
    if (have_db) db = parse_dbc_file(o.dbc);
    auto rows = stream_stats(log, have_db ? &db : nullptr);
    with_output(o.out, [&](std::ostream& os) {
        os << "aid\tmessages\tdlc\tunique_payloads\tmean_dt_s\tstd_dt_s\tsender\tsignals\tknown\n";
        for (const auto& r : rows) {
            os << format_aid_hex(r.aid) << '\t' << r.message_count << '\t' << r.dlc << '\t'
               << r.unique_payloads << '\t'
               << (r.mean_dt_s ? format_double(*r.mean_dt_s) : "-") << '\t'
               << (r.std_dt_s ? format_double(*r.std_dt_s) : "-") << '\t'
               << (r.sender.empty() ? "-" : r.sender) << '\t' << r.signal_count << '\t'
               << (r.in_database ? 1 : 0) << '\n';
        }
    });
    std::fprintf(stderr, "stats: %zu messages across %zu streams\n", log.size(), rows.size());
}

// ------------------------------------------------------------------ hamming

struct HammingOpts {
    std::string log, out;
    std::vector<std::string> aids;
};

void run_hamming(const HammingOpts& o) {
    auto log = load_log(o.log);
    HammingSummary sum;
    if (o.aids.empty()) {
        sum = hamming_profiles(log);
    } else {
        for (const auto& s : o.aids) {
            sum.per_aid.push_back(hamming_profile(log, parse_aid(s)));
            sum.total += sum.per_aid.back().sum;
            sum.flipped_positions += sum.per_aid.back().flipped_positions;
        }
    }
    if (!o.out.empty()) {
        with_output(o.out, [&](std::ostream& os) {
            os << "aid,bit,d\n";
            for (const auto& p : sum.per_aid)
                for (std::size_t bit = 0; bit < p.d.size(); ++bit)
                    os << format_aid_hex(p.aid) << ',' << bit << ',' << format_double(p.d[bit])
                       << '\n';
        });
    }
    std::ostream& os = std::cout;
    os << "aid\tmessages\tflipped_bits\tsum\n";
    for (const auto& p : sum.per_aid)
        os << format_aid_hex(p.aid) << '\t' << p.message_count << '\t' << p.flipped_positions
           << '\t' << format_double(p.sum) << '\n';
    os << "total\t-\t" << sum.flipped_positions << '\t' << format_double(sum.total) << '\n';
    if (sum.skipped_streams)
        std::fprintf(stderr, "hamming: skipped %zu stream(s) with fewer than 2 frames\n",
                     sum.skipped_streams);
}

// -------------------------------------------------------------------- synth

struct SynthOpts {
    std::string out_dbc, out_log, trace;
    double duration_s = 600.0;
    std::uint64_t seed = 42;
    std::string cycle = "driving";
};

void run_synth(const SynthOpts& o) {
    SynthProfile profile;
    profile.duration_s = o.duration_s;
    profile.seed = o.seed;
    profile.cycle = o.cycle == "stationary" ? DriveCycle::stationary : DriveCycle::driving;
    SynthResult res = generate_traffic(profile);
    with_output(o.out_dbc, [&](std::ostream& os) { os << print_dbc(res.db); });
    write_log_file(o.out_log, res.log);
    if (!o.trace.empty()) {
        with_output(o.trace, [&](std::ostream& os) {
            os << "time_s,speed_kmh,wheel_fl_kmh,wheel_fr_kmh,wheel_rl_kmh,wheel_rr_kmh,rpm,"
                  "gear,steer_deg,steer_rate_dps,throttle_pct,brake,brake_bar,long_accel_ms2,"
                  "lat_accel_ms2,coolant_c,odometer_km,fuel_pct\n";
            for (const auto& s : res.trace) {
                os << format_double(s.time_s) << ',' << format_double(s.speed_kmh);
                for (double w : s.wheel_kmh) os << ',' << format_double(w);
                os << ',' << format_double(s.rpm) << ',' << s.gear << ','
                   << format_double(s.steer_deg) << ',' << format_double(s.steer_rate_dps) << ','
                   << format_double(s.throttle_pct) << ',' << (s.brake_act ? 1 : 0) << ','
                   << format_double(s.brake_pressure_bar) << ','
                   << format_double(s.long_accel_ms2) << ',' << format_double(s.lat_accel_ms2)
                   << ',' << format_double(s.coolant_c) << ',' << format_double(s.odometer_km)
                   << ',' << format_double(s.fuel_pct) << '\n';
            }
        });
    }
    std::fprintf(stderr, "synth: %zu messages over %s s (%s cycle, seed %llu)\n", res.log.size(),
                 format_double(o.duration_s).c_str(), o.cycle.c_str(),
                 static_cast<unsigned long long>(o.seed));
}

// ------------------------------------------------------------------- select

struct SelectOpts {
    std::string dbc, log, out;
    std::vector<std::string> exclude;
    bool no_default_excludes = false;
};

void run_select(const SelectOpts& o) {
    CanDatabase db = parse_dbc_file(o.dbc);
    auto log = load_log(o.log);
    std::vector<std::string> keywords;
    if (!o.no_default_excludes) keywords = default_exclude_keywords();
    keywords.insert(keywords.end(), o.exclude.begin(), o.exclude.end());
    SignalSelection sel = select_signals(db, log, keywords);
    for (const auto& w : sel.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::string manifest = selection_manifest(sel, db);
    with_output(o.out, [&](std::ostream& os) { os << manifest; });
    std::fprintf(stderr, "select: %zu signals selected, %zu excluded, hash %s\n",
                 sel.included.size(), sel.excluded.size(),
                 format_hash(selection_hash(manifest)).c_str());
}

// ----------------------------------------------------------------- features

struct FeaturesOpts {
    std::string dbc, log, selection, out, csv;
    double tick_s = 0.005;
    unsigned window = 150;
    unsigned stride = 1;
    std::string label = "benign";
};

void run_features(const FeaturesOpts& o) {
    CanDatabase db = parse_dbc_file(o.dbc);
    std::uint64_t hash = 0;
    SignalLayout layout = build_layout(db, read_selection_file(o.selection, &hash));
    auto log = load_log(o.log);
    PipelineConfig cfg;
    cfg.tick_us = from_seconds(o.tick_s);
    cfg.window = o.window;
    if (cfg.tick_us <= 0) throw DataError("tick period must be positive");
    auto res = run_pipeline(log, layout, cfg);
    Label label = o.label == "unlabeled" ? Label::unlabeled : Label::benign;
    std::vector<FeatureWindow> kept;
    kept.reserve(res.windows.size() / o.stride + 1);
    for (std::size_t i = 0; i < res.windows.size(); i += o.stride) {
        res.windows[i].label = label;
        kept.push_back(std::move(res.windows[i]));
    }
    FeatureDumpHeader h;
    h.tick_us = static_cast<std::uint64_t>(cfg.tick_us);
    h.w = cfg.window;
    h.x = static_cast<std::uint32_t>(layout.x());
    h.selection_hash = hash;
    h.count = kept.size();
    write_feature_dump_file(o.out, h, kept);
    if (!o.csv.empty()) {
        std::vector<ScaledVector> ticks;
        PipelineConfig one = cfg;
        one.window = 1;
        FeatureGenerator gen(layout, one, [&](FeatureWindow&& w) {
            ticks.push_back({w.end_time_us, std::move(w.data), std::move(w.violations)});
        });
        for (const auto& m : log) gen.on_message(m);
        gen.finish();
        with_output(o.csv, [&](std::ostream& os) { write_scaled_csv(os, layout, ticks); });
    }
    std::fprintf(stderr,
                 "features: %zu messages (%zu ignored), %zu ticks (%zu warm-up), "
                 "%zu windows, kept %zu\n",
                 res.stats.messages, res.stats.ignored_messages, res.stats.ticks,
                 res.stats.skipped_ticks, res.stats.windows, kept.size());
}

// -------------------------------------------------------------------- train

struct TrainOpts {
    std::string features, val, model, history;
    std::string layer = "dense";
    std::string encoder = "128,64", decoder = "64,128";
    int latent = 32;
    double lr = 1e-4;
    int epochs = 200, patience = 50, batch = 64;
    std::uint64_t seed = 42;
    bool verbose = false;
};

void check_dump_pair(const FeatureDump& a, const FeatureDump& b, const char* what) {
    if (a.header.w != b.header.w || a.header.x != b.header.x)
        throw DataError(std::string(what) + " disagree on window shape");
    if (a.header.tick_us != b.header.tick_us)
        throw DataError(std::string(what) + " disagree on tick period");
    if (a.header.selection_hash != b.header.selection_hash)
        throw DataError(std::string(what) + " come from different signal selections");
}

void run_train(const TrainOpts& o) {
    FeatureDump tr = read_feature_dump_file(o.features);
    FeatureDump va = read_feature_dump_file(o.val);
    check_dump_pair(tr, va, "training and validation dumps");
    ModelConfig cfg;
    cfg.family = model_family_from(o.layer);
    cfg.encoder_widths = detail::parse_widths(o.encoder);
    cfg.decoder_widths = detail::parse_widths(o.decoder);
    cfg.latent = o.latent;
    cfg.window = static_cast<int>(tr.header.w);
    cfg.signals = static_cast<int>(tr.header.x);
    cfg.learning_rate = o.lr;
    cfg.max_epochs = o.epochs;
    cfg.patience = o.patience;
    cfg.batch_size = o.batch;
    cfg.seed = o.seed;
    Autoencoder model(cfg);
    TrainResult r = train_autoencoder(model, tr.windows, va.windows, [&](const EpochStats& e) {
        if (o.verbose)
            std::fprintf(stderr, "epoch %d train %s val %s\n", e.epoch,
                         format_double(e.train_mse).c_str(), format_double(e.val_mse).c_str());
    });
    ModelProvenance prov;
    prov.tick_us = tr.header.tick_us;
    prov.selection_hash = tr.header.selection_hash;
    prov.best_epoch = r.best_epoch;
    prov.best_val = r.best_val;
    prov.epochs_run = static_cast<int>(r.history.size());
    save_model(o.model, model, prov);
    if (!o.history.empty())
        with_output(o.history, [&](std::ostream& os) { write_history_csv(os, r); });
    std::fprintf(stderr, "train: %zu epochs run, best epoch %d, val mse %s%s\n", r.history.size(),
                 r.best_epoch, format_double(r.best_val).c_str(),
                 r.early_stopped ? " (early stop)" : "");
}

// ---------------------------------------------------------------- calibrate

// Signalwise losses for every window, batched through one forward pass each.
std::vector<std::vector<double>> signalwise_losses(Autoencoder& model,
                                                   const std::vector<FeatureWindow>& windows) {
    const ModelConfig& cfg = model.config();
    const std::size_t F = static_cast<std::size_t>(cfg.window) * cfg.signals;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::vector<double>> losses;
    losses.reserve(windows.size());
    std::vector<double> X;
    for (std::size_t i = 0; i < windows.size(); i += batch) {
        std::size_t hi = std::min(windows.size(), i + batch);
        X.resize((hi - i) * F);
        for (std::size_t k = i; k < hi; ++k) {
            if (windows[k].data.size() != F) throw DataError("window shape mismatch");
            for (std::size_t j = 0; j < F; ++j)
                X[(k - i) * F + j] = static_cast<double>(windows[k].data[j]);
        }
        const auto& R = model.forward(X.data(), static_cast<int>(hi - i));
        for (std::size_t k = i; k < hi; ++k)
            losses.push_back(signalwise_loss(
                std::span<const float>(windows[k].data),
                std::span<const double>(R.data() + (k - i) * F, F), cfg.window, cfg.signals));
    }
    return losses;
}

struct CalibrateOpts {
    std::string model, features, val, out;
    double q = 0.993;
};

void run_calibrate(const CalibrateOpts& o) {
    LoadedModel lm = load_model(o.model);
    const ModelConfig& cfg = lm.model.config();
    FeatureDump tr = read_feature_dump_file(o.features);
    FeatureDump va = read_feature_dump_file(o.val);
    check_dump_pair(tr, va, "threshold and validation dumps");
    if (tr.header.w != static_cast<std::uint32_t>(cfg.window) ||
        tr.header.x != static_cast<std::uint32_t>(cfg.signals))
        throw DataError("feature dump shape does not match the model");
    if (tr.header.selection_hash != lm.provenance.selection_hash)
        throw DataError("feature dump comes from a different signal selection than the model");
    SignalThresholds th = fit_signal_thresholds(signalwise_losses(lm.model, tr.windows));
    std::vector<double> max_rates;
    for (const auto& l : signalwise_losses(lm.model, va.windows)) {
        auto rates = error_rates(l, th.theta);
        max_rates.push_back(*std::max_element(rates.begin(), rates.end()));
    }
    double theta_cap = fit_detection_threshold(max_rates, o.q);
    save_calibration(o.out, th, theta_cap, o.q, lm.provenance.selection_hash);
    std::fprintf(stderr, "calibrate: %zu signals, q %s, alarm threshold %s\n", th.theta.size(),
                 format_double(o.q).c_str(), format_double(theta_cap).c_str());
}

// ------------------------------------------------------------------- attack

struct AttackOpts {
    std::string log, plan, campaign, out, labels, out_dir;
    std::string dbc, selection;
    double tick_s = 0.005;
    unsigned window = 150;
};

void run_attack(const AttackOpts& o) {
    auto benign = load_log(o.log);
    CanDatabase db;
    SignalLayout layout;
    bool have_layout = false;
    if (!o.dbc.empty()) {
        db = parse_dbc_file(o.dbc);
        if (!o.selection.empty()) {
            layout = build_layout(db, read_selection_file(o.selection));
            have_layout = true;
        }
    }
    PipelineConfig pcfg;
    pcfg.tick_us = from_seconds(o.tick_s);
    pcfg.window = o.window;
    if (pcfg.tick_us <= 0) throw DataError("tick period must be positive");

    auto emit = [&](const AttackPlan& plan, const std::string& log_path,
                    const std::string& label_path) {
        LabeledLog out = apply_attack(benign, plan, o.dbc.empty() ? nullptr : &db);
        write_log_file(log_path, out.messages);
        std::size_t crafted = 0;
        for (auto f : out.injected) crafted += f;
        if (!label_path.empty()) {
            if (!have_layout)
                throw DataError("writing window labels needs --dbc and --selection");
            auto labels = label_windows(out, layout, pcfg);
            with_output(label_path, [&](std::ostream& os) { write_labels(os, labels); });
        }
        std::fprintf(stderr, "attack: %s wrote %zu messages (%zu crafted) to %s\n",
                     to_string(plan.kind), out.messages.size(), crafted, log_path.c_str());
    };

    if (!o.campaign.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text_file(o.campaign));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("campaign file: ") + e.what());
        }
        if (!j.contains("plans") || !j["plans"].is_array() || j["plans"].empty())
            throw DataError("campaign file needs a non-empty 'plans' array");
        std::filesystem::create_directories(o.out_dir);
        std::ostringstream index;
        index << "#name\tkind\taid\tlog\tlabels\n";
        std::size_t i = 0;
        for (const auto& item : j["plans"]) {
            AttackPlan plan = parse_attack_plan(item);
            std::string name = item.value("name", std::string(to_string(plan.kind)) + "-" +
                                                       std::to_string(i));
            for (char c : name)
                if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' &&
                    c != '.')
                    throw DataError("plan name '" + name + "' has characters unsafe in paths");
            std::string log_path = o.out_dir + "/" + name + ".log";
            std::string label_path = o.out_dir + "/" + name + ".labels.tsv";
            emit(plan, log_path, label_path);
            bool targeted = plan.kind == AttackKind::fabrication ||
                            plan.kind == AttackKind::suspension ||
                            plan.kind == AttackKind::masquerade;
            index << name << '\t' << to_string(plan.kind) << '\t'
                  << (targeted ? format_aid_hex(plan.target_aid) : "-") << '\t' << log_path
                  << '\t' << label_path << '\n';
            ++i;
        }
        with_output(o.out_dir + "/campaign.tsv", [&](std::ostream& os) { os << index.str(); });
        std::fprintf(stderr, "attack: campaign of %zu plan(s) written to %s\n", i,
                     o.out_dir.c_str());
    } else {
        emit(read_attack_plan_file(o.plan), o.out, o.labels);
    }
}

// ------------------------------------------------------------------- detect

struct DetectOpts {
    std::string dbc, selection, model, calibration, log;
    std::string report = "-", heatmap, latency;
    std::size_t batch = 8, queue = 256, top_k = 5;
    bool stream = false;
    bool pace = true;
};

void run_detect(const DetectOpts& o) {
    CanDatabase db = parse_dbc_file(o.dbc);
    std::uint64_t hash = 0;
    SignalLayout layout = build_layout(db, read_selection_file(o.selection, &hash));
    LoadedModel lm = load_model(o.model);
    Calibration cal = load_calibration(o.calibration);
    if (lm.provenance.selection_hash != hash)
        throw DataError("model was trained against a different signal selection");
    if (cal.selection_hash != hash)
        throw DataError("calibration belongs to a different signal selection");
    const ModelConfig& cfg = lm.model.config();
    if (static_cast<std::size_t>(cfg.signals) != layout.x())
        throw DataError("model signal count does not match the selection");
    if (cal.thresholds.theta.size() != layout.x())
        throw DataError("calibration signal count does not match the selection");

    PipelineConfig pcfg;
    pcfg.tick_us = static_cast<TimeUs>(lm.provenance.tick_us);
    pcfg.window = static_cast<unsigned>(cfg.window);
    DetectorConfig dcfg;
    dcfg.threshold = cal.Theta;
    dcfg.top_k = o.top_k;

    auto log = load_log(o.log);
    std::vector<DetectionResult> results;
    if (o.stream) {
        StreamingOptions sopts;
        sopts.batch = o.batch;
        sopts.queue_capacity = o.queue;
        sopts.pace = o.pace;
        StreamingResult sr =
            run_streaming_detector(log, layout, pcfg, lm.model, cal.thresholds, dcfg, sopts);
        results = std::move(sr.results);
        if (!o.latency.empty()) {
            with_output(o.latency, [&](std::ostream& os) {
                os << "window_end_s,latency_s\n";
                for (const auto& s : sr.latencies)
                    os << format_time_s(s.window_end_us) << ',' << format_double(s.latency_s)
                       << '\n';
            });
        }
        if (!sr.latencies.empty()) {
            std::vector<double> ls;
            ls.reserve(sr.latencies.size());
            for (const auto& s : sr.latencies) ls.push_back(s.latency_s);
            double tick_s = to_seconds(pcfg.tick_us);
            double predicted =
                latency_model_s(tick_s, sr.mean_t_alpha_s, sr.mean_t_beta_s,
                                static_cast<int>(o.batch), (o.batch - 1) / 2.0);
            std::fprintf(stderr,
                         "detect: latency p50 %s s, p95 %s s, p99 %s s; "
                         "t_alpha %s s, t_beta %s s, model predicts %s s\n",
                         format_double(percentile(ls, 0.5)).c_str(),
                         format_double(percentile(ls, 0.95)).c_str(),
                         format_double(percentile(ls, 0.99)).c_str(),
                         format_double(sr.mean_t_alpha_s).c_str(),
                         format_double(sr.mean_t_beta_s).c_str(),
                         format_double(predicted).c_str());
        }
    } else {
        auto run = run_pipeline(log, layout, pcfg);
        results = run_detector(lm.model, cal.thresholds, dcfg, run.windows, o.batch);
    }
    with_output(o.report, [&](std::ostream& os) { write_detection_report(os, results, layout); });
    if (!o.heatmap.empty())
        with_output(o.heatmap, [&](std::ostream& os) { write_heatmap_csv(os, results, layout); });
    std::size_t alarms = 0;
    for (const auto& r : results) alarms += r.alarm;
    std::fprintf(stderr, "detect: %zu windows, %zu alarm(s), threshold %s\n", results.size(),
                 alarms, format_double(cal.Theta).c_str());
}

// --------------------------------------------------------------------- eval

struct EvalOpts {
    std::string report, labels, roc, latency, out = "-", campaign;
};

std::vector<double> read_latency_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<double> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view v = trim(line);
        if (v.empty() || v.starts_with("window_end_s")) continue;
        auto cols = split(v, ',');
        if (cols.size() != 2) throw ParseError("expected 2 columns", line_no);
        out.push_back(parse_double(cols[1], line_no));
    }
    return out;
}

struct Scored {
    Confusion confusion;
    std::optional<RocResult> roc;
    std::size_t attacks = 0, alarms = 0, windows = 0;
};

Scored score_report(const std::vector<DetectionResult>& results,
                    const std::vector<std::pair<TimeUs, Label>>& labels) {
    Scored s;
    s.confusion = score_detections(results, labels);
    s.windows = results.size();
    std::vector<double> scores;
    std::vector<std::uint8_t> ys;
    scores.reserve(results.size());
    ys.reserve(labels.size());
    bool has_attack = false, has_benign = false;
    for (std::size_t i = 0; i < results.size(); ++i) {
        scores.push_back(results[i].max_rate);
        bool attack = labels[i].second == Label::attack;
        ys.push_back(attack ? 1 : 0);
        s.alarms += results[i].alarm;
        if (attack) {
            ++s.attacks;
            has_attack = true;
        } else {
            has_benign = true;
        }
    }
    if (has_attack && has_benign) s.roc = roc_auc(scores, ys);
    return s;
}

void run_eval(const EvalOpts& o) {
    if (!o.campaign.empty()) {
        std::filesystem::path dir = std::filesystem::path(o.campaign).parent_path();
        std::istringstream index(read_text_file(o.campaign));
        std::ostringstream matrix;
        matrix << "name\tkind\taid\twindows\tattack_windows\talarms\ttp\tfp\ttn\tfn\t"
                  "precision\trecall\tf1\tauc\n";
        std::string line;
        std::size_t line_no = 0, experiments = 0;
        while (std::getline(index, line)) {
            ++line_no;
            std::string_view v = trim(line);
            if (v.empty() || v[0] == '#') continue;
            auto cols = split(v, '\t');
            if (cols.size() != 5) throw ParseError("expected 5 columns", line_no);
            std::string name(cols[0]);
            std::string report_path = (dir / (name + ".report.tsv")).string();
            auto results = read_detection_report_file(report_path);
            std::ifstream lin{std::string(cols[4]), std::ios::binary};
            if (!lin) throw DataError("cannot open " + std::string(cols[4]));
            Scored s = score_report(results, read_labels(lin));
            matrix << name << '\t' << cols[1] << '\t' << cols[2] << '\t' << s.windows << '\t'
                   << s.attacks << '\t' << s.alarms << '\t' << s.confusion.tp << '\t'
                   << s.confusion.fp << '\t' << s.confusion.tn << '\t' << s.confusion.fn << '\t'
                   << format_double(s.confusion.precision()) << '\t'
                   << format_double(s.confusion.recall()) << '\t'
                   << format_double(s.confusion.f1()) << '\t'
                   << (s.roc ? format_double(s.roc->auc) : "-") << '\n';
            ++experiments;
        }
        if (!experiments) throw DataError("campaign index has no experiments");
        with_output(o.out, [&](std::ostream& os) { os << matrix.str(); });
        std::fprintf(stderr, "eval: scored %zu experiment(s)\n", experiments);
        return;
    }

    auto results = read_detection_report_file(o.report);
    std::ifstream lin(o.labels, std::ios::binary);
    if (!lin) throw DataError("cannot open " + o.labels);
    Scored s = score_report(results, read_labels(lin));
    if (!o.roc.empty()) {
        if (!s.roc) throw DataError("ROC needs both attack and benign windows");
        with_output(o.roc, [&](std::ostream& os) { write_roc_csv(os, *s.roc); });
    }
    std::optional<std::vector<double>> latencies;
    if (!o.latency.empty()) latencies = read_latency_csv(o.latency);
    with_output(o.out, [&](std::ostream& os) {
        os << "windows\t" << s.windows << '\n';
        os << "attack_windows\t" << s.attacks << '\n';
        os << "benign_windows\t" << (s.windows - s.attacks) << '\n';
        os << "alarms\t" << s.alarms << '\n';
        os << "tp\t" << s.confusion.tp << '\n';
        os << "fp\t" << s.confusion.fp << '\n';
        os << "tn\t" << s.confusion.tn << '\n';
        os << "fn\t" << s.confusion.fn << '\n';
        os << "precision\t" << format_double(s.confusion.precision()) << '\n';
        os << "recall\t" << format_double(s.confusion.recall()) << '\n';
        os << "f1\t" << format_double(s.confusion.f1()) << '\n';
        os << "accuracy\t" << format_double(s.confusion.accuracy()) << '\n';
        os << "auc\t" << (s.roc ? format_double(s.roc->auc) : "-") << '\n';
        if (latencies && !latencies->empty()) {
            os << "latency_p50_s\t" << format_double(percentile(*latencies, 0.5)) << '\n';
            os << "latency_p95_s\t" << format_double(percentile(*latencies, 0.95)) << '\n';
            os << "latency_p99_s\t" << format_double(percentile(*latencies, 0.99)) << '\n';
        }
    });
}

// -------------------------------------------------------------------- bench

struct BenchOpts {
    std::string model, out = "-";
    std::vector<std::size_t> batches = {1, 8, 64, 256, 1024};
    int repeats = 5;
    double min_run_s = 0.05;
    std::uint64_t seed = 42;
};

void run_bench(const BenchOpts& o) {
    LoadedModel lm = load_model(o.model);
    auto points = bench_throughput(lm.model, o.batches, o.repeats, o.min_run_s, o.seed);
    with_output(o.out, [&](std::ostream& os) {
        os << "batch,windows_per_s,ms_per_window\n";
        for (const auto& p : points)
            os << p.batch << ',' << format_double(p.windows_per_s) << ','
               << format_double(p.sec_per_window * 1e3) << '\n';
    });
    const BenchPoint* peak = &points.front();
    for (const auto& p : points)
        if (p.windows_per_s > peak->windows_per_s) peak = &p;
    std::fprintf(stderr, "bench: peak throughput %s windows/s at batch %zu\n",
                 format_double(peak->windows_per_s).c_str(), peak->batch);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAN signal-level intrusion detection toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "read option defaults from an INI/TOML file (one section per subcommand); "
                   "explicit flags win");

    ParseDbcOpts pd;
    auto* c_pd = app.add_subcommand("parse-dbc", "parse a CAN database and print it back in canonical form");
    c_pd->add_option("--dbc", pd.dbc, "CAN database file")->required();
    c_pd->add_option("--out", pd.out, "output path for the canonical text (default stdout)");
    c_pd->add_flag("--quiet", pd.quiet, "validate only, print nothing to stdout");
    c_pd->callback([&] { run_parse_dbc(pd); });

    StatsOpts st;
    auto* c_st = app.add_subcommand("stats", "per-stream counts and timing of a capture");
    c_st->add_option("--log", st.log, "candump log file, or - for stdin")->required();
    c_st->add_option("--dbc", st.dbc, "CAN database file for sender and signal columns");
    c_st->add_option("--out", st.out, "output TSV path (default stdout)");
    c_st->callback([&] { run_stats(st); });

    HammingOpts hm;
    auto* c_hm = app.add_subcommand("hamming", "per-bit flip ratios of payloads, stream by stream");
    c_hm->add_option("--log", hm.log, "candump log file, or - for stdin")->required();
    c_hm->add_option("--aid", hm.aids, "restrict to these arbitration ids (hex, repeatable)");
    c_hm->add_option("--out", hm.out, "per-bit profile CSV path");
    c_hm->callback([&] { run_hamming(hm); });

    SynthOpts sy;
    auto* c_sy = app.add_subcommand("synth", "generate a synthetic vehicle capture and matching database");
    c_sy->add_option("--out-dbc", sy.out_dbc, "output CAN database path")->required();
    c_sy->add_option("--out-log", sy.out_log, "output candump log path")->required();
    c_sy->add_option("--trace", sy.trace, "output CSV of the ground-truth vehicle state");
    c_sy->add_option("--duration", sy.duration_s, "capture length in seconds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_sy->add_option("--seed", sy.seed, "random seed")->capture_default_str();
    c_sy->add_option("--cycle", sy.cycle, "drive cycle")
        ->capture_default_str()
        ->check(CLI::IsMember({"driving", "stationary"}));
    c_sy->callback([&] { run_synth(sy); });

    SelectOpts se;
    auto* c_se = app.add_subcommand("select", "choose the monitored signals and write the selection manifest");
    c_se->add_option("--dbc", se.dbc, "CAN database file")->required();
    c_se->add_option("--log", se.log, "benign candump log file, or - for stdin")->required();
    c_se->add_option("--out", se.out, "output manifest path")->required();
    c_se->add_option("--exclude", se.exclude,
                     "extra name keywords to exclude, case-insensitive substrings (repeatable)");
    c_se->add_flag("--no-default-excludes", se.no_default_excludes,
                   "drop the built-in checksum/counter keyword list");
    c_se->callback([&] { run_select(se); });

    FeaturesOpts fe;
    auto* c_fe = app.add_subcommand("features", "deserialize, scale and window a capture into a feature dump");
    c_fe->add_option("--dbc", fe.dbc, "CAN database file")->required();
    c_fe->add_option("--log", fe.log, "candump log file, or - for stdin")->required();
    c_fe->add_option("--selection", fe.selection, "selection manifest path")->required();
    c_fe->add_option("--out", fe.out, "output feature dump path")->required();
    c_fe->add_option("--tick", fe.tick_s, "sampling period t in seconds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_fe->add_option("--window", fe.window, "ticks per window w")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_fe->add_option("--stride", fe.stride, "keep every k-th window")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_fe->add_option("--label", fe.label, "label stored with every window")
        ->capture_default_str()
        ->check(CLI::IsMember({"benign", "unlabeled"}));
    c_fe->add_option("--csv", fe.csv, "also write one scaled row per tick to this CSV");
    c_fe->callback([&] { run_features(fe); });

    TrainOpts tn;
    auto* c_tn = app.add_subcommand("train", "train the reconstruction autoencoder on benign windows");
    c_tn->add_option("--features", tn.features, "training feature dump")->required();
    c_tn->add_option("--val", tn.val, "validation feature dump")->required();
    c_tn->add_option("--model", tn.model, "output model path")->required();
    c_tn->add_option("--layer,--family", tn.layer, "autoencoder family")
        ->capture_default_str()
        ->check(CLI::IsMember({"dense", "lstm", "bilstm"}));
    c_tn->add_option("--encoder", tn.encoder, "comma-separated encoder widths")
        ->capture_default_str();
    c_tn->add_option("--decoder", tn.decoder, "comma-separated decoder widths")
        ->capture_default_str();
    c_tn->add_option("--latent", tn.latent, "latent width")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_tn->add_option("--lr", tn.lr, "learning rate")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_tn->add_option("--epochs", tn.epochs, "epoch budget")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_tn->add_option("--patience", tn.patience,
                     "epochs without validation improvement before stopping")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_tn->add_option("--batch", tn.batch, "minibatch size")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_tn->add_option("--seed", tn.seed, "random seed")->capture_default_str();
    c_tn->add_option("--history", tn.history, "output CSV of per-epoch losses");
    c_tn->add_flag("--verbose", tn.verbose, "print one line per epoch");
    c_tn->callback([&] { run_train(tn); });

    CalibrateOpts ca;
    auto* c_ca = app.add_subcommand("calibrate", "fit per-signal thresholds and the alarm threshold");
    c_ca->add_option("--model", ca.model, "trained model path")->required();
    c_ca->add_option("--features", ca.features, "training feature dump (per-signal thresholds)")
        ->required();
    c_ca->add_option("--val", ca.val, "benign validation feature dump (alarm threshold)")
        ->required();
    c_ca->add_option("--q", ca.q, "alarm threshold percentile, in [0.95, 1]")
        ->capture_default_str();
    c_ca->add_option("--out", ca.out, "output calibration path")->required();
    c_ca->callback([&] { run_calibrate(ca); });

    AttackOpts at;
    auto* c_at = app.add_subcommand("attack", "inject an attack into a benign capture");
    c_at->add_option("--log", at.log, "benign candump log file")->required();
    auto* at_plan = c_at->add_option("--plan", at.plan, "attack plan JSON file");
    auto* at_out = c_at->add_option("--out", at.out, "output candump log path");
    c_at->add_option("--labels", at.labels, "output window label sidecar path");
    auto* at_camp = c_at->add_option("--campaign", at.campaign,
                                     "JSON file with a 'plans' array; writes one log and label "
                                     "sidecar per plan");
    auto* at_dir = c_at->add_option("--out-dir", at.out_dir, "output directory for campaign mode");
    c_at->add_option("--dbc", at.dbc, "CAN database file (payload generators and labels)");
    c_at->add_option("--selection", at.selection, "selection manifest (labels)");
    c_at->add_option("--tick", at.tick_s, "label tick period t in seconds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_at->add_option("--window", at.window, "label window length w in ticks")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    at_plan->excludes(at_camp);
    at_plan->needs(at_out);
    at_camp->needs(at_dir);
    c_at->callback([&] {
        if (at.plan.empty() && at.campaign.empty())
            throw CLI::RequiredError("--plan or --campaign");
        run_attack(at);
    });

    DetectOpts de;
    auto* c_de = app.add_subcommand("detect", "score a capture against a trained model and calibration");
    c_de->add_option("--dbc", de.dbc, "CAN database file")->required();
    c_de->add_option("--selection", de.selection, "selection manifest path")->required();
    c_de->add_option("--model", de.model, "trained model path")->required();
    c_de->add_option("--calibration", de.calibration, "calibration path")->required();
    c_de->add_option("--log", de.log, "candump log file, or - for stdin")->required();
    c_de->add_option("--report", de.report, "output report TSV path (default stdout)")
        ->capture_default_str();
    c_de->add_option("--heatmap", de.heatmap, "output per-signal error-rate CSV path");
    c_de->add_option("--batch", de.batch, "inference batch size B")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_de->add_flag("--stream", de.stream,
                   "two-thread live mode: replay on the capture clock, measure latency");
    c_de->add_flag("--pace,!--no-pace", de.pace,
                   "sleep between messages in stream mode to honor capture timestamps");
    c_de->add_option("--queue", de.queue, "bounded queue capacity in windows (stream mode)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_de->add_option("--latency", de.latency, "output per-window latency CSV (stream mode)");
    c_de->add_option("--top", de.top_k, "suspected signals listed per window")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_de->callback([&] { run_detect(de); });

    EvalOpts ev;
    auto* c_ev = app.add_subcommand("eval", "score a detection report against window labels");
    auto* ev_rep = c_ev->add_option("--report", ev.report, "detection report TSV");
    auto* ev_lab = c_ev->add_option("--labels", ev.labels, "window label sidecar");
    c_ev->add_option("--roc", ev.roc, "output ROC curve CSV path");
    c_ev->add_option("--latency", ev.latency, "latency CSV from detect --stream; adds percentiles");
    c_ev->add_option("--out", ev.out, "output report path (default stdout)")->capture_default_str();
    auto* ev_camp = c_ev->add_option(
        "--campaign", ev.campaign,
        "campaign index TSV; scores <name>.report.tsv next to it for every row");
    ev_rep->excludes(ev_camp);
    ev_rep->needs(ev_lab);
    c_ev->callback([&] {
        if (ev.report.empty() && ev.campaign.empty())
            throw CLI::RequiredError("--report or --campaign");
        run_eval(ev);
    });

    BenchOpts be;
    auto* c_be = app.add_subcommand("bench", "forward-pass throughput for growing batch sizes");
    c_be->add_option("--model", be.model, "trained model path")->required();
    c_be->add_option("--batch", be.batches, "batch sizes to time (comma separated)")
        ->delimiter(',')
        ->capture_default_str();
    c_be->add_option("--repeats", be.repeats, "timed runs per batch size, median reported")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_be->add_option("--min-run", be.min_run_s, "minimum wall time per run in seconds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_be->add_option("--seed", be.seed, "random seed for the synthetic windows")
        ->capture_default_str();
    c_be->add_option("--out", be.out, "output CSV path (default stdout)")->capture_default_str();
    c_be->callback([&] { run_bench(be); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "xcanids: usage: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "xcanids: error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "xcanids: internal: %s\n", e.what());
        return 3;
    }
    return 0;
}
