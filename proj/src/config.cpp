#include "reachguard/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace reachguard {

namespace {

using nlohmann::json;

json hidden_json(const std::vector<std::uint32_t>& h) { return json(h); }

json hyper_json(const TrainHyper& h) {
    return {{"lr", h.lr}, {"epochs", h.epochs}, {"batch_size", h.batch_size}};
}

void read_hyper(const json& j, TrainHyper& h) {
    h.lr = j.at("lr").get<double>();
    h.epochs = j.at("epochs").get<int>();
    h.batch_size = j.at("batch_size").get<int>();
}

json axis_json(const AxisSpec& a, double scale) { return json::array({a.min * scale, a.max * scale, a.count}); }

AxisSpec read_axis(const json& j, double scale) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("grid axis must be [min, max, count]");
    }
    return {j[0].get<double>() / scale, j[1].get<double>() / scale, j[2].get<std::uint32_t>()};
}

json runway_json(const RunwayProfile& r) {
    json strips = json::array();
    for (const auto& iv : r.side_strips) {
        strips.push_back({iv.begin, iv.end});
    }
    return {{"name", r.name},
            {"half_width", r.half_width},
            {"centerline_width", r.centerline_width},
            {"edge_line_width", r.edge_line_width},
            {"side_strips", strips},
            {"strip_offsets", r.strip_offsets},
            {"strip_width", r.strip_width},
            {"edge_light_spacing", r.edge_light_spacing},
            {"light_radius", r.light_radius},
            {"asphalt", r.asphalt},
            {"paint", r.paint},
            {"grass", r.grass},
            {"sky", r.sky},
            {"training", r.training}};
}

RunwayProfile read_runway(const json& j) {
    RunwayProfile r;
    r.name = j.at("name").get<std::string>();
    r.half_width = j.at("half_width").get<double>();
    r.centerline_width = j.at("centerline_width").get<double>();
    r.edge_line_width = j.at("edge_line_width").get<double>();
    for (const auto& s : j.at("side_strips")) {
        r.side_strips.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    }
    r.strip_offsets = j.at("strip_offsets").get<std::vector<double>>();
    r.strip_width = j.at("strip_width").get<double>();
    r.edge_light_spacing = j.at("edge_light_spacing").get<double>();
    r.light_radius = j.at("light_radius").get<double>();
    r.asphalt = j.at("asphalt").get<double>();
    r.paint = j.at("paint").get<double>();
    r.grass = j.at("grass").get<double>();
    r.sky = j.at("sky").get<double>();
    r.training = j.at("training").get<bool>();
    return r;
}

json to_json(const PipelineConfig& c) {
    json runways = json::array();
    for (const auto& r : c.runways) {
        runways.push_back(runway_json(r));
    }
    return {
        {"plant", {{"v", c.plant.v}, {"half_width", c.plant.half_width}, {"dt", c.plant.dt},
                   {"max_steer_arg", c.plant.max_steer_arg}}},
        {"camera", {{"lateral_offset", c.camera.lateral_offset}, {"height", c.camera.height}, {"pitch", c.camera.pitch},
                    {"focal", c.camera.focal}, {"width", c.camera.width}, {"height_px", c.camera.height_px},
                    {"supersample", c.camera.supersample}}},
        {"runways", runways},
        {"grid", {{"px", axis_json(c.grid.axes[0], 1.0)}, {"py", axis_json(c.grid.axes[1], 1.0)},
                  {"theta_deg", axis_json(c.grid.axes[2], 180.0 / kPi)}}},
        {"horizon", c.horizon},
        {"vbc", {{"corpus_size", c.vbc.corpus_size}, {"eval_size", c.vbc.eval_size}, {"hidden", hidden_json(c.vbc.hidden)},
                 {"train", hyper_json(c.vbc.train)}, {"retrain", hyper_json(c.vbc.retrain)},
                 {"upsample_fraction", c.vbc.upsample_fraction}}},
        {"nrt", {{"lambda", c.nrt.lambda}, {"batch_size", c.nrt.batch_size}, {"iterations", c.nrt.iterations},
                 {"lr", c.nrt.lr}, {"pretrain_fraction", c.nrt.pretrain_fraction},
                 {"curriculum_fraction", c.nrt.curriculum_fraction}, {"omega0", c.nrt.omega0},
                 {"hidden", hidden_json(c.nrt.hidden)}}},
        {"mining", {{"samples", c.mining.samples}, {"max_traces", c.mining.max_traces},
                    {"error_threshold", c.mining.error_threshold}}},
        {"fd", {{"hidden", hidden_json(c.fd.hidden)}, {"train", hyper_json(c.fd.train)}, {"alpha", c.fd.alpha}}},
        {"fallback", {{"mode", to_string(c.fallback.mode.variant)}, {"gps_sigma", c.fallback.mode.gps_sigma},
                      {"dv", c.fallback.mode.dv}, {"px_count", c.fallback.px_count},
                      {"py_count", c.fallback.py_count}, {"theta_count", c.fallback.theta_count}}},
        {"benchmark", {{"runway", c.benchmark.runway_id}, {"d1", to_string(c.benchmark.d1)},
                       {"d2", to_string(c.benchmark.d2)}}},
        {"seed", c.seed},
        {"output", c.output},
    };
}

PipelineConfig from_json(const json& j) {
    PipelineConfig c;
    const json& p = j.at("plant");
    c.plant.v = p.at("v").get<double>();
    c.plant.half_width = p.at("half_width").get<double>();
    c.plant.dt = p.at("dt").get<double>();
    c.plant.max_steer_arg = p.at("max_steer_arg").get<double>();
    const json& cam = j.at("camera");
    c.camera.lateral_offset = cam.at("lateral_offset").get<double>();
    c.camera.height = cam.at("height").get<double>();
    c.camera.pitch = cam.at("pitch").get<double>();
    c.camera.focal = cam.at("focal").get<double>();
    c.camera.width = cam.at("width").get<int>();
    c.camera.height_px = cam.at("height_px").get<int>();
    c.camera.supersample = cam.at("supersample").get<int>();
    c.runways.clear();
    for (const auto& r : j.at("runways")) {
        c.runways.push_back(read_runway(r));
    }
    const json& g = j.at("grid");
    c.grid.axes[0] = read_axis(g.at("px"), 1.0);
    c.grid.axes[1] = read_axis(g.at("py"), 1.0);
    c.grid.axes[2] = read_axis(g.at("theta_deg"), 180.0 / kPi);
    c.horizon = j.at("horizon").get<double>();
    const json& v = j.at("vbc");
    c.vbc.corpus_size = v.at("corpus_size").get<std::size_t>();
    c.vbc.eval_size = v.at("eval_size").get<std::size_t>();
    c.vbc.hidden = v.at("hidden").get<std::vector<std::uint32_t>>();
    read_hyper(v.at("train"), c.vbc.train);
    read_hyper(v.at("retrain"), c.vbc.retrain);
    c.vbc.upsample_fraction = v.at("upsample_fraction").get<double>();
    const json& n = j.at("nrt");
    c.nrt.lambda = n.at("lambda").get<double>();
    c.nrt.batch_size = n.at("batch_size").get<int>();
    c.nrt.iterations = n.at("iterations").get<int>();
    c.nrt.lr = n.at("lr").get<double>();
    c.nrt.pretrain_fraction = n.at("pretrain_fraction").get<double>();
    c.nrt.curriculum_fraction = n.at("curriculum_fraction").get<double>();
    c.nrt.omega0 = n.at("omega0").get<double>();
    c.nrt.hidden = n.at("hidden").get<std::vector<std::uint32_t>>();
    const json& m = j.at("mining");
    c.mining.samples = m.at("samples").get<std::size_t>();
    c.mining.max_traces = m.at("max_traces").get<std::size_t>();
    c.mining.error_threshold = m.at("error_threshold").get<double>();
    const json& f = j.at("fd");
    c.fd.hidden = f.at("hidden").get<std::vector<std::uint32_t>>();
    read_hyper(f.at("train"), c.fd.train);
    c.fd.alpha = f.at("alpha").get<double>();
    const json& fb = j.at("fallback");
    c.fallback.mode.variant = parse_fallback_variant(fb.at("mode").get<std::string>());
    c.fallback.mode.gps_sigma = fb.at("gps_sigma").get<double>();
    c.fallback.mode.dv = fb.at("dv").get<double>();
    c.fallback.px_count = fb.at("px_count").get<std::uint32_t>();
    c.fallback.py_count = fb.at("py_count").get<std::uint32_t>();
    c.fallback.theta_count = fb.at("theta_count").get<std::uint32_t>();
    const json& b = j.at("benchmark");
    c.benchmark.runway_id = b.at("runway").get<std::uint8_t>();
    c.benchmark.d1 = parse_time_of_day(b.at("d1").get<std::string>());
    c.benchmark.d2 = parse_cloud(b.at("d2").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output = j.at("output").get<std::string>();
    // Per-stage seeds follow the global seed.
    c.vbc.train.seed = c.stage_seed("train-vbc");
    c.vbc.retrain.seed = c.stage_seed("retrain");
    c.fd.train.seed = c.stage_seed("train-fd");
    c.nrt.seed = c.stage_seed("train-nrt");
    c.nrt.horizon = c.horizon;
    return c;
}

// Overlays `user` onto `base`, rejecting keys the defaults do not have.
void merge_checked(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) {
        throw ConfigError("config: " + (path.empty() ? std::string("document") : path) + " must be an object");
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), key);
        } else {
            slot = it.value();
        }
    }
}

}  // namespace

void PipelineConfig::validate() const {
    plant.validate();
    camera.validate();
    grid.validate();
    if (runways.empty()) {
        throw ConfigError("config: runway catalog is empty");
    }
    for (const auto& r : runways) {
        r.validate();
    }
    if (benchmark.runway_id >= runways.size()) {
        throw ConfigError("config: benchmark runway outside catalog");
    }
    if (!(horizon > 0.0)) {
        throw ConfigError("config: horizon must be positive");
    }
    vbc.train.validate();
    vbc.retrain.validate();
    fd.train.validate();
    nrt.validate();
    fallback.mode.validate();
    if (!(fd.alpha > 0.0 && fd.alpha < 1.0)) {
        throw ConfigError("config: fd.alpha must lie in (0, 1)");
    }
    if (!(vbc.upsample_fraction > 0.0 && vbc.upsample_fraction < 1.0)) {
        throw ConfigError("config: vbc.upsample_fraction must lie in (0, 1)");
    }
    if (vbc.corpus_size == 0 || mining.samples < 6 || fallback.px_count == 0 || fallback.py_count == 0 ||
        fallback.theta_count == 0) {
        throw ConfigError("config: sample counts must be positive");
    }
}

Sensor PipelineConfig::sensor() const { return Sensor{camera, runways}; }

PipelineConfig parse_config(const std::string& text) {
    json user;
    try {
        user = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    json merged = to_json(PipelineConfig{});
    merge_checked(merged, user, "");
    PipelineConfig c;
    try {
        c = from_json(merged);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot read " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_overrides(std::string& text, const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("override '" + o + "' is not key=value");
        }
        const std::string key = o.substr(0, eq);
        const std::string raw = o.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) {
            value = raw;
        }
        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            if (!node->is_object()) {
                *node = json::object();
            }
            start = dot + 1;
        }
    }
    text = doc.dump();
}

std::string dump_config(const PipelineConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace reachguard
