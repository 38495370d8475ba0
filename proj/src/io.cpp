#include "darkship/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>
#include "json.hpp"

namespace darkship {

namespace {

using nlohmann::json;

constexpr char kSceneMagic[] = "SARSCN1\n";  // 8 bytes
constexpr char kWeightMagic[] = "YW8Q1\n";   // 6 bytes

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw IoError("short write to " + path);
}

void put_u32(std::string& b, std::uint32_t v) {
    char c[4] = {char(v), char(v >> 8), char(v >> 16), char(v >> 24)};
    b.append(c, 4);
}
void put_u16(std::string& b, std::uint16_t v) {
    char c[2] = {char(v), char(v >> 8)};
    b.append(c, 2);
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated file " + path);
    }
    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
               std::uint32_t(p[3]) << 24;
    }
    std::uint16_t u16() {
        need(2);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 2;
        return std::uint16_t(p[0] | p[1] << 8);
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

void append_f32(std::string& b, const std::vector<float>& v) {
    b.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

std::vector<float> take_f32(Cursor& c, std::size_t count) {
    std::vector<float> out(count);
    c.need(count * sizeof(float));
    std::memcpy(out.data(), c.buf.data() + c.pos, count * sizeof(float));
    c.pos += count * sizeof(float);
    return out;
}

std::uint32_t crc_of(const std::string& payload) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                static_cast<uInt>(payload.size())));
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void csv_error(const std::string& path, int line, const std::string& what) {
    throw IoError(path + ":" + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, const std::string& path, int line) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) csv_error(path, line, "trailing characters in number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        csv_error(path, line, "bad number '" + s + "'");
    }
}

}  // namespace

void write_scene(const std::string& path, const SceneRaster& s) {
    if (s.vv.size() != static_cast<std::size_t>(s.width) * s.height ||
        s.vh.size() != s.vv.size() ||
        s.bathymetry.size() != static_cast<std::size_t>(s.bathy_width) * s.bathy_height) {
        throw DimensionError("write_scene: plane sizes do not match declared dims");
    }
    json hdr;
    hdr["scene_id"] = s.scene_id;
    hdr["width"] = s.width;
    hdr["height"] = s.height;
    hdr["pixel_spacing_m"] = 10;
    hdr["bathy_width"] = s.bathy_width;
    hdr["bathy_height"] = s.bathy_height;
    hdr["bathy_spacing_m"] = 500;
    hdr["dtype"] = "f32le";
    const std::string hs = hdr.dump();

    std::string out(kSceneMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(hs.size()));
    out += hs;
    append_f32(out, s.vv);
    append_f32(out, s.vh);
    append_f32(out, s.bathymetry);
    write_file(path, out);
}

SceneRaster read_scene(const std::string& path) {
    const std::string buf = read_file(path);
    Cursor c{buf, 0, path};
    if (c.bytes(8) != std::string(kSceneMagic, 8)) {
        throw IoError("bad scene magic in " + path);
    }
    const std::uint32_t hlen = c.u32();
    json hdr;
    try {
        hdr = json::parse(c.bytes(hlen));
    } catch (const json::exception& e) {
        throw IoError("bad scene header in " + path + ": " + e.what());
    }
    SceneRaster s;
    try {
        s.scene_id = hdr.at("scene_id").get<std::string>();
        s.width = hdr.at("width").get<int>();
        s.height = hdr.at("height").get<int>();
        s.bathy_width = hdr.at("bathy_width").get<int>();
        s.bathy_height = hdr.at("bathy_height").get<int>();
        if (hdr.at("dtype").get<std::string>() != "f32le") {
            throw IoError("unsupported dtype in " + path);
        }
    } catch (const json::exception& e) {
        throw IoError("bad scene header in " + path + ": " + e.what());
    }
    if (s.width < 1 || s.height < 1 || s.bathy_width < 1 || s.bathy_height < 1) {
        throw IoError("non-positive dims in " + path);
    }
    const std::size_t plane = static_cast<std::size_t>(s.width) * s.height;
    s.vv = take_f32(c, plane);
    s.vh = take_f32(c, plane);
    s.bathymetry = take_f32(c, static_cast<std::size_t>(s.bathy_width) * s.bathy_height);
    if (c.pos != buf.size()) throw IoError("trailing bytes in " + path);
    return s;
}

void write_weights(const std::string& path, const ModelGraph& g, const WeightStore& w) {
    validate_weights(g, w);

    struct Rec {
        std::string name;
        int dtype;  // 0 f32, 1 i8
        std::vector<std::uint32_t> shape;
        int fraction_bits;  // -1 absent
        std::string blob;
    };
    std::vector<Rec> recs;
    for (const auto& [name, cw] : w.entries) {  // map order: sorted by name
        const Node* node = nullptr;
        for (const Node& n : g.nodes) {
            if (n.kind == NodeKind::Conv && n.name == name) node = &n;
        }
        Rec wr;
        wr.name = name + ".weight";
        const std::vector<std::uint32_t> kshape{
            std::uint32_t(node->c_out), std::uint32_t(node->c_in / node->groups),
            std::uint32_t(node->k), std::uint32_t(node->k)};
        wr.shape = kshape;
        if (cw.quantized) {
            wr.dtype = 1;
            wr.fraction_bits = cw.f_w;
            wr.blob.assign(reinterpret_cast<const char*>(cw.qkernel.data()), cw.qkernel.size());
        } else {
            wr.dtype = 0;
            wr.fraction_bits = -1;
            wr.blob.assign(reinterpret_cast<const char*>(cw.kernel.data()),
                           cw.kernel.size() * sizeof(float));
        }
        recs.push_back(std::move(wr));

        Rec br;
        br.name = name + ".bias";
        br.dtype = 0;
        br.shape = {std::uint32_t(node->c_out)};
        br.fraction_bits = -1;
        br.blob.assign(reinterpret_cast<const char*>(cw.bias.data()),
                       cw.bias.size() * sizeof(float));
        recs.push_back(std::move(br));

        if (cw.quantized) {
            Rec qr;
            qr.name = name + ".qio";
            qr.dtype = 1;
            qr.shape = {2};
            qr.fraction_bits = -1;
            qr.blob.push_back(static_cast<char>(cw.f_in));
            qr.blob.push_back(static_cast<char>(cw.f_out));
            recs.push_back(std::move(qr));
        }
    }

    std::string payload;
    put_u32(payload, static_cast<std::uint32_t>(recs.size()));
    for (const Rec& r : recs) {
        put_u16(payload, static_cast<std::uint16_t>(r.name.size()));
        payload += r.name;
        payload.push_back(static_cast<char>(r.dtype));
        payload.push_back(static_cast<char>(r.shape.size()));
        for (std::uint32_t d : r.shape) put_u32(payload, d);
        put_u16(payload, static_cast<std::uint16_t>(r.fraction_bits));
    }
    for (const Rec& r : recs) payload += r.blob;

    std::string out(kWeightMagic, 6);
    out += payload;
    put_u32(out, crc_of(payload));
    write_file(path, out);
}

WeightStore read_weights(const std::string& path) {
    const std::string buf = read_file(path);
    Cursor c{buf, 0, path};
    if (c.bytes(6) != std::string(kWeightMagic, 6)) {
        throw IoError("bad weight magic in " + path);
    }
    if (buf.size() < 10) throw IoError("truncated file " + path);
    const std::string payload = buf.substr(6, buf.size() - 10);
    Cursor tail{buf, buf.size() - 4, path};
    if (tail.u32() != crc_of(payload)) throw IoError("CRC mismatch in " + path);

    struct Rec {
        std::string name;
        int dtype;
        std::vector<std::uint32_t> shape;
        int fraction_bits;
        std::size_t count;
    };
    const std::uint32_t nrec = c.u32();
    std::vector<Rec> recs;
    recs.reserve(nrec);
    for (std::uint32_t i = 0; i < nrec; ++i) {
        Rec r;
        r.name = c.bytes(c.u16());
        r.dtype = c.u8();
        if (r.dtype > 1) throw IoError("unknown dtype in " + path);
        const int nd = c.u8();
        r.count = 1;
        for (int d = 0; d < nd; ++d) {
            r.shape.push_back(c.u32());
            r.count *= r.shape.back();
        }
        r.fraction_bits = static_cast<std::int16_t>(c.u16());
        recs.push_back(std::move(r));
    }

    WeightStore w;
    for (const Rec& r : recs) {
        const auto dot = r.name.rfind('.');
        if (dot == std::string::npos) throw IoError("unstructured record name in " + path);
        const std::string layer = r.name.substr(0, dot);
        const std::string field = r.name.substr(dot + 1);
        ConvWeights& cw = w.entries[layer];
        if (field == "weight") {
            if (r.dtype == 1) {
                cw.quantized = true;
                cw.f_w = r.fraction_bits;
                const std::string blob = c.bytes(r.count);
                cw.qkernel.assign(blob.begin(), blob.end());
            } else {
                const std::string blob = c.bytes(r.count * sizeof(float));
                cw.kernel.resize(r.count);
                std::memcpy(cw.kernel.data(), blob.data(), blob.size());
            }
        } else if (field == "bias") {
            if (r.dtype != 0) throw IoError("bias must be f32 in " + path);
            const std::string blob = c.bytes(r.count * sizeof(float));
            cw.bias.resize(r.count);
            std::memcpy(cw.bias.data(), blob.data(), blob.size());
        } else if (field == "qio") {
            if (r.dtype != 1 || r.count != 2) throw IoError("malformed qio record in " + path);
            const std::string blob = c.bytes(2);
            cw.f_in = static_cast<std::int8_t>(blob[0]);
            cw.f_out = static_cast<std::int8_t>(blob[1]);
        } else {
            throw IoError("unknown record field '" + field + "' in " + path);
        }
    }
    if (c.pos != buf.size() - 4) throw IoError("trailing bytes in " + path);
    for (const auto& [layer, cw] : w.entries) {
        if (cw.quantized && cw.qkernel.empty()) {
            throw IoError("layer " + layer + " missing weight blob in " + path);
        }
    }
    return w;
}

bool weights_quantized(const WeightStore& w) {
    for (const auto& [_, cw] : w.entries) {
        if (cw.quantized) return true;
    }
    return false;
}

const char* kDetectionsCsvHeader =
    "scene_id,detect_scene_row,detect_scene_column,x1,y1,x2,y2,class,score";
const char* kLabelsCsvHeader =
    "scene_id,detect_scene_row,detect_scene_column,is_vessel,is_fishing,confidence,"
    "distance_from_shore_km";

const char* class_name(int class_id) {
    switch (class_id) {
        case 0: return "non-vessel";
        case 1: return "non-fishing";
        case 2: return "fishing";
    }
    throw DomainError("class_name: class_id out of range");
}

int class_id_from_name(const std::string& name) {
    if (name == "non-vessel") return 0;
    if (name == "non-fishing") return 1;
    if (name == "fishing") return 2;
    throw IoError("unknown class '" + name + "'");
}

void write_detections_csv(const std::string& path, const std::vector<DetectionRow>& rows) {
    std::string out = kDetectionsCsvHeader;
    out += "\n";
    for (const DetectionRow& r : rows) {
        out += r.scene_id + "," + fmt("%.2f", r.det.row) + "," + fmt("%.2f", r.det.col) + "," +
               fmt("%.2f", r.det.x1) + "," + fmt("%.2f", r.det.y1) + "," +
               fmt("%.2f", r.det.x2) + "," + fmt("%.2f", r.det.y2) + "," +
               class_name(r.det.class_id) + "," + fmt("%.6f", r.det.score) + "\n";
    }
    write_file(path, out);
}

std::vector<DetectionRow> read_detections_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    std::vector<DetectionRow> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (split_csv_line(line) != split_csv_line(kDetectionsCsvHeader)) {
                csv_error(path, 1, "bad detections header");
            }
            continue;
        }
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 9) csv_error(path, lineno, "expected 9 fields");
        DetectionRow r;
        r.scene_id = f[0];
        r.det.row = parse_double(f[1], path, lineno);
        r.det.col = parse_double(f[2], path, lineno);
        r.det.x1 = parse_double(f[3], path, lineno);
        r.det.y1 = parse_double(f[4], path, lineno);
        r.det.x2 = parse_double(f[5], path, lineno);
        r.det.y2 = parse_double(f[6], path, lineno);
        try {
            r.det.class_id = class_id_from_name(f[7]);
        } catch (const IoError&) {
            csv_error(path, lineno, "unknown class '" + f[7] + "'");
        }
        r.det.score = parse_double(f[8], path, lineno);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_labels_csv(const std::string& path, const std::vector<GroundTruthLabel>& labels) {
    std::string out = kLabelsCsvHeader;
    out += "\n";
    for (const GroundTruthLabel& l : labels) {
        const char* conf = l.confidence == Confidence::High     ? "HIGH"
                           : l.confidence == Confidence::Medium ? "MEDIUM"
                                                                : "LOW";
        out += l.scene_id + "," + std::to_string(l.row) + "," + std::to_string(l.col) + "," +
               (l.is_vessel ? (*l.is_vessel ? "true" : "false") : "") + "," +
               (l.is_fishing ? (*l.is_fishing ? "true" : "false") : "") + "," + conf + "," +
               (std::isinf(l.distance_from_shore_km) ? "inf"
                                                     : fmt("%.3f", l.distance_from_shore_km)) +
               "\n";
    }
    write_file(path, out);
}

std::vector<GroundTruthLabel> read_labels_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    std::vector<GroundTruthLabel> out;
    auto parse_bool = [&](const std::string& s, int ln) -> std::optional<bool> {
        if (s.empty()) return std::nullopt;
        if (s == "true") return true;
        if (s == "false") return false;
        csv_error(path, ln, "bad bool '" + s + "'");
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (split_csv_line(line) != split_csv_line(kLabelsCsvHeader)) {
                csv_error(path, 1, "bad labels header");
            }
            continue;
        }
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 7) csv_error(path, lineno, "expected 7 fields");
        GroundTruthLabel l;
        l.scene_id = f[0];
        l.row = static_cast<int>(parse_double(f[1], path, lineno));
        l.col = static_cast<int>(parse_double(f[2], path, lineno));
        l.is_vessel = parse_bool(f[3], lineno);
        l.is_fishing = parse_bool(f[4], lineno);
        if (l.is_fishing.has_value() && !l.is_vessel.value_or(false)) {
            csv_error(path, lineno, "is_fishing set on a non-vessel label");
        }
        if (f[5] == "HIGH") l.confidence = Confidence::High;
        else if (f[5] == "MEDIUM") l.confidence = Confidence::Medium;
        else if (f[5] == "LOW") l.confidence = Confidence::Low;
        else csv_error(path, lineno, "bad confidence '" + f[5] + "'");
        l.distance_from_shore_km = parse_double(f[6], path, lineno);
        out.push_back(std::move(l));
    }
    return out;
}

namespace {

json counts_json(const MetricCounts& c) {
    json j;
    j["tp"] = c.tp;
    j["fp"] = c.fp;
    j["fn"] = c.fn;
    j["f1"] = c.f1;
    return j;
}

}  // namespace

std::string score_report_json(const ScoreReport& r) {
    json j;
    j["f1_detection"] = r.detection.f1;
    j["f1_near_shore"] = r.near_shore.f1;
    j["f1_vessel"] = r.vessel.f1;
    j["f1_fishing"] = r.fishing.f1;
    j["metrics"]["detection"] = counts_json(r.detection);
    j["metrics"]["near_shore"] = counts_json(r.near_shore);
    j["metrics"]["vessel"] = counts_json(r.vessel);
    j["metrics"]["fishing"] = counts_json(r.fishing);
    return j.dump(2) + "\n";
}

std::string threshold_table_json(const ThresholdTable& t) {
    json j;
    for (int c = 0; c < 3; ++c) {
        j[class_name(c)]["offshore"] = t.t[c][0];
        j[class_name(c)]["near_shore"] = t.t[c][1];
    }
    return j.dump(2) + "\n";
}

ThresholdTable threshold_table_from_json(const std::string& text) {
    ThresholdTable t;
    json j;
    try {
        j = json::parse(text);
        for (int c = 0; c < 3; ++c) {
            t.t[c][0] = j.at(class_name(c)).at("offshore").get<double>();
            t.t[c][1] = j.at(class_name(c)).at("near_shore").get<double>();
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("bad threshold JSON: ") + e.what());
    }
    return t;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw IoError(std::string("bad config JSON: ") + e.what());
    }
    RunConfig c;
    try {
        if (j.contains("model")) {
            const json& m = j["model"];
            if (m.contains("variant")) {
                const std::string v = m["variant"].get<std::string>();
                if (v == "n") c.model.variant = Variant::N;
                else if (v == "s") c.model.variant = Variant::S;
                else throw ConfigError("unknown variant '" + v + "'");
            }
            if (m.contains("use_ghost")) c.model.use_ghost = m["use_ghost"].get<bool>();
            if (m.contains("use_p2")) c.model.use_p2 = m["use_p2"].get<bool>();
            if (m.contains("use_c3")) c.model.use_c3 = m["use_c3"].get<bool>();
            if (m.contains("activation")) {
                const std::string a = m["activation"].get<std::string>();
                if (a == "silu") c.model.activation = Activation::SiLU;
                else if (a == "hardswish") c.model.activation = Activation::HardSwish;
                else throw ConfigError("unknown activation '" + a + "'");
            }
            if (m.contains("depth_multiple")) c.model.depth_multiple = m["depth_multiple"].get<double>();
            if (m.contains("width_multiple")) c.model.width_multiple = m["width_multiple"].get<double>();
            if (m.contains("reg_max")) c.model.reg_max = m["reg_max"].get<int>();
            if (m.contains("quant_boundaries")) {
                c.model.quant_boundaries =
                    m["quant_boundaries"].get<std::vector<std::string>>();
            }
        }
        if (j.contains("overlap_px")) c.pipeline.overlap_px = j["overlap_px"].get<int>();
        if (j.contains("nms_iou")) c.pipeline.nms_iou = j["nms_iou"].get<double>();
        if (j.contains("conf_floor")) c.pipeline.conf_floor = j["conf_floor"].get<double>();
        if (j.contains("workers")) c.pipeline.workers = j["workers"].get<int>();
        if (j.contains("mode")) {
            const std::string m = j["mode"].get<std::string>();
            if (m == "float") c.pipeline.mode = ExecMode::Float;
            else if (m == "quantized") c.pipeline.mode = ExecMode::Quantized;
            else throw ConfigError("unknown mode '" + m + "'");
        }
        if (j.contains("thresholds")) {
            c.pipeline.thresholds = threshold_table_from_json(j["thresholds"].dump());
        }
        if (j.contains("radius_m")) c.radius_m = j["radius_m"].get<double>();
        if (j.contains("weight_seed")) c.weight_seed = j["weight_seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw IoError(std::string("bad config JSON: ") + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return parse_run_config(read_file(path));
}

}  // namespace darkship
