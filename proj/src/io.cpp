#include "otmatch/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace otmatch {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write file: " + path);
    out << text;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Heatmap heatmap_from_string(const std::string& text) {
    std::istringstream in(text);
    int h = 0, w = 0;
    double g = 0.0;
    if (!(in >> h >> w >> g))
        throw std::runtime_error("heatmap: bad header, expected 'H W g'");
    GridGeometry geom(w, h, g);
    std::vector<double> values(static_cast<size_t>(h) * w);
    for (auto& v : values)
        if (!(in >> v))
            throw std::runtime_error("heatmap: truncated value grid");
    return Heatmap(geom, std::move(values));
}

std::string heatmap_to_string(const Heatmap& h) {
    std::ostringstream out;
    out << h.height() << ' ' << h.width() << ' ' << format_double(h.geometry().pixel_size)
        << '\n';
    for (int r = 0; r < h.height(); ++r) {
        for (int c = 0; c < h.width(); ++c) {
            if (c) out << ' ';
            out << format_double(h.at(r, c));
        }
        out << '\n';
    }
    return out.str();
}

Heatmap read_heatmap(const std::string& path) { return heatmap_from_string(read_file(path)); }

void write_heatmap(const Heatmap& h, const std::string& path) {
    write_file(path, heatmap_to_string(h));
}

std::vector<Keypoint> keypoints_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    if (!j.is_array())
        throw std::runtime_error("keypoints: expected a JSON array");
    std::vector<Keypoint> out;
    out.reserve(j.size());
    for (const auto& e : j) {
        Keypoint kp;
        kp.x = e.at("x").get<double>();
        kp.y = e.at("y").get<double>();
        kp.visible = e.value("visible", true);
        out.push_back(kp);
    }
    return out;
}

std::string keypoints_to_json(const std::vector<Keypoint>& kps) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& kp : kps)
        j.push_back({{"x", kp.x}, {"y", kp.y}, {"visible", kp.visible}});
    return j.dump(2) + "\n";
}

std::vector<Keypoint> read_keypoints(const std::string& path) {
    return keypoints_from_json(read_file(path));
}

void write_keypoints(const std::vector<Keypoint>& kps, const std::string& path) {
    write_file(path, keypoints_to_json(kps));
}

}  // namespace otmatch
