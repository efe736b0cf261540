#include "mito/jsonio.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace mito {

std::string detection_to_json_line(const Detection& d) {
    json obj{{"image_id", d.image_id}, {"x_min", d.box.x_min}, {"y_min", d.box.y_min},
             {"x_max", d.box.x_max},   {"y_max", d.box.y_max}, {"score", d.score},
             {"stage", to_string(d.stage)}};
    return obj.dump();
}

void write_detections_jsonl(const std::vector<Detection>& dets, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_detections_jsonl: cannot write " + path);
    }
    for (const Detection& d : dets) {
        out << detection_to_json_line(d) << "\n";
    }
}

std::vector<Detection> read_detections_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("read_detections_jsonl: cannot open " + path);
    }
    std::vector<Detection> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
            Detection d;
            d.image_id = obj.at("image_id").get<std::string>();
            d.box.x_min = obj.at("x_min").get<double>();
            d.box.y_min = obj.at("y_min").get<double>();
            d.box.x_max = obj.at("x_max").get<double>();
            d.box.y_max = obj.at("y_max").get<double>();
            d.score = obj.at("score").get<double>();
            const std::string stage = obj.at("stage").get<std::string>();
            if (stage == "detector") {
                d.stage = Stage::Detector;
            } else if (stage == "pipeline") {
                d.stage = Stage::Pipeline;
            } else {
                throw std::runtime_error("unknown stage \"" + stage + "\"");
            }
            out.push_back(std::move(d));
        } catch (const std::exception& e) {
            std::ostringstream os;
            os << path << ":" << line_no << ": " << e.what();
            throw std::runtime_error(os.str());
        }
    }
    return out;
}

}  // namespace mito
