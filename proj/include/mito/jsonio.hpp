#pragma once

#include <string>
#include <vector>

#include "mito/types.hpp"

namespace mito {

/// Detection dumps, one JSON object per line:
/// {"image_id":str,"x_min":f,"y_min":f,"x_max":f,"y_max":f,"score":f,
///  "stage":"detector"|"pipeline"}
void write_detections_jsonl(const std::vector<Detection>& dets, const std::string& path);
std::vector<Detection> read_detections_jsonl(const std::string& path);

std::string detection_to_json_line(const Detection& d);

}  // namespace mito
