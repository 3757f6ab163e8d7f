#include "birads/objective.hpp"

#include "json.hpp"

namespace birads {

std::string loss_breakdown_to_json(const LossBreakdown& b) {
  nlohmann::json j;
  for (int k = 0; k < kTaskCount; ++k) j["L" + std::to_string(k + 1)] = b.task[k];
  j["L_a"] = b.agreement;
  j["total"] = b.total;
  return j.dump();
}

LossBreakdown loss_breakdown_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LossBreakdown b;
    for (int k = 0; k < kTaskCount; ++k) b.task[k] = j.at("L" + std::to_string(k + 1)).get<double>();
    b.agreement = j.at("L_a").get<double>();
    b.total = j.at("total").get<double>();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ObjectiveError(std::string("malformed loss record: ") + e.what());
  }
}

}  // namespace birads
