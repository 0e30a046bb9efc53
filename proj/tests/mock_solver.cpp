// Line-delimited JSON solver used by the adapter tests.
//   mock_solver identity | reverse | invalid | error | garbage | crash | sleep
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "identity";
  std::string line;
  while (std::getline(std::cin, line)) {
    const auto req = nlohmann::json::parse(line);
    const std::size_t n = req["coords"].size();
    nlohmann::json resp;
    resp["id"] = req["id"];
    if (mode == "crash") return 3;
    if (mode == "sleep") std::this_thread::sleep_for(std::chrono::seconds(30));
    if (mode == "garbage") {
      std::cout << "not json" << std::endl;
      continue;
    }
    if (mode == "error") {
      resp["error"] = "no solution";
    } else if (req["problem"] == "tsp") {
      std::vector<std::size_t> tour;
      for (std::size_t i = 0; i < n; ++i) tour.push_back(mode == "reverse" ? n - 1 - i : i);
      if (mode == "invalid") tour.back() = 0;
      resp["tour"] = tour;
    } else {
      std::vector<std::vector<std::size_t>> routes;
      for (std::size_t i = 1; i < n; ++i) routes.push_back({i});
      if (mode == "invalid") routes.pop_back();
      resp["routes"] = routes;
    }
    std::cout << resp.dump() << std::endl;
  }
  return 0;
}
