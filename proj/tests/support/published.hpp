// Published per-team means (TD, BD, DSC, Precision) and printed mean scores
// for the 20 ranked teams, in printed rank order, plus the printed
// weighted-score ordering of the test phase.
#pragma once

#include <array>
#include <string>
#include <vector>

namespace published {

struct PublishedTeam {
  std::string name;
  std::array<double, 4> means;  // TD, BD, DSC, Precision
  double printed_score;
};

inline const std::vector<PublishedTeam> kValidationPhase{
    {"timi", {95.866, 94.921, 93.987, 94.041}, 94.7038},
    {"YangLab", {94.406, 91.302, 95.926, 97.18}, 94.7035},
    {"neu204", {94.441, 92.279, 95.8, 93.451}, 93.9927},
    {"deeptree_damo", {97.369, 96.717, 92.812, 87.324}, 93.5555},
    {"Sanmed_AI", {89.874, 85.102, 95.555, 95.551}, 91.5205},
    {"satsuma", {89.783, 83.571, 94.649, 95.574}, 90.8943},
    {"LinkStartHao", {89.764, 83.439, 94.392, 95.758}, 90.8383},
    {"CITI-SJTU", {91.84, 87.239, 92.943, 91.132}, 90.7885},
    {"lya", {89.613, 83.583, 94.371, 95.146}, 90.6783},
    {"blackbean", {89.422, 83.21, 94.554, 95.461}, 90.6618},
    {"Median", {88.765, 82.441, 94.667, 95.642}, 90.3788},
    {"notbestme", {85.756, 79.181, 95.212, 95.706}, 88.9638},
    {"dolphins", {83.478, 77.496, 93.228, 95.961}, 87.5408},
    {"dnai", {87.596, 79.467, 91.341, 91.234}, 87.4095},
    {"miclab", {82.865, 74.223, 95.501, 96.557}, 87.2865},
    {"suqi", {80.68, 70.555, 94.713, 96.191}, 85.5348},
    {"CBT_IITDELHI", {73.928, 65.672, 94.336, 97.127}, 82.7658},
    {"fme", {74.785, 55.643, 87.053, 87.978}, 76.3648},
    {"bwhacil", {72.524, 58.391, 87.628, 83.076}, 75.4048},
    {"biomedia", {60.598, 51.359, 74.778, 91.687}, 69.6055},
};

inline const std::vector<PublishedTeam> kTestPhase{
    {"timi", {95.919, 94.729, 93.91, 93.553}, 94.5278},
    {"YangLab", {94.512, 91.92, 94.8, 94.707}, 93.9848},
    {"deeptree_damo", {97.853, 97.129, 92.819, 87.928}, 93.9323},
    {"neu204", {90.974, 86.67, 94.056, 93.027}, 91.1818},
    {"Sanmed_AI", {88.843, 83.35, 94.969, 95.055}, 91.1738},
    {"dolphins", {90.134, 84.201, 92.734, 94.656}, 90.4313},
    {"suqi", {89.209, 82.164, 93.646, 95.777}, 90.1990},
    {"notbestme", {87.518, 81.343, 94.515, 96.59}, 89.9915},
    {"lya", {85.215, 75.705, 93.758, 96.501}, 87.7948},
    {"dnai", {86.733, 77.888, 90.871, 91.674}, 86.7915},
    {"CITI-SJTU", {83.545, 73.012, 92.443, 94.756}, 85.9390},
    {"blackbean", {82.103, 71.418, 93.153, 96.146}, 85.7050},
    {"LinkStartHao", {81.721, 71.14, 92.938, 96.14}, 85.4848},
    {"satsuma", {81.565, 70.819, 93.307, 96.181}, 85.4680},
    {"Median", {78.653, 68.314, 93.119, 96.159}, 84.0613},
    {"miclab", {75.408, 65.994, 93.493, 96.44}, 82.8338},
    {"bwhacil", {75.556, 68.478, 81.38, 80.076}, 76.3725},
    {"CBT_IITDELHI", {66.588, 59.044, 81.28, 94.865}, 75.4443},
    {"fme", {70.695, 54.615, 87.986, 87.137}, 75.1083},
    {"biomedia", {64.254, 53.988, 80.37, 93.533}, 73.0363},
};

// Test phase ranked by the 0.30/0.30/0.15/0.15 weighted score, as printed.
inline const std::vector<std::string> kTestWeightedOrder{
    "deeptree_damo", "timi",     "YangLab",      "neu204", "Sanmed_AI",   "dolphins", "suqi",
    "notbestme",     "dnai",     "lya",          "CITI-SJTU", "blackbean", "LinkStartHao", "satsuma",
    "Median",        "miclab",   "bwhacil",      "CBT_IITDELHI", "fme",    "biomedia"};

inline std::vector<std::string> order_of(const std::vector<PublishedTeam> &phase) {
  std::vector<std::string> out;
  for (const auto &t : phase) out.push_back(t.name);
  return out;
}

}  // namespace published
