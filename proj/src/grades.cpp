#include "kbgrade/grades.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kbgrade {
namespace {

struct Step {
  std::string_view symbol;
  double points;
};

constexpr std::array<Step, LetterGrade::kLadderSize> kLadder{{
    {"A", 4.000},
    {"A-", 3.667},
    {"B+", 3.333},
    {"B", 3.000},
    {"B-", 2.667},
    {"C+", 2.333},
    {"C", 2.000},
    {"C-", 1.667},
    {"D+", 1.333},
    {"D", 1.000},
    {"D-", 0.667},
    {"F", 0.000},
}};

}  // namespace

LetterGrade LetterGrade::from_index(std::size_t index) {
  if (index >= kLadderSize) throw std::out_of_range("letter grade index out of range");
  return LetterGrade(index);
}

std::optional<LetterGrade> LetterGrade::parse(std::string_view symbol) {
  for (std::size_t i = 0; i < kLadder.size(); ++i) {
    if (kLadder[i].symbol == symbol) return LetterGrade(i);
  }
  return std::nullopt;
}

LetterGrade LetterGrade::nearest(double points) {
  points = std::clamp(points, kMinPoints, kMaxPoints);
  std::size_t best = 0;
  double best_dist = std::abs(points - kLadder[0].points);
  // Ladder is descending, so on equal distance the earlier (higher) step wins.
  for (std::size_t i = 1; i < kLadder.size(); ++i) {
    const double dist = std::abs(points - kLadder[i].points);
    if (dist < best_dist) {
      best = i;
      best_dist = dist;
    }
  }
  return LetterGrade(best);
}

std::string_view LetterGrade::symbol() const noexcept { return kLadder[index_].symbol; }

double LetterGrade::points() const noexcept { return kLadder[index_].points; }

std::size_t tick_distance(LetterGrade a, LetterGrade b) noexcept {
  return a.index() > b.index() ? a.index() - b.index() : b.index() - a.index();
}

std::optional<LetterGrade> exact_letter(double points) noexcept {
  for (std::size_t i = 0; i < kLadder.size(); ++i) {
    if (kLadder[i].points == points) return LetterGrade::from_index(i);
  }
  return std::nullopt;
}

}  // namespace kbgrade
