#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace kbgrade {

/// One step of the 12-symbol letter ladder, A (index 0) down to F (index 11).
class LetterGrade {
 public:
  static constexpr std::size_t kLadderSize = 12;

  constexpr LetterGrade() = default;
  static LetterGrade from_index(std::size_t index);

  /// Parses a ladder symbol ("A", "B+", ...). Returns nullopt for anything else.
  static std::optional<LetterGrade> parse(std::string_view symbol);

  /// Nearest ladder step by points distance; exact midpoints go to the higher grade.
  /// Input is clamped to [0, 4] first.
  static LetterGrade nearest(double points);

  constexpr std::size_t index() const noexcept { return index_; }
  std::string_view symbol() const noexcept;
  double points() const noexcept;

  friend constexpr bool operator==(LetterGrade, LetterGrade) = default;

 private:
  explicit constexpr LetterGrade(std::size_t index) : index_(index) {}
  std::size_t index_ = 0;
};

/// Number of ladder steps between two grades.
std::size_t tick_distance(LetterGrade a, LetterGrade b) noexcept;

/// The exact ladder symbol for `points`, if it sits on the ladder.
std::optional<LetterGrade> exact_letter(double points) noexcept;

inline constexpr double kMinPoints = 0.0;
inline constexpr double kMaxPoints = 4.0;

}  // namespace kbgrade
