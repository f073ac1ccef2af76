#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace fpx {

enum class Gender : std::uint8_t { Male, Female };
enum class Hand : std::uint8_t { Left, Right };
enum class Finger : std::uint8_t { Thumb, Index, Middle, Ring, Little };
enum class Alteration : std::uint8_t { Real, Obliteration, CentralRotation, ZCut };
enum class Severity : std::uint8_t { None, Easy, Medium, Hard };

inline constexpr std::array kGenders{Gender::Male, Gender::Female};
inline constexpr std::array kHands{Hand::Left, Hand::Right};
inline constexpr std::array kFingers{Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring, Finger::Little};
inline constexpr std::array kAlterations{Alteration::Real, Alteration::Obliteration, Alteration::CentralRotation,
                                         Alteration::ZCut};
inline constexpr std::array kSeverities{Severity::None, Severity::Easy, Severity::Medium, Severity::Hard};

std::string_view to_string(Gender v) noexcept;
std::string_view to_string(Hand v) noexcept;
std::string_view to_string(Finger v) noexcept;
std::string_view to_string(Alteration v) noexcept;
std::string_view to_string(Severity v) noexcept;

// Case-insensitive inverses of to_string; nullopt on unknown text.
std::optional<Gender> parse_gender(std::string_view s);
std::optional<Hand> parse_hand(std::string_view s);
std::optional<Finger> parse_finger(std::string_view s);
std::optional<Alteration> parse_alteration(std::string_view s);
std::optional<Severity> parse_severity(std::string_view s);

struct RecordLabel {
  std::uint32_t subject_id = 1;
  Gender gender = Gender::Male;
  Hand hand = Hand::Left;
  Finger finger = Finger::Thumb;
  Alteration alteration = Alteration::Real;
  Severity severity = Severity::None;

  // alteration == Real <=> severity == None
  bool consistent() const noexcept { return (alteration == Alteration::Real) == (severity == Severity::None); }

  friend bool operator==(const RecordLabel&, const RecordLabel&) = default;
};

}  // namespace fpx
