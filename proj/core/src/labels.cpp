#include "fpx/labels.hpp"

#include <algorithm>
#include <cctype>

namespace fpx {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

template <class Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const std::array<Enum, N>& values) {
  for (auto v : values) {
    if (iequals(s, to_string(v))) return v;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Gender v) noexcept { return v == Gender::Male ? "Male" : "Female"; }
std::string_view to_string(Hand v) noexcept { return v == Hand::Left ? "Left" : "Right"; }

std::string_view to_string(Finger v) noexcept {
  switch (v) {
    case Finger::Thumb: return "Thumb";
    case Finger::Index: return "Index";
    case Finger::Middle: return "Middle";
    case Finger::Ring: return "Ring";
    case Finger::Little: return "Little";
  }
  return "?";
}

std::string_view to_string(Alteration v) noexcept {
  switch (v) {
    case Alteration::Real: return "Real";
    case Alteration::Obliteration: return "Obliteration";
    case Alteration::CentralRotation: return "CentralRotation";
    case Alteration::ZCut: return "ZCut";
  }
  return "?";
}

std::string_view to_string(Severity v) noexcept {
  switch (v) {
    case Severity::None: return "None";
    case Severity::Easy: return "Easy";
    case Severity::Medium: return "Medium";
    case Severity::Hard: return "Hard";
  }
  return "?";
}

std::optional<Gender> parse_gender(std::string_view s) { return parse_enum(s, kGenders); }
std::optional<Hand> parse_hand(std::string_view s) { return parse_enum(s, kHands); }
std::optional<Finger> parse_finger(std::string_view s) { return parse_enum(s, kFingers); }
std::optional<Alteration> parse_alteration(std::string_view s) { return parse_enum(s, kAlterations); }
std::optional<Severity> parse_severity(std::string_view s) { return parse_enum(s, kSeverities); }

}  // namespace fpx
