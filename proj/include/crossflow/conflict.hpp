#pragma once
// Trajectory lane-groups ("arm-intention") and the pairwise conflict relation
// of the four-arm intersection. The non-conflict table is static data; the
// geometric check in tests/ is only an oracle for it.

#include <array>
#include <bitset>
#include <ostream>
#include <string>
#include <vector>

#include "crossflow/domain.hpp"

namespace crossflow {

struct LaneGroup {
  int arm = 0;
  Intention intention = Intention::Straight;

  constexpr int index() const { return arm * kNumIntentions + static_cast<int>(intention); }
  static constexpr LaneGroup from_index(int idx) {
    return {idx / kNumIntentions, static_cast<Intention>(idx % kNumIntentions)};
  }
  std::string label() const {
    return std::to_string(arm) + "-" + std::to_string(static_cast<int>(intention));
  }
  constexpr bool operator==(const LaneGroup&) const = default;
};

inline constexpr int kNumGroups = kNumArms * kNumIntentions;

inline std::ostream& operator<<(std::ostream& os, const LaneGroup& g) {
  return os << g.label();
}

inline LaneGroup classify(const VehicleState& v) { return {v.arm, v.intention}; }

using GroupSet = std::bitset<kNumGroups>;

namespace detail {

struct TableRow {
  int group;
  std::array<int, 3> compatible;
};

constexpr int g(int arm, int intention) { return arm * kNumIntentions + intention; }

// Non-right-turn rows; right-turn groups are appended to every row.
inline constexpr std::array<TableRow, 8> kNonConflictRows{{
    {g(0, 1), {g(0, 2), g(1, 1), g(2, 2)}},
    {g(0, 2), {g(0, 1), g(1, 2), g(3, 1)}},
    {g(1, 1), {g(0, 1), g(1, 2), g(3, 2)}},
    {g(1, 2), {g(0, 2), g(1, 1), g(2, 1)}},
    {g(2, 1), {g(1, 2), g(2, 2), g(3, 1)}},
    {g(2, 2), {g(0, 1), g(2, 1), g(3, 2)}},
    {g(3, 1), {g(0, 2), g(2, 1), g(3, 2)}},
    {g(3, 2), {g(1, 1), g(2, 2), g(3, 1)}},
}};

inline GroupSet right_turn_groups() {
  GroupSet s;
  for (int a = 0; a < kNumArms; ++a) s.set(static_cast<std::size_t>(g(a, 0)));
  return s;
}

inline std::array<GroupSet, kNumGroups> build_non_conflict() {
  std::array<GroupSet, kNumGroups> t{};
  const GroupSet rights = right_turn_groups();
  for (const auto& row : kNonConflictRows) {
    auto& s = t[static_cast<std::size_t>(row.group)];
    for (int c : row.compatible) s.set(static_cast<std::size_t>(c));
    s |= rights;
  }
  for (int a = 0; a < kNumArms; ++a) {
    auto& s = t[static_cast<std::size_t>(g(a, 0))];
    s.set();
    s.reset(static_cast<std::size_t>(g(a, 0)));
  }
  return t;
}

inline const std::array<GroupSet, kNumGroups>& non_conflict_table() {
  static const auto table = build_non_conflict();
  return table;
}

}  // namespace detail

/// Groups that may occupy the conflict zone together with `g`
/// (never contains `g` itself).
inline GroupSet non_conflict_set(LaneGroup g) {
  return detail::non_conflict_table()[static_cast<std::size_t>(g.index())];
}

inline std::vector<LaneGroup> non_conflict_list(LaneGroup g) {
  std::vector<LaneGroup> out;
  const auto s = non_conflict_set(g);
  for (int i = 0; i < kNumGroups; ++i)
    if (s.test(static_cast<std::size_t>(i))) out.push_back(LaneGroup::from_index(i));
  return out;
}

/// Same-group pairs are ordered longitudinally and never conflict here.
inline bool conflicts(LaneGroup a, LaneGroup b) {
  if (a == b) return false;
  return !non_conflict_set(a).test(static_cast<std::size_t>(b.index()));
}

/// Bit set of all groups conflicting with `g`.
inline GroupSet conflict_set(LaneGroup g) {
  GroupSet s = ~non_conflict_set(g);
  s.reset(static_cast<std::size_t>(g.index()));
  return s;
}

/// Human-readable table, one line per group: "0-1 | 0-0 0-2 1-0 ...".
inline void print_conflict_table(std::ostream& os) {
  os << "group | non-conflicting groups\n";
  for (int i = 0; i < kNumGroups; ++i) {
    const auto g = LaneGroup::from_index(i);
    os << g.label() << " |";
    for (const auto& other : non_conflict_list(g)) os << ' ' << other.label();
    os << '\n';
  }
}

}  // namespace crossflow
