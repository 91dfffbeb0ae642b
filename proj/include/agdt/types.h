// SPDX-License-Identifier: Apache-2.0
/**
 * @file   types.h
 * @brief  Task kinds and sentiment labels shared by data and model code.
 */
#ifndef AGDT_TYPES_H
#define AGDT_TYPES_H

#include <cstddef>
#include <string>
#include <string_view>

namespace agdt {

/// Aspects are predefined categories or spans of the sentence.
enum class TaskKind { Category, Term };

/// Label indices double as classifier output indices.
enum class Label : std::size_t {
  Positive = 0,
  Negative = 1,
  Neutral = 2,
  Conflict = 3
};

inline constexpr std::size_t kLabelCount = 4;

std::string to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);
std::string to_string(Label l);
/// Throws ValidationError for anything but the four label names.
Label parse_label(std::string_view s);

} // namespace agdt

#endif // AGDT_TYPES_H
