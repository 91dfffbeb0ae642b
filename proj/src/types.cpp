// SPDX-License-Identifier: Apache-2.0
#include <agdt/types.h>

#include <agdt/tensor.h>

namespace agdt {

std::string to_string(TaskKind k) {
  return k == TaskKind::Category ? "category" : "term";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "category")
    return TaskKind::Category;
  if (s == "term")
    return TaskKind::Term;
  throw ValidationError("unknown task kind '" + std::string(s) + "'");
}

std::string to_string(Label l) {
  switch (l) {
  case Label::Positive:
    return "positive";
  case Label::Negative:
    return "negative";
  case Label::Neutral:
    return "neutral";
  case Label::Conflict:
    return "conflict";
  }
  return "conflict";
}

Label parse_label(std::string_view s) {
  if (s == "positive")
    return Label::Positive;
  if (s == "negative")
    return Label::Negative;
  if (s == "neutral")
    return Label::Neutral;
  if (s == "conflict")
    return Label::Conflict;
  throw ValidationError("unknown sentiment label '" + std::string(s) + "'");
}

} // namespace agdt
