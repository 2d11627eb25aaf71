#include "structkit/errors.hpp"

#include <sstream>

namespace structkit {

namespace {

std::string describe_parse_error(std::size_t position, const std::vector<std::string>& expected) {
  std::ostringstream out;
  out << "parse error at byte " << position << ", expected one of {";
  for (std::size_t i = 0; i < expected.size(); ++i) {
    out << (i ? ", " : "") << expected[i];
  }
  out << "}";
  return out.str();
}

}  // namespace

ParseError::ParseError(std::size_t position, std::vector<std::string> expected)
    : Error(describe_parse_error(position, expected)),
      position_(position),
      expected_(std::move(expected)) {}

GradCheckFailure::GradCheckFailure(std::string param, double rel_error)
    : Error("gradient check failed for " + param + " (max relative error " +
            std::to_string(rel_error) + ")"),
      param_(std::move(param)),
      rel_error_(rel_error) {}

NonFiniteLoss::NonFiniteLoss(long step, std::size_t example)
    : Error("non-finite loss at step " + std::to_string(step) + ", example " +
            std::to_string(example)),
      step_(step),
      example_(example) {}

}  // namespace structkit
