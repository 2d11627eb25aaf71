#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace structkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownCharacter : public Error {
 public:
  explicit UnknownCharacter(std::size_t position)
      : Error("unknown character at byte " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t position, std::vector<std::string> expected);
  std::size_t position() const { return position_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  std::size_t position_;
  std::vector<std::string> expected_;
};

/// A softmax row in which every entry is masked. Always an upstream masking bug.
class AllMaskedRow : public Error {
 public:
  explicit AllMaskedRow(std::size_t row)
      : Error("softmax row " + std::to_string(row) + " is fully masked"), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class UnknownNodeType : public Error {
 public:
  explicit UnknownNodeType(int type_id)
      : Error("node type id " + std::to_string(type_id) + " outside embedding table") {}
};

class HeightOverflow : public Error {
 public:
  HeightOverflow(int height, int h_max)
      : Error("target height " + std::to_string(height) + " >= H_max " + std::to_string(h_max)) {}
};

class GradCheckFailure : public Error {
 public:
  GradCheckFailure(std::string param, double rel_error);
  const std::string& param() const { return param_; }
  double rel_error() const { return rel_error_; }

 private:
  std::string param_;
  double rel_error_;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(long step, std::size_t example);
  long step() const { return step_; }
  std::size_t example() const { return example_; }

 private:
  long step_;
  std::size_t example_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace structkit
