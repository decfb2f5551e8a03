#pragma once

// ANT wire messages and their newline-delimited JSON encoding.

#include <cstdint>
#include <string>
#include <string_view>

#include "ant/mvn.hpp"

namespace ant {

enum class MessageType { information, gradient, control };
enum class ControlAction { to_information, to_backpropagation };

const char* to_string(MessageType t);
const char* to_string(ControlAction a);

/// Field presence follows the message type: information carries
/// time_stamp, mean and cov; gradient carries time_stamp and gradient;
/// control carries action only.
struct Message {
  std::string sender;
  std::string recipient;
  MessageType type = MessageType::control;
  std::int64_t time_stamp = 0;
  Vector mean;
  Matrix cov;
  Vector gradient;
  ControlAction action = ControlAction::to_information;

  static Message information(std::string sender, std::string recipient, std::int64_t step,
                             const GaussianEstimate& est);
  static Message gradient_msg(std::string sender, std::string recipient, std::int64_t step, Vector g);
  static Message control(std::string sender, std::string recipient, ControlAction action);

  bool operator==(const Message& o) const;
};

/// One JSON object terminated by '\n'. Throws MalformedMessage for
/// non-finite numbers or inconsistent shapes.
std::string encode(const Message& msg);

/// Parses one line (a trailing '\n' is allowed). Unknown or missing fields,
/// wrong JSON types and shape mismatches throw MalformedMessage.
Message decode(std::string_view line);

}  // namespace ant
