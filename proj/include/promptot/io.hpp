#ifndef PROMPTOT_IO_HPP
#define PROMPTOT_IO_HPP

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace promptot::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input; the message carries "line N".
struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

/// Shortest decimal form that parses back to the identical double.
std::string format_exact(double value);
/// Fixed-point with six decimals.
std::string format_fixed(double value);

double parse_double(std::string_view token, std::size_t line);
long long parse_int(std::string_view token, std::size_t line);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace promptot::io

#endif  // PROMPTOT_IO_HPP
