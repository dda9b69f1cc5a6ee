#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace minmt::utf8 {

// Decodes the code point starting at text[pos] and advances pos. Returns
// nullopt (pos untouched) on a malformed, overlong or surrogate sequence.
std::optional<char32_t> decode(std::string_view text, std::size_t& pos);

bool is_valid(std::string_view text);

// Byte offset of the first invalid sequence, if any.
std::optional<std::size_t> first_invalid(std::string_view text);

bool is_space(char32_t cp);

// Splits into code points, each as its UTF-8 bytes. Invalid bytes become
// single-byte pieces so that joining the result returns the input.
std::vector<std::string> characters(std::string_view text);

}  // namespace minmt::utf8
