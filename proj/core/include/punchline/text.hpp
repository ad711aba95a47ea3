#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace punchline::text {

// Decodes UTF-8 into code points; nullopt on malformed input.
std::optional<std::u32string> utf8_decode(std::string_view bytes);
std::string utf8_encode(char32_t code_point);

std::string_view trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

// Lowercased maximal runs of ASCII letters and digits.
std::vector<std::string> alnum_tokens(std::string_view s);

std::string remove_whitespace(std::string_view s);

}  // namespace punchline::text
