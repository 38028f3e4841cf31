#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stepforge::text {

/// Maximal runs of non-whitespace characters.
std::vector<std::string_view> split_words(std::string_view text);

std::size_t count_words(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string join(const std::vector<std::string_view>& parts, std::string_view sep);

std::string_view trim(std::string_view s);

/// Sentences split on '.', '!' or '?' followed by whitespace or end of text.
/// The terminator is kept.
std::vector<std::string_view> split_sentences(std::string_view text);

/// Replaces every occurrence of `from` with `to`.
std::string replace_all(std::string_view haystack, std::string_view from, std::string_view to);

}  // namespace stepforge::text
