#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cocodr {

/// Lowercases ASCII letters and splits on runs of characters that are not
/// ASCII alphanumerics. Bytes >= 0x80 count as word characters so UTF-8
/// words stay intact. Empty tokens are dropped.
std::vector<std::string> tokenize(std::string_view text);

/// Space-joins tokens; tokenize(join_tokens(t)) == t for any tokenizer output.
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace cocodr
