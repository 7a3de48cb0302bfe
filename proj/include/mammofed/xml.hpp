#pragma once

// Minimal XML support for the result-set interchange format: escaping on the way
// out and a small non-validating element reader on the way in.

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mammofed::xml {

/// Escapes &, <, >, " and ' for use in character data and attribute values.
std::string escape(std::string_view text);

struct Element {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<Element> children;
    std::string text;  // concatenated character data directly inside this element

    [[nodiscard]] const std::string* attribute(std::string_view key) const;
};

/// Parses one document element. Accepts an optional XML declaration, comments and
/// whitespace around it. Throws ParseError on malformed input.
Element parse(std::string_view document);

} // namespace mammofed::xml
