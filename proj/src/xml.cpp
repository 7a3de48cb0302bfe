#include "mammofed/xml.hpp"

#include "mammofed/error.hpp"

#include <cctype>
#include <charconv>

namespace mammofed::xml {

std::string escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        default: out += c;
        }
    }
    return out;
}

const std::string* Element::attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes) {
        if (k == key) return &v;
    }
    return nullptr;
}

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

class Reader {
public:
    explicit Reader(std::string_view doc) : s_(doc) {}

    Element document() {
        skip_misc();
        if (s_.substr(i_, 5) == "<?xml") {
            auto end = s_.find("?>", i_);
            if (end == std::string_view::npos) fail("unterminated XML declaration");
            i_ = end + 2;
        }
        skip_misc();
        Element root = element();
        skip_misc();
        if (i_ != s_.size()) fail("content after document element");
        return root;
    }

private:
    std::string_view s_;
    std::size_t i_ = 0;

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(i_, "xml: " + what); }

    bool at_end() const { return i_ >= s_.size(); }
    char peek() const { return at_end() ? '\0' : s_[i_]; }

    void skip_space() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }

    void skip_misc() {
        for (;;) {
            skip_space();
            if (s_.substr(i_, 4) == "<!--") {
                auto end = s_.find("-->", i_ + 4);
                if (end == std::string_view::npos) fail("unterminated comment");
                i_ = end + 3;
            } else {
                return;
            }
        }
    }

    static bool name_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':' ||
               (static_cast<unsigned char>(c) >= 0x80);
    }

    std::string name() {
        std::size_t start = i_;
        if (at_end() || !(std::isalpha(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == ':')) {
            fail("expected a name");
        }
        while (!at_end() && name_char(s_[i_])) ++i_;
        return std::string(s_.substr(start, i_ - start));
    }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++i_;
    }

    void reference(std::string& out) {
        std::size_t semi = s_.find(';', i_);
        if (semi == std::string_view::npos || semi - i_ > 12) fail("malformed entity reference");
        std::string_view ent = s_.substr(i_ + 1, semi - i_ - 1);
        if (ent == "amp") out += '&';
        else if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else if (ent.size() > 1 && ent[0] == '#') {
            std::uint32_t cp = 0;
            bool hex = ent[1] == 'x';
            std::string_view digits = ent.substr(hex ? 2 : 1);
            auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), cp, hex ? 16 : 10);
            if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size() || cp > 0x10FFFF) {
                fail("malformed character reference");
            }
            append_utf8(out, cp);
        } else {
            fail("unknown entity &" + std::string(ent) + ";");
        }
        i_ = semi + 1;
    }

    Element element() {
        expect('<');
        Element el;
        el.name = name();
        for (;;) {
            skip_space();
            char c = peek();
            if (c == '/') {
                ++i_;
                expect('>');
                return el;
            }
            if (c == '>') {
                ++i_;
                break;
            }
            std::string key = name();
            skip_space();
            expect('=');
            skip_space();
            char quote = peek();
            if (quote != '"' && quote != '\'') fail("expected quoted attribute value");
            ++i_;
            std::string value;
            while (!at_end() && s_[i_] != quote) {
                if (s_[i_] == '<') fail("'<' in attribute value");
                if (s_[i_] == '&') {
                    reference(value);
                } else {
                    value += s_[i_++];
                }
            }
            expect(quote);
            if (el.attribute(key)) fail("duplicate attribute " + key);
            el.attributes.emplace_back(std::move(key), std::move(value));
        }
        // content
        for (;;) {
            if (at_end()) fail("unterminated element <" + el.name + ">");
            char c = s_[i_];
            if (c == '<') {
                if (s_.substr(i_, 2) == "</") {
                    i_ += 2;
                    std::string closing = name();
                    if (closing != el.name) fail("mismatched </" + closing + "> for <" + el.name + ">");
                    skip_space();
                    expect('>');
                    return el;
                }
                if (s_.substr(i_, 4) == "<!--") {
                    skip_misc();
                    continue;
                }
                el.children.push_back(element());
            } else if (c == '&') {
                reference(el.text);
            } else {
                el.text += c;
                ++i_;
            }
        }
    }
};

} // namespace

Element parse(std::string_view document) { return Reader(document).document(); }

} // namespace mammofed::xml
