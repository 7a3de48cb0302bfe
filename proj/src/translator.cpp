#include "mammofed/translator.hpp"

#include "mammofed/error.hpp"
#include "mammofed/schema.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

namespace mammofed {

using nlohmann::json;

namespace {

std::string fold(std::string_view term) {
    std::string out;
    bool space = false;
    for (char c : term) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::size_t word_count(std::string_view folded) {
    return folded.empty() ? 0 : 1 + static_cast<std::size_t>(std::count(folded.begin(), folded.end(), ' '));
}

} // namespace

// ---------------------------------------------------------------------------
// TermDictionary
// ---------------------------------------------------------------------------

void TermDictionary::add(std::string_view term, TermTarget target) {
    std::string key = fold(term);
    if (key.empty()) throw QueryError("empty dictionary term");
    if (target.kind == TermTarget::Kind::attribute && !find_attribute(target.name)) {
        throw QueryError("dictionary term \"" + key + "\" maps to unknown attribute " + target.name);
    }
    auto [it, inserted] = terms_.emplace(key, target);
    if (!inserted && !(it->second == target)) {
        throw QueryError("dictionary term \"" + key + "\" mapped twice");
    }
    max_words_ = std::max(max_words_, word_count(key));
}

const TermTarget* TermDictionary::find(std::string_view term) const {
    auto it = terms_.find(fold(term));
    return it == terms_.end() ? nullptr : &it->second;
}

TermDictionary TermDictionary::defaults() {
    using K = TermTarget::Kind;
    TermDictionary d;
    auto attr = [&](std::initializer_list<std::string_view> terms, const char* path) {
        for (auto t : terms) d.add(t, {K::attribute, path});
    };
    auto prov = [&](std::initializer_list<std::string_view> terms, const char* id) {
        for (auto t : terms) d.add(t, {K::provider, id});
    };
    attr({"age", "patient age"}, "patient.age_years");
    attr({"children", "number of children", "children count"}, "patient.children_count");
    attr({"age at first pregnancy", "first pregnancy"}, "patient.age_first_pregnancy");
    attr({"age at last pregnancy", "last pregnancy"}, "patient.age_last_pregnancy");
    attr({"hrt", "hrt treatment", "hormone replacement therapy"}, "patient.hrt");
    attr({"hrt start"}, "patient.hrt_start");
    attr({"patient", "patient id"}, "patient.patient_id");
    attr({"site"}, "patient.site_id");
    attr({"study", "study id"}, "study.study_id");
    attr({"study date", "date"}, "study.study_date");
    attr({"diagnosis"}, "study.diagnosis");
    attr({"diagnosed side", "diagnosed laterality"}, "study.diagnosed_laterality");
    attr({"therapy", "therapy outcome"}, "study.therapy_outcome");
    attr({"image", "image id"}, "image.image_id");
    attr({"view"}, "image.view");
    attr({"laterality", "side"}, "image.laterality");
    attr({"breast area"}, "image.breast_area_mm2");
    attr({"density", "mean density"}, "image.mean_density");
    attr({"annotation kind", "kind"}, "annotation.kind");
    attr({"author"}, "annotation.author");
    attr({"microcalc count", "microcalcifications"}, "annotation.microcalc_count");
    attr({"session length"}, "annotation.session_length_min");
    attr({"serial order"}, "annotation.serial_order");
    attr({"reading"}, "annotation.reading");
    attr({"experience", "reader experience"}, "annotation.author_experience_years");
    prov({"find one like it", "similarity"}, "find_one_like_it");
    prov({"asymmetry", "density asymmetry"}, "density_asymmetry");
    return d;
}

TermDictionary TermDictionary::load(std::istream& in) {
    TermDictionary d;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(e.byte > 0 ? e.byte - 1 : 0, "dictionary line " + std::to_string(line_no));
        }
        auto entity = j.value("entity", std::string{});
        if (entity == "dictionary") {
            d.version_ = j.value("version", 1);
        } else if (entity == "term" && j.contains("term")) {
            auto term = j["term"].get<std::string>();
            if (j.contains("attribute")) {
                d.add(term, {TermTarget::Kind::attribute, j["attribute"].get<std::string>()});
            } else if (j.contains("provider")) {
                d.add(term, {TermTarget::Kind::provider, j["provider"].get<std::string>()});
            } else {
                throw QueryError("dictionary line " + std::to_string(line_no) + ": term without target");
            }
        } else {
            throw QueryError("dictionary line " + std::to_string(line_no) + ": unrecognised entry");
        }
    }
    return d;
}

TermDictionary TermDictionary::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return load(in);
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace {

struct Token {
    enum class Kind { word, number, string, symbol, end };
    Kind kind = Kind::end;
    std::string text;  // words keep their spelling; strings are unescaped
    double number = 0;
    std::size_t pos = 0;
};

bool word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-' || c == ':';
}
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

bool date_at(std::string_view s, std::size_t i) {
    if (i + 10 > s.size()) return false;
    for (std::size_t k = 0; k < 10; ++k) {
        char c = s[i + k];
        if ((k == 4 || k == 7) ? c != '-' : !digit(c)) return false;
    }
    return i + 10 == s.size() || !word_char(s[i + 10]);
}

std::vector<Token> lex(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        Token t;
        t.pos = i;
        if (date_at(s, i)) {
            t.kind = Token::Kind::string;
            t.text = std::string(s.substr(i, 10));
            i += 10;
        } else if (word_start(c)) {
            std::size_t j = i;
            while (j < s.size() && word_char(s[j])) ++j;
            t.kind = Token::Kind::word;
            t.text = std::string(s.substr(i, j - i));
            i = j;
        } else if (digit(c) || ((c == '-' || c == '+' || c == '.') && i + 1 < s.size() &&
                                (digit(s[i + 1]) || s[i + 1] == '.'))) {
            std::size_t j = i + 1;
            while (j < s.size() && (digit(s[j]) || s[j] == '.')) ++j;
            if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
                if (k < s.size() && digit(s[k])) {
                    j = k;
                    while (j < s.size() && digit(s[j])) ++j;
                }
            }
            std::string text(s.substr(i, j - i));
            const char* first = text.data() + (text[0] == '+' ? 1 : 0);
            double value = 0;
            auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), value);
            if (ec != std::errc{} || ptr != text.data() + text.size()) {
                throw ParseError(i, "malformed number \"" + text + "\"");
            }
            t.kind = Token::Kind::number;
            t.text = text;
            t.number = value;
            i = j;
        } else if (c == '"' || c == '\'') {
            std::size_t j = i + 1;
            std::string value;
            while (j < s.size() && s[j] != c) {
                if (s[j] == '\\' && j + 1 < s.size()) ++j;
                value += s[j++];
            }
            if (j >= s.size()) throw ParseError(i, "unterminated string");
            t.kind = Token::Kind::string;
            t.text = std::move(value);
            i = j + 1;
        } else {
            static constexpr std::string_view kTwoChar[] = {"!=", "<>", "<=", ">=", "=="};
            std::string_view two = s.substr(i, 2);
            bool matched = std::find(std::begin(kTwoChar), std::end(kTwoChar), two) != std::end(kTwoChar);
            if (matched) {
                t.text = std::string(two);
                i += 2;
            } else if (std::string_view("=<>(),").find(c) != std::string_view::npos) {
                t.text = std::string(1, c);
                i += 1;
            } else {
                throw ParseError(i, std::string("unexpected character '") + c + "'");
            }
            t.kind = Token::Kind::symbol;
        }
        out.push_back(std::move(t));
    }
    Token end;
    end.pos = s.size();
    out.push_back(end);
    return out;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

bool is_operator_word(std::string_view w) {
    for (std::string_view k : {"over", "under", "between", "in", "like", "and", "or", "is"}) {
        if (iequals(w, k)) return true;
    }
    return false;
}

class Parser {
public:
    Parser(std::string_view text, const TermDictionary& dict) : tokens_(lex(text)), dict_(dict) {}

    FormalQuery parse_query() {
        FormalQuery q;
        expect_word("find");
        accept_word("all");
        q.target = parse_entity();
        q.scope.hop_budget = accept_word("local") ? 0 : 1;
        expect_word("where");
        q.predicate = parse_or();
        if (peek().kind != Token::Kind::end) fail(peek(), "unexpected \"" + peek().text + "\"");
        return q;
    }

private:
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    const TermDictionary& dict_;

    const Token& peek(std::size_t ahead = 0) const {
        return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
    }
    const Token& next() {
        const Token& t = peek();
        if (pos_ < tokens_.size() - 1) ++pos_;
        return t;
    }

    [[noreturn]] static void fail(const Token& t, const std::string& what) { throw ParseError(t.pos, what); }

    bool at_word(std::string_view w, std::size_t ahead = 0) const {
        return peek(ahead).kind == Token::Kind::word && iequals(peek(ahead).text, w);
    }
    bool accept_word(std::string_view w) {
        if (!at_word(w)) return false;
        next();
        return true;
    }
    void expect_word(std::string_view w) {
        if (!accept_word(w)) fail(peek(), "expected \"" + std::string(w) + "\"");
    }
    bool at_symbol(std::string_view s) const { return peek().kind == Token::Kind::symbol && peek().text == s; }
    void expect_symbol(std::string_view s) {
        if (!at_symbol(s)) fail(peek(), "expected \"" + std::string(s) + "\"");
        next();
    }

    Entity parse_entity() {
        const Token& t = next();
        if (t.kind == Token::Kind::word) {
            std::string w = fold(t.text);
            if (w == "patients" || w == "patient") return Entity::patients;
            if (w == "studies" || w == "study") return Entity::studies;
            if (w == "images" || w == "image" || w == "mammograms" || w == "mammogram") return Entity::images;
            if (w == "annotations" || w == "annotation") return Entity::annotations;
        }
        fail(t, "expected patients, studies, images or annotations");
    }

    Predicate parse_or() {
        std::vector<Predicate> terms{parse_and()};
        while (accept_word("or")) terms.push_back(parse_and());
        return terms.size() == 1 ? std::move(terms[0]) : any_of(std::move(terms));
    }

    Predicate parse_and() {
        std::vector<Predicate> terms{parse_unary()};
        while (accept_word("and")) terms.push_back(parse_unary());
        return terms.size() == 1 ? std::move(terms[0]) : all_of(std::move(terms));
    }

    Predicate parse_unary() {
        if (accept_word("not")) return negate(parse_unary());
        if (at_symbol("(")) {
            next();
            Predicate inner = parse_or();
            expect_symbol(")");
            return inner;
        }
        return parse_condition();
    }

    /// Longest run of words that names a dictionary term or an attribute path.
    TermTarget parse_term() {
        const Token& first = peek();
        if (first.kind != Token::Kind::word) fail(first, "expected a term");
        std::size_t run = 0;
        while (peek(run).kind == Token::Kind::word) ++run;
        std::size_t limit = std::min(run, std::max<std::size_t>(dict_.max_words(), 1));
        for (std::size_t n = limit; n >= 1; --n) {
            std::string phrase;
            for (std::size_t k = 0; k < n; ++k) {
                if (k) phrase += ' ';
                phrase += peek(k).text;
            }
            const TermTarget* target = dict_.find(phrase);
            if (!target && n == 1 && find_attribute(phrase)) {
                pos_ += 1;
                return TermTarget{TermTarget::Kind::attribute, phrase};
            }
            if (target) {
                pos_ += n;
                return *target;
            }
        }
        std::string name;
        for (std::size_t k = 0; k < run && !is_operator_word(peek(k).text); ++k) {
            if (k) name += ' ';
            name += peek(k).text;
        }
        throw TranslationError(name.empty() ? first.text : name);
    }

    Literal parse_literal() {
        const Token& t = next();
        switch (t.kind) {
        case Token::Kind::number: return t.number;
        case Token::Kind::string: return t.text;
        case Token::Kind::word:
            if (iequals(t.text, "true")) return true;
            if (iequals(t.text, "false")) return false;
            return t.text;
        default: fail(t, "expected a value");
        }
    }

    double parse_number() {
        const Token& t = next();
        if (t.kind != Token::Kind::number) fail(t, "expected a number");
        return t.number;
    }

    Predicate make(const TermTarget& term, CmpOp op, std::vector<Literal> values) {
        if (term.kind == TermTarget::Kind::attribute) return compare(term.name, op, std::move(values));
        return derived(term.name, json::object(), op, std::move(values));
    }

    Predicate parse_condition() {
        const Token& start = peek();
        TermTarget term = parse_term();
        const Token& op = peek();

        if (op.kind == Token::Kind::symbol) {
            static const std::pair<std::string_view, CmpOp> kOps[] = {
                {"=", CmpOp::eq}, {"==", CmpOp::eq}, {"!=", CmpOp::ne}, {"<>", CmpOp::ne},
                {"<", CmpOp::lt}, {"<=", CmpOp::le}, {">", CmpOp::gt}, {">=", CmpOp::ge}};
            for (const auto& [sym, cmp] : kOps) {
                if (op.text == sym) {
                    next();
                    return make(term, cmp, {parse_literal()});
                }
            }
        } else if (op.kind == Token::Kind::word) {
            if (accept_word("is")) {
                CmpOp cmp = accept_word("not") ? CmpOp::ne : CmpOp::eq;
                return make(term, cmp, {parse_literal()});
            }
            if (accept_word("over")) return make(term, CmpOp::gt, {parse_number()});
            if (accept_word("under")) return make(term, CmpOp::lt, {parse_number()});
            if (accept_word("between")) {
                Literal lo = parse_literal();
                expect_word("and");
                Literal hi = parse_literal();
                return make(term, CmpOp::between, {std::move(lo), std::move(hi)});
            }
            if (accept_word("in")) {
                expect_symbol("(");
                std::vector<Literal> values{parse_literal()};
                while (at_symbol(",")) {
                    next();
                    values.push_back(parse_literal());
                }
                expect_symbol(")");
                return make(term, CmpOp::in, std::move(values));
            }
            if (accept_word("like")) return parse_like(term, start);
        }
        fail(op, "expected a comparison after term");
    }

    Predicate parse_like(const TermTarget& term, const Token& start) {
        if (term.kind != TermTarget::Kind::provider || term.name != "find_one_like_it") {
            fail(start, "\"like image\" requires an image-similarity term");
        }
        expect_word("image");
        const Token& ref = next();
        if (ref.kind == Token::Kind::end || ref.kind == Token::Kind::symbol) fail(ref, "expected an image id");
        expect_word("threshold");
        double threshold = parse_number();
        std::string view = "both";
        if (accept_word("in")) {
            const Token& v = next();
            if (v.kind == Token::Kind::word && (iequals(v.text, "MLO") || iequals(v.text, "CC"))) {
                view = iequals(v.text, "MLO") ? "MLO" : "CC";
            } else if (!(v.kind == Token::Kind::word && iequals(v.text, "both"))) {
                fail(v, "expected MLO, CC or both");
            }
        }
        json params{{"ref", ref.text}, {"view", view}};
        return derived(term.name, std::move(params), CmpOp::ge, {threshold});
    }
};

} // namespace

FormalQuery translate(std::string_view text, const TermDictionary& dict, const SiteId& origin_site) {
    Parser parser(text, dict);
    FormalQuery q = parser.parse_query();
    q.scope.origin_site = origin_site;
    validate(q);
    return q;
}

// ---------------------------------------------------------------------------
// Similar cases
// ---------------------------------------------------------------------------

Predicate children_band_predicate(int count) {
    if (count <= 0) return compare("patient.children_count", CmpOp::eq, {0.0});
    if (count <= 2) return compare("patient.children_count", CmpOp::between, {1.0, 2.0});
    if (count <= 4) return compare("patient.children_count", CmpOp::between, {3.0, 4.0});
    return compare("patient.children_count", CmpOp::ge, {5.0});
}

FormalQuery build_similarity_query(const PatientRecord& ref, const SimilarityCriteria& crit) {
    if (crit.age_band < 0) throw CriteriaError("age band must be non-negative");
    if (ref.patient_id.empty()) throw CriteriaError("reference patient has no id");

    std::vector<Predicate> terms;
    terms.push_back(compare("patient.age_years", CmpOp::between,
                            {static_cast<double>(ref.age_years - crit.age_band),
                             static_cast<double>(ref.age_years + crit.age_band)}));
    if (crit.match_children_band) {
        terms.push_back(children_band_predicate(ref.children_count));
    }
    if (crit.match_pregnancy_ages_band) {
        int band = *crit.match_pregnancy_ages_band;
        if (band < 0) throw CriteriaError("pregnancy age band must be non-negative");
        if (!ref.age_first_pregnancy || !ref.age_last_pregnancy) {
            throw CriteriaError("reference patient " + ref.patient_id + " lacks pregnancy ages");
        }
        auto band_of = [&](const char* path, int age) {
            return compare(path, CmpOp::between,
                           {static_cast<double>(age - band), static_cast<double>(age + band)});
        };
        terms.push_back(band_of("patient.age_first_pregnancy", *ref.age_first_pregnancy));
        terms.push_back(band_of("patient.age_last_pregnancy", *ref.age_last_pregnancy));
    }
    if (crit.image_match) {
        const auto& m = *crit.image_match;
        if (m.reference_image.empty()) throw CriteriaError("image match without a reference image");
        if (!(m.threshold >= 0 && m.threshold <= 1)) throw CriteriaError("similarity threshold outside [0,1]");
        bool mlo = std::find(m.views.begin(), m.views.end(), View::MLO) != m.views.end();
        bool cc = std::find(m.views.begin(), m.views.end(), View::CC) != m.views.end();
        if (!mlo && !cc) throw CriteriaError("image match needs at least one view");
        std::string view = mlo && cc ? "both" : (mlo ? "MLO" : "CC");
        terms.push_back(derived("find_one_like_it", json{{"ref", m.reference_image}, {"view", view}}, CmpOp::ge,
                                {m.threshold}));
    }
    terms.push_back(compare("patient.patient_id", CmpOp::ne, {ref.patient_id}));

    FormalQuery q;
    q.target = crit.target;
    q.predicate = all_of(std::move(terms));
    q.scope = QueryScope{ref.site_id, 1};
    validate(q);
    return q;
}

} // namespace mammofed
