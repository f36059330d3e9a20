#include "selfprobe/analyzer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "selfprobe/consensus.hpp"
#include "selfprobe/error.hpp"
#include "selfprobe/jsonl.hpp"
#include "selfprobe/parallel.hpp"

#ifndef SELFPROBE_DATA_DIR
#define SELFPROBE_DATA_DIR "data"
#endif

namespace selfprobe::analyzer {

namespace {

bool is_alnum(unsigned char c) { return std::isalnum(c) != 0; }

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::size_t worker_count(int requested) {
    if (requested > 0) return static_cast<std::size_t>(requested);
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

std::vector<std::string> tokenize_text(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (is_alnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

double distribution_entropy(const std::vector<double>& counts) {
    double total = 0.0;
    for (double c : counts) total += c > 0 ? c : 0.0;
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (double c : counts) {
        if (c <= 0) continue;
        const double p = c / total;
        h -= p * std::log2(p);
    }
    return h;
}

double lexical_entropy(std::string_view text) {
    const auto tokens = tokenize_text(text);
    if (tokens.empty()) throw Error(ErrorCode::EmptyText, "text has no tokens");
    std::map<std::string, double> freq;
    for (const auto& t : tokens) freq[t] += 1.0;
    std::vector<double> counts;
    counts.reserve(freq.size());
    for (const auto& [t, c] : freq) counts.push_back(c);
    return distribution_entropy(counts);
}

// ---------------------------------------------------------------------------
// Problem-level scores

void ComplexityWeights::validate() const {
    for (double w : {w_params, w_length, w_keywords, w_constraints}) {
        if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "complexity weights must be >= 0");
    }
    if (std::abs(w_params + w_length + w_keywords + w_constraints - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvalidArgument, "complexity weights must sum to 1");
    }
    for (double c : {cap_params, cap_length, cap_keywords, cap_constraints}) {
        if (!(c > 0.0)) throw Error(ErrorCode::InvalidArgument, "complexity caps must be > 0");
    }
}

int count_parameters(std::string_view sig) {
    const auto open = sig.find('(');
    if (open == std::string_view::npos) return 0;
    int depth = 0;
    std::vector<std::string> parts(1);
    for (std::size_t i = open + 1; i < sig.size(); ++i) {
        const char c = sig[i];
        if (c == '(' || c == '[' || c == '{') ++depth;
        if (c == ')' || c == ']' || c == '}') {
            if (depth == 0) break;
            --depth;
        }
        if (c == ',' && depth == 0) {
            parts.emplace_back();
        } else {
            parts.back().push_back(c);
        }
    }
    int count = 0;
    for (auto& part : parts) {
        const auto b = part.find_first_not_of(" \t\n");
        if (b == std::string::npos) continue;
        std::string name = part.substr(b);
        name = name.substr(0, name.find_first_of(":= \t"));
        if (name.empty() || name == "*" || name == "/" || name == "self" || name == "cls") continue;
        ++count;
    }
    return count;
}

ComplexityComponents complexity_components(const Problem& problem, const ComplexityWeights& weights) {
    ComplexityComponents c;
    c.params = count_parameters(problem.function_signature);
    const auto tokens = tokenize_text(problem.description);
    c.tokens = static_cast<int>(tokens.size());
    const std::set<std::string> present(tokens.begin(), tokens.end());
    std::set<std::string> hits;
    for (const auto& kw : weights.algorithmic_keywords) {
        if (present.count(lower(kw))) hits.insert(lower(kw));
    }
    c.keyword_hits = static_cast<int>(hits.size());
    const std::string text = lower(problem.description);
    for (const auto& phrase : weights.constraint_phrases) {
        const std::string needle = lower(phrase);
        if (needle.empty()) continue;
        for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) {
            ++c.constraint_hits;
        }
    }
    return c;
}

double complexity_score(const ComplexityComponents& c, const ComplexityWeights& w) {
    auto part = [](double value, double cap) { return std::clamp(value / cap, 0.0, 1.0); };
    const double s = w.w_params * part(c.params, w.cap_params) + w.w_length * part(c.tokens, w.cap_length) +
                     w.w_keywords * part(c.keyword_hits, w.cap_keywords) +
                     w.w_constraints * part(c.constraint_hits, w.cap_constraints);
    return std::clamp(10.0 * s, 0.0, 10.0);
}

double complexity_score(const Problem& problem, const ComplexityWeights& weights) {
    return complexity_score(complexity_components(problem, weights), weights);
}

void SemanticTaxonomy::validate() const {
    if (categories.size() != 7) throw Error(ErrorCode::InvalidArgument, "taxonomy must have exactly 7 categories");
    for (const auto& cat : categories) {
        if (cat.keywords.empty()) throw Error(ErrorCode::InvalidArgument, "category " + cat.name + " has no keywords");
        for (const auto& [kw, w] : cat.keywords) {
            if (kw.empty() || kw != lower(kw)) throw Error(ErrorCode::InvalidArgument, "keyword '" + kw + "' is not lowercase");
            if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "keyword '" + kw + "' has a negative weight");
        }
    }
}

std::size_t SemanticTaxonomy::term_count() const {
    std::size_t n = 0;
    for (const auto& c : categories) n += c.keywords.size();
    return n;
}

SemanticCoverage semantic_coverage(const Problem& problem, const SemanticTaxonomy& taxonomy) {
    const auto tokens = tokenize_text(problem.description);
    const std::set<std::string> present(tokens.begin(), tokens.end());
    SemanticCoverage out;
    double total = 0.0;
    for (const auto& cat : taxonomy.categories) {
        double score = 0.0;
        for (const auto& [kw, w] : cat.keywords) {
            if (present.count(kw)) score += w;
        }
        out.per_category[cat.name] = score;
        total += score;
    }
    out.score = std::clamp(total, 0.0, 10.0);
    return out;
}

// ---------------------------------------------------------------------------
// Syntax profiles

std::string_view to_string(Construct c) noexcept {
    switch (c) {
        case Construct::function_def: return "function_def";
        case Construct::conditional: return "conditional";
        case Construct::loop: return "loop";
        case Construct::call: return "call";
        case Construct::assignment: return "assignment";
        case Construct::return_stmt: return "return";
        case Construct::comparison: return "comparison";
        case Construct::boolean_op: return "boolean_op";
        case Construct::arithmetic_op: return "arithmetic_op";
        case Construct::literal: return "literal";
        case Construct::identifier: return "identifier";
        case Construct::exception_handler: return "exception_handler";
        case Construct::comprehension: return "comprehension";
        case Construct::import_stmt: return "import";
        case Construct::other: return "other";
    }
    return "other";
}

int SyntaxProfile::total_nodes() const {
    int n = 0;
    for (int c : node_histogram) n += c;
    return n;
}

namespace {

enum class TokKind { name, number, string, op, newline };

struct Tok {
    TokKind kind;
    std::string text;
};

[[noreturn]] void parse_fail(const std::string& why, int line) {
    throw Error(ErrorCode::ParseFailure, "line " + std::to_string(line) + ": " + why);
}

bool name_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool name_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

std::vector<Tok> lex_python(std::string_view src) {
    static const char* const kOps[] = {"**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**",
                                       "//",  "<<",  ">>",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", "@="};
    std::vector<Tok> toks;
    int depth = 0;
    int line = 1;
    std::size_t i = 0;
    auto newline = [&] {
        if (depth == 0 && !toks.empty() && toks.back().kind != TokKind::newline) toks.push_back({TokKind::newline, ""});
    };
    while (i < src.size()) {
        const auto c = static_cast<unsigned char>(src[i]);
        if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
            ++i;
        } else if (c == '\n') {
            newline();
            ++line;
            ++i;
        } else if (c == '#') {
            while (i < src.size() && src[i] != '\n') ++i;
        } else if (c == '\\') {
            std::size_t j = i + 1;
            while (j < src.size() && src[j] == '\r') ++j;
            if (j >= src.size() || src[j] != '\n') parse_fail("stray backslash", line);
            ++line;
            i = j + 1;
        } else if (name_start(c)) {
            std::size_t j = i;
            while (j < src.size() && name_char(static_cast<unsigned char>(src[j]))) ++j;
            const std::string word(src.substr(i, j - i));
            const std::string lw = lower(word);
            const bool prefix = lw.size() <= 2 && lw.find_first_not_of("rbuf") == std::string::npos;
            if (prefix && j < src.size() && (src[j] == '\'' || src[j] == '"')) {
                i = j;  // string prefix; the literal is lexed next
                continue;
            }
            toks.push_back({TokKind::name, word});
            i = j;
        } else if (std::isdigit(c) || (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            std::size_t j = i;
            while (j < src.size()) {
                const auto d = static_cast<unsigned char>(src[j]);
                if (std::isalnum(d) || d == '_' || d == '.') {
                    ++j;
                } else if ((d == '+' || d == '-') && (src[j - 1] == 'e' || src[j - 1] == 'E') &&
                           !(src[i] == '0' && j > i + 1 && (src[i + 1] == 'x' || src[i + 1] == 'X'))) {
                    ++j;
                } else {
                    break;
                }
            }
            toks.push_back({TokKind::number, std::string(src.substr(i, j - i))});
            i = j;
        } else if (c == '\'' || c == '"') {
            const bool triple = i + 2 < src.size() && src[i + 1] == src[i] && src[i + 2] == src[i];
            const char q = src[i];
            std::size_t j = i + (triple ? 3 : 1);
            bool closed = false;
            while (j < src.size()) {
                if (src[j] == '\\') {
                    if (j + 1 < src.size() && src[j + 1] == '\n') ++line;
                    j += 2;
                    continue;
                }
                if (src[j] == '\n') {
                    if (!triple) parse_fail("unterminated string", line);
                    ++line;
                }
                if (src[j] == q && (!triple || (j + 2 < src.size() && src[j + 1] == q && src[j + 2] == q))) {
                    j += triple ? 3 : 1;
                    closed = true;
                    break;
                }
                ++j;
            }
            if (!closed) parse_fail("unterminated string", line);
            toks.push_back({TokKind::string, ""});
            i = j;
        } else {
            std::string op;
            for (const char* candidate : kOps) {
                if (src.substr(i, std::char_traits<char>::length(candidate)) == candidate) {
                    op = candidate;
                    break;
                }
            }
            if (op.empty()) {
                if (std::string_view("+-*/%@&|^~<>()[]{},:.;=").find(static_cast<char>(c)) == std::string_view::npos) {
                    parse_fail(std::string("unexpected character '") + static_cast<char>(c) + "'", line);
                }
                op = std::string(1, static_cast<char>(c));
            }
            if (op == "(" || op == "[" || op == "{") ++depth;
            if (op == ")" || op == "]" || op == "}") {
                if (depth == 0) parse_fail("unbalanced '" + op + "'", line);
                --depth;
            }
            toks.push_back({TokKind::op, op});
            i += op.size();
        }
    }
    if (depth != 0) parse_fail("unclosed bracket", line);
    newline();
    return toks;
}

const std::set<std::string>& python_keywords() {
    static const std::set<std::string> kw = {"False", "None",   "True",     "and",   "as",     "assert", "async",
                                             "await", "break",  "class",    "continue", "def", "del",    "elif",
                                             "else",  "except", "finally",  "for",   "from",   "global", "if",
                                             "import", "in",    "is",       "lambda", "nonlocal", "not", "or",
                                             "pass",  "raise",  "return",   "try",   "while",  "with",   "yield"};
    return kw;
}

const std::set<std::string>& compound_headers() {
    static const std::set<std::string> h = {"if", "elif", "else", "for", "while", "def", "class", "try", "except",
                                            "finally", "with"};
    return h;
}

}  // namespace

SyntaxProfile syntax_profile(std::string_view source) {
    SyntaxProfile profile;
    {
        std::size_t start = 0;
        while (start <= source.size()) {
            auto end = source.find('\n', start);
            if (end == std::string_view::npos) end = source.size();
            if (source.substr(start, end - start).find_first_not_of(" \t\r\f") != std::string_view::npos) ++profile.lines;
            start = end + 1;
        }
    }
    const auto toks = lex_python(source);
    auto bump = [&](Construct c) { ++profile.node_histogram[static_cast<std::size_t>(c)]; };

    enum class Frame { call, subscript, display, group };
    struct Open {
        Frame kind;
        bool has_comp = false;
    };
    std::vector<Open> frames;
    std::vector<std::size_t> lambda_depths;
    std::vector<std::size_t> for_depths;
    bool stmt_start = true;
    bool header_pending = false;
    bool in_import = false;
    bool skip_name = false;  // the name after def/class belongs to the definition
    int branches = 0;
    int line = 1;
    const Tok* prev = nullptr;
    bool prev_is_def_name = false;

    auto value_like = [&](const Tok* t) {
        if (!t) return false;
        if (t->kind == TokKind::name) return !python_keywords().count(t->text) && !prev_is_def_name;
        if (t->kind == TokKind::string) return true;
        return t->kind == TokKind::op && (t->text == ")" || t->text == "]" || t->text == "}");
    };

    for (std::size_t i = 0; i < toks.size(); ++i) {
        const Tok& t = toks[i];
        const std::size_t depth = frames.size();
        const Tok* next = i + 1 < toks.size() ? &toks[i + 1] : nullptr;
        bool keep_stmt_start = false;
        bool this_is_def_name = false;

        switch (t.kind) {
            case TokKind::newline:
                if (header_pending) parse_fail("compound statement without ':'", line);
                ++line;
                stmt_start = true;
                in_import = false;
                lambda_depths.clear();
                for_depths.clear();
                prev = nullptr;
                prev_is_def_name = false;
                continue;
            case TokKind::number:
                bump(Construct::literal);
                break;
            case TokKind::string:
                if (!(prev && prev->kind == TokKind::string)) bump(Construct::literal);  // implicit concatenation
                break;
            case TokKind::name: {
                const std::string& w = t.text;
                if (!python_keywords().count(w)) {
                    if (skip_name) {
                        skip_name = false;
                        this_is_def_name = true;
                    } else if (!in_import) {
                        bump(Construct::identifier);
                    }
                    break;
                }
                if (stmt_start && compound_headers().count(w)) header_pending = true;
                if (w == "def") {
                    bump(Construct::function_def);
                    skip_name = true;
                } else if (w == "class") {
                    bump(Construct::other);
                    skip_name = true;
                } else if (w == "lambda") {
                    bump(Construct::function_def);
                    lambda_depths.push_back(depth);
                } else if (w == "if" || w == "elif") {
                    bump(Construct::conditional);
                    ++branches;
                } else if (w == "for") {
                    if (stmt_start) {
                        bump(Construct::loop);
                    } else {
                        bump(Construct::comprehension);
                        if (!frames.empty()) frames.back().has_comp = true;
                    }
                    for_depths.push_back(depth);
                    ++branches;
                } else if (w == "while") {
                    bump(Construct::loop);
                    ++branches;
                } else if (w == "in") {
                    if (!for_depths.empty() && for_depths.back() == depth) {
                        for_depths.pop_back();
                    } else {
                        bump(Construct::comparison);
                    }
                } else if (w == "is") {
                    bump(Construct::comparison);
                    if (next && next->kind == TokKind::name && next->text == "not") ++i;
                } else if (w == "not") {
                    if (next && next->kind == TokKind::name && next->text == "in") {
                        bump(Construct::comparison);
                        ++i;
                    } else {
                        bump(Construct::boolean_op);
                    }
                } else if (w == "and" || w == "or") {
                    bump(Construct::boolean_op);
                    ++branches;
                } else if (w == "return" || w == "yield") {
                    bump(Construct::return_stmt);
                } else if (w == "except") {
                    bump(Construct::exception_handler);
                    ++branches;
                } else if ((w == "import" || w == "from") && stmt_start) {
                    bump(Construct::import_stmt);
                    in_import = true;
                } else if (w == "True" || w == "False" || w == "None") {
                    bump(Construct::literal);
                } else if (w == "async") {
                    keep_stmt_start = stmt_start;
                } else if (w == "try" || w == "with" || w == "raise" || w == "assert" || w == "pass" || w == "break" ||
                           w == "continue" || w == "del" || w == "global" || w == "nonlocal" || w == "await") {
                    bump(Construct::other);
                }
                // else, finally, as, and import/from inside other statements add no node
                break;
            }
            case TokKind::op: {
                const std::string& o = t.text;
                if (o == "(" || o == "[" || o == "{") {
                    Frame kind = Frame::display;
                    if (o == "(") {
                        kind = value_like(prev) ? Frame::call : Frame::group;
                        if (kind == Frame::call) bump(Construct::call);
                    } else if (o == "[" && value_like(prev)) {
                        kind = Frame::subscript;
                        bump(Construct::other);
                    }
                    frames.push_back({kind});
                } else if (o == ")" || o == "]" || o == "}") {
                    const Open top = frames.back();
                    frames.pop_back();
                    if (top.kind == Frame::display && !top.has_comp) bump(Construct::comprehension);  // initializer
                    while (!for_depths.empty() && for_depths.back() > frames.size()) for_depths.pop_back();
                    while (!lambda_depths.empty() && lambda_depths.back() > frames.size()) lambda_depths.pop_back();
                } else if (o == "=") {
                    bump(depth == 0 ? Construct::assignment : Construct::other);  // nested: keyword argument or default
                } else if (o == ":=" || (o.size() >= 2 && o.back() == '=' && o != "==" && o != "!=" && o != "<=" &&
                                         o != ">=")) {
                    bump(Construct::assignment);
                } else if (o == "==" || o == "!=" || o == "<" || o == ">" || o == "<=" || o == ">=") {
                    bump(Construct::comparison);
                } else if (o == "@" && stmt_start) {
                    bump(Construct::other);  // decorator
                } else if (o == "+" || o == "-" || o == "*" || o == "/" || o == "//" || o == "%" || o == "**" ||
                           o == "@" || o == "&" || o == "|" || o == "^" || o == "~" || o == "<<" || o == ">>") {
                    bump(Construct::arithmetic_op);
                } else if (o == "...") {
                    bump(Construct::literal);
                } else if (o == ".") {
                    bump(Construct::other);  // attribute access
                } else if (o == ":") {
                    if (!lambda_depths.empty() && lambda_depths.back() == depth) {
                        lambda_depths.pop_back();
                    } else if (depth == 0 && header_pending) {
                        header_pending = false;
                        keep_stmt_start = true;  // a one-line body may follow
                    }
                } else if (o == ";" && depth == 0) {
                    if (header_pending) parse_fail("compound statement without ':'", line);
                    in_import = false;
                    keep_stmt_start = true;
                }
                break;
            }
        }
        stmt_start = keep_stmt_start;
        prev = &toks[i];
        prev_is_def_name = this_is_def_name;
    }
    profile.cyclomatic = 1 + branches;
    return profile;
}

// ---------------------------------------------------------------------------
// Statistics

double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw Error(ErrorCode::DegenerateInput, "pearson_r needs equal-length inputs");
    if (xs.size() < 2) throw Error(ErrorCode::DegenerateInput, "pearson_r needs at least two points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw Error(ErrorCode::DegenerateInput, "pearson_r needs non-zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Summary summarize(std::vector<double> values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / n);
    auto quantile = [&](double q) {
        const double pos = q * (n - 1.0);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
    };
    s.min = values.front();
    s.max = values.back();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    return s;
}

Histogram histogram(const std::vector<double>& values, const HistogramSpec& spec) {
    if (spec.bins < 1 || !(spec.max > spec.min)) throw Error(ErrorCode::InvalidArgument, "invalid histogram spec");
    Histogram h;
    h.spec = spec;
    h.counts.assign(static_cast<std::size_t>(spec.bins), 0);
    const double width = (spec.max - spec.min) / spec.bins;
    for (double v : values) {
        auto idx = static_cast<long long>(std::floor((v - spec.min) / width));
        idx = std::clamp<long long>(idx, 0, spec.bins - 1);
        ++h.counts[static_cast<std::size_t>(idx)];
    }
    std::size_t running = 0;
    for (auto c : h.counts) {
        running += c;
        h.cdf.push_back(values.empty() ? 0.0 : static_cast<double>(running) / static_cast<double>(values.size()));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Candidate-level analyses

StratificationReport stratify_by_perplexity(const std::vector<ScoredCandidate>& candidates, double threshold,
                                            double high_success_threshold) {
    StratificationReport r;
    r.threshold = threshold;
    r.high_success_threshold = high_success_threshold;
    std::vector<double> fs;
    for (const auto& c : candidates) {
        if (!c.f) continue;
        fs.push_back(*c.f);
        const bool low_f = *c.f <= threshold;
        const bool high = c.pass_fraction >= high_success_threshold;
        if (low_f && high) ++r.low_f_high_success;
        if (low_f && !high) ++r.low_f_low_success;
        if (!low_f && high) ++r.high_f_high_success;
        if (!low_f && !high) ++r.high_f_low_success;
    }
    if (fs.empty()) throw Error(ErrorCode::NoScoredCandidates, "no candidate carries a perplexity");
    r.perplexity = summarize(fs);
    const auto high_total = r.low_f_high_success + r.high_f_high_success;
    r.high_success_below_fraction =
        high_total == 0 ? 0.0 : static_cast<double>(r.low_f_high_success) / static_cast<double>(high_total);
    r.below_fraction =
        static_cast<double>(r.low_f_high_success + r.low_f_low_success) / static_cast<double>(fs.size());
    return r;
}

DatasetQuality dataset_quality(const std::vector<DatasetItem>& items) {
    DatasetQuality q;
    q.size = static_cast<long long>(items.size());
    if (items.empty()) return q;
    const double n = static_cast<double>(items.size());
    std::set<std::string> distinct;
    std::vector<double> nodes(kConstructCount, 0.0);
    std::map<std::string, double> semantic;
    double success = 0.0;
    double error_free = 0.0;
    for (const auto& it : items) {
        success += it.pass_fraction >= 1.0 ? 1.0 : 0.0;
        error_free += it.error_free ? 1.0 : 0.0;
        distinct.insert(it.source_code);
        if (it.profile) {
            for (std::size_t k = 0; k < kConstructCount; ++k) nodes[k] += it.profile->node_histogram[k];
        }
        for (const auto& [cat, v] : it.semantic) semantic[cat] += v;
    }
    q.success_rate = success / n;
    q.error_free_rate = error_free / n;
    q.uniqueness_ratio = static_cast<double>(distinct.size()) / n;
    q.structural_entropy = distribution_entropy(nodes);
    std::vector<double> sem;
    for (const auto& [cat, v] : semantic) sem.push_back(v);
    q.semantic_entropy = distribution_entropy(sem);
    return q;
}

ComparisonReport compare_filtered(const std::vector<DatasetItem>& full, const std::vector<DatasetItem>& filtered) {
    if (full.empty() || filtered.empty()) throw Error(ErrorCode::EmptyDataset, "compare_filtered needs two non-empty datasets");
    ComparisonReport r;
    r.full = dataset_quality(full);
    r.filtered = dataset_quality(filtered);
    r.delta.size = r.filtered.size - r.full.size;
    r.delta.success_rate = r.filtered.success_rate - r.full.success_rate;
    r.delta.error_free_rate = r.filtered.error_free_rate - r.full.error_free_rate;
    r.delta.uniqueness_ratio = r.filtered.uniqueness_ratio - r.full.uniqueness_ratio;
    r.delta.structural_entropy = r.filtered.structural_entropy - r.full.structural_entropy;
    r.delta.semantic_entropy = r.filtered.semantic_entropy - r.full.semantic_entropy;
    return r;
}

// ---------------------------------------------------------------------------
// Configuration

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("SELFPROBE_DATA_DIR"); env && *env) return env;
    return SELFPROBE_DATA_DIR;
}

namespace {

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::ParseError, path.string() + ": not valid JSON");
    return j;
}

HistogramSpec histogram_spec(const json& j, HistogramSpec fallback) {
    if (!j.is_object()) return fallback;
    return {j.value("min", fallback.min), j.value("max", fallback.max), j.value("bins", fallback.bins)};
}

json spec_json(const HistogramSpec& s) { return {{"min", s.min}, {"max", s.max}, {"bins", s.bins}}; }

}  // namespace

AnalyzerConfig AnalyzerConfig::load(const std::filesystem::path& data_dir) {
    AnalyzerConfig cfg;
    const json a = read_json_file(data_dir / "analyzer.json");
    const json t = read_json_file(data_dir / "taxonomy.json");
    try {
        const auto& cx = a.at("complexity");
        const auto& w = cx.at("weights");
        const auto& caps = cx.at("caps");
        cfg.weights.w_params = w.at("params").get<double>();
        cfg.weights.w_length = w.at("length").get<double>();
        cfg.weights.w_keywords = w.at("keywords").get<double>();
        cfg.weights.w_constraints = w.at("constraints").get<double>();
        cfg.weights.cap_params = caps.at("params").get<double>();
        cfg.weights.cap_length = caps.at("length").get<double>();
        cfg.weights.cap_keywords = caps.at("keywords").get<double>();
        cfg.weights.cap_constraints = caps.at("constraints").get<double>();
        cfg.weights.algorithmic_keywords = cx.at("algorithmic_keywords").get<std::vector<std::string>>();
        cfg.weights.constraint_phrases = cx.at("constraint_phrases").get<std::vector<std::string>>();
        cfg.perplexity_threshold = a.value("perplexity_threshold", cfg.perplexity_threshold);
        cfg.high_success_threshold = a.value("high_success_threshold", cfg.high_success_threshold);
        cfg.entropy_histogram = histogram_spec(a.value("entropy_histogram", json()), cfg.entropy_histogram);
        cfg.perplexity_histogram = histogram_spec(a.value("perplexity_histogram", json()), cfg.perplexity_histogram);
        for (const auto& c : t.at("categories")) {
            TaxonomyCategory cat;
            cat.name = c.at("name").get<std::string>();
            cat.keywords = c.at("keywords").get<std::map<std::string, double>>();
            cfg.taxonomy.categories.push_back(std::move(cat));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("analyzer config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void AnalyzerConfig::validate() const {
    weights.validate();
    taxonomy.validate();
    if (!(perplexity_threshold >= 1.0)) throw Error(ErrorCode::InvalidArgument, "perplexity_threshold must be >= 1");
    if (!(high_success_threshold >= 0.0 && high_success_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "high_success_threshold must lie in [0, 1]");
    }
}

std::uint64_t AnalyzerConfig::hash() const {
    json j;
    j["weights"] = {weights.w_params, weights.w_length, weights.w_keywords, weights.w_constraints};
    j["caps"] = {weights.cap_params, weights.cap_length, weights.cap_keywords, weights.cap_constraints};
    auto kws = weights.algorithmic_keywords;
    std::sort(kws.begin(), kws.end());
    j["algorithmic_keywords"] = kws;
    j["constraint_phrases"] = weights.constraint_phrases;
    json cats = json::array();
    for (const auto& c : taxonomy.categories) cats.push_back({{"name", c.name}, {"keywords", c.keywords}});
    j["taxonomy"] = cats;
    j["perplexity_threshold"] = perplexity_threshold;
    j["high_success_threshold"] = high_success_threshold;
    j["entropy_histogram"] = spec_json(entropy_histogram);
    j["perplexity_histogram"] = spec_json(perplexity_histogram);
    return content_hash(j.dump());
}

// ---------------------------------------------------------------------------
// Whole-corpus report

DiversityReport analyze(const CorpusInput& input, const AnalyzerConfig& config) {
    config.validate();
    DiversityReport report;
    report.config_hash = hex64(config.hash());
    const std::size_t workers = worker_count(config.workers);

    // Problems.
    struct ProblemResult {
        ProblemPoint point;
        SemanticCoverage coverage;
    };
    std::vector<ProblemResult> problems(input.problems.size());
    parallel_for(problems.size(), workers, [&](std::size_t i) {
        const auto& p = input.problems[i];
        auto& r = problems[i];
        r.point.problem_id = p.id;
        try {
            r.point.entropy = lexical_entropy(p.description);
        } catch (const Error&) {
        }
        r.point.complexity = complexity_score(p, config.weights);
        r.coverage = semantic_coverage(p, config.taxonomy);
        r.point.semantic = r.coverage.score;
    });
    std::vector<double> entropies;
    std::vector<double> complexity;
    std::vector<double> semantic;
    std::map<std::string, std::map<std::string, double>> semantic_by_problem;
    double semantic_total = 0.0;
    for (const auto& cat : config.taxonomy.categories) report.semantic_category_share[cat.name] = 0.0;
    for (auto& r : problems) {
        if (r.point.entropy) entropies.push_back(*r.point.entropy);
        complexity.push_back(r.point.complexity);
        semantic.push_back(r.point.semantic);
        for (const auto& [cat, v] : r.coverage.per_category) {
            report.semantic_category_share[cat] += v;
            semantic_total += v;
        }
        semantic_by_problem[r.point.problem_id] = r.coverage.per_category;
        report.problem_points.push_back(r.point);
    }
    for (auto& [cat, v] : report.semantic_category_share) v = semantic_total > 0 ? v / semantic_total : 0.0;
    report.entropy = summarize(entropies);
    report.entropy_histogram = histogram(entropies, config.entropy_histogram);
    report.complexity = summarize(complexity);
    report.semantic = summarize(semantic);
    try {
        report.correlation_r = pearson_r(complexity, semantic);
    } catch (const Error&) {
    }

    // Executions grouped per candidate.
    struct ExecStats {
        std::size_t total = 0;
        std::size_t passed = 0;
        std::size_t bottom = 0;
    };
    std::unordered_map<std::string, ExecStats> exec;
    for (const auto& o : input.executions) {
        auto& s = exec[o.candidate_id];
        ++s.total;
        if (o.status == ExecStatus::pass) ++s.passed;
        if (is_bottom(o.status)) ++s.bottom;
    }

    // Candidates.
    struct CandidateResult {
        CandidatePoint point;
        std::optional<SyntaxProfile> profile;
        bool error_free = true;
    };
    std::vector<CandidateResult> cands(input.candidates.size());
    parallel_for(cands.size(), workers, [&](std::size_t i) {
        const auto& c = input.candidates[i];
        auto& r = cands[i];
        r.point.candidate_id = c.id;
        try {
            r.profile = syntax_profile(c.source_code);
            r.point.cyclomatic = r.profile->cyclomatic;
            r.point.lines = r.profile->lines;
        } catch (const Error&) {
        }
        if (c.token_logprobs) {
            try {
                r.point.perplexity = consensus::perplexity(*c.token_logprobs);
            } catch (const Error&) {
            }
        }
        if (auto it = exec.find(c.id); it != exec.end() && it->second.total > 0) {
            r.point.pass_fraction = static_cast<double>(it->second.passed) / static_cast<double>(it->second.total);
            r.error_free = it->second.bottom == 0;
        }
    });

    std::vector<double> cyclo;
    std::vector<double> lines;
    std::vector<double> ppl;
    std::vector<ScoredCandidate> scored;
    std::vector<DatasetItem> full;
    std::map<std::string, DatasetItem> by_id;
    std::map<std::string, std::string> problem_of;
    for (const auto& c : input.candidates) problem_of[c.id] = c.problem_id;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const auto& r = cands[i];
        if (r.profile) {
            ++report.profiled;
            for (std::size_t k = 0; k < kConstructCount; ++k) report.ast_node_histogram[k] += r.profile->node_histogram[k];
            cyclo.push_back(r.profile->cyclomatic);
            lines.push_back(r.profile->lines);
        } else {
            ++report.unprofiled;
        }
        if (r.point.perplexity) ppl.push_back(*r.point.perplexity);
        if (r.point.pass_fraction) {
            scored.push_back({r.point.candidate_id, r.point.perplexity, *r.point.pass_fraction});
            DatasetItem item;
            item.candidate_id = r.point.candidate_id;
            item.source_code = input.candidates[i].source_code;
            item.pass_fraction = *r.point.pass_fraction;
            item.error_free = r.error_free;
            item.profile = r.profile;
            if (auto it = semantic_by_problem.find(input.candidates[i].problem_id); it != semantic_by_problem.end()) {
                item.semantic = it->second;
            }
            by_id[item.candidate_id] = item;
            full.push_back(std::move(item));
        }
        report.candidate_points.push_back(r.point);
    }
    report.cyclomatic = summarize(cyclo);
    report.length = summarize(lines);
    report.perplexity = summarize(ppl);
    report.perplexity_histogram = histogram(ppl, config.perplexity_histogram);
    try {
        report.stratification =
            stratify_by_perplexity(scored, config.perplexity_threshold, config.high_success_threshold);
    } catch (const Error&) {
    }

    std::vector<DatasetItem> filtered;
    for (const auto& s : input.selections) {
        if (!s.selected) continue;
        if (auto it = by_id.find(*s.selected); it != by_id.end()) filtered.push_back(it->second);
    }
    if (!full.empty() && !filtered.empty()) report.comparison = compare_filtered(full, filtered);
    return report;
}

CorpusInput load_corpus_dir(const std::filesystem::path& dir) {
    CorpusInput in;
    bool any = false;
    auto load = [&](const char* name, auto& target) {
        const auto path = dir / name;
        if (!std::filesystem::exists(path)) return;
        any = true;
        target = read_jsonl<typename std::decay_t<decltype(target)>::value_type>(path);
    };
    load("problems.jsonl", in.problems);
    load("candidates.jsonl", in.candidates);
    load("executions.jsonl", in.executions);
    load("selections.jsonl", in.selections);
    if (!any) throw Error(ErrorCode::FileUnreadable, dir.string() + ": no corpus files found");
    return in;
}

namespace {

json summary_json(const Summary& s) {
    return {{"count", s.count}, {"mean", s.mean},     {"std", s.std}, {"min", s.min},
            {"q1", s.q1},       {"median", s.median}, {"q3", s.q3},   {"max", s.max}};
}

json histogram_json(const Histogram& h) {
    return {{"min", h.spec.min}, {"max", h.spec.max}, {"bins", h.spec.bins}, {"counts", h.counts}, {"cdf", h.cdf}};
}

json quality_json(const DatasetQuality& q) {
    return {{"size", q.size},
            {"success_rate", q.success_rate},
            {"error_free_rate", q.error_free_rate},
            {"uniqueness_ratio", q.uniqueness_ratio},
            {"structural_entropy", q.structural_entropy},
            {"semantic_entropy", q.semantic_entropy}};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<std::filesystem::path> write_report(const DiversityReport& r, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;

    json j;
    j["config_hash"] = r.config_hash;
    j["problems"] = r.problem_points.size();
    j["candidates"] = r.candidate_points.size();
    j["entropy"] = summary_json(r.entropy);
    j["entropy"]["histogram"] = histogram_json(r.entropy_histogram);
    j["complexity"] = summary_json(r.complexity);
    j["semantic"] = summary_json(r.semantic);
    j["semantic"]["category_share"] = r.semantic_category_share;
    j["correlation_r"] = r.correlation_r ? json(*r.correlation_r) : json(nullptr);
    json ast;
    for (std::size_t k = 0; k < kConstructCount; ++k) ast[std::string(to_string(static_cast<Construct>(k)))] = r.ast_node_histogram[k];
    j["ast_node_histogram"] = ast;
    j["profiled"] = r.profiled;
    j["unprofiled"] = r.unprofiled;
    j["cyclomatic"] = summary_json(r.cyclomatic);
    j["length"] = summary_json(r.length);
    j["perplexity"] = summary_json(r.perplexity);
    j["perplexity"]["histogram"] = histogram_json(r.perplexity_histogram);
    if (r.stratification) {
        const auto& s = *r.stratification;
        j["stratification"] = {{"threshold", s.threshold},
                               {"high_success_threshold", s.high_success_threshold},
                               {"low_f_high_success", s.low_f_high_success},
                               {"low_f_low_success", s.low_f_low_success},
                               {"high_f_high_success", s.high_f_high_success},
                               {"high_f_low_success", s.high_f_low_success},
                               {"high_success_below_fraction", s.high_success_below_fraction},
                               {"below_fraction", s.below_fraction}};
    } else {
        j["stratification"] = nullptr;
    }
    if (r.comparison) {
        j["comparison"] = {{"full", quality_json(r.comparison->full)},
                           {"filtered", quality_json(r.comparison->filtered)},
                           {"delta", quality_json(r.comparison->delta)}};
    } else {
        j["comparison"] = nullptr;
    }
    written.push_back(out_dir / "report.json");
    write_text_atomic(written.back(), j.dump(2) + "\n");

    std::string csv = "bin_lo,bin_hi,count,cdf\n";
    const auto& eh = r.entropy_histogram;
    const double width = eh.counts.empty() ? 0.0 : (eh.spec.max - eh.spec.min) / static_cast<double>(eh.counts.size());
    for (std::size_t b = 0; b < eh.counts.size(); ++b) {
        csv += fmt(eh.spec.min + width * static_cast<double>(b)) + "," + fmt(eh.spec.min + width * static_cast<double>(b + 1)) +
               "," + std::to_string(eh.counts[b]) + "," + fmt(eh.cdf[b]) + "\n";
    }
    written.push_back(out_dir / "entropy_hist.csv");
    write_text_atomic(written.back(), csv);

    csv = "problem_id,entropy,complexity,semantic\n";
    for (const auto& p : r.problem_points) {
        csv += csv_field(p.problem_id) + "," + (p.entropy ? fmt(*p.entropy) : "") + "," + fmt(p.complexity) + "," +
               fmt(p.semantic) + "\n";
    }
    written.push_back(out_dir / "complexity_vs_semantic.csv");
    write_text_atomic(written.back(), csv);

    csv = "candidate_id,perplexity,pass_fraction\n";
    for (const auto& c : r.candidate_points) {
        if (!c.perplexity || !c.pass_fraction) continue;
        csv += csv_field(c.candidate_id) + "," + fmt(*c.perplexity) + "," + fmt(*c.pass_fraction) + "\n";
    }
    written.push_back(out_dir / "ppl_vs_success.csv");
    write_text_atomic(written.back(), csv);

    long long total = 0;
    for (auto v : r.ast_node_histogram) total += v;
    csv = "construct,count,share\n";
    for (std::size_t k = 0; k < kConstructCount; ++k) {
        const auto v = r.ast_node_histogram[k];
        csv += std::string(to_string(static_cast<Construct>(k))) + "," + std::to_string(v) + "," +
               fmt(total > 0 ? static_cast<double>(v) / static_cast<double>(total) : 0.0) + "\n";
    }
    written.push_back(out_dir / "ast_hist.csv");
    write_text_atomic(written.back(), csv);
    return written;
}

}  // namespace selfprobe::analyzer
