#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "selfprobe/error.hpp"
#include "selfprobe/genclient.hpp"
#include "selfprobe/jsonl.hpp"

namespace selfprobe::genclient {

namespace {

struct BankTest {
    const char* call;
    const char* expected;
};

struct BankProblem {
    const char* title;
    const char* description;
    const char* signature;
    const char* category;
    Difficulty difficulty;
    double rating;
    std::vector<BankTest> tests;
    std::vector<const char*> correct;
    std::vector<const char*> buggy;
};

// clang-format off
const std::vector<BankProblem>& bank() {
    static const std::vector<BankProblem> problems = {
        {"Running maximum",
         "Given a list of integers, return a list of the same length whose i-th element is the largest value among the first i+1 inputs. An empty list yields an empty list.",
         "def running_max(nums: list[int]) -> list[int]", "algorithms", Difficulty::easy, 2.0,
         {{"running_max([1, 3, 2, 5, 4])", "[1, 3, 3, 5, 5]"}, {"running_max([])", "[]"},
          {"running_max([-3, -1, -2])", "[-3, -1, -1]"}, {"running_max([7])", "[7]"},
          {"running_max([5, 4, 3])", "[5, 5, 5]"}, {"running_max([0, 0, 1])", "[0, 0, 1]"}},
         {R"PY(def running_max(nums: list[int]) -> list[int]:
    out = []
    best = None
    for x in nums:
        best = x if best is None or x > best else best
        out.append(best)
    return out)PY",
          R"PY(import itertools

def running_max(nums: list[int]) -> list[int]:
    return list(itertools.accumulate(nums, max)))PY"},
         {R"PY(def running_max(nums: list[int]) -> list[int]:
    out, best = [], 0
    for x in nums:
        best = max(best, x)
        out.append(best)
    return out)PY",
          R"PY(def running_max(nums: list[int]) -> list[int]:
    best = nums[0]
    out = []
    for x in nums:
        best = max(best, x)
        out.append(best)
    return out)PY"}},

        {"Reverse words",
         "Return the words of s in reverse order, joined by single spaces. Words are maximal runs of non-whitespace characters; leading, trailing and repeated whitespace is discarded.",
         "def reverse_words(s: str) -> str", "string processing", Difficulty::easy, 1.5,
         {{"reverse_words('hello world')", "'world hello'"}, {"reverse_words('  a  b ')", "'b a'"},
          {"reverse_words('')", "''"}, {"reverse_words('one')", "'one'"},
          {"reverse_words('a b c')", "'c b a'"}, {"reverse_words('x\\ty')", "'y x'"}},
         {R"PY(def reverse_words(s: str) -> str:
    return " ".join(reversed(s.split())))PY",
          R"PY(def reverse_words(s: str) -> str:
    words = s.split()
    words.reverse()
    return " ".join(words))PY"},
         {R"PY(def reverse_words(s: str) -> str:
    return " ".join(s.split(" ")[::-1]))PY",
          R"PY(def reverse_words(s: str) -> str:
    return s[::-1])PY"}},

        {"Alphanumeric palindrome",
         "Decide whether s reads the same forwards and backwards after removing every non-alphanumeric character and ignoring letter case. The empty string is a palindrome.",
         "def is_palindrome(s: str) -> bool", "string processing", Difficulty::easy, 2.5,
         {{"is_palindrome('A man, a plan, a canal: Panama')", "True"}, {"is_palindrome('race a car')", "False"},
          {"is_palindrome('')", "True"}, {"is_palindrome('ab')", "False"},
          {"is_palindrome(\"No 'x' in Nixon\")", "True"}, {"is_palindrome('Aa')", "True"}},
         {R"PY(def is_palindrome(s: str) -> bool:
    t = [c.lower() for c in s if c.isalnum()]
    return t == t[::-1])PY",
          R"PY(def is_palindrome(s: str) -> bool:
    i, j = 0, len(s) - 1
    while i < j:
        if not s[i].isalnum():
            i += 1
        elif not s[j].isalnum():
            j -= 1
        elif s[i].lower() != s[j].lower():
            return False
        else:
            i += 1
            j -= 1
    return True)PY"},
         {R"PY(def is_palindrome(s: str) -> bool:
    return s == s[::-1])PY",
          R"PY(def is_palindrome(s: str) -> bool:
    t = s.lower().replace(" ", "")
    return t == t[::-1])PY"}},

        {"Fibonacci number",
         "Return the n-th Fibonacci number, where fib(0) = 0 and fib(1) = 1, for 0 <= n <= 90.",
         "def fib(n: int) -> int", "math", Difficulty::easy, 2.0,
         {{"fib(0)", "0"}, {"fib(1)", "1"}, {"fib(2)", "1"}, {"fib(10)", "55"}, {"fib(20)", "6765"},
          {"fib(50)", "12586269025"}},
         {R"PY(def fib(n: int) -> int:
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a)PY",
          R"PY(def fib(n: int) -> int:
    if n < 2:
        return n
    prev, cur = 0, 1
    i = 1
    while i < n:
        prev, cur = cur, prev + cur
        i += 1
    return cur)PY"},
         {R"PY(def fib(n: int) -> int:
    a, b = 1, 1
    for _ in range(n):
        a, b = b, a + b
    return a)PY",
          R"PY(def fib(n: int) -> int:
    seq = [0, 1]
    for i in range(2, n):
        seq.append(seq[-1] + seq[-2])
    return seq[n])PY"}},

        {"Count vowels",
         "Count the vowels a, e, i, o and u in s, ignoring case. The letter y is not a vowel.",
         "def count_vowels(s: str) -> int", "string processing", Difficulty::easy, 1.0,
         {{"count_vowels('hello')", "2"}, {"count_vowels('')", "0"}, {"count_vowels('AEIOU')", "5"},
          {"count_vowels('rhythm')", "0"}, {"count_vowels('Python')", "1"}, {"count_vowels('queue')", "4"}},
         {R"PY(def count_vowels(s: str) -> int:
    return sum(1 for c in s.lower() if c in "aeiou"))PY",
          R"PY(def count_vowels(s: str) -> int:
    total = 0
    for c in s:
        if c in "aeiouAEIOU":
            total += 1
    return total)PY"},
         {R"PY(def count_vowels(s: str) -> int:
    return sum(1 for c in s if c in "aeiou"))PY",
          R"PY(def count_vowels(s: str) -> int:
    return sum(1 for c in s.lower() if c in "aeiouy"))PY"}},

        {"Second largest distinct value",
         "Return the second largest distinct value in nums, or None when nums holds fewer than two distinct values.",
         "def second_largest(nums: list[int]) -> int | None", "data structures", Difficulty::medium, 3.5,
         {{"second_largest([1, 2, 3])", "2"}, {"second_largest([5, 5, 4])", "4"}, {"second_largest([7])", "None"},
          {"second_largest([])", "None"}, {"second_largest([3, 3])", "None"},
          {"second_largest([-1, -5, -3])", "-3"}},
         {R"PY(def second_largest(nums: list[int]) -> int | None:
    vals = sorted(set(nums))
    return vals[-2] if len(vals) >= 2 else None)PY",
          R"PY(def second_largest(nums: list[int]) -> int | None:
    first = second = None
    for x in nums:
        if first is None or x > first:
            first, second = x, first
        elif x != first and (second is None or x > second):
            second = x
    return second)PY"},
         {R"PY(def second_largest(nums: list[int]) -> int | None:
    s = sorted(nums)
    return s[-2] if len(s) >= 2 else None)PY",
          R"PY(def second_largest(nums: list[int]) -> int | None:
    return sorted(set(nums))[-2])PY"}},

        {"Balanced brackets",
         "Decide whether the brackets (), [] and {} in s are balanced and properly nested. Other characters are ignored.",
         "def balanced(s: str) -> bool", "parsing", Difficulty::medium, 4.0,
         {{"balanced('()[]{}')", "True"}, {"balanced('([)]')", "False"}, {"balanced('')", "True"},
          {"balanced('((')", "False"}, {"balanced(')(')", "False"}, {"balanced('a(b[c]d)e')", "True"}},
         {R"PY(def balanced(s: str) -> bool:
    pairs = {")": "(", "]": "[", "}": "{"}
    stack = []
    for c in s:
        if c in "([{":
            stack.append(c)
        elif c in pairs:
            if not stack or stack.pop() != pairs[c]:
                return False
    return not stack)PY",
          R"PY(def balanced(s: str) -> bool:
    t = "".join(c for c in s if c in "()[]{}")
    while True:
        shorter = t.replace("()", "").replace("[]", "").replace("{}", "")
        if shorter == t:
            return t == ""
        t = shorter)PY"},
         {R"PY(def balanced(s: str) -> bool:
    return s.count("(") == s.count(")") and s.count("[") == s.count("]") and s.count("{") == s.count("}"))PY",
          R"PY(def balanced(s: str) -> bool:
    pairs = {")": "(", "]": "[", "}": "{"}
    stack = []
    for c in s:
        if c in "([{":
            stack.append(c)
        elif c in pairs and stack.pop() != pairs[c]:
            return False
    return not stack)PY"}},

        {"Run-length encoding",
         "Encode s by replacing each maximal run of a repeated character with the character followed by the run length, e.g. 'aaab' becomes 'a3b1'.",
         "def rle(s: str) -> str", "string processing", Difficulty::medium, 3.0,
         {{"rle('aaab')", "'a3b1'"}, {"rle('')", "''"}, {"rle('abc')", "'a1b1c1'"}, {"rle('zzzz')", "'z4'"},
          {"rle('aabbaa')", "'a2b2a2'"}, {"rle('x')", "'x1'"}},
         {R"PY(import itertools

def rle(s: str) -> str:
    return "".join(f"{ch}{len(list(group))}" for ch, group in itertools.groupby(s)))PY",
          R"PY(def rle(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        out.append(s[i] + str(j - i))
        i = j
    return "".join(out))PY"},
         {R"PY(import itertools

def rle(s: str) -> str:
    out = []
    for ch, group in itertools.groupby(s):
        n = len(list(group))
        out.append(ch if n == 1 else f"{ch}{n}")
    return "".join(out))PY",
          R"PY(def rle(s: str) -> str:
    out = []
    prev, count = s[0], 0
    for c in s:
        if c == prev:
            count += 1
        else:
            out.append(f"{prev}{count}")
            prev, count = c, 1
    return "".join(out))PY"}},

        {"Greatest common divisor of a list",
         "Return the non-negative greatest common divisor of a non-empty list of integers. The gcd of zeros is 0.",
         "def gcd_list(nums: list[int]) -> int", "math", Difficulty::medium, 3.0,
         {{"gcd_list([12, 18])", "6"}, {"gcd_list([7])", "7"}, {"gcd_list([0, 5])", "5"}, {"gcd_list([-4, 6])", "2"},
          {"gcd_list([0, 0])", "0"}, {"gcd_list([17, 34, 51])", "17"}, {"gcd_list([-9])", "9"}},
         {R"PY(import functools
import math

def gcd_list(nums: list[int]) -> int:
    return functools.reduce(math.gcd, nums, 0))PY",
          R"PY(def gcd_list(nums: list[int]) -> int:
    g = 0
    for x in nums:
        a, b = abs(g), abs(x)
        while b:
            a, b = b, a % b
        g = a
    return g)PY"},
         {R"PY(def gcd_list(nums: list[int]) -> int:
    return min(nums))PY",
          R"PY(def gcd_list(nums: list[int]) -> int:
    g = nums[0]
    for x in nums[1:]:
        while x:
            g, x = x, g % x
    return g)PY"}},

        {"Longest increasing subsequence",
         "Return the length of the longest strictly increasing subsequence of nums. An empty list has length 0.",
         "def lis_length(nums: list[int]) -> int", "dynamic programming", Difficulty::hard, 6.5,
         {{"lis_length([10, 9, 2, 5, 3, 7, 101, 18])", "4"}, {"lis_length([])", "0"}, {"lis_length([2, 2, 2])", "1"},
          {"lis_length([1, 2, 3])", "3"}, {"lis_length([3, 1, 2])", "2"},
          {"lis_length([0, 8, 4, 12, 2, 10, 6, 14, 1, 9])", "4"}},
         {R"PY(def lis_length(nums: list[int]) -> int:
    dp = [1] * len(nums)
    for i in range(len(nums)):
        for j in range(i):
            if nums[j] < nums[i]:
                dp[i] = max(dp[i], dp[j] + 1)
    return max(dp, default=0))PY",
          R"PY(import bisect

def lis_length(nums: list[int]) -> int:
    tails = []
    for x in nums:
        k = bisect.bisect_left(tails, x)
        if k == len(tails):
            tails.append(x)
        else:
            tails[k] = x
    return len(tails))PY"},
         {R"PY(import bisect

def lis_length(nums: list[int]) -> int:
    tails = []
    for x in nums:
        k = bisect.bisect_right(tails, x)
        if k == len(tails):
            tails.append(x)
        else:
            tails[k] = x
    return len(tails))PY",
          R"PY(def lis_length(nums: list[int]) -> int:
    best = run = 1 if nums else 0
    for i in range(1, len(nums)):
        run = run + 1 if nums[i] > nums[i - 1] else 1
        best = max(best, run)
    return best)PY",
          R"PY(def lis_length(nums: list[int]) -> int:
    dp = [1] * len(nums)
    for i in range(len(nums)):
        for j in range(i):
            if nums[j] < nums[i]:
                dp[i] = max(dp[i], dp[j] + 1)
    return max(dp))PY"}},
    };
    return problems;
}

const std::vector<BankProblem>& held_out_bank() {
    static const std::vector<BankProblem> problems = {
        {"Digit sum",
         "Return the sum of the decimal digits of a non-negative integer n.",
         "def digit_sum(n: int) -> int", "math", Difficulty::easy, 1.0,
         {{"digit_sum(0)", "0"}, {"digit_sum(9)", "9"}, {"digit_sum(123)", "6"}, {"digit_sum(1000)", "1"},
          {"digit_sum(99999)", "45"}, {"digit_sum(505)", "10"}},
         {R"PY(def digit_sum(n: int) -> int:
    return sum(int(c) for c in str(n)))PY",
          R"PY(def digit_sum(n: int) -> int:
    total = 0
    while n:
        total += n % 10
        n //= 10
    return total)PY"},
         {R"PY(def digit_sum(n: int) -> int:
    return sum(int(c) for c in str(n)[1:]))PY",
          R"PY(def digit_sum(n: int) -> int:
    return n % 9)PY"}},

        {"Merge sorted lists",
         "Merge two ascending lists of integers into one ascending list that keeps every element, duplicates included.",
         "def merge_sorted(a: list[int], b: list[int]) -> list[int]", "algorithms", Difficulty::easy, 2.5,
         {{"merge_sorted([1, 3], [2, 4])", "[1, 2, 3, 4]"}, {"merge_sorted([], [])", "[]"},
          {"merge_sorted([1], [])", "[1]"}, {"merge_sorted([], [0, 5])", "[0, 5]"},
          {"merge_sorted([1, 1], [1])", "[1, 1, 1]"}, {"merge_sorted([5, 6], [1, 2])", "[1, 2, 5, 6]"}},
         {R"PY(def merge_sorted(a: list[int], b: list[int]) -> list[int]:
    return sorted(a + b))PY",
          R"PY(def merge_sorted(a: list[int], b: list[int]) -> list[int]:
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        if a[i] <= b[j]:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    return out + a[i:] + b[j:])PY"},
         {R"PY(def merge_sorted(a: list[int], b: list[int]) -> list[int]:
    return a + b)PY",
          R"PY(def merge_sorted(a: list[int], b: list[int]) -> list[int]:
    return sorted(set(a + b)))PY"}},
    };
    return problems;
}
// clang-format on

std::string harness(const BankTest& t) {
    std::string h = "import sys\ntry:\n    _result = ";
    h += t.call;
    h += "\nexcept Exception:\n    sys.exit(" + std::to_string(kHarnessErrorExitCode) + ")\nassert _result == ";
    h += t.expected;
    h += ", _result";
    return h;
}

std::string skeleton_for(const BankProblem& p) {
    return std::string(p.signature) + ":\n    # Handle the empty and single-element cases.\n"
                                      "    # Walk the input once, maintaining the partial answer.\n"
                                      "    # Return the accumulated result.\n    raise NotImplementedError";
}

/// Uniform [0, 1) from a derived stream; independent of the standard library's distributions.
double unit_draw(std::uint64_t seed, std::string_view key) {
    std::mt19937_64 rng(derive_seed(seed, content_hash(key)));
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

const BankProblem* find_problem(const std::optional<Problem>& problem) {
    if (!problem) return nullptr;
    for (const auto* set : {&bank(), &held_out_bank()}) {
        for (const auto& p : *set) {
            if (problem->function_signature == p.signature) return &p;
        }
    }
    return nullptr;
}

std::vector<double> fake_logprobs(std::uint64_t seed, const std::string& key, std::size_t code_size, bool correct) {
    std::mt19937_64 rng(derive_seed(seed, content_hash(key)));
    const std::size_t tokens = std::max<std::size_t>(8, code_size / 4);
    const double lo = correct ? 0.0 : 0.02;
    const double hi = correct ? 0.04 : 0.15;
    std::vector<double> out(tokens);
    for (auto& v : out) v = -(lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53));
    return out;
}

std::string fenced(std::string_view language, std::string_view body) {
    std::string out = "```";
    out += language;
    out += '\n';
    out += body;
    out += "\n```\n";
    return out;
}

}  // namespace

StubBackend::StubBackend(StubOptions options) : options_(options) {
    if (!(options_.base_correct_rate >= 0 && options_.base_correct_rate <= 1) ||
        !(options_.max_correct_rate >= 0 && options_.max_correct_rate <= 1) ||
        !(options_.malformed_rate >= 0 && options_.malformed_rate <= 1)) {
        throw Error(ErrorCode::InvalidArgument, "stub rates must lie in [0, 1]");
    }
}

double StubBackend::correct_rate(int iteration) const {
    return std::min(options_.max_correct_rate,
                    options_.base_correct_rate + options_.correct_rate_step * std::max(0, iteration));
}

std::size_t StubBackend::bank_size() const { return bank().size(); }

Corpus StubBackend::held_out_corpus() const {
    Corpus corpus;
    std::size_t counter = 0;
    for (const auto& bp : held_out_bank()) {
        Problem p;
        p.title = bp.title;
        p.description = bp.description;
        p.function_signature = bp.signature;
        p.difficulty = bp.difficulty;
        p.difficulty_rating = bp.rating;
        p.skeleton = skeleton_for(bp);
        p.category = bp.category;
        p.id = make_id("heldout", counter++, p.title + "\n" + p.description + "\n" + p.function_signature);
        int ordinal = 0;
        for (const auto& t : bp.tests) {
            const std::string h = harness(t);
            corpus.tests.push_back(
                TestCase{make_id("test", static_cast<std::size_t>(ordinal), p.id + "\n" + h), p.id, h, ordinal});
            ++ordinal;
        }
        corpus.problems.push_back(std::move(p));
    }
    return corpus;
}

ChatResponse StubBackend::complete(const ChatRequest& request) {
    const auto& ctx = request.context;
    const std::string key_base =
        std::string(to_string(request.stage)) + "|" + std::to_string(ctx.iteration) + "|" + std::to_string(ctx.index);
    ChatResponse out;

    switch (request.stage) {
        case Stage::problem_gen: {
            if (unit_draw(options_.seed, "malformed|" + key_base) < options_.malformed_rate) {
                out.content = "I would rather not invent a problem today.";
                return out;
            }
            const auto& bp = bank()[static_cast<std::size_t>(ctx.index + 3 * std::max(0, ctx.iteration)) % bank().size()];
            json obj{{"title", bp.title},
                     {"description", bp.description},
                     {"function_signature", bp.signature},
                     {"category", bp.category}};
            out.content = fenced("json", obj.dump(2));
            return out;
        }
        case Stage::difficulty_rating: {
            const auto* bp = find_problem(ctx.problem);
            json obj{{"difficulty", std::string(to_string(bp ? bp->difficulty : Difficulty::medium))},
                     {"rating", bp ? bp->rating : 5.0}};
            out.content = fenced("json", obj.dump());
            return out;
        }
        case Stage::skeleton_gen: {
            const auto* bp = find_problem(ctx.problem);
            if (!bp) throw Error(ErrorCode::RequestRejected, "stub has no skeleton for this problem");
            out.content = fenced("python", skeleton_for(*bp));
            return out;
        }
        case Stage::test_gen: {
            const auto* bp = find_problem(ctx.problem);
            if (!bp) {
                out.content = "No tests available.";
                return out;
            }
            int count = static_cast<int>(bp->tests.size());
            for (const auto& m : request.messages) {
                // The rendered prompt starts with "Write <count> distinct test cases".
                const auto pos = m.content.find("Write ");
                if (pos != std::string::npos) {
                    try {
                        count = std::min(count, std::stoi(m.content.substr(pos + 6)));
                    } catch (const std::exception&) {
                    }
                }
            }
            for (int i = 0; i < count; ++i) out.content += fenced("python", harness(bp->tests[static_cast<std::size_t>(i)]));
            return out;
        }
        case Stage::solution_sampling: {
            const auto* bp = find_problem(ctx.problem);
            const std::string pid = ctx.problem ? ctx.problem->id : std::string();
            std::string code;
            bool correct = false;
            if (!bp) {
                const std::string sig = ctx.problem ? ctx.problem->function_signature : "def solve()";
                code = sig + ":\n    raise NotImplementedError";
            } else if (request.temperature == 0.0) {
                correct = unit_draw(options_.seed, "greedy|" + std::to_string(ctx.iteration) + "|" + bp->signature) <
                          correct_rate(ctx.iteration);
                code = correct ? bp->correct.front() : bp->buggy.front();
            } else {
                const std::string key = key_base + "|" + pid;
                correct = unit_draw(options_.seed, "correct|" + key) < correct_rate(ctx.iteration);
                const auto& variants = correct ? bp->correct : bp->buggy;
                const auto pick = static_cast<std::size_t>(unit_draw(options_.seed, "variant|" + key) *
                                                           static_cast<double>(variants.size()));
                code = variants[std::min(pick, variants.size() - 1)];
            }
            out.content = "Here is an implementation.\n\n" + fenced("python", code);
            if (request.logprobs) {
                out.token_logprobs = fake_logprobs(options_.seed, "logprobs|" + key_base + "|" + pid, code.size(), correct);
            }
            return out;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown stage");
}

}  // namespace selfprobe::genclient
