import random

from docql.tokens import ApproxTokenizer, count_tokens


def test_empty_string_is_zero():
    assert count_tokens("") == 0


def test_400_ascii_chars_is_100():
    assert count_tokens("a" * 400) == 100


def test_rounds_up():
    assert count_tokens("abc") == 1
    assert count_tokens("abcde") == 2


def test_utf8_counts_bytes():
    # 3-byte chars: 2 of them = 6 bytes -> 2 tokens
    assert count_tokens("€€") == 2


def test_concatenation_subadditive():
    rng = random.Random(7)
    for _ in range(200):
        a = "x" * rng.randrange(0, 50)
        b = "y" * rng.randrange(0, 50)
        joint = count_tokens(a + b)
        assert joint <= count_tokens(a) + count_tokens(b) + 1
        assert joint >= max(count_tokens(a), count_tokens(b))


def test_deterministic():
    t = ApproxTokenizer()
    assert t.count("hello world") == t.count("hello world")
