"""Token arithmetic for the 8 x 120-token exemplar prompt in a 1024 window.

Counts words the same way the heuristic counter does (ceil(words * 4 / 3))
but builds the prompt by hand rather than through the template engine.
"""
import math


def tokens(words):
    return math.ceil(words * 4 / 3)


SUMMARY_WORDS = 90  # 120 tokens
TARGET_WORDS = 96   # 128 tokens
LIMIT = 1024 - 16

assert tokens(SUMMARY_WORDS) == 120 and tokens(TARGET_WORDS) == 128

# "Text: <summary>\nLabel: YES\n"
per_exemplar = 1 + SUMMARY_WORDS + 2
# "Options: YES, NO\nText: <target>\nLabel:"
tail = 3 + 1 + TARGET_WORDS + 1

for used in range(8, -1, -1):
    total = tokens(used * per_exemplar + tail)
    print(f"{used} exemplars -> {total} tokens")
    if total <= LIMIT:
        print(f"dropped={8 - used} token_count={total}")
        break
