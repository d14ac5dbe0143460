"""Hand trace of iterative summarization with the first-sentence stub.

Document: 125 sentences of 30 words (3750 words, 5000 heuristic tokens).
Window 1024, prompt reserve 24, summary target 128. Independent of the C++
code: sentence boundaries are known by construction.
"""
import math


def tokens(words):
    return math.ceil(words * 4 / 3)


def sentence(i):
    return " ".join([f"Paragraph", str(i)] + ["filler"] * 27 + ["end."])


def trace():
    sentences = [sentence(i) for i in range(125)]
    capacity = 1024 - 24
    rounds = 0
    while True:
        rounds += 1
        chunks, cur = [], []
        for s in sentences:
            words = sum(len(x.split()) for x in cur + [s])
            if cur and tokens(words) > capacity:
                chunks.append(cur)
                cur = []
            cur.append(s)
        chunks.append(cur)
        sentences = [c[0] for c in chunks]
        total = tokens(sum(len(s.split()) for s in sentences))
        print(f"round {rounds}: {len(chunks)} chunks, next text {total} tokens")
        if total <= 128:
            return rounds, total, sentences


if __name__ == "__main__":
    print("document tokens:", tokens(125 * 30))
    rounds, total, text = trace()
    print("rounds:", rounds, "final tokens:", total, "text starts:", text[0][:20])
