"""Write the 25-transcript render corpus and its golden digest manifest into tests/fixtures.

The corpus text is seeded and committed; rerun only to deliberately refreeze the goldens.
"""
import json
import random
from pathlib import Path

from mad_compress.engine import read_transcript
from mad_compress.render import digest_manifest, page_filename, render_history

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
WORDS = ("the", "total", "is", "so", "we", "add", "apples", "each", "box", "holds", "then", "half",
         "of", "remaining", "multiply", "by", "step", "check", "answer", "price", "per", "hour")
EXTRA = ("π ≈ 3.14", "naïve", "x² + 1", "café")


def response(rng: random.Random) -> str:
    parts = []
    for _ in range(rng.randint(5, 120)):
        r = rng.random()
        if r < 0.2:
            a, b = rng.randint(1, 999), rng.randint(1, 99)
            parts.append(f"{a}*{b}={a * b}")
        elif r < 0.23:
            parts.append(rng.choice(EXTRA))
        elif r < 0.25:
            parts.append("\n")
        else:
            parts.append(rng.choice(WORDS))
    parts.append(f"\\boxed{{{rng.randint(0, 500)}}}")
    return " ".join(parts)


def main() -> None:
    rng = random.Random(20240501)
    lines = []
    for t in range(25):
        qid = f"corpus-{t:02d}"
        K, R = rng.randint(2, 5), rng.randint(1, 4)
        for r in range(1, R + 1):
            for i in range(1, K + 1):
                text = response(rng)
                lines.append(json.dumps({"query_id": qid, "round": r, "agent": i, "text": text,
                                         "token_count": len(text.split()), "strategy": "visual",
                                         "elapsed_ms": 0.0}, sort_keys=True))
    (FIXTURES / "render_corpus.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    states, _ = read_transcript(lines)
    named = [(page_filename(q, s.current_round, img.page_index), img)
             for q, s in sorted(states.items()) for img in render_history(s)]
    (FIXTURES / "render_manifest.tsv").write_text(digest_manifest(named))


if __name__ == "__main__":
    main()
