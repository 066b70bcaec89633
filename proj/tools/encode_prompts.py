#!/usr/bin/env python3
"""Write an embedding cache for the precomputed text encoder.

Output is line-delimited JSON: a {"model": name} header, then one
{"text": ..., "embedding": [...]} object per distinct prompt.
"""

import argparse
import json
import sys


def read_texts(banks, extra):
    texts = []
    for path in banks:
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    texts.append(json.loads(line)["text"])
    texts.extend(extra)
    seen = set()
    unique = []
    for t in texts:
        key = " ".join(t.split())
        if key and key not in seen:
            seen.add(key)
            unique.append(t)
    return unique


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bank", action="append", default=[], help="prompt bank (JSON lines); repeatable")
    parser.add_argument("--prompt", action="append", default=[], help="extra instruction; repeatable")
    parser.add_argument("--model", default="TaylorAI/bge-micro-v2", help="sentence-transformers model")
    parser.add_argument("--batch-size", type=int, default=256)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    texts = read_texts(args.bank, args.prompt)
    if not texts:
        sys.exit("error: config: no prompts given")

    from sentence_transformers import SentenceTransformer

    model = SentenceTransformer(args.model, device="cpu")
    vectors = model.encode(texts, batch_size=args.batch_size, convert_to_numpy=True, show_progress_bar=False)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(json.dumps({"model": args.model}) + "\n")
        for text, v in zip(texts, vectors):
            f.write(json.dumps({"text": text, "embedding": [float(x) for x in v]}) + "\n")
    print(json.dumps({"out": args.out, "prompts": len(texts), "dim": int(vectors.shape[1])}))


if __name__ == "__main__":
    main()
