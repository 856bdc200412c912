"""Rebuild the bundled fixture corpus and embeddings (deterministic)."""

from pathlib import Path

from satrank import synthetic

HERE = Path(__file__).parent

if __name__ == "__main__":
    synthetic.write_corpus(HERE / "corpus.jsonl", synthetic.make_corpus(120, seed=7, min_len=15, max_len=40, days=14))
    synthetic.write_embeddings(HERE / "embeddings.txt", synthetic.make_embeddings(dim=8, seed=7))
