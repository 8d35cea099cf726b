"""Smoke test for the exrw extension module.

Run after building, e.g.

    cargo build -p exrw-py --release --features extension-module
    cp target/release/libexrw.so python/exrw.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import exrw  # noqa: E402

DOCS = [
    "A powerful storm hit the coast on Monday. Thousands of homes lost power overnight. "
    "Officials said repair crews would work through the weekend.",
    "The storm brought winds of over 100 km/h. Several roads near the harbour were closed. "
    "Schools in the region will stay shut until Wednesday.",
]


def main():
    sents = exrw.split_sentences("Dr. Lee arrived at 5 p.m. on Monday. She left early.")
    assert sents == ["Dr. Lee arrived at 5 p.m. on Monday.", "She left early."], sents
    assert exrw.tokenize("The Cat, the hat!") == ["the", "cat", "the", "hat"]
    assert len(exrw.content_hash("x")) == 64

    p, r, f = exrw.rouge_n("the cat sat on the mat", "the cat sat on the mat", 2)
    assert (p, r, f) == (1.0, 1.0, 1.0)
    assert exrw.rouge_l("a b c", "x y z")[2] == 0.0
    assert abs(exrw.cosine([1.0, 0.0], [0.0, 1.0])) < 1e-12
    assert exrw.num_sentences([[1.0, 0.0]] * 4, 3.0, 10.0) == 3

    emb = exrw.FallbackEmbedder(16)
    vecs = emb.embed(["Storm hits the coast.", "Storm hits the coast."])
    assert emb.dim == 16 and len(vecs[0]) == 16 and vecs[0] == vecs[1]
    assert abs(math.sqrt(sum(x * x for x in vecs[0])) - 1.0) < 1e-9

    engine = exrw.Engine(dim=16, seed=7, k=2.0, c=0.0)
    out = engine.summarize(DOCS, cluster_id="storm")
    assert out["text"] == " ".join(out["sentences"])
    assert len(out["indices"]) == out["tn"] == 2
    assert all(0.0 < p <= 1.0 for p in out["probs"])
    assert engine.summarize(DOCS, cluster_id="storm") == out

    score = engine.score(out["text"], out["text"])
    assert abs(score["rouge_avg"] - 1.0) < 1e-12, score

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt.json")
        engine.save(path)
        again = exrw.Engine(dim=16, seed=7, checkpoint=path, k=2.0, c=0.0)
        assert again.summarize(DOCS, cluster_id="storm") == out
        try:
            exrw.Engine(dim=32, checkpoint=path)
        except ValueError as e:
            assert "dimension" in str(e)
        else:
            raise AssertionError("dimension mismatch not reported")

    try:
        engine.summarize(DOCS, mode="beam")
    except ValueError:
        pass
    else:
        raise AssertionError("bad mode accepted")

    print("exrw", exrw.__version__, "smoke test ok:", out["text"])


if __name__ == "__main__":
    main()
