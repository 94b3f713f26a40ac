"""Smoke test for the clipmontage_py extension.

Build and install the extension first:

    pip install maturin
    maturin develop -m crates/py/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import math
import os
import tempfile

import clipmontage_py as cm

TINY = """
[synth]
num_patients = 10
dims = [6, 40, 40]
body_side = 32

[preprocess]
output_side = 32
repeats_per_scan = 2

[encoder]
hidden = 8
embed = 4

[trainer]
batch_size = 4
max_epochs = 2
"""


def check_pure_functions():
    assert cm.partition_blocks(80, 4) == [(0, 20), (20, 40), (40, 60), (60, 80)]
    assert cm.substitute("no CLASSNAME", "pneumonia") == "no pneumonia"
    pos, neg = cm.score_pair([1.0, 0.0], [1.0, 0.0], [0.0, 1.0])
    assert abs(pos - math.e / (math.e + 1.0)) < 1e-12
    assert abs(pos + neg - 1.0) < 1e-12
    f1, hl, sa, _ = cm.evaluate([[1, 0], [0, 1]], [[1, 0], [0, 1]])
    assert (f1, hl, sa) == (1.0, 0.0, 1.0)
    assert cm.montage_seed(0, "P0001", 0) == cm.montage_seed(0, "P0001", 0)
    try:
        cm.Config("[trainer]\nlearning_rate = 1.0\n")
    except cm.ConfigError:
        pass
    else:
        raise AssertionError("unknown key accepted")


def check_pipeline(run_dir):
    cfg = cm.Config(TINY)
    cfg.apply_seed(7)
    cfg.run_dir = run_dir
    p = cm.Pipeline(cfg)
    p.echo_config()
    assert p.gen_synth() == 10
    assert p.preprocess() == 20
    assert p.split() == (8, 2)
    assert p.build_vocab() > 0
    history = p.train()
    assert len(history) == 2 and all(math.isfinite(l) for l, _ in history)
    assert p.embed() == 2
    assert '"macro_avg_f1"' in p.eval_zeroshot()

    ids, vectors = cm.read_embeddings(os.path.join(run_dir, "embeddings", "test_images.emb"))
    assert len(ids) == 2 and all(i.endswith("#0") for i in ids)
    copy = os.path.join(run_dir, "copy.emb")
    cm.write_embeddings(copy, ids, vectors)
    assert cm.read_embeddings(copy) == (ids, vectors)

    side, pixels, slices = cm.load_montage(
        os.path.join(run_dir, "montages", "P0000_00.mnt")
    )
    assert side == 32 and len(pixels) == 32 * 32 and len(slices) == 4
    try:
        cm.read_embeddings(os.path.join(run_dir, "missing.emb"))
    except cm.DataError:
        pass
    else:
        raise AssertionError("missing file accepted")


def main():
    check_pure_functions()
    with tempfile.TemporaryDirectory() as tmp:
        check_pipeline(os.path.join(tmp, "run"))
    print("smoke test OK")


if __name__ == "__main__":
    main()
