"""Smoke test for the bpdec extension module.

Build and install first:

    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/bpdec-*.whl

then run ``python python/smoke_test.py``.
"""

import math
import os
import tempfile

import bpdec


def main():
    cfg = bpdec.Config.preset("desk")
    assert cfg.decoder_layers == 1 and cfg.gua_schedule == [(1, 1.0)]
    assert bpdec.Config.parse(cfg.to_text()).to_text() == cfg.to_text()

    lines = bpdec.markov_corpus(seed=1, lines=400)
    vocab = bpdec.Vocab.build(lines, cfg.vocab_size)
    assert len(vocab) == cfg.vocab_size
    seqs = vocab.encode_all(lines, cfg.seq_len)
    assert all(len(s) == cfg.seq_len for s in seqs)

    row = bpdec.mask_sequence(seqs[0], cfg.vocab_size, seed=3)
    assert sum(row["masked"]) >= 1

    plan = bpdec.plan_gua([True, False, True, True, False, True], [(1, 0.5), (2, 1.0)], 2, seed=1)
    assert sum(plan[0]) == 2 and sum(plan[1]) == 4
    assert all(b for a, b in zip(plan[0], plan[1]) if a)

    report = bpdec.flops(bpdec.Config.preset("large"), "pretrain", 512)
    assert abs(float(report["pretrain.ratio"]) - 1.166) < 0.02
    assert report["finetune.decoder_dropped.ratio"] == "1.000000"

    cfg.steps = 6
    cfg.batch_size = 4
    trainer = bpdec.Trainer(cfg, seqs, seed=7)
    first = trainer.step()
    assert first["step"] == 1 and math.isfinite(first["loss"]) and "unmask_l1" in first
    losses = trainer.run()
    assert len(losses) == 5 and trainer.step_count == 6

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "final.ckpt")
        ckpt = trainer.checkpoint()
        ckpt.save(path)
        again = bpdec.Checkpoint.load(path)
        assert again == ckpt and bytes(again) == bytes(ckpt)

        enc = ckpt.export_encoder()
        fresh = bpdec.Checkpoint.initial(cfg.encoder_only(), seed=2, encoder_only=True)
        assert enc.param_names() == fresh.param_names()
        assert enc.num_scalars == fresh.num_scalars

        weights, kinds = bpdec.attention_heatmap(ckpt, vocab, lines[0], "decoder", 1, seed=5)
        assert len(weights) == cfg.seq_len and len(kinds) == cfg.seq_len
        assert all(abs(sum(r) - 1.0) < 1e-5 for r in weights)

        task = bpdec.marker_task(seed=2, lines=40)
        acc = bpdec.finetune(enc, vocab, task, seed=1, epochs=1, batch_size=8)
        assert 0.0 <= acc <= 1.0
        assert 0.0 <= bpdec.eval_cloze(enc, seqs[:50], seed=1) <= 1.0

        try:
            bpdec.finetune(ckpt, vocab, task)
        except ValueError as e:
            assert "export" in str(e)
        else:
            raise AssertionError("decoder checkpoint was accepted for finetuning")

    print("smoke test passed")


if __name__ == "__main__":
    main()
