"""Smoke test for the compiled `pathrec` module.

Build and install first, e.g. `pip install maturin && maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import os
import tempfile

import pathrec


def main():
    assert pathrec.returns([0.0, 4.0], 0.99) == [3.96, 4.0]
    assert pathrec.ndcg(3, 5) == 0.5

    with tempfile.TemporaryDirectory() as root:
        inter, meta, labels = pathrec.gen_planted(os.path.join(root, "corpus"), toy=True)
        cfg = pathrec.Config(
            overrides=[
                f"paths.interactions={inter}",
                f"paths.metadata={meta}",
                f"paths.image_labels={labels}",
                f"paths.workdir={os.path.join(root, 'work')}",
                "model.d=16",
                "model.d_se=16",
                "model.d_proj=16",
                "training.lr=0.01",
                "training.alpha=0.5",
                "training.beta=0.5",
                "training.epochs=5",
                "training.min_item_count=1",
                "pretrain.epochs=20",
                "inference.K=5",
            ]
        )
        try:
            pathrec.train(cfg)
        except pathrec.PathrecError as e:
            print("train before build-kg:", e)

        history, report = pathrec.run(cfg)
        print("terminal reward by epoch:", [round(m["mean_terminal_reward"], 3) for m in history])
        print("HR:", report["hr"], "NDCG:", report["ndcg"])

        rec = pathrec.Recommender(cfg)
        for row in rec.recommend(["p0000", "p0001"]):
            print(f"{row['item']} {row['score']:.4f} {row['origin']:<8} {row['path'] or ''}")
    print("ok")


if __name__ == "__main__":
    main()
