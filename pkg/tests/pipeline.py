"""Small end-to-end CLI run shared by the CLI and acceptance tests."""
import os

from canopynet.cli import main

ARTIFACTS = ("data.wfds", "model/member0.ckpt", "model/member1.ckpt", "pred.csv",
             "grid/cells.csv", "grid/cells.mean_height.asc")


def cli(root, *argv):
    old = os.environ.get("CANOPYNET_OUT")
    os.environ["CANOPYNET_OUT"] = str(root)
    try:
        return main([str(a) for a in argv])
    finally:
        if old is None:
            os.environ.pop("CANOPYNET_OUT", None)
        else:
            os.environ["CANOPYNET_OUT"] = old


def run_pipeline(root, n=300, seed=7):
    r = str(root) + "/"
    steps = [
        ("simulate", "--n", n, "--seed", seed, "--n-bins", 256, "--set", "height_max_m=30",
         "--out", "data.wfds"),
        ("splits", "--data", r + "data.wfds", "--k", 5, "--seed", seed, "--out", "splits.csv"),
        ("train", "--data", r + "data.wfds", "--splits", r + "splits.csv", "--fold", 0,
         "--members", 2, "--seed", seed, "--net", "n_bins=256", "--net", "n_blocks=3",
         "--net", "base_channels=4", "--train", "epochs=2", "--out", "model/ensemble.txt"),
        ("predict", "--model", r + "model/ensemble.txt", "--data", r + "data.wfds",
         "--ids", r + "splits.csv", "--fold", 0, "--out", "pred.csv"),
        ("calibrate", "--predictions", r + "pred.csv", "--recall", 0.7, "--out", "tau.json"),
        ("grid", "--predictions", r + "pred.csv", "--tau-file", r + "tau.json",
         "--cell-size", 5, "--out", "grid/cells.csv"),
    ]
    for step in steps:
        rc = cli(root, *step)
        if rc != 0:
            raise AssertionError(f"{step[0]} exited with {rc}")
    return {a: (root / a).read_bytes() for a in ARTIFACTS}
