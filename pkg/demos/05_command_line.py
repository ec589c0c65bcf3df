# The same workflow through the command-line tool: train on the synthetic
# corpus, write a dev corpus to disk, score it and print the EER report.
import subprocess
import sys
import tempfile
from pathlib import Path

from rawgat_st.data import make_synthetic_dataset, write_corpus


def run(*args):
    cmd = [sys.executable, "-m", "rawgat_st", *args]
    print("$ rawgat-st", " ".join(args))
    subprocess.run(cmd, check=True)


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cfg = tmp / "quick.cfg"
    cfg.write_text(
        "seed = 0\n"
        "model.segment_length = 2400\n"
        "[data]\nsynthetic = true\nsynthetic_train = 10\nsynthetic_dev = 5\n"
        "[train]\nepochs = 3\n"
    )
    run("train", "--config", str(cfg), "--out", str(tmp / "run"))
    manifest, protocol = write_corpus(make_synthetic_dataset(5, 2, 2400), tmp, "dev")
    run("score", "--checkpoint", str(tmp / "run" / "checkpoint.npz"), "--manifest", str(manifest),
        "--out", str(tmp / "dev.scores"))
    run("eval", str(tmp / "dev.scores"), str(protocol))
    run("audit", "--set", "model.segment_length=2400", "--ablate", "pooling")
