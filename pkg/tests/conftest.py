import time

import pytest

from rawgat_st.cli import main
from rawgat_st.data import make_synthetic_dataset, write_corpus

# Desk-scale protocol shared by the learnability checks.
DESK_LENGTH = 2400
DESK_TRAIN, DESK_DEV = 100, 40
DESK_EPOCHS = 50
DESK_DATA_SEED = 1  # training set; the dev set uses seed + 1

_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def desk_args(out, epochs=DESK_EPOCHS, n_train=DESK_TRAIN, n_dev=DESK_DEV, seed=0, extra=()):
    return [
        "train",
        "--seed", str(seed),
        "--out", str(out),
        "--set", "data.synthetic=true",
        "--set", f"data.synthetic_seed={DESK_DATA_SEED}",
        "--set", f"data.synthetic_train={n_train}",
        "--set", f"data.synthetic_dev={n_dev}",
        "--set", f"model.segment_length={DESK_LENGTH}",
        "--set", f"train.epochs={epochs}",
        *extra,
    ]


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Full-model training on the synthetic corpus via the command line, plus the dev corpus on disk."""
    out = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    rc = main(desk_args(out))
    elapsed = time.perf_counter() - t0
    dev = make_synthetic_dataset(DESK_DEV, DESK_DATA_SEED + 1, DESK_LENGTH)
    manifest, protocol = write_corpus(dev, out, "dev")
    return {"out": out, "rc": rc, "seconds": elapsed, "manifest": manifest, "protocol": protocol}
