import subprocess
import sys

import pytest


def collect_pairs(out_dir, pairs, views=2, resolution=32, seed=0, preset="meadow"):
    """Run the simulator's pair collector; the two packages interact only
    through the files it writes."""
    cmd = [
        sys.executable, "-m", "segdrive.cli", "collect-pairs",
        "--presets", preset, "--pairs", str(pairs), "--views", str(views),
        "--resolution", str(resolution), "--max-range", "60",
        "--seed", str(seed), "--out", str(out_dir),
    ]
    subprocess.run(cmd, check=True, capture_output=True, text=True)
    return str(out_dir)


@pytest.fixture(scope="session")
def pairs_tiny(tmp_path_factory):
    """20 rgb/seg/depth pairs (10 scenes x 2 appearance views) at 32px."""
    out = tmp_path_factory.mktemp("pairs_tiny")
    return collect_pairs(out, pairs=10, views=2, resolution=32, seed=7)


@pytest.fixture(scope="session")
def pairs_500(tmp_path_factory):
    """500 pairs (250 scenes x 2 appearance views) at 64px."""
    out = tmp_path_factory.mktemp("pairs_500")
    return collect_pairs(out, pairs=250, views=2, resolution=64, seed=0)
