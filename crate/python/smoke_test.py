"""Smoke test for the pystyleswap extension module.

Build the extension first:

    cargo build --release -p styleswap-python

then run `python3 python/smoke_test.py`. The script imports an installed
`pystyleswap` if there is one, otherwise the freshly built library from
target/.
"""

import importlib.util
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        import pystyleswap

        return pystyleswap
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libpystyleswap.so"
        if lib.exists():
            staged = Path(tempfile.mkdtemp()) / "pystyleswap.so"
            shutil.copy(lib, staged)
            spec = importlib.util.spec_from_file_location("pystyleswap", staged)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("pystyleswap not found; run `cargo build --release -p styleswap-python` first")


def close(a, b, tol=1e-6):
    assert abs(a - b) <= tol, f"{a} != {b}"


def main():
    ss = load_module()

    close(ss.cosine_similarity([1, 2], [3, 4]), 0.98386991)
    sil = ss.stacked_identity_loss([[[1, 2]], [[1, 0]]], [[[3, 4]], [[0, 1]]], [1, 0])
    close(sil, 0.00806504)
    close(ss.bce_loss([0.5], [1]), math.log(2))
    close(ss.final_loss(math.log(2), sil, 0.5), 0.69717970)
    close(ss.reconstruction_loss([1, 0], [0, 1], [0.5, 0.5]), 1.0)
    assert ss.fuse_latents([1, 2], [3, 4]) == [3, 8]
    close(ss.ThresholdCalibration.from_moments(0.5, 0.05, 2.0).threshold, 0.6, 1e-12)
    close(ss.auc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]), 0.75, 1e-12)
    gram = ss.gram_matrix([1, 0, 0, 1], 2, 1, 2)
    assert gram == [0.5, 0.0, 0.0, 0.5], gram

    try:
        ss.cosine_similarity([1, 2], [1])
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch was accepted")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = tmp / "data"
        code, out, err = ss.run_cli(
            ["generate-data", "--out", str(data), "--seed", "3", "--identities", "6", "--pairs", "30"]
        )
        assert code == 0, err
        manifest = data / "manifest.jsonl"
        config = tmp / "run.toml"
        config.write_text("classifier_epochs = 3\nanomaly_epochs = 3\n")
        for method in ("classifier", "anomaly"):
            ck = tmp / f"{method}.json"
            code, out, err = ss.run_cli(
                ["--config", str(config), "train", "--method", method,
                 "--manifest", str(manifest), "--checkpoint", str(ck)]
            )
            assert code == 0, err
        code, out, err = ss.run_cli(
            ["--config", str(config), "calibrate", "--checkpoint", str(tmp / "anomaly.json"),
             "--manifest", str(manifest)]
        )
        assert code == 0, err

        image = next(data.glob("rr-*/real.png"))
        fx = ss.FeatureExtractor()
        layers = fx.extract(str(image))
        assert sum(len(l) for l in layers) == fx.stack_len

        for method in ("classifier", "anomaly"):
            det = ss.Detector.load(str(tmp / f"{method}.json"))
            assert det.method == method
            verdict = det.detect(str(image), str(image))
            assert verdict["method"] == method
            assert verdict["label"] in ("real", "face-swapped")
        assert ss.Detector.load(str(tmp / "anomaly.json")).calibration is not None

        code, _, _ = ss.run_cli(["detect", "--checkpoint", str(tmp / "missing.json")])
        assert code == 2

    print("pystyleswap smoke test passed")


if __name__ == "__main__":
    main()
