"""Regenerate the frozen codec and sidecar vectors in this directory.

Run only when the bitstream or sidecar format changes intentionally:

    python tests/golden/regenerate.py
"""

from pathlib import Path

import numpy as np

from sbcodec.entropy_codec import encode
from sbcodec.quantizer import QuantIndices
from sbcodec.rate_model import RegressorParams, save_regressor

HERE = Path(__file__).parent


def main() -> None:
    rng = np.random.default_rng(20240817)
    tensors = {
        "tensor_a": (rng.integers(0, 16, size=(9, 7, 3), dtype=np.int32), 4),
        "tensor_zero": (np.zeros((16, 16, 4), dtype=np.int32), 4),
        "tensor_b": (rng.integers(0, 256, size=(5, 5, 2), dtype=np.int32), 8),
    }
    for name, (q, b) in tensors.items():
        np.save(HERE / f"{name}.npy", q)
        np.save(HERE / f"{name}_b.npy", np.int64(b))
        (HERE / f"{name}.sbc").write_bytes(encode(QuantIndices(q, b)).to_bytes())
        print(name, "->", (HERE / f"{name}.sbc").stat().st_size, "bytes")

    pi = np.linspace(0.05, 0.95, 25)
    save_regressor(RegressorParams(pi), HERE / "regressor.sbr")
    print("regressor.sbr ->", (HERE / "regressor.sbr").stat().st_size, "bytes")


if __name__ == "__main__":
    main()
