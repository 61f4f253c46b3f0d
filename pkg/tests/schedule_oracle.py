"""Learning-rate tables built with np.interp / np.cos over whole epoch ranges.

Written separately from the package code; ``python tests/schedule_oracle.py``
regenerates ``tests/golden/schedule_default.csv``.
"""

from pathlib import Path

import numpy as np

T0, T_EX, M = 150, 100, 3
HIGH, MID, LOW = 0.1, 0.01, 0.001
NAMES = ("stepwise", "cosine", "linear-fge", "linear-1")


def table() -> dict[str, np.ndarray]:
    e = np.arange(T_EX, dtype=np.float64)
    explore = np.full(T0, HIGH)
    phases = {
        "stepwise": [np.where(e < T_EX / 2, MID, LOW)] * M,
        "cosine": [LOW + 0.5 * (MID - LOW) * (1 + np.cos(np.pi * e / T_EX))] * M,
        "linear-1": [np.interp(e, [0, T_EX - 1], [MID, LOW])] * M,
        "linear-fge": [np.interp(e, [0, T_EX / 2, T_EX - 1], [HIGH if k == 0 else LOW, MID, LOW])
                       for k in range(M)],
    }
    return {name: np.concatenate([explore, *phases[name]]) for name in NAMES}


def events() -> list[str]:
    out = ["none"] * (T0 + M * T_EX)
    for k in range(1, M + 1):
        out[T0 + k * T_EX - 1] = "snapshot-final" if k == M else "perturb-and-snapshot"
    return out


def write(path: Path) -> None:
    t, ev = table(), events()
    lines = ["epoch," + ",".join(NAMES) + ",event"]
    for i in range(T0 + M * T_EX):
        lines.append(f"{i}," + ",".join(repr(float(t[n][i])) for n in NAMES) + f",{ev[i]}")
    path.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    write(Path(__file__).parent / "golden" / "schedule_default.csv")
