"""Figures and tables from one or more run directories.

Writes, into the output directory, an SVG and a CSV per figure:

    reward_curve   mean episode reward over a trailing 100-episode window, per run
    epsilon        exploration probability per environment step, per run
    loss_diff      |loss_k - loss_(k-1)| smoothed by a centred 51-update moving average
    reward_hist    share of evaluation rewards in [0,.25), [.25,.5), [.5,.75), [.75,1]
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from d3rqn.errors import ConfigError  # noqa: E402
from d3rqn.harness.evaluate import BIN_EDGES, reward_bins  # noqa: E402

REWARD_WINDOW = 100
LOSS_WINDOW = 51
MAX_PLOT_POINTS = 4000

plt.rcParams.update({
    "figure.figsize": (7.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "svg.hashsalt": "d3rqn",
})


def read_columns(path: Path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    if not path.is_file():
        raise ConfigError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty file")
        missing = [c for c in required if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        rows = list(reader)
    idx = {c: header.index(c) for c in required}
    return {c: np.array([float(r[i]) if r[i] else math.nan for r in rows]) for c, i in idx.items()}


def trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Mean of the last ``window`` values at each index (shorter at the start)."""
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def centered_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks symmetrically near the ends."""
    n = len(x)
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(n)
    k = np.minimum(np.minimum(i, n - 1 - i), half)
    return (c[i + k + 1] - c[i - k]) / (2 * k + 1)


def loss_differences(loss: np.ndarray) -> np.ndarray:
    return np.abs(np.diff(loss))


def run_label(run_dir: Path) -> str:
    cfg = run_dir / "config.txt"
    kind = ""
    if cfg.is_file():
        for line in cfg.read_text(encoding="utf-8").splitlines():
            if line.startswith("strategy.kind"):
                kind = line.split("=", 1)[1].strip()
    return f"{kind} ({run_dir.name})" if kind else run_dir.name


def _thin(x: np.ndarray, y: np.ndarray):
    if len(x) <= MAX_PLOT_POINTS:
        return x, y
    step = int(math.ceil(len(x) / MAX_PLOT_POINTS))
    return x[::step], y[::step]


def _save(fig, out: Path, name: str) -> Path:
    path = out / f"{name}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _write_long_csv(path: Path, header: tuple[str, ...], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def reward_curve(runs: list[Path], out: Path) -> Path:
    fig, ax = plt.subplots()
    rows = []
    for run in runs:
        cols = read_columns(run / "metrics.csv", ("episode", "cum_reward"))
        ma = trailing_mean(cols["cum_reward"], REWARD_WINDOW)
        label = run_label(run)
        ax.plot(cols["episode"], ma, label=label, lw=1.2)
        rows += [(label, int(e), f"{v:.10g}") for e, v in zip(cols["episode"], ma)]
    ax.set_xlabel("episode")
    ax.set_ylabel(f"average reward ({REWARD_WINDOW}-episode window)")
    ax.legend()
    _write_long_csv(out / "reward_curve.csv", ("run", "episode", "reward_ma"), rows)
    return _save(fig, out, "reward_curve")


def epsilon_curve(runs: list[Path], out: Path) -> Path:
    fig, ax = plt.subplots()
    rows = []
    for run in runs:
        cols = read_columns(run / "steps.csv", ("step", "epsilon"))
        keep = np.isfinite(cols["epsilon"])
        label = run_label(run)
        x, y = _thin(cols["step"][keep], cols["epsilon"][keep])
        if len(x):
            ax.plot(x, y, label=label, lw=1.0)
        rows += [(label, int(s), f"{e:.10g}") for s, e in zip(x, y)]
    ax.set_xlabel("environment step")
    ax.set_ylabel("epsilon")
    ax.set_ylim(-0.02, 1.02)
    if rows:
        ax.legend()
    _write_long_csv(out / "epsilon.csv", ("run", "step", "epsilon"), rows)
    return _save(fig, out, "epsilon")


def loss_diff_curve(runs: list[Path], out: Path) -> Path:
    fig, ax = plt.subplots()
    rows = []
    for run in runs:
        cols = read_columns(run / "updates.csv", ("loss",))
        diff = loss_differences(cols["loss"])
        if not len(diff):
            continue
        smooth = centered_mean(diff, LOSS_WINDOW)
        label = run_label(run)
        x = np.arange(1, len(diff) + 1)
        ax.plot(*_thin(x, smooth), label=label, lw=1.0)
        rows += [(label, int(k), f"{d:.10g}", f"{s:.10g}") for k, d, s in zip(x, diff, smooth)]
    ax.set_xlabel("agent update")
    ax.set_ylabel("|loss difference| (smoothed)")
    if rows:
        ax.legend()
    _write_long_csv(out / "loss_diff.csv", ("run", "update", "abs_diff", "smoothed"), rows)
    return _save(fig, out, "loss_diff")


def _eval_rewards(run: Path) -> list[tuple[str, np.ndarray]]:
    found = []
    for d in sorted(run.glob("eval_*")):
        steps = d / "eval_steps.csv"
        if steps.is_file():
            found.append((d.name, read_columns(steps, ("reward",))["reward"]))
    return found


def reward_histogram(runs: list[Path], out: Path) -> Path | None:
    series = []
    for run in runs:
        for name, rewards in _eval_rewards(run):
            series.append((f"{run_label(run)} {name}", reward_bins(rewards)))
    if not series:
        return None
    fig, ax = plt.subplots()
    width = 0.8 / len(series)
    centers = np.arange(4)
    rows = []
    for k, (label, counts) in enumerate(series):
        pct = 100.0 * counts / max(counts.sum(), 1)
        ax.bar(centers + (k - (len(series) - 1) / 2) * width, pct, width, label=label)
        rows += [(label, b, BIN_EDGES[b], BIN_EDGES[b + 1], int(counts[b]), f"{pct[b]:.10g}") for b in range(4)]
    ax.set_xticks(centers, ["[0,0.25)", "[0.25,0.5)", "[0.5,0.75)", "[0.75,1]"])
    ax.set_xlabel("reward range")
    ax.set_ylabel("% of evaluation steps")
    ax.legend()
    _write_long_csv(out / "reward_hist.csv", ("run", "bin", "lower", "upper", "count", "percent"), rows)
    return _save(fig, out, "reward_hist")


def cmd_report(run_dirs: list[str | Path], out: str | Path) -> list[Path]:
    runs = [Path(r) for r in run_dirs]
    if not runs:
        raise ConfigError("report needs at least one run directory")
    for r in runs:
        if not r.is_dir():
            raise ConfigError(f"run directory not found: {r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    made = [reward_curve(runs, out), epsilon_curve(runs, out), loss_diff_curve(runs, out)]
    hist = reward_histogram(runs, out)
    if hist is not None:
        made.append(hist)
    return made
