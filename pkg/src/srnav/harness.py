"""Experiment drivers: the numerical detection study and the simulated benchtop trials.

Each experiment writes raw CSVs plus a JSON summary into an output directory.
Every statistic in the summary can be recomputed from the CSVs with
:func:`summarize_numerical_rows` / :func:`summarize_benchtop_rows`.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import locate_marker
from .export import read_rows, write_rows
from .navloop import Mode, RigConfig, SimulatedRig, run_positioning_trial
from .scene import DegradationParams, GroundTruthCircle, degrade, render_disk
from .sr import SrOptions, generate_offsets, reconstruct_sr, upsample_bicubic
from .stats import ZeroVarianceError, f_test_two_tailed, summarize

MODES = (Mode.BASE, Mode.BICUBIC, Mode.SR)
NUMERICAL_CSV = "numerical.csv"
PUNCTURES_CSV = "punctures.csv"
TRIALS_CSV = "trials.csv"
REPORT_JSON = "report.json"


def _benchtop_rig() -> RigConfig:
    # image noise chosen so detection noise (~0.1 px per axis at base resolution)
    # dominates the 0.02 mm actuator noise
    return RigConfig(degradation=DegradationParams(blur_sigma=0.5, noise_sigma=0.2))


@dataclass
class ExperimentConfig:
    experiment: str = "numerical"  # numerical | benchtop-sim
    trials: int = 100
    seed: int = 7
    degradation: DegradationParams = field(default_factory=DegradationParams)
    sr: SrOptions = field(default_factory=SrOptions)
    # numerical study
    canvas: int = 128
    supersample_factor: int = 8
    marker_radius: float = 8.0  # base pixels
    center_jitter: float = 10.0  # +/- base pixels around the canvas center
    # benchtop simulation
    rig: RigConfig = field(default_factory=_benchtop_rig)
    punctures: int = 14
    modes: tuple[str, ...] = ("base", "bi", "sr")
    output_dir: str | None = None
    workers: int = 1
    dump_frames: bool = False

    def __post_init__(self):
        if self.experiment not in ("numerical", "benchtop-sim"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.punctures < 1:
            raise ValueError("punctures must be >= 1")
        self.modes = tuple(Mode.parse(m).value for m in self.modes)

    def provenance_dict(self) -> dict:
        """Everything that influences results; excludes output location and worker count."""
        d = dataclasses.asdict(self)
        for key in ("output_dir", "workers", "dump_frames"):
            d.pop(key)
        if self.experiment == "numerical":
            for key in ("rig", "punctures", "modes"):
                d.pop(key)
        else:
            for key in ("degradation", "canvas", "supersample_factor", "marker_radius", "center_jitter"):
                d.pop(key)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.provenance_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


# -- flat key=value configuration ---------------------------------------------

def _coerce(value: str, current):
    if isinstance(current, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float) or current is None:
        return float(value)
    if isinstance(current, tuple):
        parts = [p.strip() for p in value.replace("(", "").replace(")", "").split(",") if p.strip()]
        if current and isinstance(current[0], str):
            return tuple(parts)
        if current and isinstance(current[0], int) and not isinstance(current[0], bool):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    return value.strip()


def _set_path(obj, path: list[str], raw: str):
    name = path[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise KeyError(name)
    current = getattr(obj, name)
    if len(path) == 1:
        return dataclasses.replace(obj, **{name: _coerce(raw, current)})
    return dataclasses.replace(obj, **{name: _set_path(current, path[1:], raw)})


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Apply dotted ``section.field`` overrides, e.g. ``rig.camera.scale = 1.5``.

    When only ``degradation.blur_sigma`` is given, the SR forward model follows it.
    """
    for key, raw in overrides.items():
        try:
            cfg = _set_path(cfg, key.split("."), raw)
        except KeyError:
            raise ValueError(f"unknown configuration key {key!r}") from None
    if "degradation.blur_sigma" in overrides and "sr.blur_sigma" not in overrides:
        cfg = dataclasses.replace(cfg, sr=dataclasses.replace(cfg.sr, blur_sigma=cfg.degradation.blur_sigma))
    if "rig.degradation.blur_sigma" in overrides and "sr.blur_sigma" not in overrides:
        cfg = dataclasses.replace(cfg, sr=dataclasses.replace(cfg.sr, blur_sigma=cfg.rig.degradation.blur_sigma))
    return cfg


def read_config_file(path) -> dict[str, str]:
    """Read a flat ``key = value`` file (``#`` comments allowed) into a dict."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[config]\n" + Path(path).read_text())
    return dict(parser["config"])


# -- numerical study ------------------------------------------------------------

def _numerical_trial(args) -> list[dict]:
    cfg, index, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    f = cfg.sr.upscale_factor
    r = cfg.marker_radius
    size = (cfg.canvas, cfg.canvas)
    center = np.array([cfg.canvas / 2, cfg.canvas / 2]) + rng.uniform(-cfg.center_jitter, cfg.center_jitter, 2)
    rows = []
    for repeat in (0, 1):  # second pass: the same circle one pixel to the right
        truth = center + (repeat, 0.0)
        hi = render_disk(GroundTruthCircle((float(truth[0]), float(truth[1])), r), size, cfg.supersample_factor)
        base = degrade(hi, cfg.degradation, rng=rng)
        shifts = generate_offsets(4, int(rng.integers(2**32)), np.eye(2))
        frames = [base] + [degrade(hi, cfg.degradation, tuple(off), rng) for off in shifts.offsets[1:]]
        sr = reconstruct_sr(frames, shifts, cfg.sr)
        images = {Mode.BASE: (base, 1), Mode.BICUBIC: (upsample_bicubic(base, f), f), Mode.SR: (sr.image, f)}
        for mode, (img, scale) in images.items():
            est = locate_marker(img, (0.5 * r * scale, 2.0 * r * scale))
            if est is None:
                ex = ey = float("nan")
            else:
                ex, ey = est.center[0] / scale, est.center[1] / scale
            rows.append({
                "trial": index, "repeat": repeat, "mode": mode.value,
                "true_x": float(truth[0]), "true_y": float(truth[1]),
                "est_x": ex, "est_y": ey,
                "sr_iterations": sr.iterations_used,
            })
    return rows


def _fan_out(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _safe_f_test(a, b):
    try:
        return f_test_two_tailed(a, b)
    except (ZeroVarianceError, ValueError):
        return None


def summarize_numerical_rows(rows: list[dict], canvas: int) -> dict:
    modes = {}
    errors = {}
    for mode in MODES:
        sel = [r for r in rows if r["mode"] == mode.value]
        if not sel:
            continue
        dx = np.array([float(r["est_x"]) - float(r["true_x"]) for r in sel])
        dy = np.array([float(r["est_y"]) - float(r["true_y"]) for r in sel])
        ok = np.isfinite(dx) & np.isfinite(dy)
        err = np.hypot(dx[ok], dy[ok])
        errors[mode.value] = np.concatenate([dx[ok], dy[ok]])
        modes[mode.value] = {
            "n": int(ok.sum()),
            "detection_failures": int((~ok).sum()),
            "mean_error_px": float(err.mean()) if err.size else None,
            "std_error_px": float(err.std(ddof=1)) if err.size > 1 else 0.0,
            "mean_normalized_error": float(err.mean() / canvas) if err.size else None,
            "bias_px": [float(dx[ok].mean()), float(dy[ok].mean())] if err.size else None,
        }
    tests = {}
    for a, b in (("base", "sr"), ("base", "bi"), ("bi", "sr")):
        if a in errors and b in errors:
            tests[f"{a}_vs_{b}"] = _safe_f_test(errors[a], errors[b])
    return {"modes": modes, "f_tests": tests}


def run_numerical_analysis(cfg: ExperimentConfig) -> dict:
    """Detection accuracy on base, bicubic and super-resolved images of a known disk.

    Each trial draws a random sub-pixel center, builds a base frame plus three
    randomly shifted frames, and repeats with the disk moved one pixel right.
    Errors are reported in base pixels and normalised by the image width.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    jobs = [(cfg, i, s) for i, s in enumerate(seeds)]
    rows = [row for chunk in _fan_out(_numerical_trial, jobs, cfg.workers) for row in chunk]
    report = {
        "experiment": "numerical",
        "seed": cfg.seed,
        "trials": cfg.trials,
        "config_hash": cfg.config_hash(),
        "config": cfg.provenance_dict(),
        "normalization": "euclidean center error / image width",
        "f_test_samples": "signed x and y center-error components, pooled",
        **summarize_numerical_rows(rows, cfg.canvas),
    }
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["trial", "repeat", "mode", "true_x", "true_y", "est_x", "est_y", "sr_iterations"]
        write_rows(out / NUMERICAL_CSV, header, ([_fmt(r[h]) for h in header] for r in rows))
        _write_json(out / REPORT_JSON, report)
    report["rows"] = rows
    return report


# -- benchtop simulation ---------------------------------------------------------

def _benchtop_trial(args):
    cfg, mode, trial, seed_seq = args
    dump = Path(cfg.output_dir) / "frames" / mode.value if cfg.dump_frames and cfg.output_dir else None
    rig = SimulatedRig(cfg.rig, rng_seed=seed_seq, dump_dir=dump)
    rig.trial_index = trial
    return run_positioning_trial(rig, mode, cfg.punctures, cfg.sr)


def summarize_benchtop_rows(puncture_rows: list[dict], trial_rows: list[dict]) -> dict:
    modes = {}
    distances = {}
    for mode in MODES:
        sel = [r for r in puncture_rows if r["mode"] == mode.value]
        if not sel:
            continue
        trials = sorted({int(r["trial"]) for r in sel})
        dists, per_trial_std = [], []
        for t in trials:
            pts = [(float(r["x_mm"]), float(r["y_mm"])) for r in sel if int(r["trial"]) == t]
            _, std, d = summarize(pts)
            dists.append(d)
            per_trial_std.append(std)
        d = np.concatenate(dists)
        distances[mode.value] = d
        iters = np.array([int(r["iterations"]) for r in sel if int(r["puncture_idx"]) > 0])
        tsel = [r for r in trial_rows if r["mode"] == mode.value]
        frames = [int(r["frames_acquired"]) for r in tsel]
        times = [float(r["wall_time_s"]) for r in tsel]
        modes[mode.value] = {
            "trials": len(trials),
            "punctures": len(sel),
            "puncture_std_mm": float(np.std(d, ddof=1)) if d.size > 1 else 0.0,
            "per_trial_std_mm": per_trial_std,
            "mean_iterations": float(iters.mean()) if iters.size else 0.0,
            "std_iterations": float(iters.std(ddof=1)) if iters.size > 1 else 0.0,
            "frames_per_observation": int(tsel[0]["frames_per_observation"]) if tsel else None,
            "frames_acquired": frames,
            "sim_time_min": [t / 60.0 for t in times],
            "nonconverged": sum(1 for r in sel if str(r["converged"]) in ("0", "False")),
        }
    tests = {}
    for a, b in (("base", "sr"), ("base", "bi"), ("bi", "sr")):
        if a in distances and b in distances:
            tests[f"{a}_vs_{b}"] = _safe_f_test(distances[a], distances[b])
    return {"modes": modes, "f_tests": tests}


def run_benchtop_sim(cfg: ExperimentConfig) -> dict:
    """Closed-loop targeting trials, ``cfg.trials`` per mode, ``cfg.punctures`` each.

    Trial ``t`` of every mode shares the rig geometry; noise streams are derived
    from ``(seed, t, mode)`` so results do not depend on mode order or workers.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    jobs = []
    for t, s in enumerate(seeds):
        per_mode = s.spawn(len(MODES))
        for k, mode in enumerate(MODES):
            if mode.value in cfg.modes:
                jobs.append((cfg, mode, t, per_mode[k]))
    records = _fan_out(_benchtop_trial, jobs, cfg.workers)

    puncture_rows, trial_rows = [], []
    for (_, mode, t, _), rec in zip(jobs, records):
        fpo = cfg.rig.sr_frames if mode is Mode.SR else 1
        for i, (p, it, fr, ok) in enumerate(zip(rec.punctures, rec.iterations_per_puncture,
                                                rec.frames_per_puncture, rec.converged)):
            puncture_rows.append({"mode": mode.value, "puncture_idx": i, "x_mm": float(p[0]), "y_mm": float(p[1]),
                                  "iterations": it, "frames": fr, "trial": t, "converged": int(ok)})
        J = rec.jacobian
        trial_rows.append({"mode": mode.value, "trial": t, "frames_acquired": rec.frames_acquired,
                           "jacobian_frames": rec.jacobian_frames, "frames_per_observation": fpo,
                           "wall_time_s": rec.wall_time, "j11": J[0, 0], "j12": J[0, 1],
                           "j21": J[1, 0], "j22": J[1, 1]})
    report = {
        "experiment": "benchtop-sim",
        "seed": cfg.seed,
        "trials": cfg.trials,
        "config_hash": cfg.config_hash(),
        "config": cfg.provenance_dict(),
        "precision_metric": "sample std of puncture distances to the per-trial centroid, pooled over trials",
        "f_test_samples": "distance-to-centroid samples",
        **summarize_benchtop_rows(puncture_rows, trial_rows),
    }
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        ph = ["mode", "puncture_idx", "x_mm", "y_mm", "iterations", "frames", "trial", "converged"]
        write_rows(out / PUNCTURES_CSV, ph, ([_fmt(r[h]) for h in ph] for r in puncture_rows))
        th = list(trial_rows[0]) if trial_rows else []
        write_rows(out / TRIALS_CSV, th, ([_fmt(r[h]) for h in th] for r in trial_rows))
        _write_json(out / REPORT_JSON, report)
    report["records"] = records
    report["puncture_rows"] = puncture_rows
    report["trial_rows"] = trial_rows
    return report


# -- report files ----------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_json(path: Path, report: dict):
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def load_report(directory) -> dict:
    return json.loads((Path(directory) / REPORT_JSON).read_text())


def recompute_report(directory) -> dict:
    """Rebuild the summary block of a report from the raw CSVs in ``directory``."""
    directory = Path(directory)
    report = load_report(directory)
    if report["experiment"] == "numerical":
        rows = read_rows(directory / NUMERICAL_CSV)
        return summarize_numerical_rows(rows, report["config"]["canvas"])
    return summarize_benchtop_rows(read_rows(directory / PUNCTURES_CSV), read_rows(directory / TRIALS_CSV))


def default_config(experiment: str) -> ExperimentConfig:
    if experiment == "numerical":
        return ExperimentConfig(experiment="numerical")
    return ExperimentConfig(experiment="benchtop-sim", trials=20)


__all__ = [
    "ExperimentConfig", "apply_overrides", "default_config", "load_report", "read_config_file",
    "recompute_report", "run_benchtop_sim", "run_numerical_analysis", "summarize_benchtop_rows",
    "summarize_numerical_rows",
]
