"""Objective speech metrics and evaluation reports.

LSD, SI-SDR and STOI are computed natively. PESQ and NISQA-MOS come from
external scorer executables invoked as ``<cmd> <ref.wav> <est.wav>``; each must
print one decimal number and exit 0, anything else marks the metric absent.
"""

import csv
import io
import json
import logging
import math
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import TARGET_RATE, read_wav, resample, write_wav
from .stft import MODEL_STFT, stft

log = logging.getLogger(__name__)

LSD_EPS = 1e-10
SI_SDR_CAP = 100.0
NATIVE = ("lsd", "si_sdr", "stoi")
EXTERNAL = ("pesq", "nisqa")
# Column order of the summary table: L, N, S, P, ST
TABLE_COLUMNS = (("lsd", "L"), ("nisqa", "N"), ("si_sdr", "S"), ("pesq", "P"), ("stoi", "ST"))


def _pair(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    return ref, est


def log_power_spectrogram(x, cfg=MODEL_STFT):
    s = stft(x, cfg).data.numpy()
    return np.log10(np.abs(s) ** 2 + LSD_EPS)


def lsd(ref, est, cfg=MODEL_STFT):
    """Log-spectral distance: frame-mean of the RMS log10-power difference over bins."""
    ref, est = _pair(ref, est)
    d = log_power_spectrogram(ref, cfg) - log_power_spectrogram(est, cfg)
    return float(np.mean(np.sqrt(np.mean(d**2, axis=0))))


def si_sdr(ref, est):
    """Scale-invariant SDR in dB, capped at +100 dB for near-perfect estimates."""
    ref, est = _pair(ref, est)
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("reference signal is all zero")
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    distortion = target - est
    sig = np.dot(target, target)
    dist = np.dot(distortion, distortion)
    if sig == 0:
        return -SI_SDR_CAP
    if dist < 1e-12 * sig:
        return SI_SDR_CAP
    return float(np.clip(10 * np.log10(sig / dist), -SI_SDR_CAP, SI_SDR_CAP))


# --- STOI ---------------------------------------------------------------

STOI_RATE = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def third_octave_bands(rate=STOI_RATE, nfft=STOI_NFFT, n_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """(n_bands, nfft/2+1) 0/1 matrix grouping FFT bins into one-third-octave bands."""
    f = np.linspace(0, rate, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, len(f)))
    for i in range(n_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _frames(x, frame=STOI_FRAME, hop=STOI_FRAME // 2):
    w = np.hanning(frame + 2)[1:-1]
    starts = range(0, len(x) - frame, hop)
    return np.array([w * x[i : i + frame] for i in starts]).reshape(-1, frame)


def _overlap_add(frames, hop):
    n, frame = frames.shape
    out = np.zeros((n - 1) * hop + frame) if n else np.zeros(0)
    for i in range(n):
        out[i * hop : i * hop + frame] += frames[i]
    return out


def _drop_silent_frames(x, y):
    hop = STOI_FRAME // 2
    xf, yf = _frames(x), _frames(y)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - STOI_DYN_RANGE if len(energy) else np.zeros(0, bool)
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _band_envelopes(x):
    spec = np.fft.rfft(_frames(x), n=STOI_NFFT, axis=1).T  # (bins, frames)
    return np.sqrt(third_octave_bands() @ np.abs(spec) ** 2)


def stoi(ref, est, rate=TARGET_RATE):
    """Short-time objective intelligibility, standard (non-extended) variant."""
    ref, est = _pair(ref, est)
    if rate != STOI_RATE:
        ref = resample(ref, rate, STOI_RATE)
        est = resample(est, rate, STOI_RATE)
    x, y = _drop_silent_frames(ref, est)
    x_tob, y_tob = _band_envelopes(x), _band_envelopes(y)
    n_frames = x_tob.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError(
            f"need at least {STOI_SEGMENT} speech-active frames (384 ms); got {n_frames}"
        )
    clip = 10 ** (-STOI_BETA / 20)
    scores = []
    for m in range(STOI_SEGMENT, n_frames + 1):
        xs = x_tob[:, m - STOI_SEGMENT : m]
        ys = y_tob[:, m - STOI_SEGMENT : m]
        gain = np.linalg.norm(xs, axis=1, keepdims=True) / (np.linalg.norm(ys, axis=1, keepdims=True) + _EPS)
        yn = np.minimum(ys * gain, xs * (1 + clip))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yn - yn.mean(axis=1, keepdims=True)
        corr = np.sum(xc * yc, axis=1) / (np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS)
        scores.append(corr)
    return float(np.mean(scores))


# --- external scorers ---------------------------------------------------


@dataclass
class ExternalResult:
    value: float = None
    reason: str = None


def run_external(cmd, ref_path, est_path, timeout=600):
    """Invoke ``cmd ref est``; returns ExternalResult with value or the failure reason."""
    argv = shlex.split(cmd) + [str(ref_path), str(est_path)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        return ExternalResult(reason=f"{type(exc).__name__}: {exc}")
    if proc.returncode != 0:
        return ExternalResult(reason=f"exit status {proc.returncode}")
    try:
        value = float(proc.stdout.strip())
    except ValueError:
        return ExternalResult(reason=f"unparseable output {proc.stdout.strip()[:60]!r}")
    if not math.isfinite(value):
        return ExternalResult(reason=f"non-finite output {value}")
    return ExternalResult(value)


# --- reports ------------------------------------------------------------


@dataclass
class EvalReport:
    label: str
    clips: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def aggregate(self):
        out = {}
        for key in NATIVE + EXTERNAL:
            vals = [c[key] for c in self.clips if c.get(key) is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self):
        return {"label": self.label, "aggregate": self.aggregate, "clips": self.clips, "meta": self.meta}


def score_clip(ref, est, rate=TARGET_RATE):
    return {"lsd": lsd(ref, est), "si_sdr": si_sdr(ref, est), "stoi": stoi(ref, est, rate)}


def evaluate_pairs(manifest_path, estimator=None, label="model", externals=None, split="test",
                   source="estimator", workers=1, meta=None):
    """Score every clip of ``split`` listed in a dataset manifest.

    ``source`` chooses the estimate: ``"estimator"`` calls ``estimator(input)``,
    ``"raw"`` uses the degraded input itself, ``"target"`` returns the target
    (a debug oracle). ``externals`` maps metric name ("pesq"/"nisqa") to a
    command line.
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    externals = {k: v for k, v in (externals or {}).items() if v}
    clips = [c for c in manifest["clips"] if c["split"] == split]
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        jobs = []
        for clip in clips:
            ref, rate = read_wav(root / clip["target"])
            inp, _ = read_wav(root / clip["input"])
            if source == "raw":
                est = inp
            elif source == "target":
                est = ref
            else:
                est = np.asarray(estimator(inp), dtype=np.float64)
            # score the float32 estimate that external scorers will also see
            est = est.astype(np.float32).astype(np.float64)
            row = {"id": clip["id"], **score_clip(ref, est, rate)}
            if externals:
                est_path = Path(tmp) / f"{clip['id']}.est.wav"
                write_wav(est_path, est, rate)
                for name, cmd in externals.items():
                    jobs.append((row, name, cmd, root / clip["target"], est_path))
            rows.append(row)
        if jobs:
            with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                results = list(pool.map(lambda j: run_external(j[2], j[3], j[4]), jobs))
            for (row, name, *_), res in zip(jobs, results):
                row[name] = res.value
                if res.reason:
                    row.setdefault("absent", {})[name] = res.reason
                    log.warning("%s absent for %s: %s", name, row["id"], res.reason)
    info = {
        "split": split,
        "source": source,
        "native_metrics": list(NATIVE),
        "external_metrics": sorted(externals),
        "lsd_stft": MODEL_STFT.to_dict(),
        "profile": manifest.get("profile"),
    }
    info.update(meta or {})
    return EvalReport(label, rows, info)


def format_table(reports):
    """Aligned text table, one row per report, columns L N S P ST."""
    head = ["", *[abbr for _, abbr in TABLE_COLUMNS]]
    body = []
    for r in reports:
        agg = r.aggregate
        body.append([r.label, *["--" if agg[k] is None else f"{agg[k]:.2f}" for k, _ in TABLE_COLUMNS]])
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths))) for row in [head, *body]]
    return "\n".join(lines) + "\n"


def per_clip_csv(reports):
    buf = io.StringIO()
    cols = ["label", "id", *[k for k, _ in TABLE_COLUMNS]]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        for c in r.clips:
            w.writerow([r.label, c["id"], *["" if c.get(k) is None else repr(float(c[k])) for k, _ in TABLE_COLUMNS]])
    return buf.getvalue()


def write_report(reports, out_dir, figures=True):
    """Write report.json, report.txt and per_clip.csv (plus figures) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(format_table(reports))
    (out / "per_clip.csv").write_text(per_clip_csv(reports))
    if figures:
        from .plotting import plot_metric_bars

        plot_metric_bars(reports, out / "metrics.png")
    return out
