"""Paired dataset preparation and loading."""

import hashlib
import json
import logging
import math
import zlib
from pathlib import Path

import numpy as np

from .audio import TARGET_RATE, read_wav, resample, write_wav
from .degrade import build_pair, clip_rng

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def speaker_of(rel_path):
    """Speaker id: first directory component, else the filename prefix before '_' or '-'."""
    rel = Path(rel_path)
    if len(rel.parts) > 1:
        return rel.parts[0]
    stem = rel.stem
    for sep in ("_", "-"):
        if sep in stem:
            return stem.split(sep)[0]
    return None


def clip_id_of(rel_path):
    return str(Path(rel_path).with_suffix("")).replace("/", "__").replace("\\", "__")


def assign_splits(speakers, valid_fraction=0.1, test_fraction=0.1, test_speakers=None):
    """Map each speaker to train/valid/test so that no speaker spans two splits.

    Speakers are ordered by a stable hash; at least one goes to test when there
    are two or more. ``test_speakers`` pins the held-out set explicitly.
    """
    uniq = sorted(set(speakers), key=lambda s: (zlib.crc32(s.encode()), s))
    out = {}
    if test_speakers:
        held = set(test_speakers)
        rest = [s for s in uniq if s not in held]
        n_valid = int(math.floor(len(uniq) * valid_fraction))
        for s in held & set(uniq):
            out[s] = "test"
    else:
        n_test = max(1 if len(uniq) > 1 and test_fraction > 0 else 0, int(round(len(uniq) * test_fraction)))
        n_valid = int(math.floor(len(uniq) * valid_fraction))
        for s in uniq[:n_test]:
            out[s] = "test"
        rest = uniq[n_test:]
    for i, s in enumerate(rest):
        out[s] = "valid" if i < n_valid else "train"
    return out


def prepare_dataset(corpus, out_dir, profile, valid_fraction=0.1, test_fraction=0.1, test_speakers=None):
    """Degrade every WAV under ``corpus`` into input/target pairs and write a manifest.

    The corpus directory is only read. Unreadable files are skipped and listed
    in the manifest. Output bytes depend only on (corpus, profile).
    """
    corpus, out_dir = Path(corpus), Path(out_dir)
    files = sorted(p for p in corpus.rglob("*") if p.suffix.lower() == ".wav" and p.is_file())
    pairs_dir = out_dir / "pairs"
    clips, skipped = [], []
    for path in files:
        rel = path.relative_to(corpus).as_posix()
        try:
            x, rate = read_wav(path)
            if x.size == 0 or not np.all(np.isfinite(x)):
                raise ValueError("empty or non-finite audio")
        except Exception as exc:  # scipy raises several types for corrupt files
            log.warning("skipping %s: %s", rel, exc)
            skipped.append({"file": rel, "reason": str(exc)})
            continue
        cid = clip_id_of(rel)
        inp, tgt = build_pair(resample(x, rate, TARGET_RATE), profile, clip_rng(profile.seed, cid), cid)
        in_path = pairs_dir / f"{cid}.input.wav"
        tgt_path = pairs_dir / f"{cid}.target.wav"
        write_wav(in_path, inp, profile.target_rate)
        write_wav(tgt_path, tgt, profile.target_rate)
        clips.append(
            {
                "id": cid,
                "source": rel,
                "source_rate": rate,
                "speaker": speaker_of(rel),
                "input": in_path.relative_to(out_dir).as_posix(),
                "target": tgt_path.relative_to(out_dir).as_posix(),
                "input_sha256": sha256(in_path),
                "target_sha256": sha256(tgt_path),
            }
        )
    if not clips:
        raise ValueError(f"no readable WAV files under {corpus}")
    speakers = [c["speaker"] or c["id"] for c in clips]
    split = assign_splits(speakers, valid_fraction, test_fraction, test_speakers)
    for c, s in zip(clips, speakers):
        c["split"] = split[s]
    manifest = {
        "version": MANIFEST_VERSION,
        "profile": profile.to_dict(),
        "seed": profile.seed,
        "sample_rate": profile.target_rate,
        "clip_samples": profile.clip_samples,
        "counts": {
            "clips": len(clips),
            "skipped": len(skipped),
            **{k: sum(c["split"] == k for c in clips) for k in ("train", "valid", "test")},
        },
        "clips": clips,
        "skipped": skipped,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_split(manifest_path, split):
    """Return (ids, inputs, targets) float32 arrays for one split."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    clips = [c for c in manifest["clips"] if c["split"] == split]
    ids = [c["id"] for c in clips]
    inputs = np.stack([read_wav(root / c["input"])[0] for c in clips]).astype(np.float32) if clips else None
    targets = np.stack([read_wav(root / c["target"])[0] for c in clips]).astype(np.float32) if clips else None
    return ids, inputs, targets
