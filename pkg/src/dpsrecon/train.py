"""Training loop, checkpoints and waveform reconstruction."""

import logging
import math
import os
from pathlib import Path

import numpy as np
import torch

from .config import NumericError
from .loss import complex_multires_stft_loss
from .model import ModelConfig, build_model, reconstruct_waveform
from .stft import MODEL_STFT

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dpsrecon-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, net, optimizer, step, extra=None):
    """Atomically write model, BN statistics, optimizer and RNG state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": net.cfg.to_dict(),
        "model": net.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "rng": {"torch": torch.get_rng_state()},
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {ckpt.get('version')}; this build reads version {CHECKPOINT_VERSION}"
        )
    return ckpt


def model_from_checkpoint(ckpt):
    net = build_model(ModelConfig.from_dict(ckpt["model_config"]))
    net.load_state_dict(ckpt["model"])
    return net.eval()


def batch_indices(seed, step, n_items, batch_size):
    """Clip indices for 1-based ``step``: a fresh permutation per epoch, a pure function of (seed, step)."""
    per_epoch = math.ceil(n_items / batch_size)
    epoch, k = divmod(step - 1, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n_items)
    idx = perm[k * batch_size : (k + 1) * batch_size]
    if len(idx) < batch_size:
        idx = np.concatenate([idx, perm[: batch_size - len(idx)]])
    return idx


def make_optimizer(net, opt_cfg):
    return torch.optim.Adam(net.parameters(), lr=opt_cfg.get("lr", 1e-4), betas=tuple(opt_cfg.get("betas", (0.9, 0.999))))


def train(cfg, inputs, targets, checkpoint_dir=None, resume=None, max_steps=None, log_file=None):
    """Minimize the complex multi-resolution STFT loss; returns [(step, loss), ...].

    ``inputs``/``targets`` are (N, samples) float32 arrays. ``resume`` is a
    checkpoint path to continue from. A non-finite loss raises NumericError
    before any state from that step is written.
    """
    max_steps = max_steps or cfg.max_steps
    if resume:
        ckpt = load_checkpoint(resume)
        net = model_from_checkpoint(ckpt)
        opt = make_optimizer(net, cfg.optimizer)
        opt.load_state_dict(ckpt["optimizer"])
        torch.set_rng_state(ckpt["rng"]["torch"])
        start = ckpt["step"]
    else:
        net = build_model(cfg.model)
        opt = make_optimizer(net, cfg.optimizer)
        start = 0
    net.train()
    history = []
    n = len(inputs)
    log_fh = open(log_file, "a") if log_file else None
    try:
        for step in range(start + 1, max_steps + 1):
            idx = batch_indices(cfg.seed, step, n, cfg.batch_size)
            x = torch.from_numpy(inputs[idx])
            y = torch.from_numpy(targets[idx])
            est = reconstruct_waveform(net, x)
            loss = complex_multires_stft_loss(y, est, cfg.loss)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            history.append((step, value))
            if log_fh:
                log_fh.write(f"{step},{value!r}\n")
                log_fh.flush()
            if step % cfg.log_every == 0 or step == start + 1:
                log.info("step %d loss %.5f", step, value)
            if checkpoint_dir and (step % cfg.checkpoint_every == 0 or step == max_steps):
                p = save_checkpoint(Path(checkpoint_dir) / f"step_{step:06d}.pt", net, opt, step)
                save_checkpoint(Path(checkpoint_dir) / "latest.pt", net, opt, step)
                log.info("checkpoint %s", p)
    finally:
        if log_fh:
            log_fh.close()
    return net, history


class Reconstructor:
    """Callable mapping an 8 kHz waveform of any length to its reconstruction.

    The signal is cut into clips the network was built for (the last one
    zero-padded), processed in eval mode, and trimmed back to the input length.
    """

    def __init__(self, net, batch_size=4):
        self.net = net.eval()
        self.clip = (net.cfg.n_frames - 1) * MODEL_STFT.hop
        self.batch_size = batch_size

    @torch.no_grad()
    def __call__(self, wav):
        wav = np.asarray(wav, dtype=np.float32)
        n = len(wav)
        n_chunks = max(1, math.ceil(n / self.clip))
        padded = np.zeros(n_chunks * self.clip, dtype=np.float32)
        padded[:n] = wav
        chunks = torch.from_numpy(padded.reshape(n_chunks, self.clip))
        outs = [reconstruct_waveform(self.net, chunks[i : i + self.batch_size]) for i in range(0, n_chunks, self.batch_size)]
        return torch.cat(outs).reshape(-1).numpy()[:n].astype(np.float64)
