"""Per-stage training and cascaded sampling with once-sampled fixed noise.

Training (per stage): draw eps and t ~ U(1..T), build the stage target
x~0, run the forward process, and regress the denoiser onto x~0 with MSE.
Sampling: all noise fields for every stage are sampled up front from the
master seed and frozen for the session's lifetime, so sketch edits change
only what the edit implies and full replays are byte-identical.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import bridge
from .core import ImageGrid, SeededRng, as_array
from .degrade import DegradationPlan, make_plan, overlay
from .denoiser import Adam, Denoiser
from .schedule import NoiseSchedule, make_schedule

STAGE_CHANNELS = {"sketch": 1, "palette": 3, "detailed": 3}

# fixed rng stream ids so evaluation order never changes draws
_STREAM_SHUFFLE = 1
_STREAM_TIMESTEPS = 2
_STREAM_NOISE = 3
_STREAM_DEGRADE = 4
_STREAM_AUGMENT = 5
_STREAM_TRUNC = 6
_STREAM_STAGE_BASE = 16


@dataclass(frozen=True)
class StageSpec:
    index: int
    kind: str
    schedule: NoiseSchedule
    plan: DegradationPlan
    y_source: str
    preset: str = "small"

    def __post_init__(self):
        if self.kind not in STAGE_CHANNELS:
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.y_source not in ("black-image", "previous-output",
                                 "previous-overlay"):
            raise ValueError(f"unknown y_source {self.y_source!r}")
        if self.index == 1 and self.y_source != "black-image":
            raise ValueError("stage 1 must start from a black image")

    @property
    def T(self):
        return self.schedule.T

    @property
    def channels(self):
        return STAGE_CHANNELS[self.kind]

    @property
    def in_channels(self):
        # denoiser sees concat(x_t, y); y lives in the x space
        return 2 * self.channels


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    cutout_range: tuple = (0.0, 0.0)
    dropout_range: tuple = (0.0, 0.0)
    truncation_training: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for lo, hi in (self.cutout_range, self.dropout_range):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError("augmentation ranges must satisfy 0<=lo<=hi<=1")


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    steps: int | None = None          # per-stage sampling steps (None: all T)
    trunc_s: int = 0                  # stage-1 truncation stop for the handoff
    coefficient_source: str = "oracle-derived"


@dataclass
class SessionState:
    session_id: str
    specs: list
    sampler: SamplerConfig
    canvas: int
    noise: list            # per stage: (T_i + 1, 1, H, W, C_i)
    trunc_noise: np.ndarray
    x_inter: list = field(default_factory=list)
    edit_log: list = field(default_factory=list)

    @property
    def n_stages(self):
        return len(self.specs)


def default_stage_specs(n_stages=2, T=10, preset="small",
                        stage1_peak=0.05):
    """2-stage (sketch, detailed) or 3-stage (sketch, palette, detailed)."""
    if n_stages not in (2, 3):
        raise ValueError("pipeline has 2 or 3 stages")
    sched1 = make_schedule("linear", T, stage1_peak)
    specs = [StageSpec(1, "sketch", sched1,
                       make_plan("sketch", T, alpha=sched1.alpha),
                       "black-image", preset)]
    if n_stages == 3:
        specs.append(StageSpec(2, "palette", make_schedule("bridge", T, 1.0),
                               make_plan("palette", T), "previous-output",
                               preset))
        specs.append(StageSpec(3, "detailed", make_schedule("bridge", T, 1.0),
                               make_plan("detailed", T), "previous-overlay",
                               preset))
    else:
        specs.append(StageSpec(2, "detailed", make_schedule("bridge", T, 1.0),
                               make_plan("detailed", T), "previous-output",
                               preset))
    return specs


def _to_condition_space(sketch, channels):
    """Replicate a 1-channel sketch across the stage's channel count."""
    arr = np.asarray(sketch)
    if arr.shape[-1] == channels:
        return arr
    return np.repeat(arr, channels, axis=-1)


# --- batched forward process -------------------------------------------------

def batch_tilde_x0(spec, x0, t, rng):
    """Vectorized stage target for a batch: x0 (B,H,W,C), t (B,)."""
    if spec.kind == "detailed":
        return x0
    if spec.kind == "sketch":
        kappa = spec.plan.kappa[t][:, None, None, None]
        keep = rng.uniform(size=x0.shape) < kappa
        return np.where(keep & (x0 == 1.0), 1.0, 0.0)
    # palette: group by kernel size
    out = np.empty_like(x0)
    kernels_t = spec.plan.kernel[t]
    from .degrade import pixelate
    for i in range(x0.shape[0]):
        out[i] = pixelate(x0[i], int(kernels_t[i])).data
    return out


def batch_forward(spec, x0, y, t, rng):
    """Vectorized bridge forward: returns (x_t, x~0), both (B,H,W,C)."""
    tilde = batch_tilde_x0(spec, x0, t, rng)
    a = spec.schedule.alpha[t][:, None, None, None]
    s2 = spec.schedule.sigma2[t][:, None, None, None]
    if spec.kind == "sketch":
        eps = rng.normal((x0.shape[0], x0.shape[1], x0.shape[2], 1))
        eps = np.repeat(eps, x0.shape[3], axis=3)
    else:
        eps = rng.normal(x0.shape)
    xt = a * tilde + (1.0 - a) * y + np.sqrt(s2) * eps
    return xt, tilde


# --- condition augmentation / truncation --------------------------------------

def augment_condition(cond, cfg, rng):
    """Cutout + white-pixel dropout on a binary sketch; never adds white."""
    arr = as_array(cond)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("condition must be a binary sketch")
    h, w, _ = arr.shape
    out = arr.copy()
    lo, hi = cfg.cutout_range
    if hi > 0.0:
        frac = float(rng.uniform(lo, hi))
        if frac > 0.0:
            side_h = max(1, int(round(np.sqrt(frac) * h)))
            side_w = max(1, int(round(np.sqrt(frac) * w)))
            r0 = int(rng.integers(0, h - side_h + 1))
            c0 = int(rng.integers(0, w - side_w + 1))
            out[r0:r0 + side_h, c0:c0 + side_w] = 0.0
    lo, hi = cfg.dropout_range
    if hi > 0.0:
        frac = float(rng.uniform(lo, hi))
        drop = rng.uniform(size=out.shape) < frac
        out = np.where(drop, 0.0, out)
    return ImageGrid(out)


def truncate_condition(cond, s, stage1_spec, rng):
    """Condition as it would look had stage 1 stopped at step s.

    s may be "random" (training mode: s ~ U(0, T1)). Returns a 1-channel
    field; s = 0 is the identity.
    """
    T1 = stage1_spec.T
    if isinstance(s, str):
        if s != "random":
            raise ValueError("s must be an int or 'random'")
        s = int(rng.integers(0, T1 + 1))
    s = int(s)
    if not (0 <= s <= T1):
        raise ValueError(f"s={s} out of range [0, {T1}]")
    arr = as_array(cond)
    if s == 0:
        return ImageGrid(arr, role="field")
    black = np.zeros_like(arr)
    return bridge.forward_sample(arr, black, s, stage1_spec.schedule,
                                 "sketch", stage1_spec.plan, rng)


# --- training ------------------------------------------------------------------

def stage_training_pairs(dataset, spec):
    """Teacher-forced (x0, raw sketch condition) arrays for one stage."""
    if spec.kind == "sketch":
        return dataset.sketch, None
    if spec.kind == "palette":
        return dataset.palette, dataset.sketch
    return dataset.rgb, dataset.sketch


def _build_condition(spec, sketch_cond, palette, cfg, stage1_spec, rng):
    """Per-sample condition y for stages > 1, in the stage's channel space."""
    cond = ImageGrid(sketch_cond)
    if cfg is not None and (cfg.cutout_range[1] > 0 or cfg.dropout_range[1] > 0):
        cond = augment_condition(cond, cfg, rng)
    # only the detailed stage's sketch condition is ever truncated
    if (cfg is not None and cfg.truncation_training and spec.kind == "detailed"
            and spec.y_source == "previous-output" and stage1_spec is not None):
        cond = truncate_condition(cond, "random", stage1_spec, rng)
    arr = cond.data if isinstance(cond, ImageGrid) else cond
    if spec.y_source == "previous-overlay":
        return overlay(ImageGrid(np.clip(np.round(arr), 0, 1)),
                       ImageGrid(palette)).data
    return _to_condition_space(arr, spec.channels)


def train_stage(dataset, spec, cfg, stage1_spec=None, denoiser=None,
                dtype=np.float32, progress=None):
    """Train one stage's denoiser; returns (denoiser, per-epoch mean losses)."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    x0_all, sketch_all = stage_training_pairs(dataset, spec)
    root = SeededRng(cfg.seed, 0)
    rng_shuffle = root.split(_STREAM_SHUFFLE)
    rng_t = root.split(_STREAM_TIMESTEPS)
    rng_noise = root.split(_STREAM_NOISE)
    rng_aug = root.split(_STREAM_AUGMENT)
    if denoiser is None:
        denoiser = Denoiser(spec.preset, spec.in_channels, spec.channels,
                            seed=cfg.seed, dtype=dtype)
    opt = Adam(denoiser.params, learning_rate=cfg.learning_rate)
    losses = []
    T = spec.T
    for epoch in range(cfg.epochs):
        order = rng_shuffle.shuffle_index(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x0 = x0_all[idx]
            if spec.kind == "sketch":
                y = np.zeros_like(x0)
            else:
                y = np.stack([
                    _build_condition(spec, sketch_all[i],
                                     dataset.palette[i], cfg, stage1_spec,
                                     rng_aug)
                    for i in idx])
            t = rng_t.integers(1, T + 1, size=len(idx))
            xt, tilde = batch_forward(spec, x0, y, t, rng_noise)
            loss, grads = denoiser.loss_and_grads(xt, y, t, tilde)
            if not np.isfinite(loss):
                raise FloatingPointError("training loss is not finite")
            opt.step(denoiser.params, grads)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        if progress is not None:
            progress(epoch, losses[-1])
    return denoiser, losses


# --- sampling ------------------------------------------------------------------

def sampling_grid(T, steps=None):
    """Even-stride descending t grid T .. 0 with `steps` transitions."""
    if steps is None or steps >= T:
        steps = T
    if steps < 1:
        raise ValueError("steps must be >= 1")
    grid = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))
    return grid[::-1]  # T .. 0


def run_stage(denoiser, spec, y_end, y_cond, noise, steps=None, stop_at=0,
              source="oracle-derived", collect_trajectory=False):
    """Reverse-sample one stage for a batch.

    y_end/y_cond: (B,H,W,C) bridge endpoint and denoiser condition (equal in
    this pipeline). noise: (T+1, B, H, W, C) frozen fields; noise[t] is used
    for the step arriving at t. Returns x at the first grid point <= stop_at;
    at stop_at == 0 the result is clamped, and for the sketch stage decoded
    to binary by sampling each pixel against the frozen t=0 noise field
    (the clamped chain value is the pixel's white probability; sigma2_0 = 0
    means noise[0] is never consumed by the reverse steps, so reusing it
    keeps replays byte-identical).
    """
    sched = spec.schedule
    grid = sampling_grid(sched.T, steps)
    if not (0 <= stop_at <= sched.T):
        raise ValueError(f"stop_at={stop_at} out of range")
    x = y_end + np.sqrt(sched.sigma2[sched.T]) * noise[sched.T]
    traj = [(sched.T, x)] if collect_trajectory else None
    if stop_at >= sched.T:
        return (x, traj) if collect_trajectory else x
    for t_hi, t_lo in zip(grid[:-1], grid[1:]):
        x0_hat = np.clip(denoiser.forward(x, y_cond, int(t_hi)), 0.0, 1.0)
        coeff = bridge.coefficients_between(sched, int(t_hi), int(t_lo), source)
        x = coeff.c_xt * x + coeff.c_x0 * x0_hat + coeff.c_y * y_end
        if coeff.variance > 0.0:
            x = x + np.sqrt(coeff.variance) * noise[t_lo]
        if collect_trajectory:
            traj.append((int(t_lo), x))
        if t_lo <= stop_at:
            break
    if stop_at == 0:
        x = np.clip(x, 0.0, 1.0)
        if spec.kind == "sketch":
            uniform = ndtr(noise[0])
            x = (uniform < x).astype(np.float64)
    return (x, traj) if collect_trajectory else x


def _stage_noise(spec, rng, batch, canvas):
    shape = (spec.T + 1, batch, canvas, canvas)
    if spec.kind == "sketch":
        eps = rng.normal(shape + (1,))
        return np.repeat(eps, spec.channels, axis=4) \
            if spec.channels > 1 else eps
    return rng.normal(shape + (spec.channels,))


def sample_noise_fields(specs, seed, batch, canvas):
    root = SeededRng(seed, 0)
    noise = [_stage_noise(spec, root.split(_STREAM_STAGE_BASE + i), batch,
                          canvas)
             for i, spec in enumerate(specs)]
    trunc_noise = root.split(_STREAM_TRUNC).normal(
        (batch, canvas, canvas, 1))
    return noise, trunc_noise


def _handoff_condition(spec, prev_sketch, prev_palette, sampler, specs,
                       trunc_noise, seed):
    """Condition for a stage > 1 from the stored upstream outputs."""
    if spec.y_source == "previous-overlay":
        if prev_palette is None:
            raise ValueError("previous-overlay requires a palette stage")
        return np.stack([overlay(ImageGrid(s), ImageGrid(p)).data
                         for s, p in zip(prev_sketch, prev_palette)])
    cond = prev_sketch
    if spec.kind == "detailed" and sampler.trunc_s > 0:
        s = int(sampler.trunc_s)
        stage1 = specs[0]
        if s > stage1.T:
            raise ValueError(f"trunc_s={s} exceeds stage-1 T={stage1.T}")
        # same marginal as stopping stage 1 at step s, but a deterministic
        # function of the (possibly edited) clean sketch and frozen noise
        rng_drop = SeededRng(seed, _STREAM_DEGRADE)
        kappa = stage1.plan.kappa[s]
        keep = rng_drop.uniform(size=cond.shape) < kappa
        dropped = np.where(keep & (cond == 1.0), 1.0, 0.0)
        a, s2 = stage1.schedule.alpha[s], stage1.schedule.sigma2[s]
        cond = a * dropped + np.sqrt(s2) * trunc_noise
    return _to_condition_space(cond, spec.channels)


def run_stage_index(session, denoiser, i):
    """Compute stage i's output from the session's frozen noise and the
    already-present upstream outputs; appends to x_inter."""
    specs = session.specs
    sampler = session.sampler
    if len(session.x_inter) != i - 1:
        raise ValueError(f"stage {i} needs exactly stages 1..{i - 1} done, "
                         f"have {len(session.x_inter)}")
    spec = specs[i - 1]
    if spec.kind == "sketch":
        batch = session.noise[0].shape[1]
        y = np.zeros((batch, session.canvas, session.canvas, 1))
    else:
        prev_sketch = session.x_inter[0]
        prev_palette = session.x_inter[1] if (len(specs) == 3
                                              and i == 3) else None
        y = _handoff_condition(spec, prev_sketch, prev_palette, sampler,
                               specs, session.trunc_noise,
                               session.sampler.seed)
    out = run_stage(denoiser, spec, y, y, session.noise[i - 1],
                    steps=sampler.steps, source=sampler.coefficient_source)
    session.x_inter.append(out)
    return out


def _run_stages_from(session, denoisers, start_index):
    """(Re)compute stage outputs start_index..N using the frozen noise."""
    del session.x_inter[start_index - 1:]
    for i in range(start_index, len(session.specs) + 1):
        run_stage_index(session, denoisers[i - 1], i)
    return session


def create_session(specs, sampler, canvas=32, batch=1, session_id=None):
    """Freeze all per-stage noise up front; no stages are run yet."""
    if sampler.trunc_s > specs[0].T:
        raise ValueError(f"trunc_s={sampler.trunc_s} exceeds stage-1 "
                         f"T={specs[0].T}")
    if sampler.steps is not None and sampler.steps > min(s.T for s in specs):
        raise ValueError(f"steps={sampler.steps} exceeds a trained T")
    noise, trunc_noise = sample_noise_fields(specs, sampler.seed, batch,
                                             canvas)
    return SessionState(
        session_id=session_id or f"session-{sampler.seed}",
        specs=list(specs), sampler=sampler, canvas=canvas,
        noise=noise, trunc_noise=trunc_noise)


def run_pipeline(denoisers, specs, sampler, canvas=32, batch=1,
                 session_id=None):
    """Alg.-2 style sequential sampling; returns a SessionState."""
    if len(denoisers) != len(specs):
        raise ValueError("one denoiser per stage required")
    session = create_session(specs, sampler, canvas, batch, session_id)
    return _run_stages_from(session, denoisers, 1)


def resume_from_edit(session, denoisers, stage_index, edited):
    """Replace stage `stage_index`'s output and rerun everything downstream
    with the session's original noise. `stage_index` may also name the next
    not-yet-run stage (wholesale replacement, e.g. a user-provided sketch)."""
    j = int(stage_index)
    if not (1 <= j <= min(len(session.x_inter) + 1, len(session.specs))):
        raise ValueError(f"stage {j} cannot be edited yet")
    spec = session.specs[j - 1]
    arr = as_array(edited)
    if arr.ndim == 3:
        arr = arr[None]
    batch = session.noise[0].shape[1]
    expected = (batch, session.canvas, session.canvas, spec.channels)
    if arr.shape != expected:
        raise ValueError(f"edited image shape {arr.shape} does not match "
                         f"{expected}")
    if spec.kind == "sketch" and not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("edited sketch must be binary")
    del session.x_inter[j - 1:]
    session.x_inter.append(arr.copy())
    session.edit_log.append({"stage": j, "timestamp": time.time()})
    if denoisers is not None and j < len(session.specs):
        _run_stages_from(session, denoisers, j + 1)
    return session


# --- session persistence --------------------------------------------------------

def save_session(session, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "session_id": session.session_id,
        "canvas": session.canvas,
        "sampler": {
            "seed": session.sampler.seed,
            "steps": session.sampler.steps,
            "trunc_s": session.sampler.trunc_s,
            "coefficient_source": session.sampler.coefficient_source,
        },
        "stages": [{"index": s.index, "kind": s.kind,
                    "schedule_kind": s.schedule.kind, "T": s.T,
                    "peak_variance": s.schedule.peak_variance,
                    "y_source": s.y_source, "preset": s.preset}
                   for s in session.specs],
        "n_outputs": len(session.x_inter),
        "edit_log": session.edit_log,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    for i, arr in enumerate(session.noise):
        np.save(os.path.join(out_dir, f"noise_{i + 1}.npy"), arr)
    np.save(os.path.join(out_dir, "trunc_noise.npy"), session.trunc_noise)
    for i, arr in enumerate(session.x_inter):
        np.save(os.path.join(out_dir, f"stage_{i + 1}.npy"), arr)


def load_session(out_dir, specs):
    with open(os.path.join(out_dir, "manifest.json")) as f:
        manifest = json.load(f)
    sampler = SamplerConfig(**manifest["sampler"])
    noise = [np.load(os.path.join(out_dir, f"noise_{i + 1}.npy"))
             for i in range(len(specs))]
    trunc_noise = np.load(os.path.join(out_dir, "trunc_noise.npy"))
    session = SessionState(session_id=manifest["session_id"], specs=list(specs),
                           sampler=sampler, canvas=manifest["canvas"],
                           noise=noise, trunc_noise=trunc_noise,
                           edit_log=manifest["edit_log"])
    for i in range(manifest["n_outputs"]):
        session.x_inter.append(
            np.load(os.path.join(out_dir, f"stage_{i + 1}.npy")))
    return session
