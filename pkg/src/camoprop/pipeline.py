"""End-to-end drivers: stub warm-up, two-stage propagation training,
memory-seeded inference, and dataset evaluation.

Training protocol per sample (``frames_per_sample`` frames, default 3):
frame 1 enters memory with its ground-truth mask embedding; each middle
frame is predicted with the current memory and its *predicted* soft mask
is encoded back into memory; only the final frame's prediction is
supervised. Gradients therefore flow through the memory write of the
middle frames. The stub networks stay frozen in both propagation stages;
only warm-up updates them.

Inference seeds memory with the first frame and its ground-truth mask,
then alternates encode / propagate / decode / memory-push with FIFO
eviction. Each frame is encoded exactly once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses, metrics, netpbm, synthdata, tensorio
from . import tensor as T
from .config import RunConfig
from .memory import FrameRecord, MemoryBank
from .optim import AdamW, MultiStepLR, clip_global_norm
from .propagation import PropagationConfig, PropagationModule
from .stubs import EncoderConfig, MaskPrediction, SegmenterStubs
from .synthdata import SequenceSample, SynthConfig, TextureSpec
from .tensor import Tape, Tensor

STAGES = ("warmup", "pretrain", "main")


class DivergenceError(RuntimeError):
    """Training loss became non-finite; message carries the iteration."""


# --------------------------------------------------------------------------
# Construction helpers


def encoder_config(cfg: RunConfig, frozen: bool = True) -> EncoderConfig:
    return EncoderConfig(image_size=cfg.image_size, downscale=cfg.downscale,
                         embed_dim=cfg.embed_dim, frozen=frozen)


def prop_config(cfg: RunConfig) -> PropagationConfig:
    return PropagationConfig(embed_dim=cfg.embed_dim, attn_dim=cfg.attn_dim,
                             affinity_dim=cfg.affinity_dim,
                             grid=cfg.image_size // cfg.downscale,
                             activation=cfg.activation,
                             use_affinity=cfg.use_affinity,
                             train_pe=cfg.train_pe)


def synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(image_size=cfg.image_size,
                       texture=TextureSpec(seed=cfg.seed, octaves=cfg.noise_octaves,
                                           amplitude=cfg.texture_amplitude),
                       radius_range=(cfg.radius_lo, cfg.radius_hi),
                       motion=(cfg.motion_x, cfg.motion_y),
                       jitter_std=cfg.jitter_std,
                       sequence_length=cfg.sequence_length,
                       contrast=cfg.contrast)


def build_stubs(cfg: RunConfig) -> SegmenterStubs:
    return SegmenterStubs(encoder_config(cfg), seed=[cfg.seed, 1],
                          activation=cfg.activation, head_patch=cfg.head_patch)


def build_prop(cfg: RunConfig) -> PropagationModule:
    return PropagationModule(prop_config(cfg), seed=[cfg.seed, 2])


def loss_weights(cfg: RunConfig) -> losses.LossWeights:
    return losses.LossWeights(focal=cfg.w_focal, dice=cfg.w_dice,
                              iou_mse=cfg.w_iou)


def sample_loss_fn(cfg: RunConfig):
    weights = loss_weights(cfg)

    def fn(pred: MaskPrediction, gt: np.ndarray) -> Tensor:
        return losses.total_loss(pred, gt, weights, alpha=cfg.focal_alpha,
                                 gamma=cfg.focal_gamma, smooth=cfg.dice_smooth,
                                 threshold=cfg.bin_threshold)
    return fn


# --------------------------------------------------------------------------
# Deterministic data provisioning


def generate_train_sequences(cfg: RunConfig) -> list[SequenceSample]:
    sc = synth_config(cfg)
    return [synthdata.generate_sequence(sc, cfg.seed * 1000 + i, f"train{i:02d}")
            for i in range(cfg.train_sequences)]


def generate_holdout_sequences(cfg: RunConfig) -> list[SequenceSample]:
    sc = synth_config(cfg)
    return [synthdata.generate_sequence(sc, cfg.seed * 1000 + 500 + i,
                                        f"holdout{i:02d}")
            for i in range(cfg.holdout_sequences)]


def load_train_sequences(cfg: RunConfig) -> list[SequenceSample]:
    if cfg.data_dir:
        return synthdata.read_dataset(Path(cfg.data_dir) / "train")
    return generate_train_sequences(cfg)


def load_holdout_sequences(cfg: RunConfig) -> list[SequenceSample]:
    if cfg.data_dir:
        return synthdata.read_dataset(Path(cfg.data_dir) / "holdout")
    return generate_holdout_sequences(cfg)


def static_synth_config(cfg: RunConfig) -> SynthConfig:
    # statics play the role of the (easier) single-image pre-training corpus;
    # sequences keep the harder video contrast
    return replace(synth_config(cfg), contrast=cfg.static_contrast)


def warmup_statics(cfg: RunConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Warm-up corpus: half at the easy static contrast (so segmentation is
    learnable from scratch), half at the video contrast (so the decoder
    stays calibrated where image evidence is weak and prompts matter)."""
    half = cfg.statics_count // 2
    easy = synthdata.generate_static_set(static_synth_config(cfg), half,
                                         seed=cfg.seed * 7 + 3)
    hard = synthdata.generate_static_set(synth_config(cfg),
                                         cfg.statics_count - half,
                                         seed=cfg.seed * 7 + 5)
    return easy + hard


def pretrain_statics(cfg: RunConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pseudo-video stills for the first propagation stage, generated at the
    video contrast: weak image evidence forces the propagation pathway to
    carry the mask signal."""
    return synthdata.generate_static_set(synth_config(cfg), cfg.statics_count,
                                         seed=cfg.seed * 7 + 6)


def holdout_statics(cfg: RunConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    return synthdata.generate_static_set(static_synth_config(cfg),
                                         cfg.statics_holdout, seed=cfg.seed * 7 + 4)


# --------------------------------------------------------------------------
# Warm-up: brief supervised training of the otherwise-frozen stubs


def warmup_stubs(cfg: RunConfig, out_dir: str | Path | None = None,
                 ) -> tuple[SegmenterStubs, Path]:
    """Train encoder/mask-encoder/decoder on single-frame segmentation with
    a randomly provided noisy mask prompt, then freeze and checkpoint them.

    The prompt dropout teaches the decoder both to segment from the image
    alone and to exploit a dense prompt, so the later (frozen) stages have
    a working prompt pathway to drive.
    """
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    stubs = build_stubs(cfg)
    stubs.set_frozen(False)
    params = stubs.named_params()
    opt = AdamW(params, lr=cfg.warmup_lr, weight_decay=cfg.weight_decay,
                betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    rng = np.random.default_rng(np.random.PCG64([cfg.seed, 10]))
    statics = warmup_statics(cfg)
    loss_fn = sample_loss_fn(cfg)
    aug_ops = cfg.augment_list()
    grid = stubs.cfg.grid
    zeros_dense = np.zeros((cfg.embed_dim, grid, grid))

    iters = cfg.scaled_iterations("warmup")
    for it in range(iters):
        with Tape() as tape:
            total = None
            for _ in range(cfg.batch_size):
                frame, mask = statics[int(rng.integers(len(statics)))]
                if aug_ops:
                    s = synthdata.augment(
                        SequenceSample([frame], [mask], id="static"),
                        aug_ops, seed=int(rng.integers(2 ** 31)))
                    frame, mask = s.frames[0], s.masks[0]
                emb = stubs.encode_image(Tensor(frame))
                if rng.random() < cfg.warmup_prompt_prob:
                    prompt = synthdata.jitter_mask(mask, rng)
                    dense = stubs.encode_mask(Tensor(prompt))
                else:
                    dense = Tensor(zeros_dense)
                pred = stubs.decode(emb, dense)
                part = loss_fn(pred, mask)
                total = part if total is None else T.add(total, part)
            loss = T.scale(total, 1.0 / cfg.batch_size)
            tape.backward(loss)
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"warmup diverged at iteration {it}")
        clip_global_norm(params, cfg.grad_clip)
        opt.step()

    stubs.set_frozen(True)
    ckpt = out_dir / "checkpoints" / "warmup"
    tensorio.save_checkpoint(ckpt, stubs.named_params())
    write_stamp(out_dir, cfg, "warmup")
    return stubs, ckpt


def load_stubs(cfg: RunConfig, warmup_ckpt: str | Path) -> SegmenterStubs:
    stubs = build_stubs(cfg)
    tensorio.load_checkpoint_into(warmup_ckpt, stubs.named_params())
    stubs.set_frozen(True)
    return stubs


# --------------------------------------------------------------------------
# Propagation-stage training


@dataclass
class TrainResult:
    checkpoint: Path
    loss_history: list[float]
    lr_history: list[float]
    grad_seen: dict[str, bool]


class StageTrainer:
    """One propagation training stage; only the propagation parameters
    (those with ``requires_grad``) are updated."""

    def __init__(self, cfg: RunConfig, stage: str, stubs: SegmenterStubs,
                 prop: PropagationModule):
        if stage not in ("pretrain", "main"):
            raise ValueError(f"unknown stage {stage!r}")
        self.cfg = cfg
        self.stage = stage
        self.stubs = stubs
        self.prop = prop
        self.params = prop.named_params()
        self.trainable = {k: t for k, t in self.params.items() if t.requires_grad}
        base_lr = getattr(cfg, f"{stage}_lr")
        self.opt = AdamW(self.trainable, lr=base_lr,
                         weight_decay=cfg.weight_decay,
                         betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
        self.sched = MultiStepLR(base_lr, cfg.scaled_milestones(stage),
                                 factor=cfg.lr_factor)
        tag = 11 if stage == "pretrain" else 12
        self.rng = np.random.default_rng(np.random.PCG64([cfg.seed, tag]))
        if stage == "pretrain":
            self.statics = pretrain_statics(cfg)
            self.sequences = None
        else:
            self.statics = None
            self.sequences = load_train_sequences(cfg)
        self.loss_fn = sample_loss_fn(cfg)
        self.iteration = 0
        self.loss_history: list[float] = []
        self.lr_history: list[float] = []
        self.grad_seen = {k: False for k in self.trainable}

    # -- sampling ------------------------------------------------------
    def _sample(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        n = self.cfg.frames_per_sample
        if self.stage == "pretrain":
            frame, mask = self.statics[int(self.rng.integers(len(self.statics)))]
            pairs = [synthdata.jitter_pair(frame, mask, self.rng)
                     for _ in range(n)]
            frames = [p[0] for p in pairs]
            masks = [p[1] for p in pairs]
        else:
            seq = self.sequences[int(self.rng.integers(len(self.sequences)))]
            idx = sorted(self.rng.choice(len(seq.frames), size=n, replace=False))
            frames = [seq.frames[i] for i in idx]
            masks = [seq.masks[i] for i in idx]
        aug_ops = self.cfg.augment_list()
        if aug_ops:
            s = synthdata.augment(SequenceSample(frames, masks, id="clip"),
                                  aug_ops, seed=int(self.rng.integers(2 ** 31)))
            frames, masks = s.frames, s.masks
        return frames, masks

    def _sample_loss(self) -> Tensor:
        frames, masks = self._sample()
        bank = MemoryBank(self.cfg.memory_length, pin_first=self.cfg.pin_first)
        emb = self.stubs.encode_image(Tensor(frames[0]))
        bank.push(FrameRecord(0, emb, self.stubs.encode_mask(Tensor(masks[0]))))
        for j in range(1, len(frames) - 1):
            emb = self.stubs.encode_image(Tensor(frames[j]))
            pred = self.stubs.decode(emb, self.prop(emb, bank))
            soft = T.sigmoid(pred.logits)
            bank.push(FrameRecord(j, emb, self.stubs.encode_mask(soft)))
        emb = self.stubs.encode_image(Tensor(frames[-1]))
        pred = self.stubs.decode(emb, self.prop(emb, bank))
        return self.loss_fn(pred, masks[-1])

    # -- optimization --------------------------------------------------
    def step(self) -> float:
        lr = self.sched.lr_at(self.iteration)
        self.opt.lr = lr
        with Tape() as tape:
            total = None
            for _ in range(self.cfg.batch_size):
                part = self._sample_loss()
                total = part if total is None else T.add(total, part)
            loss = T.scale(total, 1.0 / self.cfg.batch_size)
            tape.backward(loss)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"{self.stage} diverged at iteration "
                                  f"{self.iteration}")
        for name, t in self.trainable.items():
            if t.grad is not None and np.any(t.grad != 0.0):
                self.grad_seen[name] = True
        clip_global_norm(self.trainable, self.cfg.grad_clip)
        self.opt.step()
        self.iteration += 1
        self.loss_history.append(value)
        self.lr_history.append(lr)
        return value

    def run(self, iterations: int | None = None) -> None:
        n = iterations if iterations is not None else \
            self.cfg.scaled_iterations(self.stage)
        for _ in range(n):
            self.step()

    # -- checkpointing -------------------------------------------------
    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        tensors = dict(self.params)
        tensors.update(self.opt.state_tensors())
        tensorio.save_checkpoint(directory, tensors)
        state = {
            "stage": self.stage,
            "iteration": self.iteration,
            "rng_state": self.rng.bit_generator.state,
            "opt_step_count": self.opt.step_count,
        }
        (directory / "state.json").write_text(json.dumps(state, indent=1),
                                              encoding="utf-8")
        return directory

    def restore(self, directory: str | Path) -> None:
        directory = Path(directory)
        stored = tensorio.load_checkpoint(directory)
        for name, t in self.params.items():
            t.data = stored[name].data
        self.opt.load_state_tensors(stored)
        state = json.loads((directory / "state.json").read_text(encoding="utf-8"))
        if state["stage"] != self.stage:
            raise ValueError(f"checkpoint is for stage {state['stage']!r}, "
                             f"not {self.stage!r}")
        self.iteration = state["iteration"]
        self.opt.step_count = state["opt_step_count"]
        self.rng.bit_generator.state = state["rng_state"]


def load_prop_params(cfg: RunConfig, checkpoint: str | Path,
                     prop: PropagationModule | None = None) -> PropagationModule:
    prop = prop if prop is not None else build_prop(cfg)
    stored = tensorio.load_checkpoint(checkpoint)
    for name, t in prop.named_params().items():
        t.data = stored[name].data
    return prop


def train_stage(cfg: RunConfig, stage: str, stubs: SegmenterStubs,
                prop: PropagationModule,
                out_dir: str | Path | None = None) -> TrainResult:
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    trainer = StageTrainer(cfg, stage, stubs, prop)
    trainer.run()
    ckpt = trainer.save(out_dir / "checkpoints" / stage)
    write_stamp(out_dir, cfg, stage)
    return TrainResult(checkpoint=ckpt, loss_history=trainer.loss_history,
                       lr_history=trainer.lr_history,
                       grad_seen=dict(trainer.grad_seen))


# --------------------------------------------------------------------------
# Inference


@dataclass
class InferenceTrace:
    encoder_calls: int = 0
    max_memory: int = 0


def infer_sequence(stubs: SegmenterStubs, prop: PropagationModule,
                   frames: list[np.ndarray], first_gt_mask: np.ndarray,
                   memory_length: int = 2, pin_first: bool = False,
                   trace: InferenceTrace | None = None) -> list[MaskPrediction]:
    """Semi-supervised propagation over one sequence.

    Returns one prediction per frame after the first; the first frame only
    seeds the memory with its ground-truth mask. The predicted soft mask
    (not its binarization) is what goes back into memory.
    """
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    if first_gt_mask is None:
        raise ValueError("the first frame's ground-truth mask is required")
    calls_before = stubs.image_enc.call_count
    bank = MemoryBank(memory_length, pin_first=pin_first)
    emb = stubs.encode_image(Tensor(frames[0]))
    bank.push(FrameRecord(0, emb, stubs.encode_mask(Tensor(first_gt_mask))))
    preds: list[MaskPrediction] = []
    max_mem = len(bank)
    for i, frame in enumerate(frames[1:], start=1):
        emb = stubs.encode_image(Tensor(frame))
        pred = stubs.decode(emb, prop(emb, bank))
        preds.append(pred)
        bank.push(FrameRecord(i, emb, stubs.encode_mask(Tensor(pred.probs()))))
        max_mem = max(max_mem, len(bank))
    if trace is not None:
        trace.encoder_calls = stubs.image_enc.call_count - calls_before
        trace.max_memory = max_mem
    return preds


def predict_dataset(cfg: RunConfig, stubs: SegmenterStubs,
                    prop: PropagationModule, samples: list[SequenceSample],
                    out_root: str | Path) -> None:
    """Write per-sequence predictions as PGM files; frame 1 is the seed
    ground truth (it is the protocol input, not a prediction)."""
    out_root = Path(out_root)
    for s in samples:
        seq_dir = out_root / s.id
        seq_dir.mkdir(parents=True, exist_ok=True)
        preds = infer_sequence(stubs, prop, s.frames, s.masks[0],
                               memory_length=cfg.memory_length,
                               pin_first=cfg.pin_first)
        netpbm.write_mask(seq_dir / "00001.pgm", s.masks[0])
        for i, p in enumerate(preds, start=2):
            netpbm.write_mask(seq_dir / f"{i:05d}.pgm", p.probs())


# --------------------------------------------------------------------------
# Evaluation


def evaluate_samples(cfg: RunConfig, stubs: SegmenterStubs,
                     prop: PropagationModule, samples: list[SequenceSample],
                     skip_first: bool = True,
                     ) -> tuple[list[tuple[str, metrics.MetricReport]],
                                metrics.MetricReport]:
    rows = []
    for s in samples:
        preds = infer_sequence(stubs, prop, s.frames, s.masks[0],
                               memory_length=cfg.memory_length,
                               pin_first=cfg.pin_first)
        soft = [s.masks[0]] + [p.probs() for p in preds]
        rows.append((s.id, metrics.evaluate_sequence(
            soft, s.masks, skip_first=skip_first,
            bin_threshold=cfg.bin_threshold)))
    return rows, metrics.aggregate_reports([r for _, r in rows])


def evaluate_dirs(pred_root: str | Path, gt_root: str | Path,
                  skip_first: bool = True,
                  ) -> tuple[list[tuple[str, metrics.MetricReport]],
                             metrics.MetricReport]:
    """Score prediction PGMs against a dataset directory."""
    pred_root, gt_root = Path(pred_root), Path(gt_root)
    index = gt_root / "index.txt"
    if index.exists():
        ids = [x.strip() for x in index.read_text(encoding="utf-8").splitlines()
               if x.strip()]
    else:
        ids = sorted(p.name for p in gt_root.iterdir() if p.is_dir())
    rows = []
    for sid in ids:
        gts = [netpbm.read_mask(p)
               for p in sorted((gt_root / sid / "masks").glob("*.pgm"))]
        preds = [netpbm.read_mask(p, binarize=False)
                 for p in sorted((pred_root / sid).glob("*.pgm"))]
        rows.append((sid, metrics.evaluate_sequence(preds, gts,
                                                    skip_first=skip_first)))
    return rows, metrics.aggregate_reports([r for _, r in rows])


def write_metric_files(out_dir: str | Path,
                       rows: list[tuple[str, metrics.MetricReport]],
                       aggregate: metrics.MetricReport) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = metrics.format_table(rows + [("mean", aggregate)])
    (out_dir / "metrics.tsv").write_text(table, encoding="utf-8")
    (out_dir / "metrics.kv").write_text(metrics.format_keyvalues(aggregate),
                                        encoding="utf-8")


# --------------------------------------------------------------------------
# Stamping and the full run


def write_stamp(out_dir: str | Path, cfg: RunConfig, stage: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_stamp.txt").write_text(
        f"stage={stage}\nseed={cfg.seed}\nconfig_hash={cfg.config_hash()}\n",
        encoding="utf-8")


@dataclass
class PipelineResult:
    warmup_ckpt: Path
    pretrain: TrainResult
    main: TrainResult
    stubs: SegmenterStubs
    prop: PropagationModule
    train_rows: list = field(default_factory=list)
    holdout_rows: list = field(default_factory=list)
    train_report: metrics.MetricReport | None = None
    holdout_report: metrics.MetricReport | None = None


def run_full_pipeline(cfg: RunConfig, out_dir: str | Path | None = None,
                      evaluate: bool = True) -> PipelineResult:
    """warmup -> pretrain -> main -> (optional) evaluation, all from cfg."""
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    stubs, warmup_ckpt = warmup_stubs(cfg, out_dir)
    prop = build_prop(cfg)
    pre = train_stage(cfg, "pretrain", stubs, prop, out_dir)
    main = train_stage(cfg, "main", stubs, prop, out_dir)
    result = PipelineResult(warmup_ckpt=warmup_ckpt, pretrain=pre, main=main,
                            stubs=stubs, prop=prop)
    if evaluate:
        train_seqs = load_train_sequences(cfg)
        holdout_seqs = load_holdout_sequences(cfg)
        predict_dataset(cfg, stubs, prop, train_seqs + holdout_seqs,
                        out_dir / "predictions")
        result.train_rows, result.train_report = evaluate_samples(
            cfg, stubs, prop, train_seqs)
        result.holdout_rows, result.holdout_report = evaluate_samples(
            cfg, stubs, prop, holdout_seqs)
        write_metric_files(out_dir, result.train_rows + result.holdout_rows,
                           metrics.aggregate_reports(
                               [r for _, r in result.train_rows + result.holdout_rows]))
    return result
