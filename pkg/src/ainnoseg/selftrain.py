"""Teacher/student self-training with a resumable on-disk state.

Step sequence for ``rounds = R``::

    teacher, (pseudo_r, student_r, finetune_r) for r = 1..R

The finetuned student of round r is the teacher of round r+1, and each
round's pseudo-labelled set replaces the previous one. Every step writes its
artifacts under the run directory and then rewrites ``state.json`` with the
SHA-256 of each artifact, so an interrupted run resumes from the next step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .augment import Sample
from .errors import ConfigError, ContractError, IntegrityError
from .inference import InferenceConfig, multiscale_infer
from .metrics import ConfusionMatrix, evaluate
from .model import ModelConfig, SegModel
from .reporting import write_loss_csv
from .seeding import derive_seed
from .tensor import Tensor
from .train import TrainConfig, train

log = logging.getLogger(__name__)

STATE_FILE = "state.json"
IGNORE_INDEX = 255


@dataclass
class SelfTrainConfig:
    rounds: int = 2
    student_steps: int | None = None  # None: same as the teacher
    finetune_steps: int | None = None
    finetune_lr_scale: float = 0.5
    finetune_split: str = "train"  # or "all" (train + pseudo pairs)
    pseudo_threshold: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.finetune_split not in ("train", "all"):
            raise ConfigError(f"finetune_split must be 'train' or 'all', got {self.finetune_split!r}")
        if self.pseudo_threshold is not None and not 0.0 <= self.pseudo_threshold < 1.0:
            raise ConfigError(f"pseudo_threshold must lie in [0, 1), got {self.pseudo_threshold}")


@dataclass
class SelfTrainState:
    round: int = 0
    teacher_checkpoint: str | None = None
    student_checkpoint: str | None = None
    pseudo_dataset: str | None = None
    round_scores: list = field(default_factory=list)  # [round, score] pairs
    teacher_score: float | None = None
    seed: int = 0
    completed: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)  # relative path -> sha256
    fingerprint: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SelfTrainState":
        return cls(**json.loads(text))


def step_names(rounds: int) -> list[str]:
    names = ["teacher"]
    for r in range(1, rounds + 1):
        names += [f"pseudo{r}", f"student{r}", f"finetune{r}"]
    return names


# --------------------------------------------------------------------------- #
# building blocks
# --------------------------------------------------------------------------- #
def load_model(path, cfg: ModelConfig) -> SegModel:
    state = io.load_checkpoint(path)
    return SegModel(cfg, {k: Tensor(v, requires_grad=True) for k, v in state.items()})


def pseudo_label(teacher: SegModel, unlabeled, inf_cfg: InferenceConfig, threshold: float | None = None) -> list[Sample]:
    """One sample per input image, labelled with the teacher's fused argmax.

    With ``threshold`` set, pixels whose fused top probability falls below it
    become ignore pixels.
    """
    out = []
    for k, item in enumerate(unlabeled):
        image = item.image if isinstance(item, Sample) else item
        sid = item.id if isinstance(item, Sample) else f"unlabeled{k:05d}"
        labels, probs = multiscale_infer(teacher, image, inf_cfg)
        if threshold is not None:
            labels = np.where(probs.max(axis=0) >= threshold, labels, IGNORE_INDEX).astype(np.uint8)
        out.append(Sample(image.copy(), labels, sid))
    return out


def score_model(model: SegModel, samples, inf_cfg: InferenceConfig) -> dict:
    cm = ConfusionMatrix(model.cfg.num_classes)
    for s in samples:
        pred, _ = multiscale_infer(model, s.image, inf_cfg)
        cm.update(pred, s.labels)
    return evaluate(cm)


def _fingerprint(model_cfg, tc, st_cfg, inf_cfg, train_set, unlabeled) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([model_cfg.to_dict(), repr(tc), repr(st_cfg), repr(inf_cfg)], sort_keys=True).encode())
    for s in list(train_set) + list(unlabeled):
        h.update(s.image.tobytes())
        h.update(s.labels.tobytes())
    return h.hexdigest()


class SelfTrainer:
    """Drives the step sequence and owns the run directory."""

    def __init__(self, run_dir, model_cfg: ModelConfig, tc: TrainConfig, st_cfg: SelfTrainConfig,
                 inf_cfg: InferenceConfig, train_set, unlabeled, held_out=None):
        self.run_dir = Path(run_dir)
        self.model_cfg = model_cfg
        self.tc = tc
        self.st = st_cfg
        self.inf = inf_cfg
        self.train_set = list(train_set)
        self.unlabeled = [u if isinstance(u, Sample) else Sample(u, np.full(u.shape[:2], IGNORE_INDEX, np.uint8), f"unlabeled{k:05d}")
                          for k, u in enumerate(unlabeled)]
        self.held_out = list(held_out) if held_out is not None else self.train_set
        if not self.train_set:
            raise ConfigError("self-training needs a non-empty labelled set")
        self.fingerprint = _fingerprint(model_cfg, tc, st_cfg, inf_cfg, self.train_set, self.unlabeled)

    # persistence ----------------------------------------------------------
    @property
    def state_path(self) -> Path:
        return self.run_dir / STATE_FILE

    def _record(self, state: SelfTrainState, *paths: Path) -> None:
        for p in paths:
            files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
            for q in files:
                state.artifacts[q.relative_to(self.run_dir).as_posix()] = io.file_digest(q)
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(state.to_json())
        tmp.replace(self.state_path)

    def load_state(self) -> SelfTrainState:
        try:
            state = SelfTrainState.from_json(self.state_path.read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise IntegrityError(f"{self.state_path}: unreadable state ({exc})") from exc
        for rel, digest in state.artifacts.items():
            path = self.run_dir / rel
            if not path.is_file():
                raise IntegrityError(f"resume: artifact {rel} is missing")
            if io.file_digest(path) != digest:
                raise IntegrityError(f"resume: artifact {rel} fails its checksum")
        if state.fingerprint != self.fingerprint:
            raise ConfigError("resume: configuration or data differ from the interrupted run")
        return state

    # steps ----------------------------------------------------------------
    def _train(self, name: str, data, tc: TrainConfig, init: SegModel | None) -> Path:
        tc = replace(tc, seed=derive_seed(self.st.seed, name))
        result = train(self.model_cfg, data, tc, init)
        ckpt = self.run_dir / f"{name}.aseg"
        io.save_checkpoint(ckpt, result.model.state())
        write_loss_csv(self.run_dir / "logs" / f"{name}.csv", result.losses, result.head_losses)
        return ckpt

    def _score(self, ckpt: Path) -> float:
        return score_model(load_model(ckpt, self.model_cfg), self.held_out, self.inf)["score"]

    def run_step(self, state: SelfTrainState, name: str) -> None:
        if name == "teacher":
            ckpt = self._train("teacher", self.train_set, self.tc, None)
            state.teacher_checkpoint = ckpt.name
            state.teacher_score = self._score(ckpt)
            self._finish(state, name, ckpt, self.run_dir / "logs")
            return
        m = re.fullmatch(r"(pseudo|student|finetune)(\d+)", name)
        if m is None:
            raise ContractError(f"unknown step {name!r}")
        kind, r = m.group(1), int(m.group(2))
        if kind == "pseudo":
            if state.teacher_checkpoint is None:
                raise ContractError("pseudo-labelling requires a teacher checkpoint")
            teacher = load_model(self.run_dir / state.teacher_checkpoint, self.model_cfg)
            samples = pseudo_label(teacher, self.unlabeled, self.inf, self.st.pseudo_threshold)
            out = self.run_dir / f"pseudo_r{r}"
            io.save_dataset(out, samples)
            state.round = r
            state.pseudo_dataset = out.name
            state.student_checkpoint = None
            self._finish(state, name, out)
        elif kind == "student":
            if state.pseudo_dataset is None or state.round != r:
                raise ContractError(f"student training in round {r} requires that round's pseudo labels")
            pseudo = io.load_dataset(self.run_dir / state.pseudo_dataset, self.model_cfg.num_classes)
            tc = replace(self.tc, steps=self.st.student_steps or self.tc.steps)
            ckpt = self._train(name, pseudo, tc, None)
            state.student_checkpoint = ckpt.name
            self._finish(state, name, ckpt, self.run_dir / "logs")
        else:
            if state.student_checkpoint is None:
                raise ContractError("finetuning requires a student checkpoint")
            student = load_model(self.run_dir / state.student_checkpoint, self.model_cfg)
            data = self.train_set
            if self.st.finetune_split == "all":
                data = data + io.load_dataset(self.run_dir / state.pseudo_dataset, self.model_cfg.num_classes)
            tc = replace(self.tc, steps=self.st.finetune_steps or self.tc.steps, lr=self.tc.lr * self.st.finetune_lr_scale)
            ckpt = self._train(name, data, tc, student)
            state.teacher_checkpoint = ckpt.name
            state.round_scores.append([r, self._score(ckpt)])
            self._finish(state, name, ckpt, self.run_dir / "logs")

    def _finish(self, state: SelfTrainState, name: str, *paths: Path) -> None:
        state.completed.append(name)
        self._record(state, *paths)
        log.info("self-train step %s done", name)

    def run(self, max_steps: int | None = None) -> SelfTrainState:
        """Run (or resume) until all steps are done or ``max_steps`` ran."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        if self.state_path.exists():
            state = self.load_state()
        else:
            state = SelfTrainState(seed=self.st.seed, fingerprint=self.fingerprint)
            self._record(state)
        todo = step_names(self.st.rounds)
        if state.completed != todo[: len(state.completed)]:
            raise IntegrityError(f"resume: recorded steps {state.completed} do not prefix {todo}")
        done = 0
        for name in todo[len(state.completed):]:
            if max_steps is not None and done >= max_steps:
                break
            self.run_step(state, name)
            done += 1
        return state


def run_rounds(train_set, unlabeled_set, rounds: int, run_dir, model_cfg: ModelConfig, tc: TrainConfig,
               inf_cfg: InferenceConfig, st_cfg: SelfTrainConfig | None = None, held_out=None,
               max_steps: int | None = None) -> SelfTrainState:
    st_cfg = replace(st_cfg or SelfTrainConfig(), rounds=rounds)
    trainer = SelfTrainer(run_dir, model_cfg, tc, st_cfg, inf_cfg, train_set, unlabeled_set, held_out)
    return trainer.run(max_steps)
