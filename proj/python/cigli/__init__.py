"""Python front end to the cigli C++ core.

Structured values come back as plain dicts and lists.
"""

from __future__ import annotations

import json
import os
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple

from . import _cigli
from ._cigli import CorpusError, EvalError, MetricsError, PipelineError, SceneError, auto_splits

__all__ = [
    "CorpusError",
    "EvalError",
    "MetricsError",
    "PipelineError",
    "SceneError",
    "Session",
    "auto_splits",
    "create_session",
    "default_config",
    "evaluate",
    "filter_caption",
    "generate",
    "inception_score",
    "run_filter",
    "synth",
    "train",
    "train_metrics",
    "verifier_scores",
]

def _config_text(config: Optional[Mapping[str, Any]]) -> str:
    return json.dumps(dict(config)) if config else ""


def filter_caption(caption: str) -> Dict[str, Any]:
    """Qualification verdict for one caption: qualified, matched_rule, reason."""
    return json.loads(_cigli.filter_caption(caption))


def default_config(preset: str = "desk", overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    return json.loads(_cigli.effective_config(_config_text(overrides), preset))


def run_filter(src: "os.PathLike[str] | str", out: "os.PathLike[str] | str") -> Dict[str, Any]:
    """Filters an NLVR2-style JSONL file; returns the statistics."""
    return json.loads(_cigli.run_filter(os.fspath(src), os.fspath(out)))


def synth(out_dir, config: Optional[Mapping[str, Any]] = None, preset: str = "desk") -> Dict[str, int]:
    return json.loads(_cigli.run_synth(_config_text(config), preset, os.fspath(out_dir)))


def train(mode: str, corpus_dir, out_dir, config: Optional[Mapping[str, Any]] = None, preset: str = "desk") -> None:
    """mode is text_only, concat or sum."""
    if mode == "metrics":
        raise ValueError("use train_metrics for the metric models")
    _cigli.run_train(_config_text(config), preset, mode, os.fspath(corpus_dir), os.fspath(out_dir))


def train_metrics(corpus_dir, out_dir, config: Optional[Mapping[str, Any]] = None, preset: str = "desk") -> None:
    _cigli.run_train(_config_text(config), preset, "metrics", os.fspath(corpus_dir), os.fspath(out_dir))


def evaluate(source, eval_jsonl, metrics_dir, out_file, config: Optional[Mapping[str, Any]] = None,
             preset: str = "desk") -> Dict[str, Any]:
    """source is a run directory, "gold" or "noise"."""
    text = _cigli.run_evaluate(_config_text(config), preset, os.fspath(source), os.fspath(eval_jsonl),
                               os.fspath(metrics_dir), os.fspath(out_file))
    return json.loads(text)


def generate(source, eval_jsonl, out_dir, seed: int = 0) -> None:
    _cigli.write_generations(os.fspath(source), os.fspath(eval_jsonl), os.fspath(out_dir), seed)


def inception_score(conditionals: Sequence[Sequence[float]], n_splits: int) -> Tuple[float, float, int]:
    """(mean, std, splits) over rows of p(y|x)."""
    return _cigli.inception_score([list(map(float, row)) for row in conditionals], n_splits)


def verifier_scores(captions: Sequence[str], accepted: Sequence[bool]) -> Dict[str, Any]:
    return _cigli.verifier_scores(list(captions), [bool(a) for a in accepted])


def create_session(eval_jsonl, generation_dirs: Mapping[str, Any], session_dir, seed: int = 0,
                   annotators: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    ann = list(annotators) if annotators is not None else []
    dirs = {tag: os.fspath(d) for tag, d in generation_dirs.items()}
    return json.loads(_cigli.create_session(os.fspath(eval_jsonl), dirs, ann, seed, os.fspath(session_dir)))


class Session:
    """A rating session opened from its manifest file."""

    def __init__(self, manifest) -> None:
        self._s = _cigli.Session.open(os.fspath(manifest))

    def next_assignment(self, annotator: str) -> Optional[Dict[str, Any]]:
        return json.loads(self._s.next_assignment(annotator))

    def submit_rating(self, record: Mapping[str, Any]) -> None:
        self._s.submit_rating(json.dumps(dict(record)))

    def report(self) -> Dict[str, Any]:
        return json.loads(self._s.report())

    def image_bytes(self, key: str) -> bytes:
        return self._s.image_bytes(key)
