"""Model checkpoints as inspectable JSON.

A checkpoint holds the calibrated forecaster and, when the method used
them, the source-discriminator and the feature-learning artifacts.  Nets
are stored as layer dimensions, activations and flat parameter lists;
floats are written with the shortest repr that parses back to the same
64-bit value, so save -> load is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .calibrator import Forecaster
from .discriminator import SourceDiscriminator
from .errors import ParseError
from .featlearn import PsiArtifacts
from .fileio import atomic_write_text

FORMAT = "shiftcal-model"
VERSION = 1


@dataclass
class Checkpoint:
    forecaster: Forecaster
    discriminator: Optional[SourceDiscriminator] = None
    psi: Optional[PsiArtifacts] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format": FORMAT,
            "version": VERSION,
            "meta": dict(self.meta),
            "forecaster": self.forecaster.to_dict(),
            "discriminator": None if self.discriminator is None else self.discriminator.to_dict(),
            "psi": None if self.psi is None else self.psi.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT:
            raise ParseError(f"not a {FORMAT} checkpoint")
        if d.get("version") != VERSION:
            raise ParseError(f"unsupported checkpoint version {d.get('version')!r}")
        disc, psi = d.get("discriminator"), d.get("psi")
        return cls(
            Forecaster.from_dict(d["forecaster"]),
            None if disc is None else SourceDiscriminator.from_dict(disc),
            None if psi is None else PsiArtifacts.from_dict(psi),
            dict(d.get("meta", {})),
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_text(path, json.dumps(ckpt.to_dict(), allow_nan=False) + "\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    try:
        return Checkpoint.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed checkpoint: missing or bad field {exc}") from None
