"""Engine configuration: packaged YAML defaults merged with a user file."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from importlib import resources
from typing import Any, Optional

import yaml

from .activity import TrackerConfig
from .detect import DetectorConfig
from .launch import GrouperParams

ENV_VAR = "CG_LENS_CONFIG"


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def default_document() -> dict:
    text = resources.files("cglens").joinpath("data/default_config.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


@dataclass(frozen=True)
class EngineConfig:
    doc: dict

    @classmethod
    def load(cls, path: Optional[str] = None, use_env: bool = True) -> "EngineConfig":
        """Defaults, overridden by `path` or else by the file named in CG_LENS_CONFIG."""
        if path is None and use_env:
            path = os.environ.get(ENV_VAR) or None
        doc = default_document()
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    user = yaml.safe_load(fh) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except yaml.YAMLError as exc:
                raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"config {path} must be a mapping")
            doc = _merge(doc, user)
        cfg = cls(doc)
        cfg.validate()
        return cfg

    def with_overrides(self, **sections: dict) -> "EngineConfig":
        cfg = EngineConfig(_merge(self.doc, sections))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.grouper, self.tracker, self.detector
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("title_unknown", "pattern"):
            if not 0 <= float(self.doc["thresholds"][name]) <= 1:
                raise ConfigError(f"thresholds.{name} must lie in [0, 1]")

    @property
    def grouper(self) -> GrouperParams:
        d = self.doc["launch"]
        return GrouperParams(float(d["window_s"]), float(d["slot_s"]), float(d["variation"]),
                             int(d["max_payload"]))

    @property
    def learn_max_payload(self) -> bool:
        return bool(self.doc["launch"]["learn_max_payload"])

    @property
    def tracker(self) -> TrackerConfig:
        a = self.doc["activity"]
        return TrackerConfig(float(a["slot_s"]), float(a["alpha"]), float(self.doc["launch"]["window_s"]),
                             float(a["floor_fraction"]), float(self.doc["thresholds"]["pattern"]),
                             int(a["min_stage_changes"]))

    @property
    def detector(self) -> DetectorConfig:
        return DetectorConfig.from_dict(self.doc["detector"])

    @property
    def title_threshold(self) -> float:
        return float(self.doc["thresholds"]["title_unknown"])

    def model_params(self, task: str) -> dict[str, Any]:
        return dict(self.doc["models"][task])

    @property
    def snapshot_s(self) -> float:
        return float(self.doc["models"]["pattern_snapshot_s"])

    @property
    def calibration_path(self) -> Optional[str]:
        return self.doc["qoe"]["calibration_table"]
