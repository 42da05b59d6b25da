"""Scenario presets for the four safety-critical experiments.

Each preset fixes the three-CAV platoon, the scripted human-driven vehicles
and the controller parameter set for that experiment.  Constants that the
experiments leave open (CLF weights, barrier gains, standstill gap, cut-in
timing) are regular config values here and can be overridden through the
flat key=value config file; the tuned defaults below reproduce the expected
qualitative outcomes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import CbfParams, ClfParams
from .controller import ControllerParams
from .fsm import LaneChangeCommand
from .vehicle import LaneGeometry, VehicleGeometry, VehicleState
from .world import HdvScript, HdvSegment, LaneManeuver

SCENARIO_NAMES = ("cutin", "fdec", "bacc", "ffdec")


class ConfigError(Exception):
    """Unknown scenario name or malformed override."""


@dataclass(frozen=True)
class HdvSpec:
    id: str
    x0: float
    script: HdvScript


@dataclass
class ScenarioConfig:
    name: str
    description: str
    cavs: list[tuple[str, VehicleState]]  # platoon order, head first
    hdvs: list[HdvSpec]
    command: Optional[LaneChangeCommand]
    clf: ClfParams
    cbf: CbfParams
    ctrl: ControllerParams
    duration: float = 20.0
    dt: float = 0.05
    lanes: LaneGeometry = field(default_factory=LaneGeometry)
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    initial_lane: int = 0
    seed: int = 0  # reserved; the simulation itself is deterministic

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        centers = [self.lanes.lane_center(k) for k in range(self.lanes.n_lanes)]
        for vid, state in self.cavs:
            if not any(abs(state.y - c) < 1e-9 for c in centers):
                raise ConfigError(f"CAV {vid} does not start on a lane center")
        for spec in self.hdvs:
            if not any(abs(spec.script.y0 - c) < 1e-9 for c in centers):
                raise ConfigError(f"HDV {spec.id} does not start on a lane center")


def _platoon(speed: float, xs=(100.0, 50.0, 0.0)) -> list[tuple[str, VehicleState]]:
    return [
        (f"cav{i + 1}", VehicleState(x=x, y=1.8, psi=0.0, v=speed))
        for i, x in enumerate(xs)
    ]


def scenario_preset(name: str, **knobs) -> ScenarioConfig:
    """Build one of the named presets.

    Recognized knobs: lcv_start, lcv_duration (cutin); recovery_accel (fdec).
    """
    if name == "cutin":
        lcv_start = float(knobs.pop("lcv_start", 0.5))
        lcv_duration = float(knobs.pop("lcv_duration", 3.0))
        _reject_unknown(knobs)
        return ScenarioConfig(
            name="cutin",
            description="lane-changing platoon cut in by an HDV competing for the middle lane",
            cavs=_platoon(27.5),
            hdvs=[
                HdvSpec(
                    id="lcv",
                    x0=45.0,
                    script=HdvScript(
                        v0=27.0,
                        y0=9.0,
                        maneuver=LaneManeuver(start=lcv_start, target_lane=1, duration=lcv_duration),
                    ),
                )
            ],
            command=LaneChangeCommand(cav="cav2", direction=+1, time=0.0),
            clf=ClfParams(alpha1=0.05, alpha2=0.02, v_d=26.5, y_d=1.8, s_0=10.0),
            cbf=CbfParams(eps_x=0.05),
            ctrl=ControllerParams(
                p_l=15.0, p_y=0.05, p_psi=400.0, alpha_l=1.7, alpha_y=0.6, alpha_psi=18.0
            ),
        )
    if name == "fdec":
        recovery = float(knobs.pop("recovery_accel", 3.0))
        _reject_unknown(knobs)
        return ScenarioConfig(
            name="fdec",
            description="front vehicle in the target lane brakes hard during the lane change",
            cavs=_platoon(27.5),
            hdvs=[
                HdvSpec(
                    id="ftv",
                    x0=75.0,
                    script=HdvScript(
                        v0=30.0,
                        y0=5.4,
                        segments=(
                            HdvSegment(start=1.8, accel=-9.0),
                            HdvSegment(start=3.0, accel=recovery, v_target=31.0),
                        ),
                    ),
                )
            ],
            command=LaneChangeCommand(cav="cav2", direction=+1, time=0.0),
            clf=ClfParams(alpha1=0.05, alpha2=0.02, v_d=27.5, y_d=1.8, s_0=16.0),
            cbf=CbfParams(eps_x=0.05),
            ctrl=ControllerParams(
                p_l=15.0, p_y=0.02, p_psi=400.0, alpha_l=1.7, alpha_y=0.6, alpha_psi=20.0
            ),
        )
    if name == "bacc":
        _reject_unknown(knobs)
        return ScenarioConfig(
            name="bacc",
            description="back vehicle in the target lane accelerates into the lane-change gap",
            cavs=_platoon(27.5),
            hdvs=[
                HdvSpec(
                    id="btv",
                    x0=0.0,
                    script=HdvScript(
                        v0=30.0,
                        y0=5.4,
                        segments=(
                            HdvSegment(start=1.8, accel=9.0),
                            HdvSegment(start=3.0, accel=-3.0, v_target=22.0),
                        ),
                    ),
                )
            ],
            command=LaneChangeCommand(cav="cav2", direction=+1, time=0.0),
            clf=ClfParams(alpha1=0.05, alpha2=0.02, v_d=26.0, y_d=1.8, s_0=16.0),
            cbf=CbfParams(),
            ctrl=ControllerParams(
                p_l=15.0, p_y=0.02, p_psi=900.0, alpha_l=1.7, alpha_y=0.6, alpha_psi=18.0
            ),
        )
    if name == "ffdec":
        _reject_unknown(knobs)
        return ScenarioConfig(
            name="ffdec",
            description="front vehicles in both lanes decelerate; platoon cooperation vs single-vehicle control",
            cavs=_platoon(20.0, xs=(60.0, 30.0, 0.0)),
            hdvs=[
                HdvSpec(
                    id="ftv",
                    x0=70.0,
                    script=HdvScript(
                        v0=20.0,
                        y0=5.4,
                        segments=(
                            HdvSegment(start=1.0, accel=-6.0),
                            HdvSegment(start=3.8, accel=3.0, v_target=28.0),
                        ),
                    ),
                ),
                HdvSpec(
                    id="fcv",
                    x0=90.0,
                    script=HdvScript(
                        v0=20.0,
                        y0=1.8,
                        segments=(HdvSegment(start=1.0, accel=-1.0, v_target=15.0),),
                    ),
                ),
            ],
            command=LaneChangeCommand(cav="cav2", direction=+1, time=0.0),
            clf=ClfParams(alpha1=0.05, alpha2=0.02, v_d=20.0, y_d=1.8, s_0=14.0),
            cbf=CbfParams(gamma_fc=1.4, gamma_ft=2.5, gamma_bt=1.4),
            ctrl=ControllerParams(
                p_l=15.0, p_y=0.001, p_psi=1000.0, alpha_l=1.7, alpha_y=0.5, alpha_psi=24.0
            ),
        )
    raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES}")


def _reject_unknown(knobs: dict) -> None:
    if knobs:
        raise ConfigError(f"unknown scenario knobs: {sorted(knobs)}")


# ---------------------------------------------------------------------------
# flat key=value overrides
# ---------------------------------------------------------------------------

_OVERRIDE_TARGETS = {
    "clf": ("alpha1", "alpha2", "v_d", "s_0", "s_0_follow", "es_cap"),
    "cbf": ("eps_x", "eps_y", "a_max", "gamma_fc", "gamma_ft", "gamma_bt"),
    "ctrl": (
        "p_l", "p_y", "p_psi", "alpha_l", "alpha_y", "alpha_psi", "a_max", "beta_max",
        "h_a", "h_beta",
    ),
    "sim": ("duration", "dt"),
}
_SCENARIO_KNOBS = {
    "cutin": ("lcv_start", "lcv_duration"),
    "fdec": ("recovery_accel",),
    "bacc": (),
    "ffdec": (),
}


def parse_config_file(path: str) -> dict[str, float]:
    """Read dotted key = value lines; '#' starts a comment."""
    overrides: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                overrides[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: non-numeric value {value!r}") from exc
    return overrides


def apply_overrides(config: ScenarioConfig, overrides: dict[str, float]) -> ScenarioConfig:
    """Return a new config with dotted-key overrides applied."""
    scenario_knobs = {}
    clf_kw, cbf_kw, ctrl_kw, sim_kw = {}, {}, {}, {}
    buckets = {"clf": clf_kw, "cbf": cbf_kw, "ctrl": ctrl_kw, "sim": sim_kw}
    for key, value in overrides.items():
        prefix, _, fieldname = key.partition(".")
        if prefix == "scenario":
            if fieldname not in _SCENARIO_KNOBS[config.name]:
                raise ConfigError(f"override {key!r} not recognized for scenario {config.name!r}")
            scenario_knobs[fieldname] = value
            continue
        if prefix not in buckets or fieldname not in _OVERRIDE_TARGETS[prefix]:
            raise ConfigError(f"unknown override key {key!r}")
        buckets[prefix][fieldname] = value

    base = scenario_preset(config.name, **scenario_knobs) if scenario_knobs else config
    new = dataclasses.replace(
        base,
        clf=dataclasses.replace(base.clf, **clf_kw),
        cbf=dataclasses.replace(base.cbf, **cbf_kw),
    )
    if ctrl_kw:
        ctrl_fields = {
            f.name: getattr(base.ctrl, f.name)
            for f in dataclasses.fields(ControllerParams)
        }
        H = np.array(base.ctrl.H)
        if "h_a" in ctrl_kw:
            H[0, 0] = ctrl_kw.pop("h_a")
        if "h_beta" in ctrl_kw:
            H[1, 1] = ctrl_kw.pop("h_beta")
        ctrl_fields.update(ctrl_kw)
        ctrl_fields["H"] = H
        new.ctrl = ControllerParams(**ctrl_fields)
    if "duration" in sim_kw:
        new.duration = sim_kw["duration"]
    if "dt" in sim_kw:
        new.dt = sim_kw["dt"]
    return new
