"""Scenario presets, the key/value config format, and replicated runs.

Config files are INI style. ``[DEFAULT]`` applies to every scenario; each
other section is one scenario and starts from the preset of the same name
(``A``, ``B`` or ``C``) when there is one::

    [DEFAULT]
    agent_count = 100
    duration = 30

    [B]
    authorized_fraction = 0.2
    disruption_areas = 50,80,10; 24.02,35,10

Keys are the field names of :class:`~clocksync.agents.ScenarioConfig`.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional

from .agents import MetricsSeries, ScenarioConfig, run_world

METRICS_COLUMNS = ("scenario", "protocol", "seed", "t_seconds", "fraction_synced")
AGGREGATE_COLUMNS = ("scenario", "protocol", "seeds", "steady_state_mean", "steady_state_std")


def _triad(cx: float, cy: float, distance: float, radius: float = 10.0):
    """Three circles evenly spread around a centre, the first straight up."""
    out = []
    for deg in (90, 210, 330):
        a = math.radians(deg)
        out.append((round(cx + distance * math.cos(a), 6), round(cy + distance * math.sin(a), 6), radius))
    return out


PRESETS: dict[str, dict] = {
    # source in the middle, three disrupting circles around it
    "A": dict(disruption_areas=_triad(50, 50, 30)),
    # as A, but the source sits off-centre behind a fence
    "B": dict(gamma_x=25.0, gamma_y=75.0, fenced=True, authorized_fraction=0.1,
              disruption_areas=_triad(50, 50, 30)),
    # fenced source in the middle, disrupting circles touching the fence
    "C": dict(fenced=True, authorized_fraction=0.1, disruption_areas=_triad(50, 50, 25)),
}


def scenario_config(name: str, **overrides) -> ScenarioConfig:
    params = dict(PRESETS.get(name.upper(), {}))
    params.update(overrides)
    return ScenarioConfig(name=name.upper() if name.upper() in PRESETS else name, **params)


class ConfigError(ValueError):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _parse_areas(text: str) -> list[tuple[float, float, float]]:
    areas = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected 'x,y,radius', got {chunk.strip()!r}")
        areas.append(tuple(float(p) for p in parts))
    return areas


def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    if key == "disruption_areas":
        return _parse_areas(raw)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return no
    return None


def parse_config(text: str, source: str = "<config>") -> dict[str, ScenarioConfig]:
    """Parse config text into one :class:`ScenarioConfig` per section."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def where(section, key):
        line = _line_of(text, section, key) or _line_of(text, "DEFAULT", key)
        return f"{source}:{line}" if line else source

    for key in cp.defaults():
        if key not in _FIELDS:
            raise ConfigError(f"{where('DEFAULT', key)}: [DEFAULT] unknown key {key!r}")
    sections = cp.sections() or list(PRESETS)
    out = {}
    for section in sections:
        values = {}
        items = cp[section] if cp.has_section(section) else cp.defaults()
        for key, raw in items.items():
            if key not in _FIELDS or key == "name":
                raise ConfigError(f"{where(section, key)}: [{section}] unknown key {key!r}")
            try:
                values[key] = _convert(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{where(section, key)}: [{section}] {key}: {exc}") from exc
        try:
            out[section] = scenario_config(section, **values)
        except ValueError as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from exc
    return out


def load_config(path) -> dict[str, ScenarioConfig]:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def default_config_text() -> str:
    """A config file spelling out every default, for copying and editing."""
    base = ScenarioConfig()
    lines = ["[DEFAULT]"]
    for f in dataclasses.fields(ScenarioConfig):
        if f.name in ("name", "disruption_areas", "rng_seed", "protocol"):
            continue
        v = getattr(base, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    for name, preset in PRESETS.items():
        lines += ["", f"[{name}]"]
        for k, v in preset.items():
            if k == "disruption_areas":
                v = "; ".join(",".join(repr(c) for c in area) for area in v)
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# CSV output


def metrics_csv(series: Iterable[MetricsSeries]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for s in series:
        for t, frac in s.records:
            w.writerow((s.scenario, s.protocol, s.seed, f"{t:.6f}", f"{frac:.6f}"))
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


@dataclasses.dataclass
class Aggregate:
    scenario: str
    protocol: str
    seeds: int
    mean: float
    std: float


def aggregate(series: Iterable[MetricsSeries]) -> list[Aggregate]:
    groups: dict[tuple[str, str], list[float]] = {}
    for s in series:
        groups.setdefault((s.scenario, s.protocol), []).append(s.steady_state())
    out = []
    for (scenario, protocol), vals in groups.items():
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append(Aggregate(scenario, protocol, len(vals), statistics.fmean(vals) if vals else math.nan, std))
    return out


def aggregate_csv(aggs: Iterable[Aggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for a in aggs:
        w.writerow((a.scenario, a.protocol, a.seeds, f"{a.mean:.6f}", f"{a.std:.6f}"))
    return buf.getvalue()


# --------------------------------------------------------------------------
# replications


def _run(cfg: ScenarioConfig) -> MetricsSeries:
    return run_world(cfg)


def run_replications(config: ScenarioConfig, seeds: Iterable[int],
                     protocols: Iterable[str] = ("proposed", "baseline"),
                     workers: int = 1) -> list[MetricsSeries]:
    """Every protocol on every seed; the same seed gives the same world."""
    jobs = [dataclasses.replace(config, rng_seed=s, protocol=p) for p in protocols for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run, jobs))
    return [_run(j) for j in jobs]


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config_path: Optional[str]
    seeds: list[int]
    output_dir: str
    files: dict[str, str] = dataclasses.field(default_factory=dict)

    def write_file(self, name: str, content: str) -> Path:
        path = Path(self.output_dir) / name
        path.write_text(content)
        self.files[name] = hashlib.sha256(content.encode()).hexdigest()
        return path

    def save(self) -> Path:
        path = Path(self.output_dir) / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    def verify(self) -> list[str]:
        """Names of listed files whose content no longer matches its digest."""
        bad = []
        for name, digest in self.files.items():
            p = Path(self.output_dir) / name
            if not p.exists() or hashlib.sha256(p.read_bytes()).hexdigest() != digest:
                bad.append(name)
        return bad
