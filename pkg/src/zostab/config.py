"""Strict JSON experiment configuration.

Every section is a flat mapping with a fixed set of keys; unknown keys and
out-of-range values are rejected at parse time with the dotted path of the
offending field in the message.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

SPEC_VERSION = 1
EXPERIMENTS = ("eos_track", "catapult", "mu_sweep", "batch_sweep", "mc_stability",
               "threshold_table", "rho")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.field = path


DEFAULTS = {
    "spec_version": SPEC_VERSION,
    "experiment": None,
    "seed": 0,
    "steps": 1000,
    "cadence": 100,
    "output": None,
    "workers": 1,
    "objective": {
        "kind": "mlp", "widths": [8, 16, 4], "activation": "tanh", "n": 64,
        "dataset": "clusters", "separation": 0.0, "init_scale": 1.0,
        "spectrum": None, "x0": None,
    },
    "optimizer": {
        "family": "ZOGD", "eta": None, "eta_ratio": None, "beta": 0.0, "beta1": 0.9,
        "beta2": 0.999, "eps": 1e-8, "precond": None,
    },
    "estimator": {"kind": "central_gaussian", "mu": 1e-3, "queries": 1},
    "probes": {"trace_probes": 500, "power_iters": 50, "relcomm_probes": 0, "exact": False},
    "band": [0.6, 1.05],
    "catapult": {"schedule": [[0, 1.0]], "spike_window": 50, "spike_factor": 2.0,
                 "fine_cadence": 10, "fine_window": 1000},
    "mc": {"etas": [0.5, 0.6, 0.75, 0.9], "replicates": 200000, "fit_steps": 4,
           "groups": 100, "dead_zone": 3.0, "fit_start": 0},
    "mus": [1e-4, 1e-3],
    "batch_sizes": ["full"],
    "queries": [],
    "rho": {"family": "ZOGD", "spectrum": [1.0], "eta": None, "beta": 0.0, "sigma": None,
            "variant": "gaussian", "queries": 1},
}

FAMILIES = ("ZOGD", "ZOGDM", "ZOAdam", "FrozenZOAdam", "GD", "GDM", "FrozenAdam")


def _num(path, v, lo=None, hi=None, lo_open=False, hi_open=False, integer=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(path, f"value {v!r} below allowed range")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(path, f"value {v!r} above allowed range")
    return int(v) if integer else float(v)


def _choice(path, v, options):
    if v not in options:
        raise ConfigError(path, f"{v!r} is not one of {list(options)}")
    return v


def _merge(path, base, given):
    if not isinstance(given, dict):
        raise ConfigError(path or "<root>", "expected an object")
    out = copy.deepcopy(base)
    for k, v in given.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(p, "unknown field")
        if isinstance(base[k], dict) and k != "queries":
            out[k] = _merge(p, base[k], v)
        else:
            out[k] = v
    return out


def _spectrum(path, v, allow_none=False):
    if v is None and allow_none:
        return None
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a nonempty list of numbers")
    vals = [_num(f"{path}[{i}]", x, lo=0.0) for i, x in enumerate(v)]
    if max(vals) <= 0:
        raise ConfigError(path, "spectrum must not be identically zero")
    return vals


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getitem__(self, k):
        return self.data[k]

    @property
    def experiment(self) -> str:
        return self.data["experiment"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        for k, v in kw.items():
            if isinstance(v, dict):
                d[k].update(v)
            else:
                d[k] = v
        return parse_config(d)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    if "spec_version" not in raw:
        raise ConfigError("spec_version", "missing (expected 1)")
    if raw["spec_version"] != SPEC_VERSION:
        raise ConfigError("spec_version", f"unsupported version {raw['spec_version']!r}")
    d = _merge("", DEFAULTS, raw)
    _choice("experiment", d["experiment"], EXPERIMENTS)
    d["seed"] = _num("seed", d["seed"], lo=0, hi=2**64 - 1, integer=True)
    d["steps"] = _num("steps", d["steps"], lo=1, integer=True)
    d["cadence"] = _num("cadence", d["cadence"], lo=1, integer=True)
    if d["cadence"] != 1 and d["steps"] % d["cadence"] != 0:
        raise ConfigError("cadence", f"must divide steps ({d['steps']}) or be 1")
    d["workers"] = _num("workers", d["workers"], lo=1, integer=True)
    if d["output"] is not None and not isinstance(d["output"], str):
        raise ConfigError("output", "expected a path string")

    o = d["objective"]
    _choice("objective.kind", o["kind"], ("mlp", "quadratic"))
    if o["kind"] == "mlp":
        w = o["widths"]
        if not isinstance(w, list) or len(w) < 2:
            raise ConfigError("objective.widths", "expected at least two layer widths")
        o["widths"] = [_num(f"objective.widths[{i}]", x, lo=1, integer=True) for i, x in enumerate(w)]
        _choice("objective.activation", o["activation"], ("tanh", "gelu"))
        _choice("objective.dataset", o["dataset"], ("clusters", "teacher"))
        o["n"] = _num("objective.n", o["n"], lo=1, integer=True)
        o["separation"] = _num("objective.separation", o["separation"], lo=0.0)
        o["init_scale"] = _num("objective.init_scale", o["init_scale"], lo=0.0, lo_open=True)
    else:
        o["spectrum"] = _spectrum("objective.spectrum", o["spectrum"])
        if o["x0"] is not None:
            if not isinstance(o["x0"], list) or len(o["x0"]) != len(o["spectrum"]):
                raise ConfigError("objective.x0", "must be a list matching the spectrum length")
            o["x0"] = [_num(f"objective.x0[{i}]", x) for i, x in enumerate(o["x0"])]

    p = d["optimizer"]
    _choice("optimizer.family", p["family"], FAMILIES)
    p["eta"] = _num("optimizer.eta", p["eta"], lo=0.0, lo_open=True, allow_none=True)
    p["eta_ratio"] = _num("optimizer.eta_ratio", p["eta_ratio"], lo=0.0, lo_open=True, allow_none=True)
    if d["experiment"] not in ("threshold_table", "rho", "mc_stability"):
        if (p["eta"] is None) == (p["eta_ratio"] is None):
            raise ConfigError("optimizer.eta", "give exactly one of eta and eta_ratio")
    for k in ("beta", "beta1", "beta2"):
        p[k] = _num(f"optimizer.{k}", p[k], lo=0.0, hi=1.0, hi_open=True)
    p["eps"] = _num("optimizer.eps", p["eps"], lo=0.0, lo_open=True)
    if p["precond"] is not None:
        p["precond"] = [_num(f"optimizer.precond[{i}]", x, lo=0.0, lo_open=True)
                        for i, x in enumerate(p["precond"])]
    if p["family"] in ("FrozenZOAdam", "FrozenAdam") and p["precond"] is None:
        raise ConfigError("optimizer.precond", f"{p['family']} needs a positive diagonal")

    e = d["estimator"]
    _choice("estimator.kind", e["kind"],
            ("central_gaussian", "forward_gaussian", "central_sphere", "multi_query"))
    e["mu"] = _num("estimator.mu", e["mu"], lo=0.0, lo_open=True)
    e["queries"] = _num("estimator.queries", e["queries"], lo=1, integer=True)

    pr = d["probes"]
    pr["trace_probes"] = _num("probes.trace_probes", pr["trace_probes"], lo=1, integer=True)
    pr["power_iters"] = _num("probes.power_iters", pr["power_iters"], lo=1, integer=True)
    pr["relcomm_probes"] = _num("probes.relcomm_probes", pr["relcomm_probes"], lo=0, integer=True)
    if not isinstance(pr["exact"], bool):
        raise ConfigError("probes.exact", "expected true or false")

    b = d["band"]
    if not isinstance(b, list) or len(b) != 2:
        raise ConfigError("band", "expected [low, high]")
    d["band"] = [_num("band[0]", b[0], lo=0.0), _num("band[1]", b[1], lo=0.0)]
    if d["band"][0] > d["band"][1]:
        raise ConfigError("band", "low exceeds high")

    c = d["catapult"]
    sched = c["schedule"]
    if not isinstance(sched, list) or not sched:
        raise ConfigError("catapult.schedule", "expected a nonempty list of [step, multiplier]")
    out = []
    for i, pt in enumerate(sched):
        if not isinstance(pt, list) or len(pt) != 2:
            raise ConfigError(f"catapult.schedule[{i}]", "expected [step, multiplier]")
        out.append([_num(f"catapult.schedule[{i}][0]", pt[0], lo=0, hi=d["steps"] - 1, integer=True),
                    _num(f"catapult.schedule[{i}][1]", pt[1], lo=0.0, lo_open=True)])
    if out[0][0] != 0 or any(a[0] >= b[0] for a, b in zip(out, out[1:])):
        raise ConfigError("catapult.schedule", "steps must start at 0 and increase")
    c["schedule"] = out
    c["spike_window"] = _num("catapult.spike_window", c["spike_window"], lo=1, integer=True)
    c["spike_factor"] = _num("catapult.spike_factor", c["spike_factor"], lo=1.0)
    c["fine_cadence"] = _num("catapult.fine_cadence", c["fine_cadence"], lo=1, integer=True)
    c["fine_window"] = _num("catapult.fine_window", c["fine_window"], lo=0, integer=True)

    m = d["mc"]
    if not isinstance(m["etas"], list) or not m["etas"]:
        raise ConfigError("mc.etas", "expected a nonempty list")
    m["etas"] = [_num(f"mc.etas[{i}]", x, lo=0.0, lo_open=True) for i, x in enumerate(m["etas"])]
    m["replicates"] = _num("mc.replicates", m["replicates"], lo=2, integer=True)
    m["fit_steps"] = _num("mc.fit_steps", m["fit_steps"], lo=1, integer=True)
    m["groups"] = _num("mc.groups", m["groups"], lo=2, integer=True)
    m["dead_zone"] = _num("mc.dead_zone", m["dead_zone"], lo=0.0)
    m["fit_start"] = _num("mc.fit_start", m["fit_start"], lo=0, integer=True)
    if m["fit_start"] >= m["fit_steps"]:
        raise ConfigError("mc.fit_start", "must be below mc.fit_steps")

    if not isinstance(d["mus"], list) or not d["mus"]:
        raise ConfigError("mus", "expected a nonempty list")
    d["mus"] = [_num(f"mus[{i}]", x, lo=0.0, lo_open=True) for i, x in enumerate(d["mus"])]
    bs = d["batch_sizes"]
    if not isinstance(bs, list) or not bs:
        raise ConfigError("batch_sizes", "expected a nonempty list")
    d["batch_sizes"] = ["full" if x == "full" else _num(f"batch_sizes[{i}]", x, lo=1, integer=True)
                        for i, x in enumerate(bs)]

    qs = d["queries"]
    if not isinstance(qs, list):
        raise ConfigError("queries", "expected a list")
    parsed = []
    for i, q in enumerate(qs):
        qd = _merge(f"queries[{i}]", {"family": None, "spectrum": None, "beta": 0.0, "eta": None}, q)
        _choice(f"queries[{i}].family", qd["family"],
                ("ZOGD", "ZOGDM", "FrozenZOAdam", "GD", "GDM", "FrozenAdam"))
        qd["spectrum"] = _spectrum(f"queries[{i}].spectrum", qd["spectrum"])
        qd["beta"] = _num(f"queries[{i}].beta", qd["beta"], lo=0.0, hi=1.0, hi_open=True)
        qd["eta"] = _num(f"queries[{i}].eta", qd["eta"], lo=0.0, lo_open=True, allow_none=True)
        parsed.append(qd)
    d["queries"] = parsed
    if d["experiment"] == "threshold_table" and not parsed:
        raise ConfigError("queries", "threshold_table needs at least one query")

    r = d["rho"]
    _choice("rho.family", r["family"], ("ZOGD", "ZOGDM", "FrozenZOAdam"))
    r["spectrum"] = _spectrum("rho.spectrum", r["spectrum"])
    r["eta"] = _num("rho.eta", r["eta"], lo=0.0, lo_open=True, allow_none=True)
    if d["experiment"] == "rho" and r["eta"] is None:
        raise ConfigError("rho.eta", "required for the rho experiment")
    r["beta"] = _num("rho.beta", r["beta"], lo=0.0, hi=1.0, hi_open=True)
    if r["sigma"] is not None:
        if not isinstance(r["sigma"], list) or len(r["sigma"]) != len(r["spectrum"]):
            raise ConfigError("rho.sigma", "must be a list matching the spectrum length")
        r["sigma"] = [_num(f"rho.sigma[{i}]", x, lo=0.0, lo_open=True) for i, x in enumerate(r["sigma"])]
    if r["family"] == "FrozenZOAdam" and r["sigma"] is None:
        r["sigma"] = [1.0] * len(r["spectrum"])
    _choice("rho.variant", r["variant"], ("gaussian", "sphere", "multi_query"))
    r["queries"] = _num("rho.queries", r["queries"], lo=1, integer=True)
    return ExperimentConfig(d)


def load_config(path) -> ExperimentConfig:
    with open(Path(path), encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(raw)
