"""Experiment drivers and the shared result table.

Every driver takes a parsed ``ExperimentConfig`` and returns a ``ResultTable``
of (point, metric, step, value, stderr) rows.  Randomness comes only from
streams derived from the config seed, so a rerun with the same config gives
an identical table.

Stream layout per seed: 1 dataset, 2 network init, 3 estimator directions,
4 curvature probes, 5 mini-batch indices, 6 Monte Carlo replicates.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .covariance import (assemble_operator, implied_ms_stepsize, jackknife_mean_se,
                         mc_second_moment, spectral_radius)
from .curvature import dense_hessian, probe_curvature, probe_preconditioned, relative_commutator
from .estimators import EstimatorConfig
from .linalg import power_iteration_top_eig
from .objectives import BatchView, MlpModel, QuadraticModel, make_synthetic_dataset
from .optimizers import current_preconditioner, make_config, run_trajectory
from .rng import RngStream
from .stability import (CRITICAL, FO_FAMILIES, FO_OF, STABLE, UNSTABLE, StabilityQuery,
                        classify_stepsize, fo_critical_stepsize, solve_ms_critical_stepsize,
                        tracked_band)

FORMAT_VERSION = 1
COLUMNS = ("point", "metric", "step", "value", "stderr")
META = "_meta"
DEADZONE = "deadzone"
ESC = "'"

S_DATA, S_INIT, S_DIRS, S_PROBE, S_BATCH, S_MC = 1, 2, 3, 4, 5, 6


class HarnessError(ValueError):
    pass


# --------------------------------------------------------------------------
# result table


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return _escape(str(v))


def _escape(s: str) -> str:
    # strings that would read back as another type get a leading quote mark
    if s.startswith(ESC) or not isinstance(_parse(s), str):
        return ESC + s
    return s


def _parse(s: str):
    if s.startswith(ESC):
        return s[1:]
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def _norm(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


@dataclass
class ResultTable:
    """Append-only rows of (point, metric, step, value, stderr).

    ``value`` is a float, int, bool or short string; ``step`` and ``stderr``
    may be None.  The experiment tag and format version travel as meta rows so
    every subcommand shares one five-column schema.
    """

    experiment: str
    rows: list = field(default_factory=list)
    version: int = FORMAT_VERSION

    def add(self, point: str, metric: str, value, step=None, stderr=None) -> None:
        if any("\x00" in str(v) for v in (point, metric, value)):
            raise HarnessError("NUL characters cannot be stored")
        self.rows.append((str(point), str(metric), None if step is None else int(step),
                          _norm(value), None if stderr is None else float(stderr)))

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)

    def select(self, metric=None, point=None) -> list:
        return [r for r in self.rows
                if (metric is None or r[1] == metric) and (point is None or r[0] == point)]

    def value(self, point: str, metric: str):
        hits = self.select(metric, point)
        if not hits:
            raise KeyError((point, metric))
        return hits[-1][3]

    def series(self, point: str, metric: str):
        hits = [r for r in self.select(metric, point) if r[2] is not None]
        return np.array([r[2] for r in hits], dtype=int), np.array([r[3] for r in hits], dtype=float)

    def points(self) -> list:
        seen = []
        for r in self.rows:
            if r[0] != META and r[0] not in seen:
                seen.append(r[0])
        return seen

    def _all_rows(self):
        return [(META, "format_version", None, self.version, None),
                (META, "experiment", None, self.experiment, None)] + self.rows

    def to_csv(self, path=None) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(COLUMNS)
        for p, m, st, v, se in self._all_rows():
            w.writerow([p, m, _fmt(st), _fmt(v), _fmt(se)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None) -> str:
        def enc(v):
            if isinstance(v, float) and not math.isfinite(v):
                return repr(v)  # 'nan', 'inf', '-inf'
            if isinstance(v, str) and (v.startswith(ESC) or v in ("nan", "inf", "-inf")):
                return ESC + v
            return v

        doc = {"format_version": self.version, "experiment": self.experiment,
               "columns": list(COLUMNS), "rows": [[enc(v) for v in r] for r in self.rows]}
        text = json.dumps(doc)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        rd = csv.reader(io.StringIO(text, newline=""))
        header = next(rd)
        if tuple(header) != COLUMNS:
            raise HarnessError(f"unexpected header {header}")
        version, exp, rows = None, None, []
        for rec in rd:
            if not rec:
                continue
            point, metric = rec[0], rec[1]
            step, value, se = _parse(rec[2]), _parse(rec[3]), _parse(rec[4])
            if point == META and metric == "format_version":
                version = value
            elif point == META and metric == "experiment":
                exp = value
            else:
                rows.append((point, metric, step, value, None if se is None else float(se)))
        if version != FORMAT_VERSION:
            raise HarnessError(f"unsupported format version {version!r}")
        return cls(exp, rows, version)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise HarnessError(f"unsupported format version {doc.get('format_version')!r}")

        def dec(i, v):
            if i in (3, 4) and v in ("nan", "inf", "-inf"):
                return float(v)
            if i == 3 and isinstance(v, str) and v.startswith(ESC):
                return v[1:]
            return v

        rows = [tuple(dec(i, v) for i, v in enumerate(r)) for r in doc["rows"]]
        rows = [(p, m, s, v, None if e is None else float(e)) for p, m, s, v, e in rows]
        return cls(doc["experiment"], rows, doc["format_version"])

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        if (self.experiment, self.version, len(self.rows)) != (other.experiment, other.version, len(other.rows)):
            return False
        for a, b in zip(self.rows, other.rows):
            for u, v in zip(a, b):
                if isinstance(u, float) and isinstance(v, float) and math.isnan(u) and math.isnan(v):
                    continue
                if u != v or type(u) is not type(v):
                    return False
        return True


def dumps(table: ResultTable, fmt: str = "csv") -> str:
    if fmt == "csv":
        return table.to_csv()
    if fmt == "json":
        return table.to_json()
    raise HarnessError(f"unknown format {fmt!r}")


def loads(text: str, fmt: str = "csv") -> ResultTable:
    return ResultTable.from_csv(text) if fmt == "csv" else ResultTable.from_json(text)


def _map_points(fn, items, workers: int):
    # grid points are independent; results come back in grid order
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# building blocks


def build_objective(cfg: ExperimentConfig):
    """(objective, x0, dataset) from the config's objective section."""
    o = cfg["objective"]
    if o["kind"] == "quadratic":
        q = QuadraticModel.from_spectrum(o["spectrum"])
        x0 = np.ones(q.dim) if o["x0"] is None else np.array(o["x0"], dtype=float)
        return q, x0, None
    w = o["widths"]
    kind = o["dataset"]
    ds = make_synthetic_dataset(o["n"], w[0], w[-1], kind, RngStream(cfg.seed, S_DATA),
                                separation=o["separation"])
    model = MlpModel.init(w, o["activation"], RngStream(cfg.seed, S_INIT),
                          scale=o["init_scale"], dataset=ds)
    return model, model.params.copy(), ds


def build_estimator(cfg: ExperimentConfig, mu: float | None = None) -> EstimatorConfig:
    e = cfg["estimator"]
    return EstimatorConfig(e["kind"], e["mu"] if mu is None else mu,
                           e["queries"] if e["kind"] == "multi_query" else 1)


def _optimizer(cfg: ExperimentConfig, eta: float):
    p = cfg["optimizer"]
    fam = p["family"]
    if fam in ("ZOGD", "GD"):
        return make_config(fam, eta=eta)
    if fam in ("ZOGDM", "GDM"):
        return make_config(fam, eta=eta, beta=p["beta"])
    if fam == "ZOAdam":
        return make_config(fam, eta=eta, beta1=p["beta1"], beta2=p["beta2"], eps=p["eps"])
    return make_config(fam, eta=eta, beta1=p["beta1"], P=np.array(p["precond"], dtype=float))


def _momentum(cfg: ExperimentConfig) -> float:
    p = cfg["optimizer"]
    return p["beta1"] if "Adam" in p["family"] else p["beta"]


def curvature_at(objective, x, cfg: ExperimentConfig, stream: RngStream, step: int = 0) -> dict:
    """lambda_max and trace of the Hessian at x, exact or stochastic per config."""
    pr = cfg["probes"]
    if pr["exact"]:
        h = dense_hessian(objective, x)
        top = power_iteration_top_eig(lambda v: h @ v, h.shape[0], pr["power_iters"], stream.child(0))
        return {"lambda_max": top.value, "trace": float(np.trace(h)), "trace_se": 0.0}
    snap = probe_curvature(objective, x, pr["trace_probes"], pr["power_iters"], stream, step)
    return {"lambda_max": snap.lambda_max, "trace": snap.trace, "trace_se": snap.trace_se}


def initial_eta(cfg: ExperimentConfig, objective, x0) -> tuple[float, dict]:
    """Step size from the config: explicit eta, or eta_ratio times the
    threshold at the initial point (trace for ZO, lambda_max for FO)."""
    p = cfg["optimizer"]
    curv = curvature_at(objective, x0, cfg, RngStream(cfg.seed, S_PROBE).child(10**9))
    if p["eta"] is not None:
        return p["eta"], curv
    fam, beta = p["family"], _momentum(cfg)
    if fam in FO_FAMILIES:
        fo = FO_OF.get(fam, fam)
        q = StabilityQuery([curv["lambda_max"]], fo, beta if fo != "GD" else 0.0)
        return p["eta_ratio"] * fo_critical_stepsize(q), curv
    _, thr, _ = tracked_band(fam, curv["trace"], curv["lambda_max"], 1.0, beta)
    return p["eta_ratio"] * thr / curv["trace"], curv


def _make_probe(cfg: ExperimentConfig, objective, opt):
    pr = cfg["probes"]
    stream = RngStream(cfg.seed, S_PROBE)
    adam = "Adam" in opt.family

    def probe(t, state):
        s = stream.child(int(t))
        out = curvature_at(objective, state.x, cfg, s.child(0), t)
        if adam:
            p = current_preconditioner(opt, state)
            p = np.diag(p) if p.ndim == 2 else p
            lm, tr, se = probe_preconditioned(objective, state.x, p, pr["trace_probes"],
                                              pr["power_iters"], s.child(1))
            out.update(precond_lambda_max=lm, precond_trace=tr, precond_trace_se=se)
            if pr["relcomm_probes"]:
                out["relcomm"], out["relcomm_se"] = relative_commutator(
                    objective, state.x, p, pr["relcomm_probes"], s.child(2))
        return out

    return probe


def _band(cfg: ExperimentConfig, snap: dict, eta: float):
    fam = cfg["optimizer"]["family"]
    beta = _momentum(cfg)
    if "Adam" in fam:
        return tracked_band(fam, snap["precond_trace"], snap["precond_lambda_max"], eta, beta)
    if fam in FO_FAMILIES:
        # exact gradients: the tracked quantity is lambda_max against the mean threshold
        fo = FO_OF.get(fam, fam)
        q = StabilityQuery([1.0], fo, beta if fo != "GD" else 0.0)
        return snap["lambda_max"], fo_critical_stepsize(q) / eta, snap["lambda_max"]
    return tracked_band(fam, snap["trace"], snap["lambda_max"], eta, beta)


@dataclass
class _Run:
    record: object
    eta: float
    curv0: dict
    objective: object


def _train(cfg: ExperimentConfig, mu=None, batch=None, schedule=None, probe_steps=()) -> _Run:
    objective, x0, ds = build_objective(cfg)
    eta, curv0 = initial_eta(cfg, objective, x0)
    opt = _optimizer(cfg, eta)
    est = build_estimator(cfg, mu) if opt.zeroth_order else None
    batch_obj = None
    if batch is not None and batch != "full":
        if ds is None:
            raise HarnessError("mini-batching needs an MLP objective")
        b = int(batch)
        if b > ds.n:
            raise HarnessError(f"batch size {b} exceeds the dataset size {ds.n}")
        bstream = RngStream(cfg.seed, S_BATCH)

        def batch_obj(t):
            idx = bstream.generator.choice(ds.n, b, replace=False)
            return BatchView(objective, ds.subset(idx))

    sched = None if schedule is None else [(s, eta * m) for s, m in schedule]
    rec = run_trajectory(opt, est, objective, x0, cfg["steps"], RngStream(cfg.seed, S_DIRS),
                         schedule=sched, probe=_make_probe(cfg, objective, opt),
                         probe_every=cfg["cadence"], probe_steps=probe_steps,
                         batch_objective=batch_obj)
    return _Run(rec, eta, curv0, objective)


def _emit_trajectory(table: ResultTable, cfg: ExperimentConfig, run: _Run, point: str) -> None:
    rec = run.record
    table.add(point, "eta", run.eta)
    table.add(point, "trace_0", run.curv0["trace"], 0, run.curv0["trace_se"])
    table.add(point, "lambda_max_0", run.curv0["lambda_max"], 0)
    for t, f in enumerate(rec.loss):
        table.add(point, "loss", float(f), t)
    for t in sorted(rec.snapshots):
        snap = rec.snapshots[t]
        eta_t = float(rec.eta[t])
        table.add(point, "lambda_max", snap["lambda_max"], t)
        table.add(point, "trace", snap["trace"], t, snap["trace_se"])
        for k in ("precond_lambda_max", "precond_trace", "relcomm"):
            if k in snap:
                se = snap.get(k + "_se")
                table.add(point, k, snap[k], t, se)
        lo, thr, hi = _band(cfg, snap, eta_t)
        table.add(point, "lower_term", lo, t)
        table.add(point, "threshold", thr, t)
        table.add(point, "upper_term", hi, t)
    table.add(point, "diverged", bool(rec.diverged), rec.steps - 1)


def final_quarter(table: ResultTable, point: str, metric: str, steps: int):
    t, v = table.series(point, metric)
    keep = t >= int(0.75 * steps)
    return v[keep]


def _emit_summary(table: ResultTable, cfg: ExperimentConfig, point: str) -> None:
    steps = cfg["steps"]
    lo = final_quarter(table, point, "lower_term", steps)
    thr = final_quarter(table, point, "threshold", steps)
    if lo.size == 0 or table.value(point, "diverged"):
        table.add(point, "final_median_ratio", float("nan"))
        table.add(point, "in_band", False)
        return
    tr = final_quarter(table, point, "trace", steps)
    lm = final_quarter(table, point, "lambda_max", steps)
    ratio = float(np.median(lo / thr))
    table.add(point, "final_median_trace", float(np.median(tr)))
    table.add(point, "final_median_lambda_max", float(np.median(lm)))
    table.add(point, "final_median_ratio", ratio)
    a, b = cfg["band"]
    table.add(point, "in_band", bool(a <= ratio <= b))


# --------------------------------------------------------------------------
# drivers


def run_eos_track(cfg: ExperimentConfig) -> ResultTable:
    """Train with the configured optimizer, logging loss each step and the
    curvature band at the cadence; final-quarter medians summarize the run."""
    table = ResultTable("eos_track")
    run = _train(cfg)
    point = f"seed={cfg.seed}"
    _emit_trajectory(table, cfg, run, point)
    _emit_summary(table, cfg, point)
    return table


def run_catapult(cfg: ExperimentConfig) -> ResultTable:
    if cfg["objective"]["kind"] != "mlp":
        raise HarnessError("catapult needs the MLP objective; a pure quadratic diverges "
                           "instead of re-equilibrating")
    c = cfg["catapult"]
    sched = c["schedule"]
    steps = cfg["steps"]
    fine = set()
    for s, _ in sched[1:]:
        fine.add(max(s - 1, 0))
        fine.update(range(s, min(s + c["fine_window"], steps), c["fine_cadence"]))
    run = _train(cfg, schedule=sched, probe_steps=sorted(fine))
    table = ResultTable("catapult")
    point = f"seed={cfg.seed}"
    _emit_trajectory(table, cfg, run, point)
    for k, (s, m) in enumerate(sched):
        table.add(point, "phase_start", run.eta * m, s)
    rec = run.record
    for k in range(1, len(sched)):
        s, m = sched[k]
        if m <= sched[k - 1][1]:
            continue  # only increases are checked
        phase = f"{point};phase={k}"
        if rec.steps <= s:
            table.add(phase, "spike", False, s)
            table.add(phase, "dip_then_rise", False, s)
            continue
        pre = float(rec.loss[s])
        window = rec.loss[s + 1 : s + 1 + c["spike_window"]]
        peak = float(np.max(window)) if window.size else pre
        table.add(phase, "spike_ratio", peak / pre, s)
        table.add(phase, "spike", bool(peak >= c["spike_factor"] * pre), s)
        t, lo = table.series(point, "lower_term")
        _, thr = table.series(point, "threshold")
        end = s + c["fine_window"]
        sel = (t >= s) & (t < end)
        lo_w, thr_w = lo[sel], thr[sel]
        before = lo[t < s]
        dip = False
        if lo_w.size >= 2 and before.size:
            # a real drop from the pre-switch level, below the new threshold, then a rise
            i = int(np.argmin(lo_w))
            dip = bool(lo_w[i] < before[-1] and lo_w[i] < thr_w[i] and np.any(lo_w[i + 1 :] > lo_w[i]))
            table.add(phase, "min_lower_term", float(lo_w[i]), int(t[sel][i]))
        table.add(phase, "dip_then_rise", dip, s)
    return table


def growth_rate_fit(samples_sq, start: int, stop: int, groups: int = 100):
    """Per-step log-growth of E||x_t||^2 over t = start..stop with a jackknife SE.

    Weighted least squares on log means with delta-method weights; when the
    first point has no sampling noise (a deterministic start) the line is
    pinned through it.
    """
    x = np.asarray(samples_sq, dtype=float)[:, start : stop + 1]
    r = x.shape[0]
    mean, se = jackknife_mean_se(x, groups)
    t = np.arange(start, stop + 1, dtype=float)
    with np.errstate(divide="ignore"):
        rel = se / mean
    pinned = rel[0] == 0.0
    if pinned:
        w = 1.0 / np.maximum(rel[1:], 1e-300) ** 2
    else:
        w = 1.0 / np.maximum(rel, 1e-300) ** 2

    def slope(m):
        y = np.log(m)
        if pinned:
            dt, dy = t[1:] - t[0], y[1:] - y[0]
            return float(np.sum(w * dt * dy) / np.sum(w * dt * dt))
        tb = np.sum(w * t) / np.sum(w)
        yb = np.sum(w * y) / np.sum(w)
        return float(np.sum(w * (t - tb) * (y - yb)) / np.sum(w * (t - tb) ** 2))

    if not np.all(np.isfinite(mean)) or np.any(mean <= 0):
        return float("inf"), 0.0
    rate = slope(mean)
    g = min(groups, r)
    idx = np.array_split(np.arange(r), g)
    total = x.sum(axis=0)
    loo = np.array([slope((total - x[i].sum(axis=0)) / (r - len(i))) for i in idx])
    jse = float(np.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2)))
    return rate, jse


def _fo_rate(lam, eta_eff, beta) -> float:
    # exact per-step log growth of ||x_t||^2 for deterministic heavy ball
    worst = 0.0
    for x in eta_eff * lam:
        # roots of z^2 - (1 + beta - x) z + beta
        tr_ = 1.0 + beta - x
        disc = complex(tr_ * tr_ - 4.0 * beta)
        roots = (0.5 * (tr_ + disc**0.5), 0.5 * (tr_ - disc**0.5))
        worst = max(worst, max(abs(z) for z in roots))
    return 2.0 * math.log(worst) if worst > 0 else -math.inf


def _empirical_class(rate: float, se: float, dz: float) -> str:
    if rate - dz * se > 0:
        return UNSTABLE
    if rate + dz * se < 0:
        return STABLE
    return DEADZONE


def run_mc_stability(cfg: ExperimentConfig) -> ResultTable:
    """Empirical mean-square stability over an eta grid against the theory."""
    if cfg["objective"]["kind"] != "quadratic":
        raise HarnessError("mc_stability needs a quadratic objective")
    table = ResultTable("mc_stability")
    quad, x0, _ = build_objective(cfg)
    lam = np.array(cfg["objective"]["spectrum"], dtype=float)  # diagonal H in config order
    p = cfg["optimizer"]
    fam = p["family"]
    m = cfg["mc"]
    beta = _momentum(cfg) if fam != "ZOGD" and fam != "GD" else 0.0
    sigma = None
    lam_q = lam
    if fam in ("FrozenZOAdam", "FrozenAdam"):
        sigma = np.array(p["precond"], dtype=float)
        if sigma.shape != lam.shape:
            raise HarnessError("optimizer.precond must match the spectrum length")
        lam_q = lam / sigma
    if fam == "ZOAdam":
        raise HarnessError("mc_stability covers constant-preconditioner methods only")
    query = StabilityQuery(np.sort(lam_q)[::-1], fam, beta)
    rep = solve_ms_critical_stepsize(query)
    table.add("theory", "eta_mean_star", rep.eta_mean_star)
    table.add("theory", "eta_ms_star", rep.eta_ms_star)
    est = build_estimator(cfg) if fam not in FO_FAMILIES else None

    def one(k_eta):
        k, eta = k_eta
        sub = ResultTable("mc_stability")
        point = f"eta={eta!r}"
        theory = classify_stepsize(query, eta)
        sub.add(point, "theory_class", theory)
        if fam in FO_FAMILIES:
            # the frozen Adam mean map is heavy ball with step (1 - beta1) eta
            eta_eff = (1.0 - beta) * eta if fam == "FrozenAdam" else eta
            rate, se = _fo_rate(lam_q, eta_eff, beta), 0.0
            emp = STABLE if rate < -1e-12 else UNSTABLE if rate > 1e-12 else CRITICAL
            log_rho = rate
        else:
            opt = _optimizer(cfg, eta)
            mc = mc_second_moment(opt, est, quad, x0, m["fit_steps"], m["replicates"],
                                  RngStream(cfg.seed, S_MC).child(k), m["groups"], keep_samples=True)
            rate, se = growth_rate_fit(mc.samples_sq, m["fit_start"], m["fit_steps"], m["groups"])
            emp = _empirical_class(rate, se, m["dead_zone"])
            try:
                op = assemble_operator(fam, lam_q, eta, beta, sigma, est.variant, est.queries)
                log_rho = math.log(spectral_radius(op))
            except Exception:
                log_rho = float("nan")
            for t in range(m["fit_steps"] + 1):
                sub.add(point, "mean_sq", float(mc.mean_sq[t]), t, float(mc.se_sq[t]))
        sub.add(point, "growth_rate", rate, None, se)
        sub.add(point, "log_rho", log_rho)
        sub.add(point, "empirical_class", emp)
        agree = emp == theory or (emp == DEADZONE and theory == CRITICAL)
        sub.add(point, "agrees", bool(agree))
        return sub

    for sub in _map_points(one, list(enumerate(m["etas"])), cfg["workers"]):
        table.extend(sub)
    return table


def _sweep(cfg: ExperimentConfig, tag: str, grid, kw) -> ResultTable:
    table = ResultTable(tag)

    def one(v):
        sub = ResultTable(tag)
        point = f"seed={cfg.seed};{kw}={v}"
        run = _train(cfg, **{kw: v})
        _emit_trajectory(sub, cfg, run, point)
        _emit_summary(sub, cfg, point)
        return sub

    for sub in _map_points(one, list(grid), cfg["workers"]):
        table.extend(sub)
    return table


def run_mu_sweep(cfg: ExperimentConfig) -> ResultTable:
    if cfg["objective"]["kind"] != "mlp":
        raise HarnessError("mu sweeps run on the MLP objective")
    return _sweep(cfg, "mu_sweep", cfg["mus"], "mu")


def run_batch_sweep(cfg: ExperimentConfig) -> ResultTable:
    """Mini-batch ZO-SGD: each step draws a fresh batch without replacement.
    The logged loss is the batch loss; curvature is always full-batch."""
    if cfg["objective"]["kind"] != "mlp":
        raise HarnessError("batch sweeps run on the MLP objective")
    return _sweep(cfg, "batch_sweep", cfg["batch_sizes"], "batch")


def run_threshold_table(cfg: ExperimentConfig) -> ResultTable:
    table = ResultTable("threshold_table")
    for i, q in enumerate(cfg["queries"]):
        beta = 0.0 if q["family"] in ("ZOGD", "GD") else q["beta"]
        query = StabilityQuery(q["spectrum"], q["family"], beta)
        rep = solve_ms_critical_stepsize(query, q["eta"])
        point = f"query={i}"
        table.add(point, "family", q["family"])
        table.add(point, "beta", beta)
        table.add(point, "eta_mean_star", rep.eta_mean_star)
        table.add(point, "eta_ms_star", rep.eta_ms_star)
        table.add(point, "lower_bound", rep.lower_bound)
        table.add(point, "upper_bound", rep.upper_bound)
        if rep.classification is not None:
            table.add(point, "classification", rep.classification)
    return table


def rho_summary(cfg: ExperimentConfig) -> dict:
    r = cfg["rho"]
    fam, beta, eta = r["family"], r["beta"], r["eta"]
    beta = 0.0 if fam == "ZOGD" else beta
    lam = np.array(r["spectrum"], dtype=float)
    if r["variant"] == "gaussian":
        query = StabilityQuery(np.sort(lam)[::-1], fam, beta)
        star = solve_ms_critical_stepsize(query).eta_ms_star
        cls = classify_stepsize(query, eta)
    else:
        star = implied_ms_stepsize(fam, lam, beta, r["sigma"], r["variant"], r["queries"])
        cls = None
    op = assemble_operator(fam, lam, eta, beta, r["sigma"], r["variant"], r["queries"])
    rho = spectral_radius(op)
    if cls is None:
        cls = STABLE if eta < star else UNSTABLE
    return {"family": fam, "eta": eta, "beta": beta, "spectrum": lam.tolist(),
            "rho": rho, "eta_ms_star": star, "classification": cls}


def run_rho(cfg: ExperimentConfig) -> ResultTable:
    s = rho_summary(cfg)
    table = ResultTable("rho")
    for k in ("family", "eta", "beta", "rho", "eta_ms_star", "classification"):
        table.add("rho", k, s[k])
    for i, v in enumerate(s["spectrum"]):
        table.add("rho", f"spectrum[{i}]", v)
    return table


RUNNERS = {
    "eos_track": run_eos_track,
    "catapult": run_catapult,
    "mc_stability": run_mc_stability,
    "mu_sweep": run_mu_sweep,
    "batch_sweep": run_batch_sweep,
    "threshold_table": run_threshold_table,
    "rho": run_rho,
}


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    return RUNNERS[cfg.experiment](cfg)
