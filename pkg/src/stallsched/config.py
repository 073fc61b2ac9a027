"""Experiment specifications stored as INI files.

A spec file has these sections (``#`` starts a comment line)::

    [experiment]
    name = example1
    seed = 1                  # replication i uses seed + i
    replications = 5
    event_budget = 200000
    warmup_fraction = 0.25
    check_invariants = false
    timeseries_points = 2000

    [servers]
    groups = 1 x 6            # "count x capacity" terms joined by ';'
                              # a capacity with several resources is "90,90,5000"
    [jobs]
    demands = 4 ; 1           # one resource vector per job type
    service = exp 1 ; exp 1   # "exp RATE" or "hyperexp P@RATE P@RATE ..."

    [arrivals]
    law = poisson             # poisson | lognormal | batch | trace
    zeta = 0.89               # traffic intensity along a workload direction ...
    direction = 0.5, 4
    # rates = 0.445, 3.56     # ... or explicit per-type arrival rates
    sigma = 1.0               # log-normal shape
    # batch_rate = 2          # batch law: request rate and (vector : probability) terms
    # batch = 1,0 : 0.5 ; 0,3 : 0.5
    # trace = jobs.csv        # trace law: CSV path (relative to this file) ...
    # synthetic_rows = 100000 # ... or a synthetic trace generated per replication seed
    # window = 100000
    # below_floor = clamp

    [policy alg1]             # one section per compared policy
    kind = alg1               # alg1 | m14 | g16
    solver = exhaustive       # exhaustive | dp | greedy
    beta = sigmoid            # sigmoid (beta_bar, p, z) | constant (beta_value)
    gate = linear             # none | hard | linear
    gate_threshold = 0.1
    early_reactivation = true

    [policy g16]
    kind = g16
    eta = 1.0
    event_budget = 400000     # per-policy override; g16 defaults to twice the base budget

    [sweep]
    axis = servers            # servers | zeta
    values = 20, 40, 60

``serialize`` writes every field explicitly, and ``parse(serialize(spec)) == spec``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

from .model import Exponential, HyperExponential, ServiceLaw
from .policies import Alg1, ConstantBeta, G16, M14, PolicyConfig, SigmoidBeta, StallGate
from .solvers import SolverChoice


class ValidationError(ValueError):
    """The experiment description is malformed or inconsistent."""


LAWS = ("poisson", "lognormal", "batch", "trace")
AXES = ("servers", "zeta")


@dataclass(frozen=True)
class TraceSource:
    path: Optional[str] = None
    synthetic_rows: Optional[int] = None
    synthetic_rate: float = 3000.0
    synthetic_duration_sigma: float = 0.0
    window: Optional[int] = None
    below_floor: str = "clamp"


@dataclass(frozen=True)
class ArrivalSpec:
    law: str = "poisson"
    rates: Optional[tuple[float, ...]] = None
    zeta: Optional[float] = None
    direction: Optional[tuple[float, ...]] = None
    sigma: float = 1.0
    batch_rate: Optional[float] = None
    batch: Optional[tuple[tuple[tuple[int, ...], float], ...]] = None
    trace: Optional[TraceSource] = None


@dataclass(frozen=True)
class PolicyEntry:
    label: str
    config: PolicyConfig
    event_budget: Optional[int] = None


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    groups: tuple[tuple[int, tuple[float, ...]], ...]
    arrivals: ArrivalSpec
    policies: tuple[PolicyEntry, ...]
    demands: tuple[tuple[float, ...], ...] = ()
    service: tuple[ServiceLaw, ...] = ()
    seed: int = 0
    replications: int = 1
    event_budget: int = 200_000
    warmup_fraction: float = 0.25
    check_invariants: bool = False
    timeseries_points: int = 2000
    sweep: Optional[SweepSpec] = None
    # directory that relative trace paths are resolved against; not serialized
    base_dir: str = field(default=".", compare=False)

    @property
    def capacities(self) -> list[tuple[float, ...]]:
        return [cap for count, cap in self.groups for _ in range(count)]

    def budget_for(self, entry: PolicyEntry) -> int:
        if entry.event_budget is not None:
            return entry.event_budget
        if isinstance(entry.config, G16):
            return 2 * self.event_budget
        return self.event_budget

    def with_servers(self, count: int) -> "ExperimentSpec":
        if len(self.groups) != 1:
            raise ValidationError("the servers axis needs a homogeneous fleet (a single server group)")
        return replace(self, groups=((int(count), self.groups[0][1]),))


# ----------------------------------------------------------------------------
# small text helpers


def _fmt(x: float) -> str:
    return repr(float(x))


def _floats(text: str, what: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ValidationError(f"{what}: expected numbers, got {text!r}") from None
    if not values:
        raise ValidationError(f"{what}: empty list")
    return values


def _fmt_vec(v) -> str:
    return ",".join(_fmt(x) for x in v)


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{what}: expected an integer, got {text!r}") from None


def _float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{what}: expected a number, got {text!r}") from None


def _bool(text: str, what: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{what}: expected true/false, got {text!r}")


def _terms(text: str) -> list[str]:
    return [t.strip() for t in text.split(";") if t.strip()]


def _parse_service(text: str, what: str) -> ServiceLaw:
    parts = text.split()
    if not parts:
        raise ValidationError(f"{what}: empty service law")
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "exp" and len(args) == 1:
            return Exponential(_float(args[0], what))
        if kind == "hyperexp" and args:
            branches = []
            for a in args:
                p, _, rate = a.partition("@")
                branches.append((_float(p, what), _float(rate, what)))
            return HyperExponential(tuple(branches))
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(f"{what}: {exc}") from None
    raise ValidationError(f"{what}: expected 'exp RATE' or 'hyperexp P@RATE ...', got {text!r}")


def _fmt_service(law: ServiceLaw) -> str:
    if isinstance(law, Exponential):
        return f"exp {_fmt(law.rate)}"
    return "hyperexp " + " ".join(f"{_fmt(p)}@{_fmt(r)}" for p, r in law.branches)


def _opt(section, key: str):
    value = section.get(key)
    return None if value is None or value.strip() == "" else value.strip()


def _check_keys(section, allowed: set, where: str) -> None:
    unknown = set(section.keys()) - allowed
    if unknown:
        raise ValidationError(f"[{where}]: unknown keys {sorted(unknown)}")


# ----------------------------------------------------------------------------
# policies


def _solver(sec, where: str) -> SolverChoice:
    kind = sec.get("solver", "exhaustive").strip()
    step = _opt(sec, "grid_step")
    try:
        return SolverChoice(kind, None if step is None else _floats(step, f"[{where}] grid_step"))
    except ValueError as exc:
        raise ValidationError(f"[{where}]: {exc}") from None


def _parse_policy(label: str, sec) -> PolicyEntry:
    where = f"policy {label}"
    kind = sec.get("kind", label).strip().lower()
    budget = _opt(sec, "event_budget")
    budget = None if budget is None else _int(budget, f"[{where}] event_budget")
    try:
        if kind == "alg1":
            _check_keys(sec, {"kind", "solver", "grid_step", "beta", "beta_value", "beta_bar", "p", "z",
                              "gate", "gate_threshold", "early_reactivation", "idle_reconfigure",
                              "event_budget"}, where)
            beta_kind = sec.get("beta", "sigmoid").strip().lower()
            if beta_kind == "sigmoid":
                beta = SigmoidBeta(_float(sec.get("beta_bar", "0.9"), f"[{where}] beta_bar"),
                                   _float(sec.get("p", "-0.05"), f"[{where}] p"),
                                   _float(sec.get("z", "0.005"), f"[{where}] z"))
            elif beta_kind == "constant":
                beta = ConstantBeta(_float(sec.get("beta_value", "0.9"), f"[{where}] beta_value"))
            else:
                raise ValidationError(f"[{where}]: beta must be sigmoid or constant, got {beta_kind!r}")
            gate = StallGate(sec.get("gate", "linear").strip().lower(),
                             _float(sec.get("gate_threshold", "0.1"), f"[{where}] gate_threshold"))
            config = Alg1(
                solver=_solver(sec, where),
                beta=beta,
                early_reactivation=_bool(sec.get("early_reactivation", "true"), f"[{where}] early_reactivation"),
                gate=gate,
                idle_reconfigure=_bool(sec.get("idle_reconfigure", "true"), f"[{where}] idle_reconfigure"),
            )
        elif kind == "m14":
            _check_keys(sec, {"kind", "solver", "grid_step", "idle_reconfigure", "event_budget"}, where)
            config = M14(solver=_solver(sec, where),
                         idle_reconfigure=_bool(sec.get("idle_reconfigure", "true"), f"[{where}] idle_reconfigure"))
        elif kind == "g16":
            _check_keys(sec, {"kind", "eta", "token_lifetime", "event_budget"}, where)
            life = _opt(sec, "token_lifetime")
            config = G16(eta=_float(sec.get("eta", "1.0"), f"[{where}] eta"),
                         token_lifetime=None if life is None else _floats(life, f"[{where}] token_lifetime"))
        else:
            raise ValidationError(f"[{where}]: kind must be alg1, m14 or g16, got {kind!r}")
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(f"[{where}]: {exc}") from None
    return PolicyEntry(label, config, budget)


def _policy_lines(entry: PolicyEntry) -> dict:
    c = entry.config
    out: dict = {"kind": c.name}
    if isinstance(c, (Alg1, M14)):
        out["solver"] = c.solver.kind
        out["grid_step"] = "" if c.solver.grid_step is None else _fmt_vec(c.solver.grid_step)
    if isinstance(c, Alg1):
        if isinstance(c.beta, SigmoidBeta):
            out.update(beta="sigmoid", beta_bar=_fmt(c.beta.beta_bar), p=_fmt(c.beta.p), z=_fmt(c.beta.z))
        else:
            out.update(beta="constant", beta_value=_fmt(c.beta.beta))
        out.update(gate=c.gate.kind, gate_threshold=_fmt(c.gate.threshold),
                   early_reactivation=str(c.early_reactivation).lower())
    if isinstance(c, (Alg1, M14)):
        out["idle_reconfigure"] = str(c.idle_reconfigure).lower()
    if isinstance(c, G16):
        out["eta"] = _fmt(c.eta)
        out["token_lifetime"] = "" if c.token_lifetime is None else _fmt_vec(c.token_lifetime)
    out["event_budget"] = "" if entry.event_budget is None else str(entry.event_budget)
    return out


# ----------------------------------------------------------------------------
# whole spec


def parse(text: str, base_dir: Union[str, Path] = ".") -> ExperimentSpec:
    """Parse spec text; raises ``ValidationError`` on any problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed spec file: {exc}") from None
    for sec in cp.sections():
        if sec not in ("experiment", "servers", "jobs", "arrivals", "sweep") and not sec.startswith("policy"):
            raise ValidationError(f"unknown section [{sec}]")
    for required in ("experiment", "servers", "arrivals"):
        if not cp.has_section(required):
            raise ValidationError(f"missing section [{required}]")

    ex = cp["experiment"]
    _check_keys(ex, {"name", "seed", "replications", "event_budget", "warmup_fraction",
                     "check_invariants", "timeseries_points"}, "experiment")
    name = ex.get("name", "").strip()
    if not name:
        raise ValidationError("[experiment]: name is required")

    sv = cp["servers"]
    _check_keys(sv, {"groups"}, "servers")
    groups = []
    for term in _terms(sv.get("groups", "")):
        count, sep, cap = term.partition("x")
        if not sep:
            raise ValidationError(f"[servers]: expected 'count x capacity', got {term!r}")
        groups.append((_int(count.strip(), "[servers] count"), _floats(cap, "[servers] capacity")))
    if not groups:
        raise ValidationError("[servers]: groups is required")

    demands: tuple = ()
    service: tuple = ()
    if cp.has_section("jobs"):
        jb = cp["jobs"]
        _check_keys(jb, {"demands", "service"}, "jobs")
        demands = tuple(_floats(t, "[jobs] demands") for t in _terms(jb.get("demands", "")))
        service_text = _opt(jb, "service")
        if service_text is None:
            service = tuple(Exponential(1.0) for _ in demands)
        else:
            service = tuple(_parse_service(t, "[jobs] service") for t in _terms(service_text))

    ar = cp["arrivals"]
    _check_keys(ar, {"law", "rates", "zeta", "direction", "sigma", "batch_rate", "batch", "trace",
                     "synthetic_rows", "synthetic_rate", "synthetic_duration_sigma", "window",
                     "below_floor"}, "arrivals")
    law = ar.get("law", "poisson").strip().lower()
    rates = _opt(ar, "rates")
    zeta = _opt(ar, "zeta")
    direction = _opt(ar, "direction")
    batch_rate = _opt(ar, "batch_rate")
    batch = None
    if _opt(ar, "batch") is not None:
        items = []
        for term in _terms(ar["batch"]):
            vec, sep, prob = term.partition(":")
            if not sep:
                raise ValidationError(f"[arrivals] batch: expected 'vector : probability', got {term!r}")
            items.append((tuple(_int(x, "[arrivals] batch") for x in vec.replace(",", " ").split()),
                          _float(prob, "[arrivals] batch")))
        batch = tuple(items)
    trace = None
    if law == "trace":
        rows = _opt(ar, "synthetic_rows")
        window = _opt(ar, "window")
        trace = TraceSource(
            path=_opt(ar, "trace"),
            synthetic_rows=None if rows is None else _int(rows, "[arrivals] synthetic_rows"),
            synthetic_rate=_float(ar.get("synthetic_rate", "3000.0"), "[arrivals] synthetic_rate"),
            synthetic_duration_sigma=_float(ar.get("synthetic_duration_sigma", "0.0"),
                                            "[arrivals] synthetic_duration_sigma"),
            window=None if window is None else _int(window, "[arrivals] window"),
            below_floor=ar.get("below_floor", "clamp").strip(),
        )
    arrivals = ArrivalSpec(
        law=law,
        rates=None if rates is None else _floats(rates, "[arrivals] rates"),
        zeta=None if zeta is None else _float(zeta, "[arrivals] zeta"),
        direction=None if direction is None else _floats(direction, "[arrivals] direction"),
        sigma=_float(ar.get("sigma", "1.0"), "[arrivals] sigma"),
        batch_rate=None if batch_rate is None else _float(batch_rate, "[arrivals] batch_rate"),
        batch=batch,
        trace=trace,
    )

    policies = []
    for sec in cp.sections():
        if sec.startswith("policy"):
            label = sec[len("policy"):].strip() or "policy"
            policies.append(_parse_policy(label, cp[sec]))

    sweep = None
    if cp.has_section("sweep"):
        sw = cp["sweep"]
        _check_keys(sw, {"axis", "values"}, "sweep")
        sweep = SweepSpec(sw.get("axis", "").strip(), _floats(sw.get("values", ""), "[sweep] values"))

    spec = ExperimentSpec(
        name=name,
        groups=tuple(groups),
        arrivals=arrivals,
        policies=tuple(policies),
        demands=demands,
        service=service,
        seed=_int(ex.get("seed", "0"), "[experiment] seed"),
        replications=_int(ex.get("replications", "1"), "[experiment] replications"),
        event_budget=_int(ex.get("event_budget", "200000"), "[experiment] event_budget"),
        warmup_fraction=_float(ex.get("warmup_fraction", "0.25"), "[experiment] warmup_fraction"),
        check_invariants=_bool(ex.get("check_invariants", "false"), "[experiment] check_invariants"),
        timeseries_points=_int(ex.get("timeseries_points", "2000"), "[experiment] timeseries_points"),
        sweep=sweep,
        base_dir=str(base_dir),
    )
    validate(spec)
    return spec


def load(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read spec file {path}: {exc}") from None
    return parse(text, base_dir=path.parent)


def serialize(spec: ExperimentSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["experiment"] = {
        "name": spec.name,
        "seed": str(spec.seed),
        "replications": str(spec.replications),
        "event_budget": str(spec.event_budget),
        "warmup_fraction": _fmt(spec.warmup_fraction),
        "check_invariants": str(spec.check_invariants).lower(),
        "timeseries_points": str(spec.timeseries_points),
    }
    cp["servers"] = {"groups": " ; ".join(f"{n} x {_fmt_vec(cap)}" for n, cap in spec.groups)}
    if spec.demands:
        cp["jobs"] = {
            "demands": " ; ".join(_fmt_vec(d) for d in spec.demands),
            "service": " ; ".join(_fmt_service(s) for s in spec.service),
        }
    a = spec.arrivals
    arr = {"law": a.law, "sigma": _fmt(a.sigma)}
    if a.rates is not None:
        arr["rates"] = _fmt_vec(a.rates)
    if a.zeta is not None:
        arr["zeta"] = _fmt(a.zeta)
    if a.direction is not None:
        arr["direction"] = _fmt_vec(a.direction)
    if a.batch_rate is not None:
        arr["batch_rate"] = _fmt(a.batch_rate)
    if a.batch is not None:
        arr["batch"] = " ; ".join(",".join(str(x) for x in v) + " : " + _fmt(p) for v, p in a.batch)
    if a.trace is not None:
        t = a.trace
        if t.path is not None:
            arr["trace"] = t.path
        if t.synthetic_rows is not None:
            arr["synthetic_rows"] = str(t.synthetic_rows)
        arr["synthetic_rate"] = _fmt(t.synthetic_rate)
        arr["synthetic_duration_sigma"] = _fmt(t.synthetic_duration_sigma)
        if t.window is not None:
            arr["window"] = str(t.window)
        arr["below_floor"] = t.below_floor
    cp["arrivals"] = arr
    for entry in spec.policies:
        cp[f"policy {entry.label}"] = _policy_lines(entry)
    if spec.sweep is not None:
        cp["sweep"] = {"axis": spec.sweep.axis, "values": ", ".join(_fmt(v) for v in spec.sweep.values)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def validate(spec: ExperimentSpec) -> None:
    """Cross-field checks; raises ``ValidationError``."""
    if spec.replications < 1:
        raise ValidationError("replications must be at least 1")
    if spec.event_budget < 0:
        raise ValidationError("event_budget must be nonnegative")
    if not 0 <= spec.warmup_fraction < 1:
        raise ValidationError("warmup_fraction must lie in [0, 1)")
    if spec.timeseries_points < 1:
        raise ValidationError("timeseries_points must be positive")
    for count, cap in spec.groups:
        if count < 1:
            raise ValidationError("server group counts must be positive")
        if any(c <= 0 for c in cap):
            raise ValidationError("server capacities must be positive")
    dims = {len(cap) for _, cap in spec.groups}
    if len(dims) != 1:
        raise ValidationError("all servers need the same number of resources")
    if not spec.policies:
        raise ValidationError("at least one [policy ...] section is required")
    labels = [p.label for p in spec.policies]
    if len(set(labels)) != len(labels):
        raise ValidationError("policy labels must be unique")
    for p in spec.policies:
        if p.event_budget is not None and p.event_budget < 0:
            raise ValidationError(f"policy {p.label}: event_budget must be nonnegative")

    a = spec.arrivals
    if spec.sweep is not None:
        if spec.sweep.axis not in AXES:
            raise ValidationError(f"[sweep] axis must be one of {AXES}")
        if spec.sweep.axis == "zeta" and a.zeta is None:
            raise ValidationError("[sweep] the zeta axis needs zeta and direction in [arrivals]")
        if spec.sweep.axis == "servers" and len(spec.groups) != 1:
            raise ValidationError("[sweep] the servers axis needs a single homogeneous server group")
        if spec.sweep.axis == "servers" and any(v < 1 or v != int(v) for v in spec.sweep.values):
            raise ValidationError("[sweep] server counts must be positive integers")
        if spec.sweep.axis == "zeta" and any(not 0 < v < 1 for v in spec.sweep.values):
            raise ValidationError("[sweep] zeta values must lie in (0, 1)")
    if a.law not in LAWS:
        raise ValidationError(f"[arrivals] law must be one of {LAWS}, got {a.law!r}")
    if a.sigma <= 0:
        raise ValidationError("[arrivals] sigma must be positive")
    if a.law == "trace":
        t = a.trace
        if t is None or (t.path is None) == (t.synthetic_rows is None):
            raise ValidationError("[arrivals] trace law needs exactly one of trace or synthetic_rows")
        if t.below_floor not in ("clamp", "drop"):
            raise ValidationError("[arrivals] below_floor must be clamp or drop")
        if t.synthetic_rows is not None and t.synthetic_rows < 0:
            raise ValidationError("[arrivals] synthetic_rows must be nonnegative")
        if t.synthetic_rate <= 0 or t.synthetic_duration_sigma < 0:
            raise ValidationError("[arrivals] synthetic_rate must be positive, synthetic_duration_sigma nonnegative")
        if spec.demands:
            raise ValidationError("[jobs] must be omitted for trace replay; types come from the trace")
        if dims != {1}:
            raise ValidationError("trace replay uses single-resource servers")
        return

    if not spec.demands:
        raise ValidationError("[jobs] demands are required")
    n = len(spec.demands)
    if len(spec.service) != n:
        raise ValidationError(f"[jobs] needs one service law per job type ({n}), got {len(spec.service)}")
    if any(len(d) != next(iter(dims)) for d in spec.demands):
        raise ValidationError("job demands and server capacities differ in dimension")
    if a.law == "batch":
        if a.batch_rate is None or a.batch is None:
            raise ValidationError("[arrivals] batch law needs batch_rate and batch")
        if a.rates is not None or a.zeta is not None:
            raise ValidationError("[arrivals] batch law takes its rate from batch_rate")
        if any(len(v) != n for v, _ in a.batch):
            raise ValidationError("[arrivals] batch vectors need one entry per job type")
    else:
        explicit = a.rates is not None
        scaled = a.zeta is not None or a.direction is not None
        if explicit == scaled:
            raise ValidationError("[arrivals] give exactly one of rates, or zeta with direction")
        if explicit:
            if len(a.rates) != n or any(r < 0 for r in a.rates):
                raise ValidationError("[arrivals] rates need one nonnegative value per job type")
        else:
            if a.zeta is None or a.direction is None:
                raise ValidationError("[arrivals] zeta and direction go together")
            if not 0 < a.zeta < 1:
                raise ValidationError("[arrivals] zeta must lie in (0, 1)")
            if len(a.direction) != n or any(d < 0 for d in a.direction) or not any(a.direction):
                raise ValidationError("[arrivals] direction needs one nonnegative value per job type, not all zero")
    for p in spec.policies:
        c = p.config
        if isinstance(c, G16) and c.token_lifetime is not None and len(c.token_lifetime) != n:
            raise ValidationError(f"policy {p.label}: token_lifetime needs one value per job type")
