"""
Experiment presets and the CSV plumbing behind the command-line harness.

A synthetic experiment sweeps one parameter, runs several series (e.g.
different penalties or sampling ratios) and reports the mean and standard
deviation of a metric over seeds. Every instance is generated from a single
generator seeded by the run seed: graph first, then local datasets, then the
sampling set.
"""

import copy
import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import max_spread
from .datagen import (LabelModelSpec, TopologySpec, apply_sampling_mask,
                      build_threshold_graph, gen_graph, gen_labels, make_losses,
                      mse, sample_nodes, split_dataset, validation_error)
from .losses import LocalDataset
from .penalties import parse_penalty
from .solver import STOP_NON_FINITE, SolverConfig, solve


class ExperimentError(RuntimeError):
    """A stage failed; the message names the parameter point and seed."""


class NumericalFailure(ExperimentError):
    """The solver produced non-finite iterates."""


SWEEPABLE = ("eps", "lambda", "sigma", "rho", "p_out", "p_in")


@dataclass
class ExperimentConfig:
    """
    Synthetic sweep description (all fields JSON-serializable).

    ``series`` entries may override ``penalty``, ``lambda``, ``rho``,
    ``sigma`` or ``eps`` and carry a ``label`` used as column suffix.
    """

    name: str
    topology: dict
    labels: dict
    sweep: dict
    series: list = field(default_factory=lambda: [{"label": ""}])
    penalty: str = "norm2"
    lam: float = 0.1
    rho: float = 1.0
    iters: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    metric: str = "mse"
    kind: str = "synthetic"

    def validate(self):
        if self.sweep.get("name") not in SWEEPABLE:
            raise ValueError(f"sweep parameter must be one of {SWEEPABLE}")
        if not self.sweep.get("values"):
            raise ValueError("sweep needs at least one value")
        if self.metric not in ("mse", "spread"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        TopologySpec(**self.topology)
        LabelModelSpec(**_label_kwargs(self.labels))
        for s in self.series:
            lam = s.get("lambda", self.lam)
            if lam < 0:
                raise ValueError("lambda must be >= 0")
            parse_penalty(s.get("penalty", self.penalty))
        return self


@dataclass
class FmiConfig:
    """
    Synthetic weather-station experiment.

    Stations belong to climate regions; each region has its own feature
    distribution and linear model. The graph links stations whose joint
    (features, label) Gaussian statistics are within Wasserstein distance
    ``eta``.
    """

    name: str = "synthetic-fmi"
    n_stations: int = 203
    regions: int = 4
    m: int = 28
    noise: float = 2.0
    eta: float = 5.0
    lambdas: list = field(default_factory=lambda: [0.0, 0.5])
    splits: int = 5
    iters: int = 1000
    penalty: str = "norm2"
    seeds: list = field(default_factory=lambda: [0])
    kind: str = "fmi"

    def validate(self):
        if self.n_stations < 2 or self.m < 4 or self.splits < 1 or self.iters < 1:
            raise ValueError("invalid synthetic-fmi configuration")
        if any(lam < 0 for lam in self.lambdas) or self.eta <= 0:
            raise ValueError("lambdas must be >= 0 and eta > 0")
        parse_penalty(self.penalty)
        return self


def _label_kwargs(labels):
    kw = dict(labels)
    if "vectors" in kw:
        kw["vectors"] = tuple(tuple(float(x) for x in v) for v in kw["vectors"])
    return kw


_CHAIN_TOPO = {"kind": "chain", "n": 50, "eps": 0.0}
_LOWDIM = {"d": 2, "m": 5, "sigma": 0.0, "scheme": "fixed",
           "vectors": [[2.0, 2.0], [-2.0, 2.0]]}
_EPS_GRID = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
_CHAIN_PENALTIES = [("norm1", 0.1), ("norm2", 0.1), ("quadratic", 0.05)]

PRESETS = {
    "sbm-table1": ExperimentConfig(
        name="sbm-table1",
        topology={"kind": "sbm", "sizes": [100, 100], "p_in": 0.5, "p_out": 0.01},
        labels={"d": 100, "m": 10, "sigma": 1e-3, "scheme": "bernoulli"},
        sweep={"name": "lambda", "values": [0.01]},
        iters=1000, seeds=[0, 1, 2]),
    "chain-noiseless": ExperimentConfig(
        name="chain-noiseless", topology=_CHAIN_TOPO, labels=_LOWDIM,
        sweep={"name": "eps", "values": _EPS_GRID},
        series=[{"label": f"{pen}_rho{rho}", "penalty": pen, "lambda": lam, "rho": rho}
                for pen, lam in _CHAIN_PENALTIES for rho in (0.2, 0.4, 0.6)],
        iters=2000, seeds=[0, 1, 2, 3, 4]),
    "chain-noisy": ExperimentConfig(
        name="chain-noisy", topology=_CHAIN_TOPO, labels=_LOWDIM,
        sweep={"name": "eps", "values": _EPS_GRID}, rho=0.6,
        series=[{"label": f"{pen}_sigma{sig}", "penalty": pen, "lambda": lam, "sigma": sig}
                for pen, lam in _CHAIN_PENALTIES for sig in (0.01, 0.1, 1.0)],
        iters=2000, seeds=[0, 1, 2, 3, 4]),
    "star-consensus": ExperimentConfig(
        name="star-consensus", topology={"kind": "star", "leaves": 49},
        labels={"d": 2, "m": 5, "sigma": 0.1, "scheme": "gaussian"},
        sweep={"name": "lambda", "values": [0.0, 0.4, 0.5, 5.0]},
        iters=1000, seeds=[0, 1, 2], metric="spread"),
    "synthetic-fmi": FmiConfig(),
}


def get_preset(name):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def config_from_dict(doc):
    """
    Build a config from JSON. ``{"preset": name, ...}`` starts from a preset
    and overrides the listed fields.
    """
    doc = dict(doc)
    if "preset" in doc:
        base = get_preset(doc.pop("preset"))
        unknown = set(doc) - set(base.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return replace(base, **doc).validate()
    kind = doc.get("kind", "synthetic")
    cls = FmiConfig if kind == "fmi" else ExperimentConfig
    try:
        return cls(**doc).validate()
    except TypeError as exc:
        raise ValueError(f"bad experiment config: {exc}") from exc


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def _solve_checked(g, losses, lam, penalty, iters, where):
    res = solve(g, losses, SolverConfig(lam, penalty, iters, trace_every=iters))
    if res.stop_reason == STOP_NON_FINITE:
        raise NumericalFailure(f"{where}: non-finite iterates")
    return res


def _run_point(cfg, param, series, seed):
    s = dict(series)
    sweep = cfg.sweep["name"]
    lam = s.get("lambda", cfg.lam)
    rho = s.get("rho", cfg.rho)
    topo = dict(cfg.topology)
    labels = _label_kwargs(cfg.labels)
    if "sigma" in s:
        labels["sigma"] = s["sigma"]
    if "eps" in s:
        topo["eps"] = s["eps"]
    if sweep == "lambda":
        lam = param
    elif sweep == "rho":
        rho = param
    elif sweep == "sigma":
        labels["sigma"] = param
    else:
        topo[sweep] = param
    if "sizes" in topo:
        topo["sizes"] = tuple(topo["sizes"])
    rng = np.random.default_rng(seed)
    g, part = gen_graph(TopologySpec(**topo), rng)
    datasets, w_true = gen_labels(part, LabelModelSpec(**labels), rng)
    losses = make_losses(datasets)
    if rho < 1:
        losses, _ = apply_sampling_mask(losses, sample_nodes(g.n, rho, rng))
    penalty = parse_penalty(s.get("penalty", cfg.penalty))
    where = f"{cfg.name}: {sweep}={param}, series={s.get('label', '')!r}, seed={seed}"
    res = _solve_checked(g, losses, lam, penalty, cfg.iters, where)
    if cfg.metric == "spread":
        return max_spread(res.w_final)
    return mse(res.w_final, w_true)


def _stat_columns(metric, label):
    suffix = f"_{label}" if label else ""
    return f"{metric}_mean{suffix}", f"{metric}_std{suffix}"


def run_synthetic(cfg):
    """Returns ``(header, rows)`` with one row per sweep value."""
    cfg.validate()
    header = ["param"]
    for s in cfg.series:
        header.extend(_stat_columns(cfg.metric, s.get("label", "")))
    rows = []
    for param in cfg.sweep["values"]:
        row = [float(param)]
        for s in cfg.series:
            vals = []
            for seed in sorted(cfg.seeds):
                try:
                    vals.append(_run_point(cfg, param, s, seed))
                except NumericalFailure:
                    raise
                except Exception as exc:
                    raise ExperimentError(
                        f"{cfg.name}: {cfg.sweep['name']}={param}, "
                        f"series={s.get('label', '')!r}, seed={seed}: {exc}") from exc
            row.extend([float(np.mean(vals)), float(np.std(vals))])
        rows.append(row)
    return header, rows


def gen_fmi_stations(cfg, seed):
    """
    Synthetic station datasets: features are (daily minimum, previous-day
    maximum) temperatures, the label is the daily maximum.

    Returns the list of full local datasets.
    """
    rng = np.random.default_rng(seed)
    R = cfg.regions
    centers = np.linspace(-12.0, 12.0, R)
    weights = np.column_stack([rng.uniform(0.3, 0.9, R), rng.uniform(0.2, 0.7, R)])
    region = rng.integers(0, R, size=cfg.n_stations)
    datasets = []
    for i in range(cfg.n_stations):
        c = region[i]
        mean = centers[c] + rng.normal(0.0, 0.3, 2)
        # strongly correlated features, like consecutive daily temperatures
        cov = np.array([[4.0, 3.6], [3.6, 4.0]])
        X = rng.multivariate_normal(mean, cov, size=cfg.m)
        y = X @ weights[c] + cfg.noise * rng.standard_normal(cfg.m)
        datasets.append(LocalDataset(X, y))
    return datasets


def _station_stats(ds):
    Z = np.column_stack([ds.X, ds.y])
    return Z.mean(axis=0), np.cov(Z, rowvar=False)


def run_fmi(cfg):
    """Validation error per lambda, averaged over random train/validation splits."""
    cfg.validate()
    penalty = parse_penalty(cfg.penalty)
    header = ["param", "val_err_mean", "val_err_std"]
    per_lam = {lam: [] for lam in cfg.lambdas}
    for seed in sorted(cfg.seeds):
        datasets = gen_fmi_stations(cfg, seed)
        g = build_threshold_graph([_station_stats(ds) for ds in datasets], cfg.eta)
        split_rng = np.random.default_rng([seed, 1])
        for split in range(cfg.splits):
            parts = [split_dataset(ds, 0.3, split_rng) for ds in datasets]
            losses = make_losses([p[0] for p in parts])
            val = [p[1] for p in parts]
            for lam in cfg.lambdas:
                where = f"{cfg.name}: lambda={lam}, split={split}, seed={seed}"
                res = _solve_checked(g, losses, lam, penalty, cfg.iters, where)
                per_lam[lam].append(validation_error(res.w_final, val))
    rows = [[float(lam), float(np.mean(v)), float(np.std(v))] for lam, v in per_lam.items()]
    return header, rows


def run_experiment(cfg):
    if isinstance(cfg, FmiConfig):
        return run_fmi(cfg)
    return run_synthetic(cfg)


# CSV helpers


def format_value(x):
    """Integers verbatim, other numbers with 17 significant digits."""
    if x is None:
        return ""
    if isinstance(x, str):
        x = x.strip()
        for conv in (int, float):
            try:
                return format_value(conv(x))
            except ValueError:
                pass
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(header, rows, path=None):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for r in rows:
        out.writerow([format_value(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


KNOWN_SCHEMAS = (
    ["iter", "objective", "gtv", "gap"],
)
KEY_COLUMNS = ("param", "iter", "node_id")


def normalize_csv_text(text):
    """
    Canonical form of a harness CSV: known schemas keep their column order,
    otherwise the key column comes first and the rest are sorted by name.
    Numbers are printed with 17 significant digits.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("CSV input has no header")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(h == "" for h in header):
        raise ValueError("CSV header has empty or duplicate columns")
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"line {k}: expected {len(header)} fields, got {len(r)}")
    if header in KNOWN_SCHEMAS:
        order = header
    else:
        keys = [h for h in header if h in KEY_COLUMNS][:1]
        order = keys + sorted(h for h in header if h not in keys)
    idx = [header.index(h) for h in order]
    out = [[format_value(r[i]) for i in idx] for r in body]
    return write_csv(order, out)


def emit_plots_data(in_path, out_path=None):
    with open(in_path, newline="") as fh:
        text = fh.read()
    norm = normalize_csv_text(text)
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            fh.write(norm)
    return norm


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    return header, [[float(x) if x != "" else None for x in r] for r in rows[1:]]
