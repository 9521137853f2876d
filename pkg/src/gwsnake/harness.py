"""Replicated Monte Carlo experiments against the limit laws.

Each replica samples one conditioned tree (plus labels when the model
has displacements) on its own random stream and reduces to a small
vector of functionals at the configured grid points.  Limit covariances
are tested as ratios against the simulated mean of the running-minimum
kernel, which is exactly the limit constant without any closed-form
excursion integrals.  Aggregation is single-threaded in replica order,
so a manifest is bit-identical across reruns and worker counts.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import (Model, ModelValidationError, moments,
                            OffspringDistribution, parse_model)
from .processes import (diagnostics, label_decomposition, lineage_field_raw,
                        PathFunction)
from .sampler import (BudgetExceededError, GENERATOR_NAME, assign_labels,
                      derive_stream, generator, sample_conditioned_tree)
from .trees import lineage_index_set

RUN_FORMAT_VERSION = 1
KS_MIN_REPLICAS = 100
BOOTSTRAP_STREAM = 2 ** 32 - 1  # reserved stream index for resampling


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the C library erf (correctly rounded to
    double precision, far below the 1e-10 documentation bar)."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class ExperimentConfig:
    """One replicated run: model, size, replica count, evaluation grid,
    statistics selection, and randomness/bookkeeping knobs."""

    model: Model
    n_edges: int
    replicas: int
    grid: tuple[float, ...]
    stats: tuple[str, ...] = ("cov",)
    master_seed: int = 0
    workers: int = 1
    ks_floor: float = 0.05
    bootstrap_resamples: int = 200
    dump_paths: str | None = None
    max_attempts: int = 10 ** 6

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError("need at least 2 replicas")
        if self.n_edges < 1:
            raise ValueError("need at least 1 edge")
        if not self.grid:
            raise ValueError("empty evaluation grid")
        if any(not 0.0 < s < 1.0 for s in self.grid):
            raise ValueError("grid points must lie strictly inside (0, 1); "
                             "the limit laws degenerate at the endpoints")
        bad = set(self.stats) - {"cov", "ks", "indep", "diag"}
        if bad:
            raise ValueError(f"unknown statistics {sorted(bad)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.replicas >= BOOTSTRAP_STREAM:
            raise ValueError("replica count collides with the reserved "
                             "bootstrap stream")

    def needs_labels(self) -> bool:
        return bool({"ks", "indep"} & set(self.stats)) or (
            "cov" in self.stats and self.model.nu is not None)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "n_edges": self.n_edges,
                "replicas": self.replicas, "grid": list(self.grid),
                "stats": list(self.stats), "master_seed": self.master_seed,
                "workers": self.workers, "ks_floor": self.ks_floor,
                "bootstrap_resamples": self.bootstrap_resamples,
                "max_attempts": self.max_attempts}


@dataclass
class ReplicaSamples:
    """Per-replica functionals, one row per replica in stream order."""

    config: ExperimentConfig
    h_grid: np.ndarray                     # (R, S)
    hcheck: np.ndarray                     # (R, S, S) running-min kernel
    g_grid: np.ndarray | None = None       # (R, nI, S)
    r_grid: np.ndarray | None = None       # (R, S)
    r1_grid: np.ndarray | None = None      # (R, S)
    r2_grid: np.ndarray | None = None      # (R, S)
    resid_split: np.ndarray | None = None  # (R,)
    resid_field: np.ndarray | None = None  # (R,)
    diag: dict[str, np.ndarray] = field(default_factory=dict)


def _interp_at(vals: np.ndarray, grid: np.ndarray) -> np.ndarray:
    xs = np.linspace(0.0, 1.0, vals.shape[0])
    return np.interp(grid, xs, vals)


def _replica_chunk(payload: dict) -> dict:
    """Feature rows for a contiguous replica range (worker entry point)."""
    model = parse_model(payload["model"])
    n = payload["n_edges"]
    grid = np.asarray(payload["grid"])
    needs = payload["needs"]
    S = grid.shape[0]
    mu = model.mu
    ms = moments(mu, model.nu) if model.nu is not None else None
    nI = mu.K * (mu.K + 1) // 2
    mean_flat = ms.mean_flat() if ms is not None else None
    quarter = n ** 0.25
    dump_dir = payload.get("dump_paths")

    rows: dict[str, list] = {k: [] for k in
                             ("h_grid", "hcheck", "g_grid", "r_grid",
                              "r1_grid", "r2_grid", "resid_split",
                              "resid_field")}
    diag_rows: dict[str, list] = {}
    for i in range(payload["start"], payload["stop"]):
        rng = generator(derive_stream(payload["master_seed"], i))
        try:
            tree = sample_conditioned_tree(mu, n, rng,
                                           max_attempts=payload["max_attempts"])
        except BudgetExceededError as e:
            raise BudgetExceededError(e.attempts, replica=i) from None
        h = PathFunction(tree.depth / math.sqrt(n))
        rows["h_grid"].append(h(grid))
        hc = np.empty((S, S))
        for a in range(S):
            hc[a, a] = h(grid[a])
            for b in range(a + 1, S):
                hc[a, b] = hc[b, a] = h.minimum(grid[a], grid[b])
        rows["hcheck"].append(hc)

        g = None
        if "g" in needs:
            g = lineage_field_raw(tree, mu) / quarter
            rows["g_grid"].append(
                np.stack([_interp_at(g[:, q], grid) for q in range(nI)]))

        lt = None
        if "labels" in needs:
            lt = assign_labels(tree, model.nu, rng)
            r_vals = lt.labels / quarter
            rows["r_grid"].append(_interp_at(r_vals, grid))
            split = label_decomposition(lt, ms)
            rows["r1_grid"].append(_interp_at(split.r1.values, grid))
            rows["r2_grid"].append(_interp_at(split.r2.values, grid))
            rows["resid_split"].append(float(np.abs(
                r_vals - split.r1.values - split.r2.values
                - split.drift.values).max()))
            if g is not None:
                recon = g @ mean_flat + split.drift.values
                rows["resid_field"].append(float(np.abs(r_vals - recon).max()))
        if "diag" in needs:
            d = diagnostics(tree, mu)
            for key in ("height_contour_gap", "increment_over_log_n",
                        "last_depth_over_log_n", "concentration_stat"):
                diag_rows.setdefault(key, []).append(getattr(d, key))
        if dump_dir:
            _dump_replica(dump_dir, i, tree, lt, g, n)

    out: dict = {}
    for key, lst in rows.items():
        out[key] = np.array(lst) if lst else None
    out["diag"] = {k: np.array(v) for k, v in diag_rows.items()}
    return out


def _dump_replica(dump_dir: str, index: int, tree, lt, g, n: int) -> None:
    os.makedirs(dump_dir, exist_ok=True)
    import csv
    path = Path(dump_dir) / f"replica_{index:06d}.csv"
    quarter = n ** 0.25
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        head = ["s", "h"]
        cols = [np.linspace(0.0, 1.0, tree.n_nodes),
                tree.depth / math.sqrt(n)]
        if lt is not None:
            head.append("r")
            cols.append(lt.labels / quarter)
        if g is not None:
            # recover K from nI = K(K+1)/2
            K = int((math.isqrt(8 * g.shape[1] + 1) - 1) // 2)
            for (k, j) in lineage_index_set(K):
                head.append(f"g_{k}_{j}")
            cols.extend(g.T)
        w.writerow(head)
        for row in zip(*cols):
            w.writerow([repr(float(x)) for x in row])


def collect_samples(cfg: ExperimentConfig) -> ReplicaSamples:
    """Run all replicas and gather their functionals in stream order."""
    needs = set()
    if "cov" in cfg.stats:
        needs.add("g")
    if cfg.needs_labels():
        if cfg.model.nu is None:
            raise ModelValidationError(
                "label statistics need displacement laws in the model")
        ms = moments(cfg.model.mu, cfg.model.nu)
        if not ms.mean_is_zero:
            raise ModelValidationError(
                f"label statistics need a globally centered model; "
                f"the weighted displacement mean is {ms.global_mean}")
        if ms.degenerate:
            raise ModelValidationError(
                "label statistics need a non-degenerate label variance")
        needs.add("labels")
        if "cov" in cfg.stats:
            needs.add("g")
    if "diag" in cfg.stats:
        needs.add("diag")

    payload = {"model": cfg.model.to_dict(), "n_edges": cfg.n_edges,
               "grid": list(cfg.grid), "needs": sorted(needs),
               "master_seed": cfg.master_seed, "dump_paths": cfg.dump_paths,
               "max_attempts": cfg.max_attempts}
    R = cfg.replicas
    if cfg.workers == 1:
        chunks = [_replica_chunk({**payload, "start": 0, "stop": R})]
    else:
        bounds = np.linspace(0, R, cfg.workers * 4 + 1).astype(int)
        payloads = [{**payload, "start": int(a), "stop": int(b)}
                    for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_replica_chunk, payloads))

    def cat(key):
        parts = [c[key] for c in chunks if c[key] is not None]
        return np.concatenate(parts) if parts else None

    diag = {}
    for c in chunks:
        for k, v in c["diag"].items():
            diag.setdefault(k, []).append(v)
    diag = {k: np.concatenate(v) for k, v in diag.items()}
    return ReplicaSamples(config=cfg, h_grid=cat("h_grid"),
                          hcheck=cat("hcheck"), g_grid=cat("g_grid"),
                          r_grid=cat("r_grid"), r1_grid=cat("r1_grid"),
                          r2_grid=cat("r2_grid"),
                          resid_split=cat("resid_split"),
                          resid_field=cat("resid_field"), diag=diag)


def _bootstrap_weights(R: int, B: int, master_seed: int) -> np.ndarray:
    """(B, R) multinomial resampling weights on the reserved stream."""
    rng = generator(derive_stream(master_seed, BOOTSTRAP_STREAM))
    idx = rng.integers(0, R, size=(B, R))
    w = np.zeros((B, R))
    for b in range(B):
        w[b] = np.bincount(idx[b], minlength=R)
    return w


def covariance_ratios(samples: ReplicaSamples) -> list[dict]:
    """Empirical-covariance to running-min-kernel ratios, bootstrap SEs.

    For processes A, B at grid points s, t the reported ratio is
    cov(A_i(s), B_i(t)) / mean(min of the height path on [s, t]); its
    limit is the conditional-covariance constant: beta^2 for the label
    path against itself, (-mu_k mu_k' + mu_k [same index]) for the
    ancestor-field components.  The empirical means are subtracted
    because the marginals keep O(n^{-1/4})-scale biases at finite n
    (the label path starts visibly positive, for instance) that poison
    the plain product mean at well-separated grid points; the raw
    product ratio is reported alongside as ``product_ratio``.
    """
    cfg = samples.config
    mu = cfg.model.mu
    grid = cfg.grid
    S = len(grid)
    R = samples.h_grid.shape[0]
    B = cfg.bootstrap_resamples
    w = _bootstrap_weights(R, B, cfg.master_seed)

    den = samples.hcheck.reshape(R, S * S)
    den_mean = den.mean(axis=0)
    den_boot = (w @ den) / R

    entries = []

    def add(name_a, idx_a, name_b, idx_b, series_a, series_b, target):
        for ai in range(S):
            for bi in range(S):
                a = series_a[:, ai]
                b = series_b[:, bi]
                num = a * b
                dm = den_mean[ai * S + bi]
                flagged = bool(abs(dm) < 1e-9)
                cov = float(num.mean() - a.mean() * b.mean())
                ratio = cov / dm if not flagged else float("nan")
                prod_ratio = float(num.mean() / dm) if not flagged \
                    else float("nan")
                cb = (w @ num) / R - ((w @ a) / R) * ((w @ b) / R)
                db = den_boot[:, ai * S + bi]
                with np.errstate(divide="ignore", invalid="ignore"):
                    rb = cb / db
                se = float(np.std(rb, ddof=1)) if not flagged else float("nan")
                entries.append({
                    "process_a": name_a, "index_a": idx_a,
                    "process_b": name_b, "index_b": idx_b,
                    "s": grid[ai], "t": grid[bi],
                    "ratio": ratio, "product_ratio": prod_ratio,
                    "se": se, "target": float(target),
                    "denominator_mean": float(dm),
                    "flagged_degenerate": flagged})

    if samples.g_grid is not None:
        comps = [(k, j) for k in mu.supported() if k >= 1
                 for j in range(1, k + 1)]
        flat = {kj: kj[0] * (kj[0] - 1) // 2 + kj[1] - 1 for kj in comps}
        for x, (k, j) in enumerate(comps):
            for (k2, j2) in comps[x:]:
                target = float(mu[k]) * (
                    ((k, j) == (k2, j2)) - float(mu[k2]))
                add("lineage_field", [k, j], "lineage_field", [k2, j2],
                    samples.g_grid[:, flat[(k, j)], :],
                    samples.g_grid[:, flat[(k2, j2)], :], target)
    if samples.r_grid is not None:
        ms = moments(mu, cfg.model.nu)
        add("labels", None, "labels", None, samples.r_grid, samples.r_grid,
            float(ms.global_second))
    return entries


def _grid_index(grid, s: float) -> int:
    for i, x in enumerate(grid):
        if abs(x - s) < 1e-12:
            return i
    raise ValueError(f"s={s} is not on the evaluation grid {tuple(grid)}")


def ks_normality(samples: ReplicaSamples, s: float, process="labels",
                 variance_rule: float | None = None) -> dict:
    """Kolmogorov-Smirnov distance of the conditionally standardized
    marginal z = value / sqrt(c * h(s)) from the standard normal.

    ``process`` is "labels" (c defaults to the label-variance constant
    beta^2) or ("lineage_field", k, j) (c defaults to mu_k - mu_k^2).
    Replicas with h(s) below the configured floor are excluded and
    counted; fewer than 100 survivors is an error.
    """
    cfg = samples.config
    si = _grid_index(cfg.grid, s)
    mu = cfg.model.mu
    if process == "labels":
        if samples.r_grid is None:
            raise ValueError("no label samples were collected")
        vals = samples.r_grid[:, si]
        c = variance_rule if variance_rule is not None else float(
            moments(mu, cfg.model.nu).global_second)
    else:
        name, k, j = process
        if name != "lineage_field" or samples.g_grid is None:
            raise ValueError("process must be 'labels' or "
                             "('lineage_field', k, j)")
        vals = samples.g_grid[:, k * (k - 1) // 2 + j - 1, si]
        c = variance_rule if variance_rule is not None else (
            float(mu[k]) - float(mu[k]) ** 2)
    h = samples.h_grid[:, si]
    mask = h >= cfg.ks_floor
    used = int(mask.sum())
    excluded = int((~mask).sum())
    if used < KS_MIN_REPLICAS:
        raise ValueError(f"only {used} replicas above the height floor")
    z = np.sort(vals[mask] / np.sqrt(c * h[mask]))
    cdf = np.array([normal_cdf(x) for x in z])
    ranks = np.arange(1, used + 1) / used
    ks = float(max(np.abs(ranks - cdf).max(),
                   np.abs(cdf - (np.arange(used) / used)).max()))
    frac = excluded / (used + excluded)
    return {"s": s, "process": "labels" if process == "labels" else list(process),
            "variance_constant": c, "ks_stat": ks,
            "z_mean": float(z.mean()), "z_var": float(z.var(ddof=1)),
            "used": used, "excluded": excluded, "excluded_frac": frac,
            "flagged": bool(frac >= 0.05)}


def independence_check(samples: ReplicaSamples, s: float, t: float) -> dict:
    """Correlation of the centered-displacement and ancestor-fluctuation
    label parts across replicas; the limit predicts 0."""
    cfg = samples.config
    if samples.r1_grid is None:
        raise ValueError("no label decomposition samples were collected")
    a = samples.r1_grid[:, _grid_index(cfg.grid, s)]
    b = samples.r2_grid[:, _grid_index(cfg.grid, t)]
    R = a.shape[0]
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    if sa < 1e-12 or sb < 1e-12:
        return {"s": s, "t": t, "correlation": None, "se": None,
                "degenerate": True,
                "note": "a component is degenerate (zero variance)"}
    corr = float(np.corrcoef(a, b)[0, 1])
    return {"s": s, "t": t, "correlation": corr,
            "se": 1.0 / math.sqrt(R), "degenerate": False}


def multinomial_limit_check(mu: OffspringDistribution,
                            sizes: tuple[tuple[int, int], ...],
                            replicas: int = 10 ** 5, master_seed: int = 0,
                            beta: float = 2.0) -> dict:
    """Direct simulation of the centered multinomial vector
    (counts - mu h) / n^(1/4) for (n, h) pairs.

    Reports the empirical covariance against (h/sqrt(n)) *
    (-p_i p_j + p_i [i = j]) and the moment ratio
    E ||.||_1^beta / (h/sqrt(n))^(beta/2), which stays bounded.
    """
    idx = lineage_index_set(mu.K)
    p = np.array([float(mu[k]) for k, j in idx])
    rng = generator(derive_stream(master_seed, 0))
    out = []
    for n, h in sizes:
        lam = h / math.sqrt(n)
        if h == 0:
            g = np.zeros((replicas, len(idx)))
        else:
            m = rng.multinomial(h, p, size=replicas)
            g = (m - h * p) / n ** 0.25
        emp = np.cov(g, rowvar=False) if len(idx) > 1 else np.array(
            [[float(np.var(g, ddof=1))]])
        target = lam * (np.diag(p) - np.outer(p, p))
        max_dev = float(np.abs(emp - target).max())
        norms = np.abs(g).sum(axis=1)
        ratio = float((norms ** beta).mean() / lam ** (beta / 2)) if h else 0.0
        out.append({"n": n, "h": h, "lambda": lam,
                    "max_cov_deviation": max_dev,
                    "cov_se_scale": float(lam / math.sqrt(replicas)),
                    "moment_ratio": ratio, "beta": beta,
                    "max_g": float(np.abs(g).max())})
    return {"pairs": out, "replicas": replicas}


@dataclass
class RunManifest:
    """Self-describing record of one replicated run."""

    config: ExperimentConfig
    estimates: dict
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {"format_version": RUN_FORMAT_VERSION, "kind": "mc_run",
                "config": self.config.to_dict(),
                "generator": {"name": GENERATOR_NAME,
                              "numpy": np.__version__},
                "estimates": self.estimates,
                "timing": {"wall_clock_s": self.wall_clock_s}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write(self, path: str | Path) -> None:
        """Atomic write: temp file in the target directory, then rename."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".",
                                   prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(self.to_json())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def run_ensemble(cfg: ExperimentConfig) -> RunManifest:
    """Collect all replicas and assemble the requested estimates."""
    t0 = time.perf_counter()
    samples = collect_samples(cfg)
    estimates: dict = {}
    if "cov" in cfg.stats:
        estimates["covariance"] = covariance_ratios(samples)
    if "ks" in cfg.stats:
        estimates["ks"] = [ks_normality(samples, s) for s in cfg.grid]
    if "indep" in cfg.stats:
        estimates["independence"] = [
            independence_check(samples, s, t)
            for s in cfg.grid for t in cfg.grid]
    if samples.resid_split is not None:
        resid = {"split_max": float(samples.resid_split.max())}
        if samples.resid_field is not None:
            resid["field_max"] = float(samples.resid_field.max())
        estimates["identity_residuals"] = resid
    if "diag" in cfg.stats:
        estimates["diagnostics"] = {
            f"{k}_median": float(np.median(v))
            for k, v in sorted(samples.diag.items())}
    manifest = RunManifest(config=cfg, estimates=estimates,
                           wall_clock_s=time.perf_counter() - t0)
    return manifest
