"""Config-driven experiment runner: factorize, verify, sweep, print-defaults.

Experiments are described by a TOML file (schema below); outputs are a
factorization bundle with certificate.json, and for sweeps an RFC-4180 CSV
plus a JSON plot-data file.  Exit codes: 0 pass, 1 certified failure,
2 usage or I/O problems.

Wall-clock timings go to a separate timing.json sidecar, never into the
CSV, so reruns with fixed seeds produce byte-identical CSVs and bundles.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .bundle import load_bundle, save_bundle
from .errors import (
    BudgetExceededError,
    BundleIntegrityError,
    ConfigError,
    FactorizationError,
)
from .pipeline import (
    CONTINUOUS,
    SMOOTH,
    Factorization,
    factorize_continuous,
    factorize_smooth,
    verify,
)
from .spaces import CompactSample, Grid, Seminorm, SeminormFamily
from .testbed import FamilySpec, OperatorSpec

CSV_SCHEMA = "opfactor-sweep-csv v1"

DEFAULT_TOML = """\
# opfactor experiment configuration (schema v1)

[grid]
points = 129
a = 0.0
b = 1.0

[operator]
# identity | scale | shift | antiderivative | poisson1d | pointwise
kind = "antiderivative"
alpha = 1.0        # scale factor (kind = "scale")
offset = 0.0       # additive shift (kind = "shift")
sigma = "square"   # pointwise nonlinearity: square | sin | relu | tanh

[family]
# fourier_ball | bump_family (finite_set is API-only)
kind = "fourier_ball"
modes = 8
decay = 2.0
radius = 1.0
width_range = [0.1, 0.3]
center_range = [0.2, 0.8]
seed = 2025

[seminorms]
# entries: "sup", "l2" (cell-measure weighted), or "sobolev:<order>:<lam>"
input = ["sup"]
output = "sup"

[mode]
kind = "continuous"  # continuous | smooth
k = 1                # smooth only: certified derivative orders
degree = 2           # smooth only: polynomial total degree

[tolerance]
eps = 0.05
# eps_list = [0.2, 0.1, 0.05]       # sweep over tolerances
# latent_dim_list = [2, 4, 6]       # or sweep over pinned latent dims
split = 0.5
safety = 1.1

[budgets]
net_draws = 4096
modulus_pairs = 1024
validate_draws = 400
verify_draws = 1000
tuple_cap = 10000
net_margin = 1.25
retries = 3

[run]
seed = 20260810
out_dir = "runs/experiment"
"""


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment description; round-trips through TOML."""

    grid: Grid
    operator: OperatorSpec
    family: FamilySpec
    fam_in: SeminormFamily
    p_out: Seminorm
    mode: str
    k: int
    degree: int
    eps_list: tuple[float, ...]
    latent_dims: tuple[int, ...] | None
    split: float
    safety: float
    net_draws: int
    modulus_pairs: int
    validate_draws: int
    verify_draws: int
    tuple_cap: int
    net_margin: float
    retries: int
    seed: int
    out_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def eps(self) -> float:
        return self.eps_list[0]


def _seminorm_from_token(token, grid: Grid, name: str) -> Seminorm:
    if isinstance(token, str):
        if token == "sup":
            return Seminorm.sup(name)
        if token == "l2":
            return Seminorm.weighted_l2(grid.cell_weights, name)
        if token.startswith("sobolev:"):
            parts = token.split(":")
            if len(parts) != 3:
                raise ConfigError(f"bad sobolev token {token!r}, want "
                                  "'sobolev:<order>:<lam>'", "seminorms")
            return Seminorm.sobolev(int(parts[1]), float(parts[2]), name)
    raise ConfigError(f"unknown seminorm token {token!r}", "seminorms")


def _get(table: dict, key: str, default, section: str):
    val = table.get(key, default)
    if val is None:
        raise ConfigError(f"missing required key {key!r}", section)
    return val


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error in {path}: {exc}")

    gtab = raw.get("grid", {})
    grid = Grid(float(_get(gtab, "a", 0.0, "grid")),
                float(_get(gtab, "b", 1.0, "grid")),
                int(_get(gtab, "points", 129, "grid")))

    otab = raw.get("operator", {})
    operator = OperatorSpec(
        kind=_get(otab, "kind", "antiderivative", "operator"), grid=grid,
        alpha=float(otab.get("alpha", 1.0)),
        offset=float(otab.get("offset", 0.0)),
        sigma=otab.get("sigma", "square"),
    )

    ftab = raw.get("family", {})
    fkind = _get(ftab, "kind", "fourier_ball", "family")
    if fkind == "finite_set":
        raise ConfigError("finite_set families are API-only", "family")
    family = FamilySpec(
        kind=fkind, grid=grid, seed=int(ftab.get("seed", 0)),
        modes=int(ftab.get("modes", 8)), decay=float(ftab.get("decay", 2.0)),
        radius=float(ftab.get("radius", 1.0)),
        width_range=tuple(float(x) for x in ftab.get("width_range", (0.1, 0.3))),
        center_range=tuple(float(x) for x in ftab.get("center_range", (0.2, 0.8))),
    )

    stab = raw.get("seminorms", {})
    in_tokens = _get(stab, "input", ["sup"], "seminorms")
    if not isinstance(in_tokens, list) or not in_tokens:
        raise ConfigError("input must be a nonempty list", "seminorms")
    fam_in = SeminormFamily(tuple(
        _seminorm_from_token(tok, grid, f"in{i}" if len(in_tokens) > 1 else
                             (tok if isinstance(tok, str) else f"in{i}"))
        for i, tok in enumerate(in_tokens)))
    p_out = _seminorm_from_token(_get(stab, "output", "sup", "seminorms"),
                                 grid, "out")

    mtab = raw.get("mode", {})
    mode = _get(mtab, "kind", "continuous", "mode")
    if mode not in (CONTINUOUS, SMOOTH):
        raise ConfigError(f"unknown mode {mode!r}", "mode")
    k = int(mtab.get("k", 1))
    degree = int(mtab.get("degree", 2))

    ttab = raw.get("tolerance", {})
    if "eps_list" in ttab:
        eps_list = tuple(float(x) for x in ttab["eps_list"])
    else:
        eps_list = (float(_get(ttab, "eps", 0.05, "tolerance")),)
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ConfigError("eps values must be positive", "tolerance")
    latent_dims = None
    if "latent_dim_list" in ttab:
        latent_dims = tuple(int(x) for x in ttab["latent_dim_list"])
        if not latent_dims or any(d < 0 for d in latent_dims):
            raise ConfigError("latent dims must be >= 0", "tolerance")

    btab = raw.get("budgets", {})
    budgets = {key: int(btab.get(key, dflt)) for key, dflt in
               (("net_draws", 4096), ("modulus_pairs", 1024),
                ("validate_draws", 400), ("verify_draws", 1000),
                ("tuple_cap", 10_000), ("retries", 3))}
    if any(v < 1 for v in budgets.values() if v is not None):
        raise ConfigError("budgets must be positive", "budgets")

    rtab = raw.get("run", {})
    return ExperimentConfig(
        grid=grid, operator=operator, family=family, fam_in=fam_in,
        p_out=p_out, mode=mode, k=k, degree=degree, eps_list=eps_list,
        latent_dims=latent_dims,
        split=float(ttab.get("split", 0.5)),
        safety=float(ttab.get("safety", 1.1)),
        net_draws=budgets["net_draws"],
        modulus_pairs=budgets["modulus_pairs"],
        validate_draws=budgets["validate_draws"],
        verify_draws=budgets["verify_draws"],
        tuple_cap=budgets["tuple_cap"],
        net_margin=float(btab.get("net_margin", 1.25)),
        retries=budgets["retries"],
        seed=int(rtab.get("seed", 0)),
        out_dir=str(rtab.get("out_dir", "runs/experiment")),
        raw=raw,
    )


def run_factorization(config: ExperimentConfig, eps: float,
                      fixed_latent_dim: int | None = None) -> Factorization:
    """Run one factorization described by the config at tolerance eps."""
    sample = CompactSample(
        centers=tuple(config.family.draw(1, config.seed)),
        delta={p.name: float("inf") for p in config.fam_in},
        sampler=config.family,
        seed=config.seed,
    )
    common = dict(
        split=config.split, safety=config.safety,
        net_budget=config.net_draws, pair_budget=config.modulus_pairs,
        validate_draws=config.validate_draws, net_margin=config.net_margin,
        retries=config.retries, seed=config.seed,
        fixed_latent_dim=fixed_latent_dim,
    )
    if config.mode == CONTINUOUS:
        return factorize_continuous(config.operator, sample, config.fam_in,
                                    config.p_out, eps, **common)
    return factorize_smooth(config.operator, sample, config.fam_in,
                            config.p_out, eps, k=config.k,
                            degree=config.degree, tuple_cap=config.tuple_cap,
                            **common)


def _print_certificate(cert) -> None:
    print(json.dumps(cert.to_dict(), sort_keys=True, indent=1))


def cmd_factorize(args) -> int:
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out or config.out_dir)
    try:
        fac = run_factorization(config, config.eps)
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        if exc.result is not None:
            save_bundle(exc.result, out_dir, config.operator, config.family)
            _print_certificate(exc.result.certificate)
        return 1
    except FactorizationError as exc:
        print(f"factorization failed: {exc}", file=sys.stderr)
        return 1
    save_bundle(fac, out_dir, config.operator, config.family)
    _print_certificate(fac.certificate)
    return 0 if fac.certificate.passed else 1


def cmd_verify(args) -> int:
    try:
        loaded = load_bundle(args.bundle)
    except BundleIntegrityError as exc:
        print(f"bundle error: {exc}", file=sys.stderr)
        return 2
    fac = loaded.factorization
    seed = args.seed if args.seed is not None else fac.certificate.seed
    draws = args.draws if args.draws is not None else fac.certificate.draw_count
    sample = fac.sample
    cert = verify(fac, loaded.operator, sample, draws, seed)
    _print_certificate(cert)
    return 0 if cert.passed else 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _sweep_one(config: ExperimentConfig, eps: float, out_root: Path, idx: int,
               fixed_latent_dim: int | None):
    t0 = time.perf_counter()
    row: dict = {"eps": eps}
    try:
        fac = run_factorization(config, eps, fixed_latent_dim)
        cert = fac.certificate
        status = "pass" if cert.passed else "fail"
    except BudgetExceededError as exc:
        fac = exc.result
        cert = fac.certificate if fac is not None else None
        status = "budget-exceeded"
    except FactorizationError as exc:
        row.update(m="", n_F="", measured="", status=f"error:{type(exc).__name__}")
        return row, time.perf_counter() - t0, None
    if fac is not None:
        save_bundle(fac, out_root / f"setting_{idx}", config.operator,
                    config.family)
    row["m"] = cert.latent_dim if cert else ""
    row["n_F"] = cert.decoder_dim if cert else ""
    row["measured"] = cert.measured if cert else ""
    if config.mode == SMOOTH and cert and cert.per_order:
        for i, err in enumerate(cert.per_order):
            row[f"err_order_{i}"] = err
    row["status"] = status
    return row, time.perf_counter() - t0, cert


def cmd_sweep(args) -> int:
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_root = Path(args.out or config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    if config.latent_dims is not None:
        settings = [(config.eps, dim) for dim in config.latent_dims]
    else:
        settings = [(eps, None) for eps in config.eps_list]
    jobs = max(1, args.jobs)
    results: list = [None] * len(settings)
    if jobs == 1:
        for i, (eps, dim) in enumerate(settings):
            results[i] = _sweep_one(config, eps, out_root, i, dim)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_one, config, eps, out_root, i, dim)
                       for i, (eps, dim) in enumerate(settings)]
            results = [f.result() for f in futures]

    columns = ["eps", "m", "n_F", "measured"]
    if config.mode == SMOOTH:
        columns += [f"err_order_{i}" for i in range(config.k + 1)]
    columns.append("status")
    lines = [f"# {CSV_SCHEMA}", ",".join(columns)]
    for row, _, _ in results:
        cells = []
        for col in columns:
            val = row.get(col, "")
            cells.append(_fmt(val) if isinstance(val, float) else str(val))
        lines.append(",".join(cells))
    csv_text = "\r\n".join(lines) + "\r\n"
    (out_root / "sweep.csv").write_text(csv_text, newline="")

    # the sweep checks the latent-dimension monotonicity invariant itself:
    # tightening eps must never shrink the latent spaces
    monotone = True
    if config.latent_dims is None:
        passed = [(row["eps"], row["m"], row["n_F"]) for row, _, _ in results
                  if row.get("status") == "pass"]
        passed.sort(key=lambda r: -r[0])
        ms = [r[1] for r in passed]
        nfs = [r[2] for r in passed]
        monotone = ms == sorted(ms) and nfs == sorted(nfs)
        if not monotone:
            print("warning: latent dimensions not monotone across the eps "
                  "sweep", file=sys.stderr)

    plot = {
        "x": [row["eps"] if config.latent_dims is None else dim
              for (row, _, _), (eps, dim) in zip(results, settings)],
        "x_axis": "eps" if config.latent_dims is None else "latent_dim",
        "monotone": monotone,
        "series": {
            "m": [row.get("m", None) for row, _, _ in results],
            "n_F": [row.get("n_F", None) for row, _, _ in results],
            "measured": [row.get("measured", None) for row, _, _ in results],
        },
    }
    (out_root / "sweep_plot.json").write_text(
        json.dumps(plot, sort_keys=True, indent=1) + "\n")
    (out_root / "timing.json").write_text(json.dumps(
        {"wall_seconds": [t for _, t, _ in results]}, indent=1) + "\n")
    print(csv_text, end="")
    return 0 if all(r[0].get("status") == "pass" for r in results) else 1


def cmd_print_defaults(_args) -> int:
    print(DEFAULT_TOML, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opfactor",
        description="Certified finite-dimensional factorizations of operators "
                    "between discretized function spaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fact = sub.add_parser("factorize", help="run one factorization and "
                            "write a bundle + certificate.json")
    p_fact.add_argument("--config", required=True, help="TOML experiment file")
    p_fact.add_argument("--out", help="output directory (default from config)")
    p_fact.set_defaults(func=cmd_factorize)

    p_ver = sub.add_parser("verify", help="re-certify a stored bundle")
    p_ver.add_argument("bundle", help="bundle directory")
    p_ver.add_argument("--draws", type=int, default=None,
                       help="fresh draw count (default: stored)")
    p_ver.add_argument("--seed", type=int, default=None,
                       help="draw seed (default: stored)")
    p_ver.set_defaults(func=cmd_verify)

    p_sweep = sub.add_parser(
        "sweep", help="factorize over an eps list; writes sweep.csv "
        "(columns: eps, m, n_F, measured[, err_order_i...], status), "
        "sweep_plot.json, and timing.json")
    p_sweep.add_argument("--config", required=True, help="TOML experiment "
                         "file with tolerance.eps_list")
    p_sweep.add_argument("--out", help="output directory (default from config)")
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel settings (rows stay in input order)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_def = sub.add_parser("print-defaults",
                           help="print the canonical default TOML config")
    p_def.set_defaults(func=cmd_print_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
