"""Command-line entry point.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .consequences import consequence_curve, naive_pois_ar_mle
from .data import AuxData, ObservedSeries, load_series, load_survey, write_series, write_survey
from .errors import NumericalError, ThinarError, ValidationError
from .fit import approx_counts, fit_approx, fit_exact
from .mcmc import ChainConfig, DrawStore, ess_and_summary
from .models import ApproxModel, ModelSpec, canonical_spec
from .moments import (ESTIMANDS, mom_estimate, mom_study, observed_moments, sample_moments,
                      stationary_latent_moments)
from .reconstruct import (SmootherPriors, interval_frame, prevalence_rollup, smooth_prevalence,
                          summarize_counts)
from .simulate import ThinnedArParams, simulate_general, simulate_survey

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST = "manifest.json"
PACKAGED_CONFIGS = ("sim_study", "rotavirus", "conurbation")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    """Everything needed to rerun a subcommand: ``thinar <argv>`` reproduces the outputs."""

    subcommand: str
    config_path: str | None
    input_paths: list[str]
    seed: int | None
    output_dir: str
    version: str
    config_hash: str | None
    argv: list[str]
    outputs: list[str] = field(default_factory=list)

    def write(self, directory: Path) -> Path:
        path = directory / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# -- helpers ----------------------------------------------------------------------------

def resolve_config(name_or_path: str) -> tuple[ModelSpec, str, bytes]:
    """Load a config from a file path or one of the packaged names."""
    path = Path(name_or_path)
    if path.is_file():
        raw = path.read_bytes()
        label = str(path)
    elif name_or_path in PACKAGED_CONFIGS:
        ref = resources.files("thinar") / "configs" / f"{name_or_path}.json"
        raw = ref.read_bytes()
        label = f"package:{name_or_path}"
    else:
        raise ValidationError(f"no config file or packaged config named {name_or_path!r}")
    try:
        spec = ModelSpec.from_dict(json.loads(raw))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{label}: invalid JSON ({exc})") from exc
    return spec, label, raw


def _chain_config(args) -> ChainConfig:
    return ChainConfig(n_chains=args.chains, n_iter=args.iter, n_warmup=args.warmup, thin=args.thin,
                       seed=args.seed, sampler=args.sampler, n_leapfrog=args.leapfrog)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _load_covariates(path, strata: list[str], t_len: int) -> dict[str, np.ndarray]:
    df = pd.read_csv(path, dtype={"stratum": str})
    for col in ("stratum", "t"):
        if col not in df.columns:
            raise ValidationError(f"{path}: missing column {col!r}")
    out = {}
    for name in [c for c in df.columns if c not in ("stratum", "t")]:
        cov = np.empty((len(strata), t_len))
        for i, lab in enumerate(strata):
            part = df[df["stratum"] == lab].sort_values("t")
            if not np.array_equal(part["t"].to_numpy(), np.arange(1, t_len + 1)):
                raise ValidationError(f"{path}: covariate rows for stratum {lab!r} must cover t=1..{t_len}")
            cov[i] = part[name].to_numpy(dtype=float)
        out[name] = cov
    return out


def _read_draws(path) -> DrawStore:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    if path.suffix == ".csv":
        return DrawStore.read_csv(path)
    return DrawStore.read_binary(path)


def _population(spec: ModelSpec | None, strata: list[str], override: float | None) -> np.ndarray:
    if override is not None:
        return np.full((len(strata), 1), override)
    if spec is None or spec.aux is None:
        raise ValidationError("population unknown: pass --population or use a config with an aux block")
    missing = [s for s in strata if s not in spec.aux.population]
    if missing:
        raise ValidationError(f"aux population missing for strata {missing}")
    return np.array([[spec.aux.population[s]] for s in strata])


# -- subcommands ------------------------------------------------------------------------

def cmd_simulate(args, out: Path, man: RunManifest) -> list[str]:
    if args.config:
        spec, man.config_path, raw = resolve_config(args.config)
        man.config_hash = hashlib.sha256(raw).hexdigest()
    else:
        if None in (args.nu, args.phi, args.pi):
            raise UsageError("simulate needs --config or all of --nu, --phi, --pi")
        ThinnedArParams(args.nu, args.phi, args.pi)
        spec = replace(canonical_spec(), truth={"nu.intercept": args.nu, "phi.intercept": args.phi,
                                                "pi.intercept": args.pi})
    t_len = args.t or spec.t_len
    if not t_len:
        raise UsageError("series length unknown: pass --t")
    if args.strata:
        strata = [s.strip() for s in args.strata.split(",")]
    elif spec.aux is not None:
        strata = list(spec.aux.population)
    else:
        strata = [str(i + 1) for i in range(spec.strata or 1)]
    covs = None
    if args.covariates:
        man.input_paths.append(str(args.covariates))
        covs = _load_covariates(args.covariates, strata, t_len)
    written = []
    width = max(3, len(str(args.reps)))
    for r in range(args.reps):
        sims = simulate_general(spec, t_len, strata, args.seed, covariates=covs, burn_in=args.burnin,
                                replicate=r)
        series = ObservedSeries(np.stack([s.y for s in sims]), strata, dict(covs or {}),
                                x=np.stack([s.x for s in sims]))
        name = f"series_{r + 1:0{width}d}.csv"
        write_series(out / name, series, include_x=not args.omit_x)
        written.append(name)
        if spec.aux is not None:
            days = range(args.survey_every, t_len + 1, args.survey_every)
            pop = [spec.aux.population[s] for s in strata]
            rows = simulate_survey(series.x, pop, days, args.survey_tests, spec.aux.window, args.seed,
                                   replicate=r)
            aux = AuxData(*map(np.array, zip(*rows)))
            name = f"survey_{r + 1:0{width}d}.csv"
            write_survey(out / name, aux, strata)
            written.append(name)
    return written


def cmd_moments(args, out: Path, man: RunManifest) -> list[str]:
    rows = []
    if args.data:
        man.input_paths.append(str(args.data))
        data = load_series(args.data)
        for i, lab in enumerate(data.strata):
            m = sample_moments(data.y[i])
            row = {"stratum": lab, "source": "sample", "mean": m.mean, "variance": m.variance, "acf1": m.acf1}
            try:
                e = mom_estimate(data.y[i])
                row.update(phi=e.phi, pi=e.pi, nu=e.nu, flags=";".join(e.flags))
            except NumericalError as exc:
                row.update(phi=np.nan, pi=np.nan, nu=np.nan, flags=str(exc))
            rows.append(row)
    else:
        if None in (args.nu, args.phi, args.pi):
            raise UsageError("moments needs --data or all of --nu, --phi, --pi")
        params = ThinnedArParams(args.nu, args.phi, args.pi)
        for source, m in (("latent", stationary_latent_moments(params.nu, params.phi)),
                          ("observed", observed_moments(params))):
            rows.append({"stratum": "", "source": source, "mean": m.mean, "variance": m.variance, "acf1": m.acf1})
    pd.DataFrame(rows).to_csv(out / "moments.csv", index=False)
    return ["moments.csv"]


def cmd_mom_study(args, out: Path, man: RunManifest) -> list[str]:
    grid = [(phi, pi) for phi in _parse_floats(args.phis) for pi in _parse_floats(args.pis)]
    lengths = [int(v) for v in _parse_floats(args.lengths)]
    df = mom_study(grid, args.nu, lengths, args.reps, args.seed, burn_in=args.burnin)
    df.to_csv(out / "mom_study.csv", index=False)
    fail = pd.DataFrame([{"phi": k[0], "pi": k[1], "T": k[2], "failures": v} for k, v in df.attrs["failures"].items()])
    fail.to_csv(out / "mom_failures.csv", index=False)
    return ["mom_study.csv", "mom_failures.csv"]


def cmd_consequences(args, out: Path, man: RunManifest) -> list[str]:
    ThinnedArParams(args.nu, args.phi, 0.5)
    df = consequence_curve(args.nu, args.phi, args.grid, args.divide_by_pi)
    df.to_csv(out / "consequences.csv", index=False)
    return ["consequences.csv"]


def _load_inputs(args, man: RunManifest):
    spec, man.config_path, raw = resolve_config(args.config)
    man.config_hash = hashlib.sha256(raw).hexdigest()
    man.input_paths.append(str(args.data))
    data = load_series(args.data)
    aux = None
    if getattr(args, "survey", None):
        man.input_paths.append(str(args.survey))
        aux, _ = load_survey(args.survey, data.strata)
    return spec, data, aux


def cmd_fit(args, out: Path, man: RunManifest) -> list[str]:
    if args.engine in ("naive", "mom"):
        man.input_paths.append(str(args.data))
        data = load_series(args.data)
        rows = []
        for i, lab in enumerate(data.strata):
            if args.engine == "naive":
                f = naive_pois_ar_mle(data.y[i])
                rows.append({"stratum": lab, "nu": f.nu_hat, "phi": f.phi_hat, "se_nu": f.se_nu,
                             "se_phi": f.se_phi, "loglik": f.loglik, "converged": f.converged})
            else:
                e = mom_estimate(data.y[i])
                rows.append({"stratum": lab, **{k: getattr(e, k) for k in ESTIMANDS}, "flags": ";".join(e.flags)})
        pd.DataFrame(rows).to_csv(out / "estimates.csv", index=False)
        return ["estimates.csv"]
    if not args.config:
        raise UsageError(f"--engine {args.engine} needs --config")
    spec, data, aux = _load_inputs(args, man)
    cfg = _chain_config(args)
    if args.engine == "approx":
        res = fit_approx(spec, data, cfg, aux=aux, level=args.level)
    else:
        if aux is not None:
            raise ValidationError("the exact engine does not use survey data")
        res = fit_exact(spec, data, cfg, level=args.level)
    res.store.write_binary(out / "draws.bin")
    res.store.write_csv(out / "draws.csv")
    res.summary.to_csv(out / "summary.csv", index=False)
    res.counts.to_frame().to_csv(out / "reconstruction.csv", index=False)
    written = ["draws.bin", "draws.csv", "summary.csv", "reconstruction.csv"]
    if res.n_excluded:
        print(f"reconstruction excluded {res.n_excluded} draws with invalid lambda", file=sys.stderr)
    return written


def _counts_from_draws(args, man: RunManifest):
    spec, data, aux = _load_inputs(args, man)
    man.input_paths.append(str(args.draws))
    store = _read_draws(args.draws)
    if "x" in store.extras:
        return spec, data, store.extras["x"], None
    rec = approx_counts(store, ApproxModel(spec, data, aux))
    return spec, data, rec.x, rec.valid


def cmd_reconstruct(args, out: Path, man: RunManifest) -> list[str]:
    _, data, x, valid = _counts_from_draws(args, man)
    summarize_counts(x, args.level, data.strata, valid=valid).to_frame().to_csv(out / "reconstruction.csv",
                                                                                index=False)
    return ["reconstruction.csv"]


def cmd_prevalence(args, out: Path, man: RunManifest) -> list[str]:
    spec, data, x, valid = _counts_from_draws(args, man)
    pop = _population(spec, data.strata, args.population)
    window = args.window or (spec.aux.window if spec.aux is not None else 14)
    flat = x.reshape(-1, *x.shape[-2:])
    if valid is not None:
        flat = flat[np.asarray(valid).reshape(-1)]
    prev = prevalence_rollup(flat, window, pop)
    frames = []
    for i, lab in enumerate(data.strata):
        f = interval_frame(prev[:, i, :], args.level)
        f.insert(0, "t", np.arange(1, data.t_len + 1))
        f.insert(0, "stratum", lab)
        frames.append(f)
    pd.concat(frames, ignore_index=True).to_csv(out / "prevalence.csv", index=False)
    written = ["prevalence.csv"]
    if args.survey:
        aux, _ = load_survey(args.survey, data.strata)
        cfg = _chain_config(args)
        frames = []
        for i, lab in enumerate(data.strata):
            rows = np.flatnonzero(aux.stratum == i)
            if rows.size == 0:
                continue
            rows = rows[np.argsort(aux.t[rows])]
            store = smooth_prevalence(aux.tests[rows], aux.positives[rows], SmootherPriors(), cfg,
                                      stream_keys=(i,))
            draws = store.draws.reshape(-1, store.draws.shape[2])[:, 1:]
            f = interval_frame(draws, args.level)
            f.insert(0, "t", aux.t[rows])
            f.insert(0, "stratum", lab)
            frames.append(f)
        pd.concat(frames, ignore_index=True).to_csv(out / "survey_smoothed.csv", index=False)
        written.append("survey_smoothed.csv")
    return written


def cmd_diagnose(args, out: Path, man: RunManifest) -> list[str]:
    man.input_paths.append(str(args.draws))
    store = _read_draws(args.draws)
    summary = ess_and_summary(store)
    summary.to_csv(out / "diagnostics.csv", index=False)
    worst = float(summary.rhat.max())
    print(f"{store.n_chains} chains x {store.n_draws} draws; max split R-hat {worst:.4f}; "
          f"min ESS {float(summary.ess.min()):.1f}")
    if store.stats:
        pd.DataFrame([{k: v for k, v in st.items() if not isinstance(v, list)} for st in store.stats]).to_csv(
            out / "chain_stats.csv", index_label="chain")
        return ["diagnostics.csv", "chain_stats.csv"]
    return ["diagnostics.csv"]


# -- parser -----------------------------------------------------------------------------

def _add_chain_args(p, chains=4, iters=7000, warmup=3000):
    p.add_argument("--chains", type=int, default=chains)
    p.add_argument("--iter", type=int, default=iters, help="iterations per chain, warmup included")
    p.add_argument("--warmup", type=int, default=warmup)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--leapfrog", type=int, default=32, help="HMC leapfrog steps per trajectory")
    p.add_argument("--sampler", choices=["hmc", "rwm"], default="hmc")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thinar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"thinar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="simulate reported and true series")
    p.add_argument("--config")
    p.add_argument("--nu", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--pi", type=float)
    p.add_argument("--t", type=int)
    p.add_argument("--burnin", type=int, default=100)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--strata", help="comma-separated stratum labels")
    p.add_argument("--covariates", type=Path, help="CSV with stratum,t,<covariate...>")
    p.add_argument("--omit-x", action="store_true", help="leave the true-count column out")
    p.add_argument("--survey-every", type=int, default=7, help="days between survey rounds (aux configs)")
    p.add_argument("--survey-tests", type=int, default=10000)
    common(p)

    p = sub.add_parser("moments", help="stationary or sample moments")
    p.add_argument("--nu", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--pi", type=float)
    p.add_argument("--data", type=Path)
    common(p, seed=False)

    p = sub.add_parser("mom-study", help="sampling distribution of the moment estimators")
    p.add_argument("--nu", type=float, default=10.0)
    p.add_argument("--phis", default="0.4,0.6,0.8")
    p.add_argument("--pis", default="0.4,0.6,0.8")
    p.add_argument("--lengths", default="50,100,500")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--burnin", type=int, default=50)
    common(p)

    p = sub.add_parser("consequences", help="naive-fit limits over a grid of reporting probabilities")
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--grid", type=int, default=99)
    p.add_argument("--divide-by-pi", action="store_true")
    common(p, seed=False)

    p = sub.add_parser("fit", help="fit a model to a series file")
    p.add_argument("--engine", choices=["approx", "exact", "naive", "mom"], required=True)
    p.add_argument("--config")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--survey", type=Path)
    p.add_argument("--level", type=float, default=0.9)
    _add_chain_args(p)
    common(p)

    for name, hlp in (("reconstruct", "integer count summaries from stored draws"),
                      ("prevalence", "rolling prevalence from stored draws")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--draws", type=Path, required=True)
        p.add_argument("--level", type=float, default=0.9 if name == "reconstruct" else 0.95)
        if name == "prevalence":
            p.add_argument("--survey", type=Path)
            p.add_argument("--window", type=int)
            p.add_argument("--population", type=float)
            _add_chain_args(p, iters=2000, warmup=1000)
        common(p)

    p = sub.add_parser("diagnose", help="convergence diagnostics for stored draws")
    p.add_argument("--draws", type=Path, required=True)
    common(p, seed=False)
    return parser


COMMANDS = {
    "simulate": cmd_simulate, "moments": cmd_moments, "mom-study": cmd_mom_study,
    "consequences": cmd_consequences, "fit": cmd_fit, "reconstruct": cmd_reconstruct,
    "prevalence": cmd_prevalence, "diagnose": cmd_diagnose,
}


def run_subcommand(argv: list[str]) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    argv = list(argv)
    try:
        args = build_parser().parse_args(argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        man = RunManifest(args.command, None, [], getattr(args, "seed", None), str(out), __version__, None, argv)
        man.outputs = COMMANDS[args.command](args, out, man)
        man.write(out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ThinarError, ValueError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    code = run_subcommand(sys.argv[1:] if argv is None else argv)
    raise SystemExit(code)
