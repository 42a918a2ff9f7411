"""Command-line interface.

Every writing command emits a run manifest next to its main output: a JSON
record of the package version, the seed, SHA-256 hashes of inputs and
outputs, and wall time.  Outputs are written atomically (temp file in the
target directory, then rename).  Options can come from an INI config file
(section [lingermort]); explicit flags win over config values.

Exit codes: 0 success, 2 usage or input-validation error (with a JSON error
report on stderr), 3 numerical failure.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import sys
import tempfile
import time

import click
import numpy as np

from . import __version__
from .errors import (
    DegenerateTrendError,
    DegenerateVarianceError,
    LingermortError,
    NonConvergedFitError,
    NonFiniteObjectiveError,
    SingularCovarianceError,
    SingularHessianError,
)
from . import actuarial, baselines, estimation, panel as panel_mod, projection
from .panel import (
    AgeAxis,
    SIX_CAUSE_AXIS,
    excess_log_mortality,
    improvement_tensor,
    load_canonical_csv,
    load_wonder_export,
    pct_change,
    period_life_expectancy,
    write_canonical_csv,
)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(command, inputs, outputs, seed, started, extra=None):
    manifest = {
        "tool": "lingermort",
        "version": __version__,
        "command": command,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": {p: _sha256(p) for p in outputs if os.path.exists(p)},
        "wall_time_s": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    if outputs:
        path = outputs[0] + ".manifest.json"
        _atomic_write_text(path, json.dumps(manifest, indent=2))
    return manifest


def _load_config(path):
    if not path:
        default_dir = os.environ.get("LINGERMORT_CONFIG_DIR")
        if default_dir:
            candidate = os.path.join(default_dir, "lingermort.ini")
            if os.path.exists(candidate):
                path = candidate
    if not path:
        return {}
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise click.UsageError(f"config file {path!r} not found")
    if "lingermort" not in cp:
        return {}
    return dict(cp["lingermort"])


def _opt(explicit, config, key, default, cast=str):
    """Resolve an option: explicit flag > config file > default."""
    if explicit is not None:
        return explicit
    if key in config:
        try:
            return cast(config[key])
        except ValueError as exc:
            raise click.UsageError(f"bad config value for {key}: {exc}")
    return default


def _apply_threads(threads):
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(threads)


@click.group()
@click.version_option(__version__)
def main():
    """Cause-of-death mortality modeling with lingering jump effects."""


# failures of the numerics rather than of the supplied inputs
_NUMERICAL_ERRORS = (
    DegenerateTrendError,
    DegenerateVarianceError,
    NonConvergedFitError,
    NonFiniteObjectiveError,
    SingularCovarianceError,
    SingularHessianError,
)


def _run(fn):
    try:
        fn()
    except _NUMERICAL_ERRORS as exc:
        click.echo(json.dumps({"error": type(exc).__name__,
                               "message": str(exc)}), err=True)
        sys.exit(3)
    except BrokenPipeError:
        sys.exit(0)
    except (LingermortError, OSError) as exc:
        click.echo(json.dumps({"error": type(exc).__name__,
                               "message": str(exc)}), err=True)
        sys.exit(2)


@main.command()
@click.option("--input", "input_", default=None, type=click.Path(),
              help="CDC WONDER tab-delimited export or canonical CSV.")
@click.option("--wonder", "wonder_path", default=None, type=click.Path(),
              help="Shorthand for --input PATH --format wonder.")
@click.option("--output", "--out", "output", required=True, type=click.Path())
@click.option("--era", default=None, help="ICD coding era: icd8, icd9, icd10.")
@click.option("--format", "fmt", default=None,
              type=click.Choice(["wonder", "canonical"]),
              help="Input format (default: sniffed from the header).")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def ingest(input_, wonder_path, output, era, fmt, config_path, dry_run):
    """Normalize a mortality export into the canonical long CSV."""
    started = time.time()
    cfg = _load_config(config_path)
    era = _opt(era, cfg, "era", "icd10")
    if wonder_path is not None:
        if input_ is not None:
            raise click.UsageError("give either --input or --wonder, not both")
        input_, fmt = wonder_path, "wonder"
    if input_ is None:
        raise click.UsageError("an input file is required (--input/--wonder)")

    def work():
        nonlocal fmt
        if fmt is None:
            with open(input_, encoding="utf-8") as fh:
                head = fh.readline()
            fmt = "canonical" if "age_group" in head and "," in head else "wonder"
        if fmt == "wonder":
            rows = load_wonder_export(input_, era=era)
        else:
            pn = load_canonical_csv(input_)
            rows = []
            for x, lab in enumerate(pn.age_axis.labels):
                for t, year in enumerate(pn.years):
                    for c, cause in enumerate(pn.cause_axis.causes):
                        rows.append({"age_group": lab, "year": int(year),
                                     "cause": cause,
                                     "deaths": pn.deaths[x, t, c],
                                     "population": pn.exposures[x, t]})
        if dry_run:
            click.echo(f"would write {len(rows)} rows to {output}")
            return
        d = os.path.dirname(os.path.abspath(output)) or "."
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
        os.close(fd)
        try:
            write_canonical_csv(rows, tmp)
            os.replace(tmp, output)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        load_canonical_csv(output)      # validate the dense panel round trip
        _write_manifest("ingest", [input_], [output], None, started,
                        {"era": era, "rows": len(rows)})
        click.echo(f"wrote {len(rows)} rows to {output}")

    _run(work)


@main.command()
@click.option("--input", "input_", required=True, type=click.Path())
@click.option("--baseline-year", type=int, default=None,
              help="Report excess log mortality relative to this year.")
@click.option("--life-expectancy-age", type=int, default=None)
@click.option("--pct-change", "pct", nargs=2, type=int, default=None,
              help="Two years for percent rate changes.")
@click.option("--dry-run", is_flag=True)
def describe(input_, baseline_year, life_expectancy_age, pct, dry_run):
    """Summarize a canonical panel."""

    def work():
        if dry_run:
            click.echo(f"would describe {input_} (no outputs)")
            return
        pn = load_canonical_csv(input_)
        X, T, C = pn.shape
        click.echo(f"panel: {X} age groups x {T} years x {C} causes")
        click.echo(f"years: {pn.years[0]}-{pn.years[-1]}")
        click.echo(f"age groups: {', '.join(pn.age_axis.labels)}")
        click.echo(f"causes: {', '.join(pn.cause_axis.causes)}")
        click.echo(f"total deaths: {pn.deaths.sum():.0f}")
        zt = improvement_tensor(pn)
        click.echo(f"mean log improvement: {zt.z.mean():+.5f}")
        if life_expectancy_age is not None:
            for year in (pn.years[0], pn.years[-1]):
                e = period_life_expectancy(pn, life_expectancy_age, year)
                click.echo(f"life expectancy at {life_expectancy_age} in "
                           f"{year}: {e:.2f}")
        if baseline_year is not None:
            _, yrs, std = excess_log_mortality(pn, baseline_year)
            for i, y in enumerate(yrs):
                per = ", ".join(f"{pn.cause_axis.causes[c]}: {std[i, c]:+.4f}"
                                for c in range(C))
                click.echo(f"excess log mortality {y} vs {baseline_year}: {per}")
        if pct:
            delta = pct_change(pn, pct[0], pct[1])
            click.echo(f"percent rate change {pct[0]}->{pct[1]}: "
                       f"min {delta.min():+.1f}%, max {delta.max():+.1f}%")

    _run(work)


@main.command()
@click.option("--input", "input_", required=True, type=click.Path())
@click.option("--output", required=True, type=click.Path())
@click.option("--variant", default=None,
              type=click.Choice(["full", "special_case", "no_jump"]))
@click.option("--jump-year", type=int, default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--no-se", is_flag=True, help="Skip standard errors.")
@click.option("--prefit", default=None, type=click.Choice(["auto", "on", "off"]))
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--threads", type=int, default=None)
@click.option("--dry-run", is_flag=True)
def fit(input_, output, variant, jump_year, max_iter, no_se, prefit,
        config_path, threads, dry_run):
    """Fit the jump mixture model (or a reduced variant) to a panel."""
    started = time.time()
    cfg = _load_config(config_path)
    _apply_threads(threads)
    options = estimation.FitOptions(
        variant=_opt(variant, cfg, "variant", "full"),
        jump_year=_opt(jump_year, cfg, "jump_year", 2020, int),
        max_iter=_opt(max_iter, cfg, "max_iter", 500, int),
        prefit=_opt(prefit, cfg, "prefit", "auto"),
        compute_se=not no_se)

    def work():
        pn = load_canonical_csv(input_)
        if dry_run:
            click.echo(f"would fit variant={options.variant} on "
                       f"{pn.shape} panel, jump year {options.jump_year}")
            return
        result = estimation.fit(pn, options)
        _atomic_write_text(output, json.dumps(result.to_dict(), indent=2))
        _write_manifest("fit", [input_], [output], None, started,
                        {"variant": options.variant,
                         "loglik": result.loglik, "aic": result.aic,
                         "bic": result.bic, "converged": result.converged})
        click.echo(f"loglik {result.loglik:.4f}  AIC {result.aic:.4f}  "
                   f"BIC {result.bic:.4f}  params {result.n_params}  "
                   f"converged {result.converged}")

    _run(work)


@main.command()
@click.option("--fit", "fit_path", required=True, type=click.Path())
@click.option("--output", required=True, type=click.Path())
@click.option("--scenario", default=None)
@click.option("--paths", type=int, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--include-noise", is_flag=True)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--threads", type=int, default=None)
@click.option("--dry-run", is_flag=True)
def simulate(fit_path, output, scenario, paths, horizon, seed, include_noise,
             config_path, threads, dry_run):
    """Project mortality paths from a fitted model."""
    started = time.time()
    cfg = _load_config(config_path)
    _apply_threads(threads)
    scenario = _opt(scenario, cfg, "scenario", "baseline")
    paths = _opt(paths, cfg, "paths", 1000, int)
    horizon = _opt(horizon, cfg, "horizon", 60, int)
    seed = _opt(seed, cfg, "seed", 0, int)

    def work():
        fr = estimation.FitResult.from_json(fit_path)
        if fr.age_labels is None:
            raise LingermortError("fit file lacks axis labels; refit first")
        ax = AgeAxis.from_labels(fr.age_labels)
        from .panel import CauseAxis
        cx = CauseAxis(tuple(fr.cause_labels))
        if dry_run:
            click.echo(f"would simulate {paths} paths x {horizon} years, "
                       f"scenario {scenario}, seed {seed}")
            return
        ens = projection.project(fr, paths, horizon,
                                 scenario=projection.make_scenario(scenario),
                                 seed=seed, include_noise=include_noise,
                                 age_axis=ax, cause_axis=cx)
        sidecar = projection.export_ensemble(ens, output)
        _write_manifest("simulate", [fit_path], [output, sidecar], seed,
                        started, {"scenario": scenario, "paths": paths,
                                  "horizon": horizon})
        click.echo(f"wrote {paths} paths x {horizon} years to {output}")

    _run(work)


def _product_from_options(kind, cfg, issue_age, deferral, term, rate):
    return actuarial.ProductSpec(
        kind,
        issue_age=_opt(issue_age, cfg, "issue_age", 35, int),
        deferral=_opt(deferral, cfg, "deferral",
                      30 if kind == "annuity" else 0, int),
        term=_opt(term, cfg, "term", 30, int),
        rate=_opt(rate, cfg, "rate", 0.03, float))


def _survival_from_ensemble(ens, spec):
    ax = AgeAxis.from_labels(ens.age_labels)
    return projection.survival_curves(ens, spec.issue_age, ax.midpoints)


@main.command()
@click.option("--ensemble", "ens_path", required=True,
              type=click.Path())
@click.option("--output", required=True, type=click.Path())
@click.option("--product", required=True,
              type=click.Choice(["annuity", "insurance"]))
@click.option("--issue-age", type=int, default=None)
@click.option("--deferral", type=int, default=None)
@click.option("--term", type=int, default=None)
@click.option("--rate", type=float, default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def value(ens_path, output, product, issue_age, deferral, term, rate,
          config_path, dry_run):
    """Value a product on a simulated ensemble and report risk measures."""
    started = time.time()
    cfg = _load_config(config_path)

    def work():
        spec = _product_from_options(product, cfg, issue_age, deferral, term,
                                     rate)
        if dry_run:
            click.echo(f"would value {product} (issue {spec.issue_age}, "
                       f"deferral {spec.deferral}, term {spec.term}, rate "
                       f"{spec.rate}) on {ens_path} -> {output}")
            return
        ens = projection.load_ensemble(ens_path)
        surv = _survival_from_ensemble(ens, spec)
        dist = actuarial.value_product(surv, spec, label=product)
        measures = actuarial.risk_measures(dist.values)
        out = {"format_version": 1, "product": product,
               "spec": {"issue_age": spec.issue_age, "deferral": spec.deferral,
                        "term": spec.term, "rate": spec.rate},
               "scenario": ens.scenario, "n_paths": ens.n_paths,
               "face": dist.face, "measures": measures}
        _atomic_write_text(output, json.dumps(out, indent=2))
        _write_manifest("value", [ens_path], [output], ens.seed, started)
        click.echo(f"{product}: mean {measures['mean']:.2f}  "
                   f"sd {measures['sd']:.3f}  skew {measures['skewness']:.3f}")

    _run(work)


@main.command()
@click.option("--ensemble", "ens_path", required=True,
              type=click.Path())
@click.option("--output", required=True, type=click.Path())
@click.option("--rate", type=float, default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def hedge(ens_path, output, rate, config_path, dry_run):
    """Find the variance-minimizing annuity/insurance mix on one ensemble."""
    started = time.time()
    cfg = _load_config(config_path)

    def work():
        if dry_run:
            click.echo(f"would hedge on {ens_path} -> {output}")
            return
        ens = projection.load_ensemble(ens_path)
        ann_spec = _product_from_options("annuity", cfg, None, None, None, rate)
        ins_spec = _product_from_options("insurance", cfg, None, None, None,
                                         rate)
        surv = _survival_from_ensemble(ens, ann_spec)
        ann = actuarial.value_annuity(surv, ann_spec)
        ins = actuarial.value_insurance(surv, ins_spec)
        hr = actuarial.optimal_hedge(ann, ins)
        out = {"format_version": 1, "scenario": ens.scenario,
               "n_paths": ens.n_paths, "weight": hr.weight,
               "weight_raw": hr.weight_raw,
               "annuity": hr.annuity_measures,
               "insurance": hr.insurance_measures,
               "portfolio": hr.portfolio_measures}
        _atomic_write_text(output, json.dumps(out, indent=2))
        _write_manifest("hedge", [ens_path], [output], ens.seed, started)
        click.echo(f"hedge weight {hr.weight:.4f} (raw {hr.weight_raw:.4f}); "
                   f"portfolio sd {hr.portfolio_measures['sd']:.3f}")

    _run(work)


@main.command()
@click.option("--ensemble", "ens_specs", multiple=True, required=True,
              help="label=path, repeatable.")
@click.option("--output", required=True, type=click.Path())
@click.option("--product", default="annuity",
              type=click.Choice(["annuity", "insurance", "portfolio"]))
@click.option("--rate", type=float, default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def whatif(ens_specs, output, product, rate, config_path, dry_run):
    """Compare PV distributions across scenario ensembles."""
    started = time.time()
    cfg = _load_config(config_path)
    pairs = []
    for spec in ens_specs:
        if "=" not in spec:
            raise click.UsageError("--ensemble takes label=path")
        label, path = spec.split("=", 1)
        pairs.append((label, path))

    def work():
        if dry_run:
            plan = ", ".join(f"{lab}={p}" for lab, p in pairs)
            click.echo(f"would compare {product} across {plan} -> {output}")
            return
        dists = {}
        inputs = []
        for label, path in pairs:
            ens = projection.load_ensemble(path)
            inputs.append(path)
            ann_spec = _product_from_options("annuity", cfg, None, None, None,
                                             rate)
            ins_spec = _product_from_options("insurance", cfg, None, None,
                                             None, rate)
            surv = _survival_from_ensemble(ens, ann_spec)
            ann = actuarial.value_annuity(surv, ann_spec)
            ins = actuarial.value_insurance(surv, ins_spec)
            if product == "annuity":
                dists[label] = ann
            elif product == "insurance":
                dists[label] = ins
            else:
                hr = actuarial.optimal_hedge(ann, ins)
                dists[label] = hr.portfolio
        report = actuarial.whatif_report(dists)
        out = {"format_version": 1, "product": product,
               "grid": report["grid"].tolist(),
               "scenarios": {
                   lab: {"measures": entry["measures"],
                         "kde": entry["kde"].tolist()}
                   for lab, entry in report["scenarios"].items()}}
        _atomic_write_text(output, json.dumps(out, indent=2))
        _write_manifest("whatif", inputs, [output], None, started)
        for lab, entry in report["scenarios"].items():
            m = entry["measures"]
            click.echo(f"{lab}: sd {m['sd']:.3f}  skew {m['skewness']:.3f}  "
                       f"cte_5 {m['cte_5']:.3f}  cte_95 {m['cte_95']:.3f}")

    _run(work)


@main.command()
@click.option("--input", "input_", required=True, type=click.Path())
@click.option("--output", required=True, type=click.Path())
@click.option("--models", default="full,special_case,no_jump,cc,j1",
              help="Comma list from: full, special_case, no_jump, cc, j1.")
@click.option("--jump-year", type=int, default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--threads", type=int, default=None)
@click.option("--dry-run", is_flag=True)
def compare(input_, output, models, jump_year, max_iter, config_path, threads,
            dry_run):
    """Fit several models to one panel and tabulate fit quality."""
    started = time.time()
    cfg = _load_config(config_path)
    _apply_threads(threads)
    jump_year = _opt(jump_year, cfg, "jump_year", 2020, int)
    max_iter = _opt(max_iter, cfg, "max_iter", 500, int)
    wanted = [m.strip() for m in models.split(",") if m.strip()]
    known = {"full", "special_case", "no_jump", "cc", "j1"}
    bad = set(wanted) - known
    if bad:
        raise click.UsageError(f"unknown models: {sorted(bad)}")

    def work():
        if dry_run:
            click.echo(f"would fit models {', '.join(wanted)} on {input_} "
                       f"-> {output}")
            return
        pn = load_canonical_csv(input_)
        rows = []
        for name in wanted:
            if name in ("full", "special_case", "no_jump"):
                opts = estimation.FitOptions(variant=name, jump_year=jump_year,
                                             max_iter=max_iter,
                                             compute_se=False)
                r = estimation.fit(pn, opts)
                rows.append({"model": name, "loglik": r.loglik,
                             "n_params": r.n_params, "aic": r.aic,
                             "bic": r.bic, "converged": r.converged})
            elif name == "cc":
                r = baselines.fit_cc(pn, max_iter=max_iter)
                rows.append({"model": "cc", "loglik": r.loglik,
                             "n_params": r.n_params, "aic": r.aic,
                             "bic": r.bic, "converged": r.converged})
            elif name == "j1":
                r = baselines.fit_j1(pn, max_iter=max_iter)
                rows.append({"model": "j1", "loglik": r.loglik,
                             "n_params": r.n_params, "aic": r.aic,
                             "bic": r.bic, "converged": r.converged})
        out = {"format_version": 1, "panel": input_, "rows": rows}
        _atomic_write_text(output, json.dumps(out, indent=2))
        _write_manifest("compare", [input_], [output], None, started)
        for row in rows:
            click.echo(f"{row['model']:>8}: loglik {row['loglik']:.3f}  "
                       f"params {row['n_params']}  AIC {row['aic']:.2f}  "
                       f"BIC {row['bic']:.2f}")

    _run(work)


if __name__ == "__main__":
    main()
