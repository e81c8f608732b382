"""Command line interface: train-prior, eval-prior, enumerate, fit, rank, bench.

Every flag can also be supplied through a TOML config (`--config`, one
table per subcommand); explicit flags win. Output files embed the tool
version, a config hash, the corpus/model hash and the seed, so runs can be
reproduced byte for byte. Machine-readable errors go to stderr as JSON:
exit code 2 for bad configuration, 3 for data errors, 4 for numerical
failures that abort a run.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, bench as bench_mod
from .corpus import CorpusError, corpus_to_trees, default_corpus_path, load_corpus
from .enumeration import iter_canonical
from .exprtree import ExpressionError, parse_canonical, resolve_basis
from .fit import Dataset, FitConfig, fit_many, fit_params
from .metrics import FBFConfig, Method, parse_methods, rank
from .ngram import NGramModel, train
from .util import run_metadata, sha256_file

log = logging.getLogger("eqprior")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code

    def show(self, file=None):
        payload = {"error": {"message": self.message, "exit_code": self.exit_code}}
        click.echo(json.dumps(payload), err=True)


def _load_config(path: str | None, section: str) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_CONFIG)
    cfg = data.get(section, {})
    if not isinstance(cfg, dict):
        raise CliError(f"config section [{section}] must be a table", EXIT_CONFIG)
    return cfg


def _merged(cfg: dict, **flags):
    """Explicit CLI flags (not None) beat config values beat defaults."""
    out = dict(cfg)
    for key, val in flags.items():
        if val is not None:
            out[key] = val
    return out


def _setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@click.group()
@click.version_option(version=__version__, prog_name="eqprior")
@click.option("--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Symbolic-regression model selection with corpus-trained function priors."""
    _setup_logging(verbose)


# ---------------------------------------------------------------------------
# train-prior / eval-prior
# ---------------------------------------------------------------------------

@main.command("train-prior")
@click.option("--corpus", "corpus_path", type=click.Path(), default=None,
              help="Corpus file; defaults to the shipped 161-equation corpus.")
@click.option("--order", type=int, default=None, help="n-gram order (default 2).")
@click.option("--k-backoff", type=int, default=None, help="Katz count threshold (default 0).")
@click.option("--sources", default=None,
              help="Comma-separated source tags to keep (e.g. fsred).")
@click.option("--lenient", is_flag=True, default=False,
              help="Skip unparseable corpus lines instead of aborting.")
@click.option("--report", type=click.Path(), default=None,
              help="Write the corpus load report (JSON) here.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
def train_prior(corpus_path, order, k_backoff, sources, lenient, report, out_path, config_path):
    """Train a back-off prior on an equation corpus and write MODEL.json."""
    cfg = _merged(_load_config(config_path, "train-prior"),
                  corpus=corpus_path, order=order, k_backoff=k_backoff, sources=sources)
    corpus_file = Path(cfg.get("corpus") or default_corpus_path())
    order = int(cfg.get("order", 2))
    k_backoff = int(cfg.get("k_backoff", 0))
    if not corpus_file.exists():
        raise CliError(f"corpus file not found: {corpus_file}", EXIT_DATA)
    try:
        entries, load_report = load_corpus(corpus_file, strict=not lenient)
    except CorpusError as exc:
        raise CliError(f"corpus load failed: {exc}", EXIT_DATA)
    wanted = cfg.get("sources")
    if wanted:
        tags = {t.strip() for t in str(wanted).split(",") if t.strip()}
        entries = [e for e in entries if e.source in tags]
    if not entries:
        raise CliError("no corpus entries left to train on", EXIT_DATA)
    try:
        trees = corpus_to_trees(entries)
        model = train(trees, order, k_backoff,
                      meta=run_metadata(cfg, corpus_hash=sha256_file(corpus_file)))
    except (ExpressionError, ValueError) as exc:
        raise CliError(f"training failed: {exc}", EXIT_NUMERIC)
    Path(out_path).write_text(model.to_json(), encoding="utf-8")
    if report:
        Path(report).write_text(json.dumps(load_report, indent=1), encoding="utf-8")
    click.echo(json.dumps({"trained_on": len(entries), "order": order,
                           "vocabulary": len(model.vocabulary), "out": str(out_path)}))


def _read_model(path: str) -> NGramModel:
    try:
        return NGramModel.from_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load model {path}: {exc}", EXIT_DATA)


@main.command("eval-prior")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--expr", required=True, help="Expression, e.g. \"sin(x)+sin(x)\".")
def eval_prior(model_path, expr):
    """Print the log-prior of an expression under a trained model."""
    model = _read_model(model_path)
    try:
        tree = parse_canonical(expr)
    except ExpressionError as exc:
        raise CliError(f"cannot parse expression: {exc}", EXIT_DATA)
    model = model.extend_vocabulary({nd.symbol for nd in tree.nodes})
    click.echo(f"{model.log_prior(tree):.10f}")


# ---------------------------------------------------------------------------
# enumerate
# ---------------------------------------------------------------------------

@main.command("enumerate")
@click.option("--basis", default=None,
              help="Preset (sr, rational, corpus) or comma-separated symbols.")
@click.option("--max-k", type=int, default=None, help="Complexity bound (default 8).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="JSONL output, one canonical expression per line.")
@click.option("--config", "config_path", type=click.Path(), default=None)
def enumerate_cmd(basis, max_k, out_path, config_path):
    """Enumerate all deduplicated candidate functions up to a complexity."""
    cfg = _merged(_load_config(config_path, "enumerate"), basis=basis, max_k=max_k)
    basis = str(cfg.get("basis", "sr"))
    max_k = int(cfg.get("max_k", 8))
    try:
        basis_obj = resolve_basis(basis)
    except ExpressionError as exc:
        raise CliError(f"bad basis: {exc}", EXIT_CONFIG)
    meta = run_metadata({"basis": basis, "max_k": max_k})
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"_meta": {**meta, "basis": basis, "max_k": max_k}}) + "\n")
        for k, text in iter_canonical(basis_obj, max_k):
            fh.write(json.dumps({"expr": text, "complexity": k}) + "\n")
            count += 1
    click.echo(json.dumps({"functions": count, "out": str(out_path)}))


def _read_trees(path: str):
    trees = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if "expr" in rec:
                    trees.append(parse_canonical(rec["expr"]))
    except (OSError, json.JSONDecodeError, ExpressionError) as exc:
        raise CliError(f"cannot read trees from {path}: {exc}", EXIT_DATA)
    if not trees:
        raise CliError(f"no expressions found in {path}", EXIT_DATA)
    return trees


# ---------------------------------------------------------------------------
# fit / rank
# ---------------------------------------------------------------------------

def _read_dataset(path: str, sigma: float | None, cov: str | None) -> Dataset:
    try:
        rows = list(csv.reader(line for line in open(path, encoding="utf-8")
                               if not line.startswith("#")))
    except OSError as exc:
        raise CliError(f"cannot read data file: {exc}", EXIT_DATA)
    if not rows or len(rows) < 2:
        raise CliError("data CSV needs a header row and at least one data row", EXIT_DATA)
    header = [h.strip() for h in rows[0]]
    if "y" not in header:
        raise CliError("data CSV must have a 'y' column", EXIT_DATA)
    xcols = [i for i, h in enumerate(header) if h == "x" or h.startswith("x")]
    ycol = header.index("y")
    if not xcols:
        raise CliError("data CSV must have x columns (x or x0, x1, ...)", EXIT_DATA)
    try:
        body = [[float(v) for v in row] for row in rows[1:] if row]
        x = np.array([[row[i] for i in xcols] for row in body])
        y = np.array([row[ycol] for row in body])
    except (ValueError, IndexError) as exc:
        raise CliError(f"malformed data CSV: {exc}", EXIT_DATA)
    if cov:
        try:
            cov_matrix = np.loadtxt(cov, delimiter=",")
            return Dataset.fullcov(x, y, cov_matrix)
        except (OSError, ValueError, np.linalg.LinAlgError) as exc:
            raise CliError(f"bad covariance file: {exc}", EXIT_DATA)
    if sigma is None:
        raise CliError("either --sigma or --cov is required", EXIT_CONFIG)
    return Dataset.iid(x, y, sigma)


def _fit_config(cfg: dict) -> FitConfig:
    return FitConfig(restarts=int(cfg.get("restarts", 20)),
                     seed=int(cfg.get("seed", 0)),
                     max_iters=int(cfg.get("max_iters", 200)),
                     tol=float(cfg.get("tol", 1e-8)))


@main.command("fit")
@click.option("--data", "data_path", type=click.Path(), required=True,
              help="CSV with x (or x0..xd) and y columns; '#' comments allowed.")
@click.option("--expr", required=True)
@click.option("--sigma", type=float, default=None, help="iid noise standard deviation.")
@click.option("--cov", type=click.Path(), default=None, help="CSV covariance matrix.")
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-iters", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def fit_cmd(data_path, expr, sigma, cov, restarts, seed, max_iters, tol, config_path):
    """Fit one expression to a dataset; prints the fit result as JSON."""
    cfg = _merged(_load_config(config_path, "fit"), restarts=restarts, seed=seed,
                  max_iters=max_iters, tol=tol, sigma=sigma)
    data = _read_dataset(data_path, cfg.get("sigma"), cov)
    try:
        tree = parse_canonical(expr)
    except ExpressionError as exc:
        raise CliError(f"cannot parse expression: {exc}", EXIT_DATA)
    config = _fit_config(cfg)
    result = fit_params(tree, data, config)
    if not np.isfinite(result.logL_hat):
        raise CliError("fit failed: no parameter start with finite likelihood",
                       EXIT_NUMERIC)
    click.echo(json.dumps({
        "meta": {**run_metadata(cfg, seed=config.seed), "fit_config": config.metadata()},
        "expr": expr,
        "theta_hat": [float(v) for v in result.theta_hat],
        "logL_hat": result.logL_hat,
        "info": [[float(v) for v in row] for row in np.atleast_2d(result.info)]
        if result.n_params else [],
        "n_data": result.n_data,
        "status": result.status.value,
    }, indent=1))


@main.command("rank")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--trees", "trees_path", type=click.Path(), required=True)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--methods", default=None, help="Comma list or 'all' (default).")
@click.option("--sigma", type=float, default=None)
@click.option("--cov", type=click.Path(), default=None)
@click.option("--b", "b_override", type=float, default=None,
              help="Override the FBF fraction (default N^-1/2).")
@click.option("--b-rule", type=click.Choice(["sqrt", "logn"]), default=None)
@click.option("--lattice", type=click.Choice(["rectangular", "optimal"]), default=None,
              help="Parameter-quantization lattice for the description lengths.")
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None, help="Worker processes for fitting.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
def rank_cmd(data_path, trees_path, model_path, methods, sigma, cov, b_override,
             b_rule, lattice, restarts, seed, threads, out_path, config_path):
    """Rank candidate functions under the selected methods; writes CSV."""
    cfg = _merged(_load_config(config_path, "rank"), methods=methods, sigma=sigma,
                  b=b_override, b_rule=b_rule, lattice=lattice, restarts=restarts,
                  seed=seed, threads=threads)
    try:
        method_list = parse_methods(str(cfg.get("methods", "all")))
    except ValueError as exc:
        raise CliError(f"bad methods: {exc}", EXIT_CONFIG)
    data = _read_dataset(data_path, cfg.get("sigma"), cov)
    trees = _read_trees(trees_path)
    model = _read_model(model_path) if model_path else None
    if model is None and any(m in (Method.MDL_LM, Method.MDL_FBF_LM, Method.BAYES_FBF_LM)
                             for m in method_list):
        raise CliError("LM-based methods need --model MODEL.json", EXIT_CONFIG)
    config = _fit_config(cfg)
    fbf = FBFConfig(b=cfg.get("b"), rule=str(cfg.get("b_rule", "sqrt")))
    log.info("fitting %d candidates", len(trees))
    fits = fit_many(trees, data, config, cfg.get("threads"))
    meta = {**run_metadata(cfg, seed=config.seed),
            "data": str(data_path), "data_hash": sha256_file(data_path)[:12],
            "n_data": data.n}
    if model_path:
        meta["model_hash"] = sha256_file(model_path)[:12]
    try:
        ranking = rank(trees, fits, model, data, method_list, fbf=fbf,
                       lattice=str(cfg.get("lattice", "rectangular")),
                       fit_config=config, meta=meta)
    except ValueError as exc:
        raise CliError(f"ranking failed: {exc}", EXIT_NUMERIC)
    Path(out_path).write_text(ranking.to_csv(), encoding="utf-8")
    best = {m.value: (ranking.best(m).canonical if ranking.best(m) else None)
            for m in method_list}
    click.echo(json.dumps({"functions": len(ranking.entries), "best": best,
                           "b": ranking.b, "out": str(out_path)}))


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

@main.command("bench")
@click.option("--suite", default=None,
              help="'nguyen-korns' (default) or comma-separated benchmark names.")
@click.option("--max-k", type=int, default=None, help="Candidate complexity bound (default 6).")
@click.option("--n-grid", default=None, help="Comma-separated dataset sizes.")
@click.option("--seeds", type=int, default=None, help="Number of seeds (default 5).")
@click.option("--methods", default=None)
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Prior model JSON; trained on the shipped corpus if omitted.")
@click.option("--order", type=int, default=None, help="Order for the default prior (2).")
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--budget", type=click.Choice(["desk", "full"]), default=None,
              help="desk trims the N grid to {100, 1000}.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
def bench_cmd(suite, max_k, n_grid, seeds, methods, model_path, order, restarts,
              seed, threads, budget, out_dir, config_path):
    """Run the recovery benchmark suite; writes per-run and aggregate CSVs."""
    cfg = _merged(_load_config(config_path, "bench"), suite=suite, max_k=max_k,
                  n_grid=n_grid, seeds=seeds, methods=methods, order=order,
                  restarts=restarts, seed=seed, threads=threads, budget=budget)
    suite_names = (list(bench_mod.BENCHMARKS) if cfg.get("suite", "nguyen-korns") == "nguyen-korns"
                   else [s.strip() for s in str(cfg["suite"]).split(",") if s.strip()])
    unknown = [s for s in suite_names if s not in bench_mod.BENCHMARKS]
    if unknown:
        raise CliError(f"unknown benchmarks: {unknown}", EXIT_CONFIG)
    try:
        method_list = parse_methods(str(cfg.get("methods", "all")))
    except ValueError as exc:
        raise CliError(f"bad methods: {exc}", EXIT_CONFIG)
    if cfg.get("n_grid"):
        grid = [int(v) for v in str(cfg["n_grid"]).split(",")]
    else:
        grid = [32, 100, 316, 1000, 3162, 10000]
        if cfg.get("budget", "desk") == "desk":
            grid = [100, 1000]
    n_seeds = int(cfg.get("seeds", 5))
    master_seed = int(cfg.get("seed", 0))
    model = (_read_model(model_path) if model_path
             else _default_model(int(cfg.get("order", 2))))
    config = FitConfig(restarts=int(cfg.get("restarts", 8)), seed=master_seed)
    harness = bench_mod.BenchHarness(
        resolve_basis("sr"), int(cfg.get("max_k", 6)), model=model,
        methods=method_list, fit_config=config, workers=cfg.get("threads"),
        seed=master_seed)
    rows = bench_mod.run_suite(suite_names, harness, grid,
                               [master_seed + i for i in range(n_seeds)])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = run_metadata(cfg, seed=master_seed,
                        corpus_hash=(sha256_file(model_path)[:12] if model_path
                                     else sha256_file(default_corpus_path())[:12]))
    _write_csv(out / "runs.csv", rows, meta)
    _write_csv(out / "aggregate.csv", bench_mod.aggregate_rows(rows), meta)
    click.echo(json.dumps({"runs": len(rows), "out": str(out)}))


def _default_model(order: int) -> NGramModel:
    from .corpus import load_default_corpus

    entries = load_default_corpus()
    return train(corpus_to_trees(entries), order,
                 meta={"corpus": "shipped", "corpus_hash": sha256_file(default_corpus_path())})


def _write_csv(path: Path, rows: list[dict], meta: dict):
    buf = io.StringIO()
    for key, val in meta.items():
        buf.write(f"# {key}: {val}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


if __name__ == "__main__":
    main()
