"""Experiment harness: configuration, seeding, data splits, per-seed and
aggregate CSV logs, hyperparameter sweeps and model files.

Randomness: every seed s gets ``SeedSequence(s)``; its spawned children
feed, in this order, the purposes "data" (synthetic generation), "split"
(train/validation/test permutation), "solver" (sampling inside the
solver) and "init" (initial states, random features).
"""
from __future__ import annotations

import dataclasses
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .baselines import BaselineConfig, baseline_train, rff_train
from .data import Dataset, DualState, KernelOracle, KernelSpec, load_libsvm
from .errors import ContractViolation, ParseError, StochoptError, UnsupportedVersionError
from .metrics import MetricLog, format_value
from .model import SparseClassifier, decision_function, error_rate
from .pca import PcaConfig, evaluate_objective, pca_train, saa_solve, subspace
from .sbp import SbpConfig, sbp_train
from .spectral import EigState, eigstate_from_text, eigstate_to_text
from .sparsify import SparsifyConfig, build_problem, sparsify
from .synthetic import SyntheticSpec, noisy_svm_data, sample_batch, separable_svm_data

PURPOSES = ("data", "split", "solver", "init")

SVM_ALGORITHMS = ("sbp", "sgd_norm", "pegasos", "sdca", "smo", "perceptron", "rff")
PCA_ALGORITHMS = ("power", "incremental", "warmuth", "msg", "capped_msg", "saa")

CSV_COLUMNS = {
    "svm": "iteration, kernel_evals, objective, support, test_error (+ solver extras)",
    "sparsify": "iteration, kernel_evals, objective (max violation f), support, test_error",
    "pca": "iteration, runtime_proxy (sum of k'_t^2), rank, objective (captured variance), "
           "suboptimality, stuck_e1 (two_point_failure only)",
}


def rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(PURPOSES))
    return {p: np.random.default_rng(c) for p, c in zip(PURPOSES, children)}


# ---------------------------------------------------------------- configuration

def _parse_seeds(v) -> List[int]:
    if isinstance(v, (list, tuple)):
        return [int(s) for s in v]
    v = str(v).strip()
    if ":" in v:
        a, b = v.split(":")
        return list(range(int(a), int(b)))
    return [int(s) for s in v.split(",") if s.strip()]


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ContractViolation(f"not a boolean: {v!r}")


@dataclass
class ExperimentConfig:
    task: str = "svm"                  # svm | sparsify | pca
    algorithm: Optional[str] = None    # default sbp (svm, sparsify) or msg (pca)
    data: Optional[str] = None         # libsvm path or synthetic:<family>
    n: int = 200                       # synthetic svm size
    d: int = 32
    k_param: Optional[int] = None      # synthetic pca spectrum parameter (default k)
    split: str = "0.4,0.2,0.4"
    seeds: List[int] = field(default_factory=lambda: [0])
    out: str = "results"
    name: Optional[str] = None
    # svm
    kernel: str = "gaussian"
    bandwidth: float = 1.0
    convention: str = "sigma2"
    nu: float = 0.0
    lam: float = 0.01
    R: float = 10.0
    epochs: int = 10
    T: Optional[int] = None
    D: int = 256
    with_bias: bool = False
    eta0: Optional[float] = None
    # sparsify
    base_algorithm: str = "sdca"
    sparsify_eta: float = 0.5
    epsilon: float = 0.5
    mode: str = "basic"
    # pca
    k: int = 1
    K: Optional[int] = None
    eta_scale: float = 1.0
    fixed_eta: Optional[float] = None
    # sweep: "<field>:v1,v2,..."
    sweep: Optional[str] = None

    _types = None

    def __post_init__(self):
        self.seeds = _parse_seeds(self.seeds)
        if not self.seeds:
            raise ContractViolation("need at least one seed")
        if self.task not in ("svm", "sparsify", "pca"):
            raise ContractViolation(f"unknown task {self.task!r}")
        pca = self.task == "pca"
        if self.algorithm is None:
            self.algorithm = "msg" if pca else "sbp"
        if self.data is None:
            self.data = "synthetic:gaussian_sigma_k" if pca else "synthetic:separable"
        algs = PCA_ALGORITHMS if self.task == "pca" else SVM_ALGORITHMS
        if self.algorithm not in algs:
            raise ContractViolation(f"algorithm {self.algorithm!r} not valid for task {self.task}")
        fr = self.fractions
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ContractViolation("split fractions must be three non-negative numbers summing to 1")

    @property
    def fractions(self) -> List[float]:
        return [float(s) for s in str(self.split).split(",")]

    @property
    def run_name(self) -> str:
        return self.name or f"{self.task}_{self.algorithm}"

    def echo(self) -> List[str]:
        out = []
        for f in dataclasses.fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(s) for s in v)
            out.append(f"{f.name}={v}")
        return out

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def coerce(name: str, value):
    if name not in _FIELD_TYPES or name.startswith("_"):
        raise ContractViolation(f"unknown config key {name!r}")
    if value is None:
        return None
    t = str(_FIELD_TYPES[name])
    if name == "seeds":
        return _parse_seeds(value)
    if isinstance(value, str) and value.strip().lower() in ("none", "") and "Optional" in t:
        return None
    if "bool" in t:
        return _parse_bool(value)
    if "int" in t:
        return int(value)
    if "float" in t:
        return float(value)
    return str(value).strip()


def parse_config_text(text: str) -> Dict[str, object]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"expected key = value, got {raw.strip()!r}", line=lineno)
        key = key.strip().replace("-", "_")
        try:
            out[key] = coerce(key, val.strip())
        except (ValueError, ContractViolation) as e:
            raise ParseError(str(e), line=lineno) from None
    return out


def load_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    kw: Dict[str, object] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            kw.update(parse_config_text(fh.read()))
    for k, v in overrides.items():
        if v is not None:
            kw[k] = coerce(k, v)
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------- file output

def atomic_write(path: str, data, mode: str = "w"):
    """Write to a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, mode + ("b" if isinstance(data, bytes) else ""),
                       **({} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return path


# ---------------------------------------------------------------- model files

SPARSE_HEADER = "SPARSECLF v1"


def serialize_model(model) -> str:
    if isinstance(model, EigState):
        return eigstate_to_text(model)
    if not isinstance(model, SparseClassifier):
        raise ContractViolation(f"cannot serialize {type(model).__name__}")
    k = model.kernel
    lines = [SPARSE_HEADER,
             f"kernel {k.kind} {float(k.bandwidth)!r} {k.convention}",
             f"n_train {model.n_train}",
             "bias none" if model.bias is None else f"bias {float(model.bias)!r}",
             f"support {model.support.size}"]
    lines += [f"{int(i)} {float(a)!r}" for i, a in zip(model.support, model.alpha)]
    return "\n".join(lines) + "\n"


def parse_model(text):
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    first = text.split("\n", 1)[0].strip()
    parts = first.split()
    if len(parts) == 2 and parts[0] == "EIGSTATE":
        return eigstate_from_text(text)
    if len(parts) != 2 or parts[0] != "SPARSECLF":
        raise ParseError("unknown model header", offset=0)
    if parts[1] != "v1":
        raise UnsupportedVersionError(f"unsupported SPARSECLF version {parts[1]!r}")
    lines = text.splitlines(keepends=True)
    offs = np.concatenate([[0], np.cumsum([len(l.encode("utf-8")) for l in lines])]).astype(int)
    total = int(offs[-1])

    def header(i, key):
        if i >= len(lines) or not lines[i].endswith("\n"):
            raise ParseError(f"truncated model file: missing {key!r}", offset=total)
        toks = lines[i].split()
        if not toks or toks[0] != key:
            raise ParseError(f"expected {key!r}", offset=int(offs[i]))
        return toks[1:]

    try:
        kind, bw, conv = header(1, "kernel")
        kernel = KernelSpec(kind, float(bw), conv)
        n_train = int(header(2, "n_train")[0])
        b = header(3, "bias")[0]
        bias = None if b == "none" else float(b)
        m = int(header(4, "support")[0])
    except ParseError:
        raise
    except ValueError as e:
        raise ParseError(f"bad model header field: {e}", offset=0) from None
    sup = np.zeros(m, dtype=np.int64)
    alpha = np.zeros(m)
    for j in range(m):
        li = 5 + j
        if li >= len(lines) or not lines[li].endswith("\n"):
            raise ParseError(f"truncated model file: support entry {j} missing", offset=total)
        toks = lines[li].split()
        try:
            sup[j], alpha[j] = int(toks[0]), float(toks[1])
        except (ValueError, IndexError):
            raise ParseError(f"bad support entry {j}", offset=int(offs[li])) from None
    return SparseClassifier(kernel, sup, alpha, n_train, bias)


def save_model(model, path):
    return atomic_write(path, serialize_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


# ---------------------------------------------------------------- data

def split_indices(n: int, fractions: Sequence[float], rng: np.random.Generator):
    perm = rng.permutation(n)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])


def svm_data(cfg: ExperimentConfig, rngs) -> Dataset:
    if cfg.data.startswith("synthetic:"):
        fam = cfg.data.split(":", 1)[1]
        if fam == "separable":
            X, y = separable_svm_data(cfg.n, cfg.d, rngs["data"])
        elif fam == "noisy":
            X, y = noisy_svm_data(cfg.n, cfg.d, rngs["data"])
        else:
            raise ContractViolation(f"unknown svm synthetic family {fam!r}")
        return Dataset.from_dense(X, y)
    return load_libsvm(cfg.data)


def _pca_source(cfg: ExperimentConfig, rngs):
    """(train stream sampler, validation samples, known covariance or None, d)."""
    if cfg.data.startswith("synthetic:"):
        fam = cfg.data.split(":", 1)[1]
        spec = SyntheticSpec(fam, cfg.d, cfg.k_param or cfg.k)
        T = int(cfg.T or 1000)
        X = sample_batch(spec, rngs["data"], T)
        val = sample_batch(spec, rngs["data"], 1000)
        return X, val, spec.covariance(), spec.d, spec
    ds = load_libsvm(cfg.data)
    dense = ds.X.toarray()
    tr, va, te = split_indices(ds.n, cfg.fractions, rngs["split"])
    T = int(cfg.T or len(tr))
    X = dense[tr][rngs["solver"].integers(len(tr), size=T)]
    test = dense[te]
    cov = test.T @ test / max(len(te), 1)
    return X, dense[va], cov, ds.d, None


# ---------------------------------------------------------------- single runs

def _svm_run(cfg: ExperimentConfig, seed: int):
    rngs = rng_streams(seed)
    ds = svm_data(cfg, rngs)
    tr, va, te = split_indices(ds.n, cfg.fractions, rngs["split"])
    train, val, test = ds.subset(tr), ds.subset(va), ds.subset(te)
    spec = KernelSpec(cfg.kernel, cfg.bandwidth, cfg.convention)
    oracle = KernelOracle(train, spec, warn_unbounded=False)
    eval_oracle = KernelOracle(train, spec, warn_unbounded=False)

    def test_err(alpha, bias, on=test):
        if on.n == 0:
            return math.nan
        return error_rate(decision_function(alpha, train, spec, on, bias, eval_oracle), on.labels)

    def monitor(alpha, bias):
        return {"test_error": test_err(alpha, bias)}

    alg = cfg.algorithm
    if alg == "rff":
        bc = BaselineConfig("rff", lam=cfg.lam, epochs=cfg.epochs, D=cfg.D, seed=seed)
        model, log = rff_train(train, spec, bc, rngs["solver"],
                               monitor=lambda m: {"test_error": error_rate(
                                   m.decision_function(test), test.labels) if test.n else math.nan})
        val_err = error_rate(model.decision_function(val), val.labels) if val.n else math.nan
        log.info["validation_error"] = val_err
        return log, None
    if alg == "sbp":
        sc = SbpConfig(nu=cfg.nu, T=int(cfg.T or cfg.epochs * train.n), eta0=cfg.eta0,
                       with_bias=cfg.with_bias, seed=seed)
        res = sbp_train(train, oracle, sc, rngs["solver"], monitor)
        alpha, bias, log = res.alpha, res.bias, res.log
    else:
        bc = BaselineConfig(alg, R=cfg.R, lam=cfg.lam, epochs=cfg.epochs,
                            with_bias=cfg.with_bias and alg in ("sdca", "smo"), seed=seed)
        res = baseline_train(train, oracle, bc, rngs["solver"], monitor)
        alpha, bias, log = res.alpha, res.bias, res.log

    if cfg.task == "sparsify":
        return _sparsify_run(cfg, train, oracle, spec, alpha, bias, test_err, val)
    log.info["validation_error"] = test_err(alpha, bias, val)
    return log, SparseClassifier.from_dense(alpha, spec, bias)


def _sparsify_run(cfg, train, oracle, spec, alpha, bias, test_err, val):
    # responses of the dense solution from scratch
    y = train.labels
    c = np.zeros(train.n)
    for s in np.flatnonzero(alpha):
        c += alpha[s] * y[s] * y * oracle.row(int(s))
    dense = DualState(alpha.copy(), c, float(np.sum(alpha * c)))
    with_bias = bias is not None
    prob = build_problem(dense, oracle, with_bias, bias or 0.0)
    sp_oracle = KernelOracle(train, spec, warn_unbounded=False)
    res = sparsify(prob, sp_oracle, SparsifyConfig(cfg.sparsify_eta, cfg.epsilon, cfg.mode))
    if cfg.mode == "bias_learning":
        sbias = res.bias
    else:
        sbias = bias
    log = res.log
    err = test_err(res.alpha, sbias)
    for r in log.records:
        r.setdefault("test_error", math.nan)
    log.records[-1]["test_error"] = err
    if "test_error" not in log.columns:
        log.columns.append("test_error")
    log.info["validation_error"] = test_err(res.alpha, sbias, val)
    log.info["dense_support"] = int(np.count_nonzero(alpha))
    return log, SparseClassifier.from_dense(res.alpha, spec, sbias)


def _pca_run(cfg: ExperimentConfig, seed: int):
    rngs = rng_streams(seed)
    X, val, cov, d, spec = _pca_source(cfg, rngs)
    two_point = spec is not None and spec.family == "two_point_failure"
    if cfg.algorithm == "saa":
        state = saa_solve(X, cfg.k)
        obj = evaluate_objective(state, cfg.k, covariance=cov)
        log = MetricLog(["iteration", "runtime_proxy", "rank", "objective", "suboptimality"])
        log.append(iteration=X.shape[0], runtime_proxy=0, rank=state.rank,
                   objective=obj.captured, suboptimality=obj.suboptimality)
        kind = "M"
    else:
        pc = PcaConfig(cfg.algorithm, cfg.k, cfg.K, X.shape[0], cfg.eta_scale, cfg.fixed_eta, seed)
        res = pca_train(pc, lambda t: X[t - 1], d, rngs["init"], cov)
        state, log = res.state, res.log
        kind = {"warmuth": "W", "power": "power"}.get(cfg.algorithm, "M")
    if two_point:
        u = subspace(state, 1, kind)[:, 0]
        log.records[-1]["stuck_e1"] = int(abs(u[0]) > abs(u[1]))
        if "stuck_e1" not in log.columns:
            log.columns.append("stuck_e1")
    val_obj = evaluate_objective(state, cfg.k, samples=val,
                                 kind=kind if cfg.algorithm != "saa" else "M")
    log.info["validation_error"] = -val_obj.captured
    return log, (state if cfg.algorithm != "power" else EigState(
        np.linalg.qr(state.basis)[0], state.eigvals, 0.0, state.d))


def run_single(cfg: ExperimentConfig, seed: int):
    if cfg.task == "pca":
        return _pca_run(cfg, seed)
    return _svm_run(cfg, seed)


# ---------------------------------------------------------------- experiments

def aggregate(logs: Sequence[MetricLog]) -> MetricLog:
    """Mean over seeds at each checkpoint iteration; ``n_seeds`` counts the
    seeds contributing to the row."""
    cols: List[str] = []
    for lg in logs:
        for c in lg.columns:
            if c not in cols:
                cols.append(c)
    its = sorted({r["iteration"] for lg in logs for r in lg.records})
    out = MetricLog(cols + ["n_seeds"])
    for it in its:
        rows = [r for lg in logs for r in lg.records if r["iteration"] == it]
        rec = {"iteration": it, "n_seeds": len(rows)}
        for c in cols:
            if c == "iteration":
                continue
            vals = [r.get(c) for r in rows if r.get(c) is not None]
            vals = [float(v) for v in vals]
            rec[c] = float(np.mean(vals)) if vals else math.nan
        out.append(**rec)
    return out


def run_experiment(cfg: ExperimentConfig, write_models: bool = True) -> Dict[str, object]:
    """Run every seed, write one CSV per seed plus the aggregate CSV.

    A solver error on one seed is written into that seed's CSV header and
    the sweep continues.  Returns paths, logs and per-seed errors.
    """
    os.makedirs(cfg.out, exist_ok=True)
    echo = cfg.echo()
    logs, paths, errors, infos = [], [], {}, {}
    for seed in cfg.seeds:
        path = os.path.join(cfg.out, f"{cfg.run_name}_seed{seed}.csv")
        try:
            log, model = run_single(cfg, seed)
        except StochoptError as e:
            errors[seed] = f"{type(e).__name__}: {e}"
            atomic_write(path, MetricLog().to_csv(echo + [f"run_seed={seed}",
                                                         f"error={errors[seed]}"]))
            paths.append(path)
            continue
        info_lines = [f"{k}={format_value(v)}" for k, v in sorted(log.info.items())
                      if isinstance(v, (int, float, np.integer, np.floating))]
        atomic_write(path, log.to_csv(echo + [f"run_seed={seed}"] + info_lines))
        if write_models and model is not None:
            save_model(model, os.path.join(cfg.out, f"{cfg.run_name}_seed{seed}.model"))
        logs.append(log)
        infos[seed] = dict(log.info)
        paths.append(path)
    agg = aggregate(logs)
    agg_path = os.path.join(cfg.out, f"{cfg.run_name}_aggregate.csv")
    atomic_write(agg_path, agg.to_csv(echo + [f"seeds_ok={len(logs)}",
                                              f"seeds_failed={len(errors)}"]))
    return {"seed_csvs": paths, "aggregate_csv": agg_path, "logs": logs,
            "aggregate": agg, "errors": errors, "info": infos}


def sweep(cfg: ExperimentConfig, param: str, candidates: Sequence) -> Dict[str, object]:
    """Validation-based selection: run each candidate, average the
    validation metric over seeds, keep the argmin (smallest candidate on
    ties) and report its test metric."""
    rows = []
    for v in sorted(coerce(param, c) for c in candidates):
        sub = cfg.replace(**{param: v, "name": f"{cfg.run_name}_{param}{v}"})
        res = run_experiment(sub)
        vals = [res["info"][s]["validation_error"] for s in res["info"]]
        last = res["aggregate"].last
        test = last.get("test_error", last.get("suboptimality", math.nan))
        rows.append((v, float(np.mean(vals)) if vals else math.inf, float(test)))
    best = min(rows, key=lambda r: (r[1], r[0]))
    log = MetricLog(["iteration", "candidate", "validation", "test", "selected"])
    for i, (v, va, te) in enumerate(rows):
        log.append(iteration=i, candidate=v, validation=va, test=te, selected=int(v == best[0]))
    path = os.path.join(cfg.out, f"{cfg.run_name}_sweep_{param}.csv")
    atomic_write(path, log.to_csv(cfg.echo() + [f"sweep={param}"]))
    return {"best": best[0], "rows": rows, "csv": path}
